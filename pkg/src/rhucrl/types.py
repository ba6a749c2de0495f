"""Shared domain vocabulary: transitions, trajectories, datasets and seed streams."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

STREAMS = ("env-noise", "optimizer", "evaluation", "adversary-training")


class BoundsError(ValueError):
    """An action fell outside its declared box."""


class NumericalError(RuntimeError):
    """A numeric routine failed (non-PSD matrix, NaN in a rollout, ...)."""


class EpisodeError(RuntimeError):
    """A failure inside the episodic loop, tagged with the episode index."""

    def __init__(self, episode: int, cause: BaseException):
        super().__init__(f"episode {episode}: {type(cause).__name__}: {cause}")
        self.episode = episode
        self.cause = cause


def _vec(x) -> np.ndarray:
    a = np.array(x, dtype=np.float64).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Transition:
    """One environment step ``(s, u, ubar, s')``."""

    state: np.ndarray
    agent_action: np.ndarray
    adversary_action: np.ndarray
    next_state: np.ndarray
    step_index: int
    episode_index: int

    def __post_init__(self):
        for name in ("state", "agent_action", "adversary_action", "next_state"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        if self.state.shape != self.next_state.shape:
            raise ValueError("state and next_state dimensions differ")
        if self.step_index < 0 or self.episode_index < 1:
            raise ValueError("step_index must be >= 0 and episode_index >= 1")
        if not (np.all(np.isfinite(self.state)) and np.all(np.isfinite(self.next_state))):
            raise ValueError("non-finite state entries")

    def to_json(self) -> dict:
        return {
            "state": self.state.tolist(),
            "action": self.agent_action.tolist(),
            "adv_action": self.adversary_action.tolist(),
            "next_state": self.next_state.tolist(),
            "step": int(self.step_index),
            "episode": int(self.episode_index),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Transition":
        return cls(d["state"], d["action"], d["adv_action"], d["next_state"],
                   int(d["step"]), int(d["episode"]))


@dataclass(frozen=True)
class Trajectory:
    """An H-step episode.

    ``total_reward`` sums the per-transition rewards plus the terminal reward
    at the last state, evaluated with ``terminal_action`` and
    ``terminal_adversary_action``.
    """

    transitions: tuple
    total_reward: float
    terminal_action: np.ndarray | None = None
    terminal_adversary_action: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "transitions", tuple(self.transitions))
        for name in ("terminal_action", "terminal_adversary_action"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _vec(v))

    def __len__(self):
        return len(self.transitions)

    @property
    def states(self) -> np.ndarray:
        """All H + 1 visited states."""
        s = [tr.state for tr in self.transitions]
        s.append(self.transitions[-1].next_state)
        return np.array(s)

    def arrays(self):
        """(S, U, Ubar, S_next) stacked over the transitions."""
        t = self.transitions
        return (np.array([x.state for x in t]), np.array([x.agent_action for x in t]),
                np.array([x.adversary_action for x in t]), np.array([x.next_state for x in t]))

    def recompute_reward(self, reward_fn) -> float:
        """Sum of ``reward_fn(s, u, ubar)`` over steps plus the terminal term."""
        S, U, Ub, _ = self.arrays()
        total = float(np.sum(reward_fn(S, U, Ub)))
        if self.terminal_action is not None:
            sH = self.transitions[-1].next_state[None, :]
            total += float(reward_fn(sH, self.terminal_action[None, :],
                                     self.terminal_adversary_action[None, :])[0])
        return total


def chain_check(trajectory: Trajectory) -> bool:
    """True iff consecutive transitions chain and step indices run 0..H-1."""
    trs = trajectory.transitions
    if not trs:
        raise ValueError("empty trajectory")
    for h, tr in enumerate(trs):
        if tr.step_index != h:
            return False
        if h + 1 < len(trs) and not np.array_equal(tr.next_state, trs[h + 1].state):
            return False
    return True


@dataclass
class Dataset:
    """Append-only transition store; single writer (the episodic loop)."""

    horizon: int
    transitions: list = field(default_factory=list)
    episode_count: int = 0

    def add_episode(self, trajectory: Trajectory) -> None:
        if len(trajectory) != self.horizon:
            raise ValueError(f"expected {self.horizon} transitions, got {len(trajectory)}")
        self.transitions.extend(trajectory.transitions)
        self.episode_count += 1

    def __len__(self):
        return len(self.transitions)


def write_jsonl(path, transitions: Iterable[Transition]) -> None:
    with open(path, "w") as fh:
        for tr in transitions:
            fh.write(json.dumps(tr.to_json()) + "\n")


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [Transition.from_json(json.loads(line)) for line in fh if line.strip()]


@dataclass(frozen=True)
class SeedContract:
    """Named, seedable random streams derived from one master seed.

    ``generator(label, *keys)`` is a pure function of the master seed, the
    label and the integer keys, so skipping a draw in one stream never shifts
    another.
    """

    master_seed: int
    labels: Sequence[str] = STREAMS

    def seed_sequence(self, label: str, *keys: int) -> np.random.SeedSequence:
        if label not in self.labels:
            raise KeyError(f"unknown stream {label!r}")
        tag = zlib.crc32(label.encode())
        return np.random.SeedSequence(int(self.master_seed) & (2**64 - 1),
                                      spawn_key=(tag, *[int(k) for k in keys]))

    def generator(self, label: str, *keys: int) -> np.random.Generator:
        return np.random.default_rng(self.seed_sequence(label, *keys))
