"""The episodic learning loop, its output rule and regret bookkeeping.

Each episode: select the agent policy on the current model, select the
adversary policy against it, record the optimistic and pessimistic values
of the pair, deploy both on the true system and add the H transitions to
the model.  The variants differ only in the objectives the two players use:

============  =============================  ==============================
variant       agent                          adversary
============  =============================  ==============================
RH-UCRL       max-min of optimistic value    min of pessimistic value
H-UCRL        max of optimistic value,       fixed at the box centre
              singleton adversary family
MiniMax       max-min of expected value      min of expected value
BestResponse  max-min of optimistic value    min of expected value
============  =============================  ==============================

"Expected" means the mean model plus aleatoric noise (eta = 0).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .envs import rollout
from .gp import GpDynamicsModel
from .optim import (ModelView, OptimizerBudget, maximize, optimistic_value, pessimistic_value,
                    solve_adversary_pessimistic, solve_maximin)
from .policies import PolicyParams, adversary_family, agent_family, hallucination_family
from .types import Dataset, EpisodeError, SeedContract

VARIANTS = ("RH-UCRL", "H-UCRL", "MiniMax", "BestResponse")

# solve identifiers used as keys of the optimizer stream
_AGENT, _ADVERSARY, _VALUES, _WARMUP = 0, 1, 2, 3


@dataclass(frozen=True)
class AlgorithmVariant:
    name: str

    def __post_init__(self):
        if self.name not in VARIANTS:
            raise ValueError(f"unknown variant {self.name!r}; choose from {VARIANTS}")

    @property
    def agent_objective(self) -> str:
        return "expected" if self.name == "MiniMax" else "optimistic"

    @property
    def adversary_objective(self) -> str | None:
        return {"RH-UCRL": "pessimistic", "H-UCRL": None}.get(self.name, "expected")

    @property
    def singleton_adversary(self) -> bool:
        return self.name == "H-UCRL"


@dataclass
class LearnerConfig:
    variant: str = "RH-UCRL"
    budget: OptimizerBudget = field(default_factory=OptimizerBudget)
    value_budget: OptimizerBudget | None = None
    agent_features: str = "linear"
    adversary_features: str = "constant"
    eta_features: str = "linear"
    hallucination_mode: str = "joint"
    warm_start: bool = True
    warmup_episodes: int = 0


@dataclass
class EpisodeRecord:
    t: int
    agent: PolicyParams
    adversary: PolicyParams
    J_opt: float
    J_pess: float
    realized_return: float
    gamma_contrib: float
    info_gain: float
    beta: float
    model_points: int
    eta_opt: PolicyParams | None = None    # eta anchors handed to the value solves
    eta_pess: PolicyParams | None = None
    seconds: float = 0.0

    CSV_COLUMNS = ("t", "J_opt", "J_pess", "return", "gamma_contrib", "info_gain")

    def csv_row(self) -> list:
        return [self.t, repr(self.J_opt), repr(self.J_pess), repr(self.realized_return),
                repr(self.gamma_contrib), repr(self.info_gain)]


class Learner:
    """Holds the model, the dataset and the warm starts across episodes."""

    def __init__(self, env, model: GpDynamicsModel, config: LearnerConfig, seeds: SeedContract):
        self.env = env
        self.model = model
        self.config = config
        self.variant = AlgorithmVariant(config.variant)
        self.seeds = seeds
        self.agent_family = agent_family(env, config.agent_features)
        adv_features = "none" if self.variant.singleton_adversary else config.adversary_features
        self.adversary_family = adversary_family(env, adv_features)
        self.eta_family = hallucination_family(env, config.eta_features)
        self.dataset = Dataset(env.spec.horizon)
        self.records: list[EpisodeRecord] = []
        self._warm_agent: dict = {}
        self._warm_adversary: dict = {}

    def _seed(self, t, solve):
        return self.seeds.seed_sequence("optimizer", t, solve)

    def select_policies(self, t: int):
        """Agent and adversary for episode ``t`` plus the hallucination policies found."""
        cfg, view = self.config, ModelView(self.env, self.model, self.model.beta())
        if t <= cfg.warmup_episodes:
            rng = np.random.default_rng(self._seed(t, _WARMUP))
            a = PolicyParams(self.agent_family, rng.standard_normal(self.agent_family.dim))
            b = PolicyParams(self.adversary_family, rng.standard_normal(self.adversary_family.dim))
            return a, b, None, None
        warm_a = self._warm_agent if cfg.warm_start else {}
        warm_b = self._warm_adversary if cfg.warm_start else {}
        if self.variant.singleton_adversary:
            sol = maximize(view, self.agent_family, self.adversary_family.zeros(), cfg.budget,
                           self._seed(t, _AGENT), self.variant.agent_objective, self.eta_family, warm_a)
        else:
            sol = solve_maximin(view, self.agent_family, self.adversary_family, cfg.budget,
                                self._seed(t, _AGENT), self.variant.agent_objective,
                                self.eta_family, cfg.hallucination_mode, warm_a)
        agent = sol.policies["agent"]
        eta_o = sol.policies.get("eta")
        self._warm_agent = {"agent": agent.theta, "adversary": sol.policies["adversary"].theta}
        if eta_o is not None:
            self._warm_agent["eta"] = eta_o.theta
        if self.variant.adversary_objective is None:
            return agent, self.adversary_family.zeros(), eta_o, None
        adv = solve_adversary_pessimistic(view, agent, self.adversary_family, cfg.budget,
                                          self._seed(t, _ADVERSARY), self.variant.adversary_objective,
                                          self.eta_family, warm_b)
        eta_p = adv.policies.get("eta")
        self._warm_adversary = {"adversary": adv.policies["adversary"].theta}
        if eta_p is not None:
            self._warm_adversary["eta"] = eta_p.theta
        return agent, adv.policies["adversary"], eta_o, eta_p

    def pair_values(self, model, agent, adversary, t, eta_o=None, eta_p=None, beta=None):
        """(J_opt, J_pess, eta_opt, eta_pess) sharing one noise block and one eta = 0 anchor."""
        view = ModelView(self.env, model, model.beta() if beta is None else beta)
        budget = self.config.value_budget or self.config.budget
        seed = self._seed(t, _VALUES)
        jo, eo = optimistic_value(view, agent, adversary, self.eta_family, budget, seed,
                                  [] if eta_o is None else [eta_o])
        jp, ep = pessimistic_value(view, agent, adversary, self.eta_family, budget, seed,
                                   [] if eta_p is None else [eta_p])
        return jo, jp, eo, ep

    def run_episode(self) -> EpisodeRecord:
        t = len(self.records) + 1
        start = time.perf_counter()
        n_points, beta = self.model.n_points, self.model.beta()
        try:
            agent, adversary, eta_o, eta_p = self.select_policies(t)
            jo, jp, eo, ep = self.pair_values(self.model, agent, adversary, t, eta_o, eta_p)
            traj = rollout(self.env, agent, adversary, self.seeds.generator("env-noise", t), t)
            self.dataset.add_episode(traj)
            d_gamma, d_info = self.model.fit(traj.transitions)
        except Exception as exc:
            raise EpisodeError(t, exc) from exc
        rec = EpisodeRecord(t, agent, adversary, jo, jp, traj.total_reward, d_gamma, d_info,
                            beta, n_points, eta_o, eta_p, time.perf_counter() - start)
        self.records.append(rec)
        return rec

    def run(self, episodes: int, callback=None):
        for _ in range(episodes):
            rec = self.run_episode()
            if callback is not None:
                callback(rec)
        return self.records

    def recompute_pessimistic(self, t: int) -> float:
        """J_pess of episode ``t`` recomputed from the model as it was at that episode."""
        rec = self.records[t - 1]
        model = self.model.truncated(rec.model_points)
        _, jp, _, _ = self.pair_values(model, rec.agent, rec.adversary, t, rec.eta_opt,
                                       rec.eta_pess, rec.beta)
        return jp


def output_policy(records):
    """``(agent, t*)`` with t* the first episode of maximal pessimistic value."""
    if not records:
        raise ValueError("no episode records")
    vals = np.array([r.J_pess for r in records], dtype=np.float64)
    bad = np.flatnonzero(np.isnan(vals))
    if bad.size:
        raise ValueError(f"pessimistic value is NaN in episode {records[bad[0]].t}")
    i = int(np.argmax(vals))
    return records[i].agent, records[i].t


@dataclass
class RegretLedger:
    """Robust regret ``benchmark - min_pibar J(f, pi_t, pibar)`` per episode."""

    benchmark: float
    proxy: bool = False
    instantaneous: list = field(default_factory=list)
    cumulative: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def update(self, episode_value: float) -> "RegretLedger":
        r = float(self.benchmark - episode_value)
        self.instantaneous.append(r)
        self.cumulative.append((self.cumulative[-1] if self.cumulative else 0.0) + r)
        self.flags.append("negative" if r < 0 else "")
        return self

    def average(self) -> np.ndarray:
        """R_t / t for t = 1..T."""
        c = np.array(self.cumulative)
        return c / np.arange(1, len(c) + 1)


def regret_update(ledger: RegretLedger, episode_value: float) -> RegretLedger:
    return ledger.update(episode_value)
