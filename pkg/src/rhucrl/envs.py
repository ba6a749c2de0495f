"""Analytic control environments with an explicit adversary input channel.

Every environment exposes a vectorised noise-free ``dynamics(S, U, Ubar)``
(rows are independent rollouts), a known ``reward`` and a ``transition``
that adds noise and wraps angles.  ``step`` is the checked single-sample
version used on the true system.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .types import BoundsError, Trajectory, Transition


@dataclass(frozen=True)
class Box:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        lo = np.array(self.low, dtype=np.float64).reshape(-1)
        hi = np.array(self.high, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError(f"degenerate box [{lo}, {hi}]")
        object.__setattr__(self, "low", lo)
        object.__setattr__(self, "high", hi)

    @property
    def dim(self) -> int:
        return self.low.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.low + self.high)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.high - self.low)

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all((x >= self.low) & (x <= self.high)))

    def to_json(self):
        return {"low": self.low.tolist(), "high": self.high.tolist()}


@dataclass(frozen=True)
class EnvironmentSpec:
    state_dim: int
    action_dim: int
    adversary_dim: int
    horizon: int
    initial_state: np.ndarray
    action_box: Box
    adversary_box: Box
    noise_std: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        object.__setattr__(self, "initial_state",
                           np.array(self.initial_state, dtype=np.float64).reshape(-1))
        sd = np.broadcast_to(np.asarray(self.noise_std, dtype=np.float64),
                             (self.state_dim,)).copy()
        if np.any(sd < 0):
            raise ValueError("noise_std must be >= 0")
        object.__setattr__(self, "noise_std", sd)
        if self.initial_state.size != self.state_dim:
            raise ValueError("initial_state has the wrong dimension")
        if self.action_box.dim != self.action_dim or self.adversary_box.dim != self.adversary_dim:
            raise ValueError("box dimensions do not match the declared action dimensions")


class Environment:
    """Base class; subclasses define ``spec``, ``dynamics`` and ``reward``."""

    angle_dims: tuple = ()
    n_aux: int = 0

    @property
    def state_scale(self) -> np.ndarray:
        """Per-dimension scale used to normalise non-angle state coordinates."""
        return np.ones(self.spec.state_dim)

    def wrap(self, S):
        if not self.angle_dims:
            return S
        S = S.copy()
        for d in self.angle_dims:
            S[:, d] = _kernels.wrap_angle(S[:, d])
        return S

    def transition(self, S, U, Ubar, W, aux=None):
        return self.wrap(self.dynamics(S, U, Ubar) + W)

    def executed_reward(self, S, U, Ubar, aux=None):
        return self.reward(S, U, Ubar)

    def check_actions(self, u, ubar) -> None:
        sp = self.spec
        if np.asarray(u).shape != (sp.action_dim,) or not sp.action_box.contains(u):
            raise BoundsError(f"agent action {u} outside {sp.action_box.low}..{sp.action_box.high}")
        if np.asarray(ubar).shape != (sp.adversary_dim,) or not sp.adversary_box.contains(ubar):
            raise BoundsError(
                f"adversary action {ubar} outside {sp.adversary_box.low}..{sp.adversary_box.high}")

    def step(self, state, u, ubar, noise):
        """Checked single transition; never clamps actions.

        Returns ``(next_state, reward)`` with the reward evaluated at the
        current state and actions.
        """
        u = np.asarray(u, dtype=np.float64)
        ubar = np.asarray(ubar, dtype=np.float64)
        self.check_actions(u, ubar)
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != (self.spec.state_dim,):
            raise ValueError("noise must have the state dimension")
        S, U, Ub = state[None, :], u[None, :], ubar[None, :]
        nxt = self.transition(S, U, Ub, noise[None, :])[0]
        return nxt, float(self.reward(S, U, Ub)[0])


# ---------------------------------------------------------------------------
# pendulum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PendulumEnv(Environment):
    """Torque-actuated pendulum; theta = 0 is upright, the episode starts hanging.

    ``channel`` selects how the adversary enters:

    * ``"force"`` -- additive torque on the pole bounded by
      ``adversary_strength * torque_limit``;
    * ``"gravity_mass"`` -- relative gravity and relative mass, each in
      ``[1 - adversary_strength, 1 + adversary_strength]``.
    """

    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.81
    torque_limit: float = 5.0
    channel: str = "force"
    adversary_strength: float = 0.5
    dt: float = 0.05
    horizon: int = 200
    noise_std: float = 0.01
    velocity_scale: float = 8.0
    initial_angle: float = math.pi

    angle_dims = (0,)

    def __post_init__(self):
        if min(self.mass, self.length, self.gravity) <= 0:
            raise ValueError("mass, length and gravity must be positive")
        if self.channel not in ("force", "gravity_mass"):
            raise ValueError(f"unknown adversary channel {self.channel!r}")
        if self.channel == "gravity_mass" and not 0 < self.adversary_strength < 1:
            raise ValueError("gravity/mass perturbation must lie in (0, 1)")

    @property
    def spec(self) -> EnvironmentSpec:
        tl = self.torque_limit
        if self.channel == "force":
            a = self.adversary_strength * tl
            adv = Box([-a], [a])
        else:
            a = self.adversary_strength
            adv = Box([1 - a, 1 - a], [1 + a, 1 + a])
        return EnvironmentSpec(2, 1, adv.dim, self.horizon, [self.initial_angle, 0.0],
                               Box([-tl], [tl]), adv, self.noise_std, self.dt)

    @property
    def state_scale(self):
        return np.array([1.0, self.velocity_scale])

    def _split_adversary(self, Ubar):
        n = Ubar.shape[0]
        if self.channel == "force":
            return Ubar[:, 0], np.ones(n), np.ones(n)
        return np.zeros(n), Ubar[:, 0], Ubar[:, 1]

    def dynamics(self, S, U, Ubar, mass_scale=1.0, gravity_scale=1.0):
        force, g_rel, m_rel = self._split_adversary(Ubar)
        n = S.shape[0]
        g_rel = g_rel * gravity_scale
        m_rel = m_rel * mass_scale
        grav = np.broadcast_to(self.gravity * g_rel / self.length, (n,)).astype(np.float64)
        inv_inertia = np.broadcast_to(1.0 / (self.mass * m_rel * self.length ** 2),
                                      (n,)).astype(np.float64)
        th, om = _kernels.pendulum_step(np.ascontiguousarray(S[:, 0]), np.ascontiguousarray(S[:, 1]),
                                        np.ascontiguousarray(U[:, 0] + force),
                                        np.ascontiguousarray(grav),
                                        np.ascontiguousarray(inv_inertia), float(self.dt))
        return np.stack([th, om], axis=1)

    def reward(self, S, U, Ubar):
        theta = _kernels.wrap_angle(S[:, 0])
        return -(theta ** 2 + 0.1 * S[:, 1] ** 2)

    def with_parameter(self, name: str, scale: float) -> "PendulumEnv":
        if name == "mass":
            return dataclasses.replace(self, mass=self.mass * scale)
        if name == "gravity":
            return dataclasses.replace(self, gravity=self.gravity * scale)
        raise KeyError(f"pendulum has no parameter {name!r}")


# ---------------------------------------------------------------------------
# scalar linear system
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearToyEnv(Environment):
    """``s' = a s + b u + b_adv ubar + w`` with reward
    ``-q (s - s_ref)^2 - r_u u^2 + r_adv ubar^2``.

    The adversary pays ``r_adv ubar^2``; with constant policies the return is
    a quadratic in ``(u, ubar)`` and the robust optimum is computable.
    """

    a: float = 1.0
    b: float = 1.0
    b_adv: float = -0.5
    q_state: float = 1.0
    s_ref: float = 0.0
    r_action: float = 0.0
    r_adversary: float = 0.0
    horizon: int = 5
    initial_state: float = 0.0
    action_bound: float = 1.0
    adversary_bound: float = 1.0
    noise_std: float = 0.0
    state_scale_value: float = 1.0

    @property
    def spec(self) -> EnvironmentSpec:
        return EnvironmentSpec(1, 1, 1, self.horizon, [self.initial_state],
                               Box([-self.action_bound], [self.action_bound]),
                               Box([-self.adversary_bound], [self.adversary_bound]),
                               self.noise_std)

    @property
    def state_scale(self):
        return np.array([self.state_scale_value])

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant of f w.r.t. the joint input (s, u, ubar)."""
        return math.sqrt(self.a ** 2 + self.b ** 2 + self.b_adv ** 2)

    def dynamics(self, S, U, Ubar, a_scale=1.0, b_scale=1.0):
        a = self.a * a_scale
        b = self.b * b_scale
        return (a * S[:, 0] + b * U[:, 0] + self.b_adv * Ubar[:, 0])[:, None]

    def reward(self, S, U, Ubar):
        return (-self.q_state * (S[:, 0] - self.s_ref) ** 2
                - self.r_action * U[:, 0] ** 2 + self.r_adversary * Ubar[:, 0] ** 2)

    def with_parameter(self, name: str, scale: float) -> "LinearToyEnv":
        if name == "b":
            return dataclasses.replace(self, b=self.b * scale)
        if name == "a":
            return dataclasses.replace(self, a=self.a * scale)
        raise KeyError(f"linear toy has no parameter {name!r}")

    # -- closed forms for constant policies ------------------------------

    def constant_policy_value(self, c, cbar):
        """Exact expected return for constant actions (broadcasts over c, cbar)."""
        c = np.asarray(c, dtype=np.float64)
        cbar = np.asarray(cbar, dtype=np.float64)
        drive = self.b * c + self.b_adv * cbar
        mean = np.full(np.broadcast(c, cbar).shape, float(self.initial_state))
        var = 0.0
        total = np.zeros_like(mean)
        step_cost = -self.r_action * c ** 2 + self.r_adversary * cbar ** 2
        for _ in range(self.horizon + 1):
            total = total - self.q_state * ((mean - self.s_ref) ** 2 + var) + step_cost
            mean = self.a * mean + drive
            var = self.a ** 2 * var + self.noise_std ** 2
        return total

    def robust_value(self, c, n_grid: int = 4001):
        """min over constant adversary actions of the exact return."""
        c = np.atleast_1d(np.asarray(c, dtype=np.float64))
        grid = np.linspace(-self.adversary_bound, self.adversary_bound, n_grid)
        vals = self.constant_policy_value(c[:, None], grid[None, :])
        best = vals.min(axis=1)
        # the return is quadratic in cbar: also check the clipped vertex
        lo = self.constant_policy_value(c, -self.adversary_bound)
        mid = self.constant_policy_value(c, 0.0)
        hi = self.constant_policy_value(c, self.adversary_bound)
        curv = (lo + hi - 2 * mid) / (2 * self.adversary_bound ** 2)
        slope = (hi - lo) / (2 * self.adversary_bound)
        with np.errstate(divide="ignore", invalid="ignore"):
            vert = np.clip(np.where(curv > 0, -slope / (2 * curv), 0.0),
                           -self.adversary_bound, self.adversary_bound)
        return np.minimum(best, self.constant_policy_value(c, vert))


def grid_oracle(env: LinearToyEnv, n: int = 101, order: str = "maxmin"):
    """Grid search over n x n constant policies.

    Returns ``(value, c, cbar)`` for max_c min_cbar (``order="maxmin"``) or
    min_cbar max_c (``order="minmax"``).
    """
    cs = np.linspace(-env.action_bound, env.action_bound, n)
    cbs = np.linspace(-env.adversary_bound, env.adversary_bound, n)
    J = env.constant_policy_value(cs[:, None], cbs[None, :])
    if order == "maxmin":
        inner = J.min(axis=1)
        i = int(np.argmax(inner))
        return float(inner[i]), float(cs[i]), float(cbs[int(np.argmin(J[i]))])
    inner = J.max(axis=0)
    j = int(np.argmin(inner))
    return float(inner[j]), float(cs[int(np.argmax(J[:, j]))]), float(cbs[j])


# ---------------------------------------------------------------------------
# robustness-setting wrappers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActionRobustWrapper(Environment):
    """Agent and adversary share one action box; the executed action is the
    adversary's with probability ``alpha`` and the agent's otherwise."""

    inner: Environment
    alpha: float = 0.3

    n_aux = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    @property
    def angle_dims(self):
        return self.inner.angle_dims

    @property
    def state_scale(self):
        return self.inner.state_scale

    @property
    def spec(self):
        sp = self.inner.spec
        return dataclasses.replace(sp, adversary_dim=sp.action_dim, adversary_box=sp.action_box)

    def _inner_ubar(self, n):
        return np.tile(self.inner.spec.adversary_box.center, (n, 1))

    def _executed(self, U, Ubar, aux):
        return np.where((aux[:, :1] < self.alpha), Ubar, U)

    def dynamics(self, S, U, Ubar):
        # expected drift over the coin; used only where no coin is supplied
        zb = self._inner_ubar(S.shape[0])
        return ((1 - self.alpha) * self.inner.dynamics(S, U, zb)
                + self.alpha * self.inner.dynamics(S, Ubar, zb))

    def transition(self, S, U, Ubar, W, aux=None):
        if aux is None:
            return self.wrap(self.dynamics(S, U, Ubar) + W)
        return self.inner.transition(S, self._executed(U, Ubar, aux), self._inner_ubar(S.shape[0]), W)

    def reward(self, S, U, Ubar):
        zb = self._inner_ubar(S.shape[0])
        return ((1 - self.alpha) * self.inner.reward(S, U, zb)
                + self.alpha * self.inner.reward(S, Ubar, zb))

    def executed_reward(self, S, U, Ubar, aux=None):
        if aux is None:
            return self.reward(S, U, Ubar)
        return self.inner.reward(S, self._executed(U, Ubar, aux), self._inner_ubar(S.shape[0]))

    def step(self, state, u, ubar, noise):
        raise TypeError("use mixture_step: the action-robust step needs a coin draw")


def mixture_step(wrapper: ActionRobustWrapper, state, u, ubar, coin, noise):
    """Execute ``ubar`` if ``coin < alpha`` else ``u``; reward on the executed action."""
    if not 0.0 <= coin < 1.0:
        raise ValueError("coin must lie in [0, 1)")
    u = np.asarray(u, dtype=np.float64)
    ubar = np.asarray(ubar, dtype=np.float64)
    wrapper.check_actions(u, ubar)
    executed = ubar if coin < wrapper.alpha else u
    return wrapper.inner.step(np.asarray(state, dtype=np.float64), executed,
                              wrapper.inner.spec.adversary_box.center, noise)


@dataclass(frozen=True)
class ParameterRobustWrapper(Environment):
    """The adversary picks one physical parameter (a relative scale) per episode.

    Its action is the scalar relative value, clamped to ``interval``; the
    inner environment's own adversary input is held at its box centre.
    """

    inner: Environment
    parameter: str = "mass"
    interval: tuple = (0.001, 2.0)

    def __post_init__(self):
        lo, hi = self.interval
        if not lo < hi:
            raise ValueError("parameter interval must satisfy lo < hi")
        object.__setattr__(self, "interval", (float(lo), float(hi)))
        self.inner.with_parameter(self.parameter, 1.0)  # validates the name

    @property
    def angle_dims(self):
        return self.inner.angle_dims

    @property
    def state_scale(self):
        return self.inner.state_scale

    @property
    def spec(self):
        lo, hi = self.interval
        return dataclasses.replace(self.inner.spec, adversary_dim=1, adversary_box=Box([lo], [hi]))

    def dynamics(self, S, U, Ubar):
        lo, hi = self.interval
        value = np.clip(Ubar[:, 0], lo, hi)
        zb = np.tile(self.inner.spec.adversary_box.center, (S.shape[0], 1))
        return self.inner.dynamics(S, U, zb, **{f"{self.parameter}_scale": value})

    def reward(self, S, U, Ubar):
        zb = np.tile(self.inner.spec.adversary_box.center, (S.shape[0], 1))
        return self.inner.reward(S, U, zb)


def set_parameter(wrapper: ParameterRobustWrapper, value: float) -> Environment:
    """Inner environment with its parameter scaled by ``value`` (clamped to the interval)."""
    value = float(value)
    if math.isnan(value):
        raise ValueError("parameter value is NaN")
    lo, hi = wrapper.interval
    return wrapper.inner.with_parameter(wrapper.parameter, min(max(value, lo), hi))


# ---------------------------------------------------------------------------
# true-system rollout
# ---------------------------------------------------------------------------


def rollout(env: Environment, agent_policy, adversary_policy, rng: np.random.Generator,
            episode_index: int = 1) -> Trajectory:
    """Closed-loop H-step episode from the initial state.

    Policies are callables ``state -> action`` that must saturate internally;
    an out-of-box action raises :class:`BoundsError`.  Noise (and, for the
    action-robust wrapper, the mixture coin) is drawn per step from ``rng``.
    """
    sp = env.spec
    s = sp.initial_state.copy()
    transitions = []
    total = 0.0
    for h in range(sp.horizon):
        u = np.asarray(agent_policy(s), dtype=np.float64)
        ub = np.asarray(adversary_policy(s), dtype=np.float64)
        env.check_actions(u, ub)
        w = rng.standard_normal(sp.state_dim) * sp.noise_std
        aux = rng.random(env.n_aux) if env.n_aux else None
        S, U, Ub = s[None, :], u[None, :], ub[None, :]
        A = None if aux is None else aux[None, :]
        nxt = env.transition(S, U, Ub, w[None, :], A)[0]
        total += float(env.executed_reward(S, U, Ub, A)[0])
        transitions.append(Transition(s, u, ub, nxt, h, episode_index))
        s = nxt
    uH = np.asarray(agent_policy(s), dtype=np.float64)
    ubH = np.asarray(adversary_policy(s), dtype=np.float64)
    env.check_actions(uH, ubH)
    total += float(env.reward(s[None, :], uH[None, :], ubH[None, :])[0])
    return Trajectory(transitions, total, uH, ubH)
