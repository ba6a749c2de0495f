"""Return estimation and population-based max-min solvers.

All solvers score candidates with common random numbers: one noise block
(particles x H x p) is drawn per solve and shared by every candidate.  The
population optimizer is a cross-entropy method that carries its elites
between iterations without re-evaluating them, always evaluates a set of
anchor candidates first (the zero vector, i.e. the box-centre policy, and
any warm start), and breaks ties by lowest candidate index.  Adversary
searches also start from the constant policies at the corners of the
adversary box, where bounded perturbations are often most harmful.

Nested games (outer max over the agent, inner min over the adversary, and
optionally an innermost max/min over the hallucination policy) are solved by
running the inner optimizer in lockstep for every outer candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .hallucination import tube_sample
from .policies import PolicyFamily, PolicyParams
from .types import NumericalError


@dataclass(frozen=True)
class OptimizerBudget:
    """Population-search budget.

    ``population``/``iterations`` drive the outer (or single-level) search,
    ``inner_population``/``inner_iterations`` every nested level below it.
    """

    population: int = 64
    elite_fraction: float = 0.1
    iterations: int = 30
    inner_population: int = 16
    inner_iterations: int = 15
    restarts: int = 1
    particles: int = 8
    init_std: float = 1.0
    min_std: float = 0.05
    smoothing: float = 0.7

    def __post_init__(self):
        for name in ("population", "iterations", "inner_population", "inner_iterations",
                     "restarts", "particles"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.elite_fraction <= 1.0:
            raise ValueError("elite_fraction must lie in (0, 1]")
        if not 0.0 < self.smoothing <= 1.0 or self.init_std <= 0 or self.min_std < 0:
            raise ValueError("invalid search-distribution settings")

    def scaled(self, factor: float) -> "OptimizerBudget":
        """Budget with population and iteration counts multiplied by ``factor``."""
        return replace(self, population=max(1, round(self.population * factor)),
                       iterations=max(1, round(self.iterations * factor)))

    def inner(self) -> "OptimizerBudget":
        return replace(self, population=self.inner_population, iterations=self.inner_iterations)


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    std_error: float
    particles: int
    seed_label: str = ""


# ---------------------------------------------------------------------------
# seeds
# ---------------------------------------------------------------------------


def child_seeds(seed, n: int):
    """``n`` independent SeedSequences derived from ``seed`` without mutating it."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (i,))
            for i in range(n)]


def _seed_label(seed) -> str:
    if isinstance(seed, np.random.SeedSequence):
        return f"{seed.entropy}:{'/'.join(str(k) for k in seed.spawn_key)}"
    return str(seed)


# ---------------------------------------------------------------------------
# dynamics views and batched simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrueView:
    """The real environment (used for data collection and evaluation)."""

    env: object

    def next_and_reward(self, S, U, Ub, W, aux, eta):
        return self.env.transition(S, U, Ub, W, aux), self.env.executed_reward(S, U, Ub, aux)


@dataclass(frozen=True)
class ModelView:
    """Model rollouts: ``mu + beta * eta * sigma + noise``; eta = 0 if absent."""

    env: object
    model: object
    beta: float

    def next_and_reward(self, S, U, Ub, W, aux, eta):
        mean, std = self.model.predict(S, U, Ub)
        if eta is None:
            eta = np.zeros_like(mean)
        nxt, _ = tube_sample(mean, std, self.beta, eta, W)
        return self.env.wrap(nxt), self.env.reward(S, U, Ub)


def draw_noise(env, particles: int, rng: np.random.Generator):
    """Common random numbers for one solve: (noise, aux) blocks."""
    sp = env.spec
    W = rng.standard_normal((particles, sp.horizon, sp.state_dim)) * sp.noise_std
    aux = rng.random((particles, sp.horizon, env.n_aux)) if env.n_aux else None
    return W, aux


def simulate(view, families: dict, rows: dict, noise, aux=None):
    """Batched closed-loop returns.

    ``families``/``rows`` map the roles ``"agent"``, ``"adversary"`` and
    optionally ``"eta"`` to a :class:`PolicyFamily` and an (N, dim)
    parameter array.  Every row is rolled out once per noise particle.
    Returns (N, particles) totals including the terminal reward.
    """
    env = view.env
    sp = env.spec
    N = rows["agent"].shape[0]
    K = noise.shape[0]
    rep = {r: np.repeat(v, K, axis=0) for r, v in rows.items()}
    W = np.tile(noise, (N, 1, 1))
    X = None if aux is None else np.tile(aux, (N, 1, 1))
    S = np.tile(sp.initial_state, (N * K, 1))
    total = np.zeros(N * K)
    fa, fb = families["agent"], families["adversary"]
    fe = families.get("eta")
    for h in range(sp.horizon):
        U = fa.act(rep["agent"], S)
        Ub = fb.act(rep["adversary"], S)
        eta = None if fe is None else fe.act(rep["eta"], np.hstack([S, U, Ub]))
        S, r = view.next_and_reward(S, U, Ub, W[:, h], None if X is None else X[:, h], eta)
        total += r
        if not np.all(np.isfinite(S)):
            raise NumericalError(f"non-finite state at rollout step {h + 1}")
    total += env.reward(S, fa.act(rep["agent"], S), fb.act(rep["adversary"], S))
    if not np.all(np.isfinite(total)):
        raise NumericalError(f"non-finite return at rollout step {sp.horizon}")
    return total.reshape(N, K)


def estimate_J(view, agent: PolicyParams, adversary: PolicyParams, particles: int, seed,
               eta: PolicyParams | None = None) -> ValueEstimate:
    """Monte Carlo return of one policy pair over common-random-number particles."""
    if particles < 1:
        raise ValueError("particles must be >= 1")
    W, aux = draw_noise(view.env, particles, np.random.default_rng(child_seeds(seed, 1)[0]))
    fams = {"agent": agent.family, "adversary": adversary.family}
    rows = {"agent": agent.theta[None, :], "adversary": adversary.theta[None, :]}
    if eta is not None:
        fams["eta"], rows["eta"] = eta.family, eta.theta[None, :]
    R = simulate(view, fams, rows, W, aux)[0]
    se = float(R.std(ddof=1) / math.sqrt(particles)) if particles > 1 else 0.0
    return ValueEstimate(float(R.mean()), se, particles, _seed_label(seed))


# ---------------------------------------------------------------------------
# cross-entropy method
# ---------------------------------------------------------------------------


@dataclass
class CemResult:
    theta: np.ndarray        # (n_problems, dim)
    value: np.ndarray        # (n_problems,)
    payload: np.ndarray      # (n_problems, k) extra data carried with each candidate
    history: list = field(default_factory=list)   # best value per iteration (problem 0)


def cem(evaluate, dim: int, n_problems: int, budget: OptimizerBudget, rng, sense: int,
        anchors=(), init_mean=None) -> CemResult:
    """Cross-entropy search run in lockstep for ``n_problems`` independent problems.

    ``evaluate(C)`` receives candidates of shape (n_problems, m, dim) and
    returns values (n_problems, m), optionally with a payload
    (n_problems, m, k).  ``sense`` is +1 to maximise and -1 to minimise.
    A zero-dimensional search evaluates its single candidate once and draws
    no random numbers.
    """
    def call(C):
        out = evaluate(C)
        vals, pay = out if isinstance(out, tuple) else (out, np.zeros(C.shape[:2] + (0,)))
        if np.any(np.isnan(vals)):
            raise NumericalError("candidate evaluation returned NaN")
        return vals, pay

    if dim == 0:
        vals, pay = call(np.zeros((n_problems, 1, 0)))
        return CemResult(np.zeros((n_problems, 0)), vals[:, 0], pay[:, 0], [float(vals[0, 0])])

    mean = np.zeros((n_problems, dim)) if init_mean is None else \
        np.broadcast_to(np.asarray(init_mean, float), (n_problems, dim)).copy()
    std = np.full((n_problems, dim), budget.init_std)
    A = [np.broadcast_to(np.asarray(a, float), (n_problems, dim)) for a in anchors]
    n_elite = max(1, int(math.ceil(budget.elite_fraction * budget.population)))
    keep_t = keep_v = keep_p = None
    history = []
    a = budget.smoothing
    for it in range(budget.iterations):
        C = mean[:, None, :] + std[:, None, :] * rng.standard_normal((n_problems, budget.population, dim))
        if it == 0 and A:
            C = np.concatenate([np.stack(A, axis=1), C], axis=1)
        vals, pay = call(C)
        if keep_t is not None:
            C = np.concatenate([keep_t, C], axis=1)
            vals = np.concatenate([keep_v, vals], axis=1)
            pay = np.concatenate([keep_p, pay], axis=1)
        order = np.argsort(-sense * vals, axis=1, kind="stable")[:, :n_elite]
        keep_t = np.take_along_axis(C, order[:, :, None], axis=1)
        keep_v = np.take_along_axis(vals, order, axis=1)
        keep_p = np.take_along_axis(pay, order[:, :, None], axis=1)
        mean = (1 - a) * mean + a * keep_t.mean(axis=1)
        std = np.maximum((1 - a) * std + a * keep_t.std(axis=1), budget.min_std)
        history.append(float(keep_v[0, 0]))
    return CemResult(keep_t[:, 0], keep_v[:, 0], keep_p[:, 0], history)


# ---------------------------------------------------------------------------
# nested games
# ---------------------------------------------------------------------------


@dataclass
class Level:
    """One optimisation level: a block of roles searched jointly in one direction."""

    roles: tuple
    families: tuple
    sense: int
    budget: OptimizerBudget
    rng: np.random.Generator
    anchors: tuple = ()
    init_mean: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return sum(f.dim for f in self.families)

    def split(self, theta):
        out, i = {}, 0
        for r, f in zip(self.roles, self.families):
            out[r] = theta[:, i:i + f.dim]
            i += f.dim
        return out


def solve_levels(levels, fixed: dict, n_problems: int, score_rows):
    """Value and joint argbest (this level followed by all deeper levels).

    ``score_rows(rows)`` maps a dict of (N, dim) parameter arrays for every
    role to (N,) values.
    """
    lv, rest = levels[0], levels[1:]

    def evaluate(C):
        m = C.shape[1]
        rows = {r: np.repeat(v, m, axis=0) for r, v in fixed.items()}
        rows.update(lv.split(C.reshape(n_problems * m, lv.dim)))
        if rest:
            vals, deeper = solve_levels(rest, rows, n_problems * m, score_rows)
        else:
            vals, deeper = score_rows(rows), np.zeros((n_problems * m, 0))
        return vals.reshape(n_problems, m), deeper.reshape(n_problems, m, -1)

    res = cem(evaluate, lv.dim, n_problems, lv.budget, lv.rng, lv.sense, lv.anchors, lv.init_mean)
    return res.value, np.concatenate([res.theta, res.payload], axis=1)


def _scorer(view, families, noise, aux):
    def score(rows):
        return simulate(view, families, rows, noise, aux).mean(axis=1)
    return score


def _unpack(levels, best):
    out, i = {}, 0
    for lv in levels:
        for r, f in zip(lv.roles, lv.families):
            out[r] = PolicyParams(f, best[i:i + f.dim])
            i += f.dim
    return out


@dataclass
class GameSolution:
    value: float
    policies: dict       # role -> PolicyParams


def solve_game(view, level_specs, fixed: dict, budget: OptimizerBudget, seed) -> GameSolution:
    """Solve a nested game.

    ``level_specs`` is a list (outermost first) of dicts with keys
    ``roles``, ``families``, ``sense`` and optional ``anchors`` /
    ``init_mean``; ``fixed`` maps the remaining roles to PolicyParams.
    The outermost level uses ``budget``, deeper ones ``budget.inner()``.
    Noise and each level's search randomness come from separate children
    of ``seed``.
    """
    seeds = child_seeds(seed, 1 + len(level_specs))
    W, aux = draw_noise(view.env, budget.particles, np.random.default_rng(seeds[0]))
    levels = []
    for i, spec in enumerate(level_specs):
        levels.append(Level(tuple(spec["roles"]), tuple(spec["families"]), spec["sense"],
                            budget if i == 0 else budget.inner(),
                            np.random.default_rng(seeds[1 + i]), tuple(spec.get("anchors", ())),
                            spec.get("init_mean")))
    families = {r: p.family for r, p in fixed.items()}
    for lv in levels:
        families.update(zip(lv.roles, lv.families))
    fixed_rows = {r: p.theta[None, :] for r, p in fixed.items()}
    best_val, best_pay = None, None
    for restart in range(budget.restarts):
        if restart:
            levels[0] = replace(levels[0], rng=np.random.default_rng(
                child_seeds(seeds[1], restart + 1)[restart]))
        vals, best = solve_levels(levels, fixed_rows, 1, _scorer(view, families, W, aux))
        v = float(vals[0])
        if best_val is None or levels[0].sense * v > levels[0].sense * best_val:
            best_val, best_pay = v, best[0]
    pol = _unpack(levels, best_pay)
    pol.update(fixed)
    return GameSolution(best_val, pol)


# ---------------------------------------------------------------------------
# named solvers
# ---------------------------------------------------------------------------


def _hallucination_value(view, agent, adversary, eta_family, budget, seed, sense, anchors):
    fixed = {"agent": agent, "adversary": adversary}
    seeds = child_seeds(seed, 2)
    W, aux = draw_noise(view.env, budget.particles, np.random.default_rng(seeds[0]))
    fams = {"agent": agent.family, "adversary": adversary.family, "eta": eta_family}
    score = _scorer(view, fams, W, aux)
    zero = eta_family.zeros()
    rows = {"agent": agent.theta[None, :], "adversary": adversary.theta[None, :],
            "eta": zero.theta[None, :]}
    j_zero = float(score(rows)[0])
    if view.beta == 0.0 or eta_family.dim == 0:
        return j_zero, zero
    lv = Level(("eta",), (eta_family,), sense, budget, np.random.default_rng(seeds[1]),
               tuple(a.theta for a in anchors))
    vals, best = solve_levels([lv], {r: p.theta[None, :] for r, p in fixed.items()}, 1, score)
    v = float(vals[0])
    if sense * v > sense * j_zero:
        return v, PolicyParams(eta_family, best[0])
    return j_zero, zero


def optimistic_value(view: ModelView, agent, adversary, eta_family, budget, seed, anchors=()):
    """``max_eta J(mu + beta eta sigma)``; never below the eta = 0 value on the same noise."""
    return _hallucination_value(view, agent, adversary, eta_family, budget, seed, +1, anchors)


def pessimistic_value(view: ModelView, agent, adversary, eta_family, budget, seed, anchors=()):
    """``min_eta J(mu + beta eta sigma)``; never above the eta = 0 value on the same noise."""
    return _hallucination_value(view, agent, adversary, eta_family, budget, seed, -1, anchors)


def solve_maximin(view, agent_family: PolicyFamily, adversary_family: PolicyFamily, budget,
                  seed, objective: str = "optimistic", eta_family: PolicyFamily | None = None,
                  mode: str = "joint", warm: dict | None = None) -> GameSolution:
    """``argmax_pi min_pibar`` of the chosen objective.

    ``objective``: ``"optimistic"`` (hallucination maximised), ``"expected"``
    (eta = 0; also used on the true system).  In ``"joint"`` mode the
    optimistic eta is searched together with the agent (max over (pi, eta),
    then min over pibar); ``"nested"`` mode puts the eta max innermost.
    ``warm`` may hold previous parameter vectors under the keys ``agent``,
    ``adversary`` and ``eta``; they are used as anchors and as the outer
    search mean.
    """
    warm = warm or {}
    hallucinate = objective == "optimistic" and eta_family is not None and eta_family.dim > 0
    if objective not in ("optimistic", "expected"):
        raise ValueError(f"unknown objective {objective!r}")
    adv_anchor = [np.zeros(adversary_family.dim)]
    if "adversary" in warm:
        adv_anchor.append(np.asarray(warm["adversary"]))
    adv_anchor += adversary_family.vertex_params()
    adv_level = {"roles": ("adversary",), "families": (adversary_family,), "sense": -1,
                 "anchors": adv_anchor}
    if hallucinate and mode == "joint":
        fams = (agent_family, eta_family)
        zero = np.zeros(agent_family.dim + eta_family.dim)
        prev = np.concatenate([warm.get("agent", np.zeros(agent_family.dim)),
                               warm.get("eta", np.zeros(eta_family.dim))])
        specs = [{"roles": ("agent", "eta"), "families": fams, "sense": +1,
                  "anchors": _anchors(zero, prev, "agent" in warm), "init_mean": prev},
                 adv_level]
    else:
        zero = np.zeros(agent_family.dim)
        prev = np.asarray(warm.get("agent", zero), float)
        specs = [{"roles": ("agent",), "families": (agent_family,), "sense": +1,
                  "anchors": _anchors(zero, prev, "agent" in warm), "init_mean": prev},
                 adv_level]
        if hallucinate:
            if mode != "nested":
                raise ValueError(f"unknown hallucination mode {mode!r}")
            specs.append({"roles": ("eta",), "families": (eta_family,), "sense": +1,
                          "anchors": [np.zeros(eta_family.dim)]})
    return solve_game(view, specs, {}, budget, seed)


def maximize(view, agent_family, fixed_adversary: PolicyParams, budget, seed,
             objective: str = "optimistic", eta_family=None, warm=None) -> GameSolution:
    """Plain ``argmax_pi`` against a fixed adversary (the singleton-family case)."""
    warm = warm or {}
    hallucinate = objective == "optimistic" and eta_family is not None and eta_family.dim > 0
    if hallucinate:
        fams = (agent_family, eta_family)
        zero = np.zeros(agent_family.dim + eta_family.dim)
        prev = np.concatenate([warm.get("agent", np.zeros(agent_family.dim)),
                               warm.get("eta", np.zeros(eta_family.dim))])
        roles = ("agent", "eta")
    else:
        fams, roles = (agent_family,), ("agent",)
        zero = np.zeros(agent_family.dim)
        prev = np.asarray(warm.get("agent", zero), float)
    # the nested solver derives one child seed per level; keep the same layout
    # as a two-level game so that both paths consume identical streams
    seeds = child_seeds(seed, 3)
    specs = [{"roles": roles, "families": fams, "sense": +1,
              "anchors": _anchors(zero, prev, "agent" in warm), "init_mean": prev}]
    return _solve_with_seeds(view, specs, {"adversary": fixed_adversary}, budget, seeds)


def _solve_with_seeds(view, level_specs, fixed, budget, seeds):
    W, aux = draw_noise(view.env, budget.particles, np.random.default_rng(seeds[0]))
    spec = level_specs[0]
    lv = Level(tuple(spec["roles"]), tuple(spec["families"]), spec["sense"], budget,
               np.random.default_rng(seeds[1]), tuple(spec.get("anchors", ())), spec.get("init_mean"))
    families = {r: p.family for r, p in fixed.items()}
    families.update(zip(lv.roles, lv.families))
    fixed_rows = {r: p.theta[None, :] for r, p in fixed.items()}
    best_val, best_pay = None, None
    for restart in range(budget.restarts):
        if restart:
            lv = replace(lv, rng=np.random.default_rng(child_seeds(seeds[1], restart + 1)[restart]))
        vals, best = solve_levels([lv], fixed_rows, 1, _scorer(view, families, W, aux))
        v = float(vals[0])
        if best_val is None or v > best_val:
            best_val, best_pay = v, best[0]
    pol = _unpack([lv], best_pay)
    pol.update(fixed)
    return GameSolution(best_val, pol)


def _anchors(zero, prev, has_prev):
    return [zero, prev] if has_prev else [zero]


def solve_adversary_pessimistic(view, agent: PolicyParams, adversary_family: PolicyFamily, budget,
                                seed, objective: str = "pessimistic",
                                eta_family: PolicyFamily | None = None,
                                warm: dict | None = None) -> GameSolution:
    """``argmin_pibar`` of the pessimistic (or expected) value against a frozen agent.

    The pessimistic objective is a min over (pibar, eta), so both are searched
    jointly; the box-centre adversary with eta = 0 and the box corners with
    eta = 0 are always anchors.
    """
    warm = warm or {}
    if objective not in ("pessimistic", "expected"):
        raise ValueError(f"unknown objective {objective!r}")
    if objective == "pessimistic" and eta_family is not None and eta_family.dim > 0:
        fams = (adversary_family, eta_family)
        roles = ("adversary", "eta")
        zero = np.zeros(adversary_family.dim + eta_family.dim)
        prev = np.concatenate([warm.get("adversary", np.zeros(adversary_family.dim)),
                               warm.get("eta", np.zeros(eta_family.dim))])
    else:
        fams, roles = (adversary_family,), ("adversary",)
        zero = np.zeros(adversary_family.dim)
        prev = np.asarray(warm.get("adversary", zero), float)
    pad = np.zeros(zero.size - adversary_family.dim)
    corners = [np.concatenate([v, pad]) for v in adversary_family.vertex_params()]
    specs = [{"roles": roles, "families": fams, "sense": -1,
              "anchors": _anchors(zero, prev, "adversary" in warm) + corners, "init_mean": prev}]
    return solve_game(view, specs, {"agent": agent}, budget, seed)
