"""Invariant suites run by ``rhucrl checks``.

Each suite returns rows ``(suite, check, passed, value, threshold)``;
:func:`run_all` formats them as a tab-separated table.  The suites are
small, seeded versions of the properties the library relies on:

* ``gp_oracle`` -- block-extended Cholesky posterior vs dense inversion
* ``calibration`` -- temperature direction, self-consistency, std scaling,
  search bounds and coverage of GP-prior samples
* ``tube`` -- hallucinated predictions stay inside the confidence tube
* ``sandwich`` -- pessimistic value never exceeds the optimistic value
* ``deviation`` -- true/plausible trajectory deviation bound
* ``variance_sum`` -- sum of posterior variances vs information gain
"""

from __future__ import annotations

import math

import numpy as np

from .envs import LinearToyEnv
from .gp import (TEMPERATURE_BOUNDS, BetaSchedule, GpDynamicsModel, GpRegressor, Kernel,
                 info_gain_closed_form)
from .hallucination import (HallucinatedDynamics, TheoryParams, plausible_membership,
                            se_std_lipschitz, trajectory_deviation_check, tube_sample)
from .policies import PolicyParams, adversary_family, agent_family, hallucination_family

COLUMNS = ("suite", "check", "status", "value", "threshold")


# ---------------------------------------------------------------------------
# GP posterior vs dense inversion
# ---------------------------------------------------------------------------


def random_gp_instance(rng, max_n=50, max_dim=8):
    """Random kernel, regulariser and data set; returns (kernel, lam, X, Y, Xq)."""
    d = int(rng.integers(1, max_dim + 1))
    n = int(rng.integers(1, max_n + 1))
    p = int(rng.integers(1, 4))
    k = Kernel("se", tuple(rng.uniform(0.3, 3.0, d)), float(rng.uniform(0.2, 1.0)))
    lam = float(10 ** rng.uniform(-3, 0))
    X = rng.uniform(-2, 2, (n, d))
    return k, lam, X, rng.standard_normal((n, p)), rng.uniform(-2, 2, (20, d))


def gp_oracle_error(rng, max_n=50, max_dim=8):
    """Largest |difference| between the incremental posterior (random batch
    sizes) and ``K_q (K + lam I)^-1 [y, K_q^T]`` by explicit inversion."""
    k, lam, X, Y, Xq = random_gp_instance(rng, max_n, max_dim)
    g = GpRegressor(k, X.shape[1], Y.shape[1], lam)
    i = 0
    while i < len(X):
        j = i + int(rng.integers(1, 8))
        g.add(X[i:j], Y[i:j])
        i = j
    mu, var = g.predict(Xq)
    Ainv = np.linalg.inv(k(X, X) + lam * np.eye(len(X)))
    Kq = k(Xq, X)
    mu_ref = Kq @ Ainv @ Y
    var_ref = k.diag(Xq) - np.einsum("ij,jk,ik->i", Kq, Ainv, Kq)
    return max(float(np.abs(mu - mu_ref).max()), float(np.abs(var - var_ref).max()))


def suite_gp_oracle(rng, instances=40, tol=1e-8):
    err = max(gp_oracle_error(rng) for _ in range(instances))
    return [("gp_oracle", "posterior_vs_dense", err <= tol, err, tol)]


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def calibration_case(rng, noise_factor=1.0, n_train=20, n_val=500, noise=0.1):
    """Model fitted on a linear toy plus a validation set drawn from the
    model's own one-step predictive with the noise scaled by ``noise_factor``.

    Returns ``(model, (S, U, Ubar, S_next))``.
    """
    env = LinearToyEnv(a=0.8, b=0.5, b_adv=0.3, noise_std=noise)
    model = GpDynamicsModel.for_env(env, lam=noise ** 2, kernel=Kernel("se", (1.0,)))
    S, U, Ub = (rng.uniform(-1, 1, (n_train, 1)) for _ in range(3))
    Sn = env.dynamics(S, U, Ub) + noise * rng.standard_normal((n_train, 1))
    model.gp.add(model.embed(S, U, Ub), model._targets(S, Sn))
    S = rng.uniform(-3, 3, (n_val, 1))
    U, Ub = (rng.uniform(-1, 1, (n_val, 1)) for _ in range(2))
    mean, std = model.predict(S, U, Ub)
    Sn = mean + np.sqrt(std ** 2 + (noise_factor * noise) ** 2) * rng.standard_normal(mean.shape)
    return model, (S, U, Ub, Sn)


def prior_coverage(rng, n_functions=10, n_train=100, n_held=100, dim=2, delta=0.1,
                   noise=0.1, lam=1.0, rkhs_bound=1.0):
    """Fraction of held-out points with ``|f - mu| <= beta sigma`` for f drawn
    from the GP prior, with beta from the theoretical schedule."""
    k = Kernel("se", (0.5,))
    hits = []
    for _ in range(n_functions):
        X = rng.uniform(-1, 1, (n_train + n_held, dim))
        K = k(X, X) + 1e-9 * np.eye(len(X))
        f = np.linalg.cholesky(K) @ rng.standard_normal(len(X))
        g = GpRegressor(k, dim, 1, lam)
        g.add(X[:n_train], (f[:n_train] + noise * rng.standard_normal(n_train))[:, None])
        gamma = info_gain_closed_form(k, X[:n_train], lam)
        beta = BetaSchedule("theoretical", rkhs_bound=rkhs_bound, noise_std=noise, lam=lam,
                            delta=delta).beta(gamma)
        mu, var = g.predict(X[n_train:])
        hits.append(np.abs(f[n_train:] - mu[:, 0]) <= beta * np.sqrt(var))
    return float(np.concatenate(hits).mean())


def suite_calibration(rng, cases=5):
    rows = []
    up = [calibration_case(rng, 2.0) for _ in range(cases)]
    t_up = [m.recalibrate(*v) for m, v in up]
    rows.append(("calibration", "doubled_noise_T_gt_1", min(t_up) > 1.0, min(t_up), 1.0))
    same = [calibration_case(rng, 1.0) for _ in range(cases)]
    t_same = [m.recalibrate(*v) for m, v in same]
    ok = all(0.8 <= t <= 1.25 for t in t_same)
    rows.append(("calibration", "self_consistent_T_near_1", ok,
                 max(abs(math.log(t)) for t in t_same), math.log(1.25)))
    model, (S, U, Ub, _) = up[0]
    model.temperature = 2.0
    _, std = model.predict(S, U, Ub)
    _, var = model.gp.predict(model.embed(S, U, Ub))
    raw = np.sqrt(var)[:, None] * model.out_scale[None, :]
    err = float(np.abs(std - 2.0 * raw).max())
    rows.append(("calibration", "std_equals_raw_times_T", err <= 1e-12, err, 1e-12))
    m, (S, U, Ub, Sn) = calibration_case(rng, 1.0)
    far = Sn + 1e4 * np.sign(rng.standard_normal(Sn.shape))
    t_hi = m.recalibrate(S, U, Ub, far)
    t_lo = m.recalibrate(S, U, Ub, m.predict(S, U, Ub)[0])
    inside = TEMPERATURE_BOUNDS[0] <= t_lo <= t_hi <= TEMPERATURE_BOUNDS[1]
    rows.append(("calibration", "search_within_bounds", inside and t_hi > 1.0 > t_lo, t_hi,
                 TEMPERATURE_BOUNDS[1]))
    cov = prior_coverage(rng)
    rows.append(("calibration", "prior_sample_coverage", cov >= 0.88, cov, 0.88))
    return rows


# ---------------------------------------------------------------------------
# tube containment
# ---------------------------------------------------------------------------


def tube_violations(rng, n=10000, p=3):
    """Violations of ``|x - noise - mu| <= beta sigma`` over random inputs whose
    magnitudes span many orders (the floating-point edge cases)."""
    mean = rng.standard_normal((n, p)) * 10.0 ** rng.uniform(-3, 6, (n, 1))
    std = 10.0 ** rng.uniform(-12, 1, (n, p))
    beta = 10.0 ** rng.uniform(-2, 1.5, (n, 1))
    eta = rng.uniform(-3, 3, (n, p))
    noise = rng.standard_normal((n, p)) * 10.0 ** rng.uniform(-8, 2, (n, 1))
    nxt, free = tube_sample(mean, std, beta, eta, noise)
    bad = (np.abs(nxt - noise - mean) > beta * std) | (np.abs(free - mean) > beta * std)
    return int(bad.sum())


def suite_tube(rng, n=10000):
    v = tube_violations(rng, n)
    return [("tube", "containment", v == 0, v, 0)]


# ---------------------------------------------------------------------------
# sandwich
# ---------------------------------------------------------------------------


def suite_sandwich(rng, episodes=3):
    from .algorithm import Learner, LearnerConfig
    from .optim import OptimizerBudget
    from .types import SeedContract

    env = LinearToyEnv(a=0.9, b=1.0, b_adv=-0.5, noise_std=0.05, horizon=5)
    budget = OptimizerBudget(population=12, iterations=3, inner_population=6, inner_iterations=2,
                             particles=2)
    worst = -math.inf
    for beta in (0.0, 1.0):
        model = GpDynamicsModel.for_env(env, lam=0.01, kernel=Kernel("se", (1.0,)),
                                        beta_schedule=BetaSchedule("fixed", beta))
        learner = Learner(env, model, LearnerConfig(budget=budget),
                          SeedContract(int(rng.integers(2 ** 31))))
        recs = learner.run(episodes)
        worst = max(worst, max(r.J_pess - r.J_opt for r in recs))
        if beta == 0.0:
            collapse = max(abs(r.J_pess - r.J_opt) for r in recs)
    return [("sandwich", "J_pess_le_J_opt", worst <= 0.0, worst, 0.0),
            ("sandwich", "beta0_collapse", collapse == 0.0, collapse, 0.0)]


# ---------------------------------------------------------------------------
# trajectory deviation bound
# ---------------------------------------------------------------------------


def deviation_env():
    return LinearToyEnv(a=0.9, b=0.5, b_adv=-0.3, noise_std=0.05, horizon=10)


def deviation_model(env, rng, n=30):
    """GP model on random transitions of ``env`` (no angle embedding)."""
    model = GpDynamicsModel.for_env(env, lam=0.01, kernel=Kernel("se", (1.0,)))
    S = rng.uniform(-2, 2, (n, 1))
    U, Ub = (rng.uniform(-1, 1, (n, 1)) for _ in range(2))
    Sn = env.dynamics(S, U, Ub) + env.noise_std * rng.standard_normal((n, 1))
    model.gp.add(model.embed(S, U, Ub), model._targets(S, Sn))
    return model


def trajectory_pair(env, model, agent, adversary, eta, beta, noise):
    """True and plausible state sequences (H + 1 rows) sharing the noise, the
    model std norms along the true trajectory and the plausible inputs."""
    H = env.spec.horizon
    s = np.asarray(env.spec.initial_state, float)[None, :]
    st = s.copy()
    true, plaus, sig, Z = [s[0]], [st[0]], [], []
    hd = HallucinatedDynamics(model, beta, eta)
    for h in range(H):
        u, ub = agent(s[0])[None, :], adversary(s[0])[None, :]
        sig.append(float(np.linalg.norm(model.predict(s, u, ub)[1][0])))
        s = env.dynamics(s, u, ub) + noise[h]
        ut, ubt = agent(st[0])[None, :], adversary(st[0])[None, :]
        Z.append((st[0], ut[0], ubt[0]))
        st, _ = hd.predict(st, ut, ubt, noise[h][None, :])
        true.append(s[0])
        plaus.append(st[0])
    return np.array(true), np.array(plaus), np.array(sig), Z


def deviation_trial(env, model, rng, factor=2.0):
    """One seeded pair; beta is enlarged until the true dynamics lies in the
    tube at every plausible input (the premise of the bound).

    Returns ``(bound_holds, beta)``.
    """
    agent_f, adv_f = agent_family(env, "linear"), adversary_family(env, "linear")
    eta_f = hallucination_family(env, "linear")
    agent = PolicyParams(agent_f, rng.normal(0, 0.5, agent_f.dim))
    adversary = PolicyParams(adv_f, rng.normal(0, 0.5, adv_f.dim))
    eta = PolicyParams(eta_f, rng.normal(0, 3.0, eta_f.dim))
    noise = env.noise_std * rng.standard_normal((env.spec.horizon, 1))
    beta = 1.0
    for _ in range(50):
        true, plaus, sig, Z = trajectory_pair(env, model, agent, adversary, eta, beta, noise)
        S, U, Ub = (np.array([z[i] for z in Z]) for i in range(3))
        if plausible_membership(model, beta, env.dynamics, S, U, Ub):
            break
        mean, std = model.predict(S, U, Ub)
        beta = max(beta * 1.5, 1.25 * float(np.max(np.abs(env.dynamics(S, U, Ub) - mean) / std)))
    else:
        raise RuntimeError("could not place the true dynamics inside the tube")
    theory = TheoryParams(env.lipschitz, se_std_lipschitz(model),
                          agent_f.lipschitz_bound(agent.theta), adv_f.lipschitz_bound(adversary.theta))
    return trajectory_deviation_check(true, plaus, theory, beta, sig, factor), beta


def deviation_violations(rng, pairs=100, factor=2.0):
    env = deviation_env()
    model = deviation_model(env, rng)
    return sum(not deviation_trial(env, model, rng, factor)[0] for _ in range(pairs))


def suite_deviation(seed, pairs=30):
    v = deviation_violations(np.random.default_rng(seed), pairs, 2.0)
    ctrl = deviation_violations(np.random.default_rng(seed), pairs, 1.0)
    return [("deviation", "bound_holds", v == 0, v, 0),
            ("deviation", "negative_control_fails", ctrl >= 1, ctrl, 1)]


# ---------------------------------------------------------------------------
# variance sum
# ---------------------------------------------------------------------------


def variance_sum_ratio(rng, steps=100, p=2):
    """``sum sigma^2 / ((1 + 2 lam) I)`` along one random sequence added point by point."""
    d = int(rng.integers(1, 5))
    k = Kernel("se", tuple(rng.uniform(0.2, 2.0, d)), float(rng.uniform(0.1, 1.0)))
    lam = float(10 ** rng.uniform(-3, 1))
    model = GpDynamicsModel(_identity(d), p, kernel=k, lam=lam)
    X = rng.uniform(-2, 2, (steps, d))
    for x in X:
        seq, _ = model.gp.add(x[None, :], rng.standard_normal((1, p)))
        model.tracker.record(seq)
    gamma, info, ok = model.complexity_report()
    return gamma / ((1 + 2 * lam) * info), ok


def _identity(d):
    from .policies import InputTransform
    return InputTransform(d, (), np.zeros(d), np.ones(d))


def suite_variance_sum(rng, sequences=20):
    res = [variance_sum_ratio(rng) for _ in range(sequences)]
    worst = max(r for r, _ in res)
    return [("variance_sum", "bound_holds", all(ok for _, ok in res) and worst <= 1.0, worst, 1.0)]


# ---------------------------------------------------------------------------


SUITES = ("gp_oracle", "calibration", "tube", "sandwich", "deviation", "variance_sum")


def run_suite(name, seed=0):
    rng = np.random.default_rng([seed, SUITES.index(name)])
    if name == "deviation":
        return suite_deviation(seed)
    return globals()[f"suite_{name}"](rng)


def format_table(rows) -> str:
    lines = ["\t".join(COLUMNS)]
    for suite, check, ok, value, thr in rows:
        lines.append(f"{suite}\t{check}\t{'PASS' if ok else 'FAIL'}\t{value!r}\t{thr!r}")
    return "\n".join(lines)


def run_all(seed=0, suites=SUITES):
    """``(table, all_passed)`` over the named suites."""
    rows = []
    for name in suites:
        rows.extend((s, c, bool(ok), float(v), float(t)) for s, c, ok, v, t in run_suite(name, seed))
    return format_table(rows), all(r[2] for r in rows)
