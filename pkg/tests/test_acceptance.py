"""Acceptance criteria 1-11, one test each; every test records a pass/fail line."""

import time
from pathlib import Path

import numpy as np
import pytest

from rhucrl import checks, cli, config
from rhucrl.algorithm import Learner, LearnerConfig, RegretLedger
from rhucrl.envs import LinearToyEnv, PendulumEnv, grid_oracle
from rhucrl.gp import TEMPERATURE_BOUNDS, BetaSchedule, GpDynamicsModel, Kernel
from rhucrl.hallucination import HallucinatedDynamics, hallucinated_step
from rhucrl.optim import OptimizerBudget, TrueView, solve_maximin
from rhucrl.policies import PolicyParams, adversary_family, agent_family, hallucination_family
from rhucrl.types import SeedContract

CONFIGS = Path(__file__).parents[1] / "configs"


def test_gp_oracle_equivalence(criterion):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    err = max(checks.gp_oracle_error(rng, max_n=50, max_dim=8) for _ in range(200))
    secs = time.perf_counter() - start
    ok = err <= 1e-8 and secs < 10.0
    assert criterion(1, ok, f"max |error| {err:.2e} (<= 1e-8), {secs:.1f} s (< 10 s), 200 instances")


def test_calibration_coverage(criterion):
    start = time.perf_counter()
    # 10 prior functions x 100 held-out points, theoretical beta at delta = 0.1
    cov = checks.prior_coverage(np.random.default_rng(2), n_functions=10, n_held=100, delta=0.1)
    secs = time.perf_counter() - start
    ok = cov >= 0.88 and secs < 30.0
    assert criterion(2, ok, f"coverage {cov:.3f} (>= 0.88) over 1000 points, {secs:.1f} s (< 30 s)")


def _tube_models(rng):
    out = []
    for env in (LinearToyEnv(noise_std=0.05), PendulumEnv(channel="gravity_mass", horizon=20)):
        sp = env.spec
        n = 40
        S = rng.uniform(-3, 3, (n, sp.state_dim))
        U = rng.uniform(-1, 1, (n, sp.action_dim)) * sp.action_box.high
        Ub = sp.adversary_box.center + rng.uniform(-1, 1, (n, sp.adversary_dim)) * sp.adversary_box.half_width
        model = GpDynamicsModel.for_env(env, lam=0.01)
        model.gp.add(model.embed(S, U, Ub), model._targets(S, env.dynamics(S, U, Ub)))
        out.append((env, model))
    return out


def test_tube_containment(criterion):
    rng = np.random.default_rng(3)
    violations, calls = 0, 0
    for env, model in _tube_models(rng):
        sp = env.spec
        fam = hallucination_family(env, "linear")
        for _ in range(50_000):
            # a zero-width tube with nonzero noise has no exact float solution,
            # so beta = 0 is drawn only together with zero noise
            zero = rng.random() < 0.1
            beta = 0.0 if zero else float(10 ** rng.uniform(-3, 1.5))
            eta = PolicyParams(fam, rng.normal(0, 10.0, fam.dim))
            h = HallucinatedDynamics(model, beta, eta)
            s = rng.standard_normal(sp.state_dim) * 10 ** rng.uniform(-2, 3)
            u = rng.uniform(-1, 1, sp.action_dim) * sp.action_box.high
            ub = sp.adversary_box.center + rng.uniform(-1, 1, sp.adversary_dim) * sp.adversary_box.half_width
            w = np.zeros(sp.state_dim) if zero else \
                rng.standard_normal(sp.state_dim) * 10 ** rng.uniform(-6, 0)
            nxt = hallucinated_step(h, s, u, ub, w)
            mean, std = model.predict(s[None], u[None], ub[None])
            violations += int(np.sum(np.abs(nxt - w - mean[0]) > beta * std[0]))
            calls += 1
    assert calls == 100_000
    assert criterion(3, violations == 0, f"{violations} violations in {calls} hallucinated_step calls")


def test_variance_sum_bound(criterion):
    rng = np.random.default_rng(4)
    res = [checks.variance_sum_ratio(rng, steps=100) for _ in range(50)]
    bad = sum(1 for ratio, ok in res if not ok or ratio > 1.0)
    worst = max(r for r, _ in res)
    assert criterion(4, bad == 0, f"{bad} violations in 50 sequences, max ratio {worst:.3f} (<= 1)")


def test_sandwich_full_pendulum_run(criterion):
    env = PendulumEnv(channel="gravity_mass", adversary_strength=0.5, horizon=40)
    model = GpDynamicsModel.for_env(env, lam=1e-3, out_scale=[0.5, 1.0],
                                    kernel=Kernel("se", (1.0, 1.0, 2.0, 2.0, 2.0, 2.0)),
                                    beta_schedule=BetaSchedule("fixed", 1.0),
                                    admit_variance=1e-3, max_points=300)
    budget = OptimizerBudget(population=8, iterations=2, inner_population=4, inner_iterations=1,
                             particles=1)
    learner = Learner(env, model, LearnerConfig(budget=budget), SeedContract(5))
    recs = learner.run(200)
    bad = [r.t for r in recs if not r.J_pess <= r.J_opt]
    gap = max(r.J_pess - r.J_opt for r in recs)
    assert criterion(5, len(recs) == 200 and not bad,
                     f"{len(bad)} of {len(recs)} episodes with J_pess > J_opt, max gap {gap:.3g}")


def test_hucrl_reduction(criterion):
    env = LinearToyEnv(a=0.9, b=1.0, b_adv=-0.5, s_ref=0.5, horizon=5, noise_std=0.02)
    budget = OptimizerBudget(population=12, iterations=4, inner_population=6, inner_iterations=3,
                             particles=2)

    def run(variant, **kw):
        model = GpDynamicsModel.for_env(env, lam=0.01, kernel=Kernel("se", (1.0,)))
        cfg = LearnerConfig(variant=variant, budget=budget, **kw)
        return Learner(env, model, cfg, SeedContract(6)).run(20)

    a = run("RH-UCRL", adversary_features="none")
    b = run("H-UCRL")
    same = all(np.array_equal(x.agent.theta, y.agent.theta) for x, y in zip(a, b))
    same = same and len(a) == len(b) == 20
    assert criterion(6, same, "agent-policy traces bit-identical over 20 episodes" if same
                     else "agent-policy traces differ")


def test_trajectory_deviation_bound(criterion):
    v = checks.deviation_violations(np.random.default_rng(7), pairs=100, factor=2.0)
    ctrl = checks.deviation_violations(np.random.default_rng(7), pairs=100, factor=1.0)
    ok = v == 0 and ctrl >= 1
    assert criterion(7, ok, f"{v} violations in 100 pairs; negative control (factor 1) {ctrl} violations")


def _pendulum_seed(variant, seed, root):
    cfg = config.load(CONFIGS / "pendulum_adversarial.yaml")
    cfg = config.set_path(config.set_path(cfg, "variant", variant), "seed", seed)
    out = str(root / f"{variant}_{seed}")
    cli.cmd_train(cfg, out)
    report = cli.cmd_evaluate(cfg, out)
    _, rows = cli.read_csv(Path(out) / "episodes.csv")
    assert len(rows) == cfg["episodes"]
    last10 = float(np.mean([float(r["return"]) for r in rows[-10:]]))
    return report["worst_case"], last10, cfg["evaluation"]["success_threshold"]


@pytest.mark.slow
def test_pendulum_robust_vs_minimax(criterion, tmp_path):
    seeds = range(5)
    rows, slowest = [], 0.0
    for seed in seeds:
        start = time.perf_counter()
        rh = _pendulum_seed("RH-UCRL", seed, tmp_path)
        mm = _pendulum_seed("MiniMax", seed, tmp_path)
        slowest = max(slowest, time.perf_counter() - start)
        rows.append((rh, mm))
        print(f"seed {seed}: RH-UCRL worst {rh[0]:.1f} last10 {rh[1]:.1f}; "
              f"MiniMax worst {mm[0]:.1f} last10 {mm[1]:.1f}; threshold {rh[2]}", flush=True)
    wins = sum(rh[0] > mm[0] for rh, mm in rows)
    rh_up = sum(rh[1] > rh[2] for rh, _ in rows)
    mm_up = sum(mm[1] > mm[2] for _, mm in rows)
    ok = wins >= 4 and rh_up >= 4 and mm_up <= 1 and slowest <= 30 * 60
    assert criterion(8, ok, f"worst-case RH-UCRL > MiniMax in {wins}/5 (>= 4); swing-up RH-UCRL "
                     f"{rh_up}/5 (>= 4), MiniMax {mm_up}/5 (<= 1); slowest seed {slowest / 60:.1f} min "
                     f"(<= 30, both variants)")


def test_regret_trend(criterion):
    env = LinearToyEnv(a=1.0, b=1.0, b_adv=-0.5, s_ref=0.5, r_action=0.2, r_adversary=1.0,
                       horizon=3, noise_std=0.05)
    benchmark = float(env.robust_value(np.linspace(-env.action_bound, env.action_bound, 4001)).max())
    budget = OptimizerBudget(population=16, iterations=6, inner_population=8, inner_iterations=4,
                             particles=2)
    lines, ok = [], True
    for seed in range(5):
        model = GpDynamicsModel.for_env(env, lam=0.05 ** 2, kernel=Kernel("se", (1.0,)),
                                        beta_schedule=BetaSchedule("fixed", 1.0))
        learner = Learner(env, model, LearnerConfig(budget=budget, agent_features="constant"),
                          SeedContract(seed))
        ledger = RegretLedger(benchmark)
        for _ in range(100):
            rec = learner.run_episode()
            ledger.update(float(env.robust_value(rec.agent(np.zeros(1))[0])[0]))
        avg = ledger.average()
        first, second = avg[:50].mean(), avg[50:].mean()
        ok &= bool(second < first)
        lines.append(f"{first:.3f}->{second:.3f}")
    assert criterion(9, ok, "mean R_t/t first->second half per seed: " + ", ".join(lines))


def test_maximin_saddle(criterion):
    env = LinearToyEnv(a=1.0, b=1.0, b_adv=-0.5, s_ref=0.5, r_action=0.2, r_adversary=1.0, horizon=3)
    oracle, _, _ = grid_oracle(env, 101, "maxmin")
    budget = OptimizerBudget(population=32, iterations=15, inner_population=16, inner_iterations=10,
                             particles=1)
    args = (TrueView(env), agent_family(env, "constant"), adversary_family(env), budget)
    errs = []
    for seed in range(5):
        errs.append(abs(solve_maximin(*args, seed, "expected").value - oracle) / abs(oracle))
    a, b = solve_maximin(*args, 0, "expected"), solve_maximin(*args, 0, "expected")
    det = a.value == b.value and all(np.array_equal(a.policies[k].theta, b.policies[k].theta)
                                     for k in a.policies)
    ok = max(errs) <= 0.05 and det
    assert criterion(10, ok, f"max relative error {max(errs):.4f} (<= 0.05) vs grid {oracle:.4f}; "
                     f"repeat run {'identical' if det else 'differs'}")


def test_recalibration_direction(criterion):
    rng = np.random.default_rng(11)
    up = [m.recalibrate(*v) for m, v in (checks.calibration_case(rng, 2.0) for _ in range(10))]
    same = [m.recalibrate(*v) for m, v in (checks.calibration_case(rng, 1.0) for _ in range(10))]
    lo, hi = TEMPERATURE_BOUNDS
    edge = []
    for _ in range(10):
        m, (S, U, Ub, Sn) = checks.calibration_case(rng, 1.0)
        edge.append(m.recalibrate(S, U, Ub, Sn + 1e6 * np.sign(rng.standard_normal(Sn.shape))))
        edge.append(m.recalibrate(S, U, Ub, m.predict(S, U, Ub)[0]))
    ok = (min(up) > 1.0 and all(0.8 <= t <= 1.25 for t in same)
          and (lo, hi) == (0.01, 100.0) and all(lo <= t <= hi for t in edge))
    assert criterion(11, ok, f"doubled noise T in [{min(up):.3f}, {max(up):.3f}] (> 1); "
                     f"self-consistent T in [{min(same):.3f}, {max(same):.3f}] (in [0.8, 1.25]); "
                     f"extreme cases T in [{min(edge):.3g}, {max(edge):.3g}] (in [0.01, 100])")
