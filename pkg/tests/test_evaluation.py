import numpy as np
import pytest

from rhucrl.envs import LinearToyEnv, ParameterRobustWrapper, PendulumEnv
from rhucrl.evaluation import (EvaluationReport, SweepSpec, default_eval_budget, export_plot_data,
                               import_plot_data, parameter_sweep, worst_case_eval)
from rhucrl.optim import OptimizerBudget, TrueView, estimate_J
from rhucrl.policies import PolicyParams, adversary_family, agent_family

BUDGET = OptimizerBudget(population=12, iterations=5, particles=4)


def _stabilizer(env):
    # u = 5 tanh(-omega / 16 - 2 sin(theta)): holds the pendulum upright near the top
    fam = agent_family(env, "linear")
    return PolicyParams(fam, [-0.5, 0.0, -2.0, 0.0])


def test_default_eval_budget_quadruples_candidates():
    b = default_eval_budget(OptimizerBudget(population=16, iterations=9))
    assert (b.population, b.iterations) == (32, 18)


def test_zero_channel_worst_equals_average():
    env = LinearToyEnv(b_adv=0.0, noise_std=0.1, horizon=6)
    agent = PolicyParams(agent_family(env), [0.3, 0.2])
    rep = worst_case_eval(env, agent, None, BUDGET, 2, 0)
    assert rep.worst_case <= rep.average
    se = estimate_J(TrueView(env), agent, adversary_family(env).zeros(), 4, 0).std_error
    assert rep.average - rep.worst_case <= 2 * se + 1e-12


def test_worst_case_monotone_in_box_size():
    values = []
    for strength in (0.2, 0.5, 1.0):
        env = PendulumEnv(initial_angle=0.3, horizon=30, adversary_strength=strength)
        rep = worst_case_eval(env, _stabilizer(env), None, BUDGET, 2, 1)
        values.append(rep.worst_case)
        assert rep.worst_case == rep.min_candidate
        assert rep.worst_case <= min(rep.curve) + 1e-12
    assert values[0] >= values[1] >= values[2]


def test_report_bookkeeping_and_determinism():
    env = PendulumEnv(initial_angle=0.3, horizon=20)
    a = worst_case_eval(env, _stabilizer(env), None, BUDGET, 3, 5, agent_id="x")
    b = worst_case_eval(env, _stabilizer(env), None, BUDGET, 3, 5, agent_id="x")
    assert a == b
    assert len(a.restarts) == 3 and a.worst_case == min(a.restarts + [a.average])
    assert a.min_candidate == a.worst_case
    assert EvaluationReport.from_json(a.to_json()) == a


def test_parameter_sweep_nominal_cell_and_worst():
    env = PendulumEnv(initial_angle=0.3, horizon=30)
    agent = _stabilizer(env)
    wrapper = ParameterRobustWrapper(env, "mass", (0.5, 1.5))
    nominal = parameter_sweep(wrapper, agent, SweepSpec("parameter", (1.0,)), 3, particles=2)
    direct = estimate_J(TrueView(env), agent, adversary_family(env, "none").zeros(), 2, 3)
    assert nominal.worst_case == nominal.average == direct.mean
    rep = parameter_sweep(wrapper, agent, SweepSpec("parameter", (0.5, 1.0, 1.5), 2), 3, particles=2)
    cells = {v: m for v, m, _ in rep.per_value}
    assert rep.worst_case == min(cells.values()) <= cells[1.0]
    assert rep.worst_value in cells and cells[rep.worst_value] == rep.worst_case
    assert rep.average == pytest.approx(np.mean(list(cells.values())))


def test_parameter_sweep_grid_validation():
    wrapper = ParameterRobustWrapper(PendulumEnv(), "mass", (0.001, 2.0))
    agent = agent_family(PendulumEnv()).zeros()
    with pytest.raises(ValueError):
        parameter_sweep(wrapper, agent, SweepSpec("parameter", (1.0, 2.5)), 0)
    with pytest.raises(ValueError):
        SweepSpec("parameter", ())
    with pytest.raises(ValueError):
        SweepSpec("gravity", (1.0,))


def test_plot_export_roundtrip(tmp_path):
    env = PendulumEnv(initial_angle=0.3, horizon=15)
    rep = worst_case_eval(env, _stabilizer(env), None, BUDGET, 2, 0)
    sweep = parameter_sweep(ParameterRobustWrapper(env, "mass"), _stabilizer(env),
                            SweepSpec("parameter", (0.5, 1.0)), 0)
    text = export_plot_data({"adv": rep, "mass": sweep}, tmp_path / "plot.csv")
    assert (tmp_path / "plot.csv").read_text() == text
    back = import_plot_data(text)
    assert back["adv"]["restarts"] == rep.restarts
    assert back["adv"]["worst_case"] == rep.worst_case and back["adv"]["average"] == rep.average
    assert back["mass"]["cells"] == [tuple(c) for c in sweep.per_value]
