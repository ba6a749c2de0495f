import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rhucrl.envs import LinearToyEnv, PendulumEnv
from rhucrl.policies import (InputTransform, PolicyFamily, PolicyParams, agent_family,
                             adversary_family, hallucination_family)


@pytest.mark.parametrize("fm", ["constant", "linear", "quadratic", "radial"])
def test_outputs_stay_in_box(fm):
    fam = agent_family(PendulumEnv(torque_limit=2.0), fm)
    rng = np.random.default_rng(0)
    X = rng.uniform(-50, 50, (10_000, 2))
    theta = 30.0 * rng.standard_normal((10_000, fam.dim))
    out = fam.act(theta, X)
    assert out.min() >= -2.0 and out.max() <= 2.0


def test_clip_saturation_stays_in_box():
    fam = agent_family(LinearToyEnv(), "linear", saturation="clip")
    out = fam.act(np.full(2, 100.0), np.array([[5.0], [-5.0]]))
    np.testing.assert_array_equal(out, [[1.0], [-1.0]])


def test_zero_parameters_give_box_centre():
    env = PendulumEnv(channel="gravity_mass")
    fam = adversary_family(env, "linear")
    np.testing.assert_array_equal(fam.zeros()(np.array([1.0, 2.0])), [1.0, 1.0])
    assert adversary_family(env, "none").dim == 0


def test_linear_tanh_closed_form():
    fam = agent_family(LinearToyEnv(action_bound=2.0, state_scale_value=4.0), "linear")
    theta = np.array([0.8, -0.1])
    x = 1.5
    assert fam.zeros().family.dim == 2
    assert PolicyParams(fam, theta)(np.array([x]))[0] == pytest.approx(2.0 * np.tanh(0.8 * x / 4.0 - 0.1))


def test_dimension_counts():
    fam = agent_family(PendulumEnv(), "quadratic")
    # embedded (omega, cos, sin): 3 linear, 6 products, 1 bias
    assert fam.n_features == 10 and fam.dim == 10
    # embedded (omega, u, ubar, cos, sin) plus bias, for each of 2 state outputs
    assert hallucination_family(PendulumEnv(), "linear").dim == 2 * (5 + 1)
    assert hallucination_family(PendulumEnv(channel="gravity_mass"), "linear").dim == 2 * (6 + 1)


def test_input_transform_angles_and_scaling():
    T = InputTransform(2, (0,), (0.0, 1.0), (1.0, 4.0))
    E = T(np.array([[np.pi / 2, 9.0]]))
    np.testing.assert_allclose(E, [[2.0, 0.0, 1.0]], atol=1e-15)
    with pytest.raises(ValueError):
        InputTransform(2, (), (0.0,), (1.0, 1.0))
    with pytest.raises(ValueError):
        InputTransform(1, (), (0.0,), (0.0,))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_json_roundtrip_bit_exact(seed):
    rng = np.random.default_rng(seed)
    fam = agent_family(PendulumEnv(), ["linear", "quadratic", "radial"][seed % 3])
    p = PolicyParams(fam, rng.standard_normal(fam.dim) * 10.0 ** rng.uniform(-300, 300))
    back = PolicyParams.loads(p.dumps())
    assert back.family == fam
    np.testing.assert_array_equal(back.theta, p.theta)


def test_json_shape_mismatch_rejected():
    d = PolicyParams(agent_family(LinearToyEnv()), [0.1, 0.2]).to_json()
    d["shape"] = [1, 3]
    with pytest.raises(ValueError):
        PolicyParams.from_json(d)


def test_params_validation():
    fam = agent_family(LinearToyEnv())
    with pytest.raises(ValueError):
        PolicyParams(fam, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        fam.act(np.zeros((3, 2)), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        PolicyFamily(fam.transform, "cubic", (-1.0,), (1.0,))
    p = PolicyParams(fam, [1.0, 2.0])
    with pytest.raises(ValueError):
        p.theta[0] = 3.0


def test_lipschitz_bound_dominates_finite_differences():
    env = LinearToyEnv(action_bound=1.5, state_scale_value=2.0)
    fam = agent_family(env, "linear")
    rng = np.random.default_rng(3)
    for _ in range(20):
        theta = rng.standard_normal(2) * 3
        L = fam.lipschitz_bound(theta)
        X = rng.uniform(-5, 5, (500, 1))
        dx = 1e-6
        slope = np.abs(fam.act(theta, X + dx) - fam.act(theta, X)) / dx
        assert slope.max() <= L * (1 + 1e-6)
        # the bound is attained where the tanh argument is zero
        x0 = -theta[1] * 2.0 / theta[0]
        s0 = abs(fam.act(theta, [[x0 + dx]]) - fam.act(theta, [[x0 - dx]]))[0, 0] / (2 * dx)
        assert s0 == pytest.approx(L, rel=1e-6)
    with pytest.raises(ValueError):
        agent_family(PendulumEnv(), "linear").lipschitz_bound(np.zeros(4))
