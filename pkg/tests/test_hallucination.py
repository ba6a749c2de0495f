import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rhucrl.envs import LinearToyEnv, PendulumEnv
from rhucrl.gp import GpDynamicsModel, Kernel
from rhucrl.hallucination import (HallucinatedDynamics, TheoryParams, deviation_bounds,
                                  hallucinated_step, plausible_membership, se_std_lipschitz,
                                  trajectory_deviation_check, tube_prediction, tube_sample)
from rhucrl.policies import PolicyParams, hallucination_family


def _fitted_model(env, n=30, seed=0, **kw):
    rng = np.random.default_rng(seed)
    sp = env.spec
    m = GpDynamicsModel.for_env(env, **kw)
    S = rng.uniform(-2, 2, (n, sp.state_dim))
    U = rng.uniform(-1, 1, (n, sp.action_dim)) * sp.action_box.high
    Ub = sp.adversary_box.center + rng.uniform(-1, 1, (n, sp.adversary_dim)) * sp.adversary_box.half_width
    Sn = env.dynamics(S, U, Ub)
    m.gp.add(m.embed(S, U, Ub), m._targets(S, Sn))
    return m


class _Prior:
    """Stand-in model with constant mean and std."""

    def __init__(self, p, mean=0.0, std=1.0):
        self.state_dim, self.m, self.s = p, mean, std

    def predict(self, S, U, Ubar):
        n = S.shape[0]
        return np.full((n, self.state_dim), self.m), np.full((n, self.state_dim), self.s)


def _constant_eta(env, value):
    fam = hallucination_family(env, "constant")
    return PolicyParams(fam, np.full(fam.dim, math.atanh(value) if abs(value) < 1 else 40.0 * value))


def test_full_optimism_unit_tube():
    env = PendulumEnv()
    h = HallucinatedDynamics(_Prior(2), 2.0, _constant_eta(env, 1.0))
    np.testing.assert_array_equal(hallucinated_step(h, np.zeros(2), [0.0], [0.0], np.zeros(2)), [2.0, 2.0])


def test_zero_eta_is_mean_plus_noise():
    env = LinearToyEnv()
    m = _fitted_model(env, lam=0.01)
    h = HallucinatedDynamics(m, 1.5)
    s, u, ub, w = np.array([0.4]), np.array([0.2]), np.array([-0.3]), np.array([0.05])
    mean, _ = m.predict(s[None], u[None], ub[None])
    assert hallucinated_step(h, s, u, ub, w)[0] == mean[0, 0] + 0.05


def test_dimension_and_role_errors():
    env = LinearToyEnv()
    h = HallucinatedDynamics(_fitted_model(env), 1.0)
    with pytest.raises(ValueError):
        hallucinated_step(h, np.zeros(2), [0.0], [0.0], np.zeros(2))
    with pytest.raises(ValueError):
        h.predict(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        HallucinatedDynamics(h.model, 1.0, role="neutral")
    with pytest.raises(ValueError):
        HallucinatedDynamics(h.model, -1.0)


# A zero-width tube with noise cannot always be met in floating point (no float
# x need satisfy (x - noise) - mean == 0), so widths are kept above the
# rounding granularity of the magnitudes drawn here.
@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-1e6, 1e6)),
       arrays(np.float64, (4, 3), elements=st.floats(1e-3, 1e3)),
       st.floats(1e-2, 100), arrays(np.float64, (4, 3), elements=st.floats(-2, 2)),
       arrays(np.float64, (4, 3), elements=st.floats(-1e3, 1e3)))
def test_tube_containment_exact(mean, std, beta, eta, noise):
    nxt, free = tube_sample(mean, std, beta, eta, noise)
    assert np.all(np.abs(nxt - noise - mean) <= beta * std)
    assert np.all(np.abs(free - mean) <= beta * std)


def test_tube_prediction_beta_zero_is_mean():
    rng = np.random.default_rng(0)
    mean, std = rng.standard_normal((50, 2)), rng.uniform(0, 2, (50, 2))
    np.testing.assert_array_equal(tube_prediction(mean, std, 0.0, rng.uniform(-1, 1, (50, 2))), mean)


def test_plausible_membership_cases():
    env = LinearToyEnv()
    m = _fitted_model(env, lam=0.01)
    rng = np.random.default_rng(1)
    S, U, Ub = rng.uniform(-3, 3, (100, 1)), rng.uniform(-1, 1, (100, 1)), rng.uniform(-1, 1, (100, 1))
    mu = lambda S, U, Ub: m.predict(S, U, Ub)[0]
    assert plausible_membership(m, 1.0, mu, S, U, Ub)
    far = lambda S, U, Ub: m.predict(S, U, Ub)[0] + 2.0 * m.predict(S, U, Ub)[1]
    assert not plausible_membership(m, 1.0, far, S, U, Ub)
    fam = hallucination_family(env, "linear")
    for seed in range(10):
        eta = PolicyParams(fam, 5 * np.random.default_rng(seed).standard_normal(fam.dim))
        h = HallucinatedDynamics(m, 1.3, eta)
        assert plausible_membership(m, 1.3, lambda S, U, Ub: h.predict(S, U, Ub)[1], S, U, Ub)


def test_deviation_bounds_formula():
    th = TheoryParams(1.2, 0.5, 0.3, 0.4)
    b = deviation_bounds(th, 2.0, [1.0, 0.5, 0.25])
    G = 1 + (1.2 + 2 * 2.0 * 0.5) * math.sqrt(1 + 0.09 + 0.16)
    np.testing.assert_allclose(b, [4.0, 4.0 * G * 1.5, 4.0 * G ** 2 * 1.75], rtol=1e-14)
    with pytest.raises(ValueError, match="L_sigma"):
        deviation_bounds(TheoryParams(1.0, None, 0.0, 0.0), 1.0, [1.0])


def test_identical_trajectories_pass():
    th = TheoryParams(1.0, 1.0, 0.0, 0.0)
    s = np.random.default_rng(2).standard_normal((6, 2))
    assert trajectory_deviation_check(s, s, th, 0.0, np.ones(5))
    assert not trajectory_deviation_check(s, s + 1.0, th, 0.0, np.ones(5))
    with pytest.raises(ValueError):
        trajectory_deviation_check(s, s[:3], th, 1.0, np.ones(5))


def test_se_std_lipschitz_dominates_finite_differences():
    env = LinearToyEnv(state_scale_value=2.0)
    m = _fitted_model(env, lam=0.01, kernel=Kernel("se", (0.7,)))
    m.temperature = 1.3
    L = se_std_lipschitz(m)
    rng = np.random.default_rng(3)
    Z = rng.uniform(-3, 3, (2000, 3))
    D = rng.standard_normal((2000, 3)) * 1e-4
    s0 = m.predict(Z[:, :1], Z[:, 1:2], Z[:, 2:])[1][:, 0]
    s1 = m.predict(Z[:, :1] + D[:, :1], Z[:, 1:2] + D[:, 1:2], Z[:, 2:] + D[:, 2:])[1][:, 0]
    assert np.all(np.abs(s1 - s0) <= L * np.linalg.norm(D, axis=1) * (1 + 1e-9))
    with pytest.raises(ValueError):
        se_std_lipschitz(GpDynamicsModel.for_env(PendulumEnv()))
