import numpy as np
import pytest

from rhucrl.envs import LinearToyEnv, PendulumEnv, rollout
from rhucrl.types import (Dataset, EpisodeError, SeedContract, Trajectory, Transition, chain_check,
                          read_jsonl, write_jsonl)


def _tr(s, s_next, h, ep=1):
    return Transition([s], [0.0], [0.0], [s_next], h, ep)


def test_chain_single_step():
    assert chain_check(Trajectory([_tr(0.0, 1.0, 0)], 0.0))


def test_chain_broken():
    traj = Trajectory([_tr(0.0, 1.0, 0), _tr(2.0, 3.0, 1)], 0.0)
    assert not chain_check(traj)


def test_chain_wrong_step_index():
    traj = Trajectory([_tr(0.0, 1.0, 0), _tr(1.0, 3.0, 2)], 0.0)
    assert not chain_check(traj)


def test_chain_empty_rejected():
    with pytest.raises(ValueError):
        chain_check(Trajectory([], 0.0))


def test_rollout_chains_and_reward_recomputes():
    env = PendulumEnv(horizon=3)
    agent = lambda s: np.array([0.7])
    adv = lambda s: np.array([-0.3])
    traj = rollout(env, agent, adv, np.random.default_rng(3))
    assert len(traj) == 3 and chain_check(traj)
    assert abs(traj.recompute_reward(env.reward) - traj.total_reward) <= 1e-12


def test_transition_validation():
    with pytest.raises(ValueError):
        Transition([0.0, 1.0], [0.0], [0.0], [0.0], 0, 1)
    with pytest.raises(ValueError):
        Transition([0.0], [0.0], [0.0], [np.nan], 0, 1)
    with pytest.raises(ValueError):
        Transition([0.0], [0.0], [0.0], [0.0], 0, 0)


def test_transition_is_immutable():
    tr = _tr(0.0, 1.0, 0)
    with pytest.raises(ValueError):
        tr.state[0] = 5.0


def test_dataset_size_multiple_of_horizon():
    env = LinearToyEnv(horizon=4, noise_std=0.1)
    ds = Dataset(4)
    zero = lambda s: np.zeros(1)
    for t in range(1, 4):
        ds.add_episode(rollout(env, zero, zero, np.random.default_rng(t), t))
        assert len(ds) == 4 * ds.episode_count
    with pytest.raises(ValueError):
        Dataset(5).add_episode(rollout(env, zero, zero, np.random.default_rng(0)))


def test_jsonl_roundtrip(tmp_path):
    env = PendulumEnv(horizon=4)
    traj = rollout(env, lambda s: np.array([1.0]), lambda s: np.array([0.5]),
                   np.random.default_rng(0), 7)
    path = tmp_path / "t.jsonl"
    write_jsonl(path, traj.transitions)
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert set(__import__("json").loads(lines[0])) == {"state", "action", "adv_action",
                                                       "next_state", "step", "episode"}
    back = read_jsonl(path)
    for a, b in zip(back, traj.transitions):
        np.testing.assert_array_equal(a.state, b.state)
        np.testing.assert_array_equal(a.next_state, b.next_state)
        assert (a.step_index, a.episode_index) == (b.step_index, 7)


def test_seed_streams_independent_and_reproducible():
    sc = SeedContract(12345)
    a = sc.generator("env-noise", 3).standard_normal(4)
    b = SeedContract(12345).generator("env-noise", 3).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    c = sc.generator("optimizer", 3).standard_normal(4)
    d = sc.generator("env-noise", 4).standard_normal(4)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)
    with pytest.raises(KeyError):
        sc.generator("nope")


def test_episode_error_message():
    err = EpisodeError(7, ValueError("boom"))
    assert err.episode == 7 and "episode 7" in str(err) and "boom" in str(err)
