import numpy as np
import pytest
from hypothesis import given, strategies as st

from gbwm.env import BatchEnv, EnvConfig, reset, step


def test_default_start():
    s = reset(EnvConfig(), np.zeros((120, 2)))
    assert s.observation == (0.0, 0.6)


def test_scaled_goal():
    cfg = EnvConfig(goal_wealth=100.0)
    s = reset(cfg, np.zeros((120, 2)))
    assert s.wealth == pytest.approx(60.0)
    assert s.observation == pytest.approx((0.0, 0.6))


def test_short_trajectory_rejected():
    with pytest.raises(ValueError):
        reset(EnvConfig(), np.zeros((119, 2)))


def test_one_step_arithmetic():
    cfg = EnvConfig(horizon=2, initial_wealth_ratio=1.0)
    s = reset(cfg, np.array([[0.02, 0.10], [0.0, 0.0]]))
    s, r, done = step(s, 0.5, np.array([[0.02, 0.10], [0.0, 0.0]]))
    assert s.wealth == pytest.approx(1.06, abs=1e-15)
    assert (r, done) == (0.0, False)


def test_bond_only_compounding():
    rng = np.random.default_rng(0)
    traj = rng.normal(0.003, 0.01, (120, 2))
    s = reset(EnvConfig(), traj)
    for _ in range(120):
        s, r, done = step(s, 0.0, traj)
    assert done
    assert s.wealth == pytest.approx(0.6 * np.prod(1 + traj[:, 0]), rel=1e-12)


def test_exact_goal_is_success():
    cfg = EnvConfig(horizon=1, initial_wealth_ratio=0.5)
    traj = np.array([[1.0, 0.0]])  # bonds double
    s, r, done = step(reset(cfg, traj), 0.0, traj)
    assert s.wealth == 1.0 and r == 1.0 and done


def test_step_after_done_raises():
    cfg = EnvConfig(horizon=1)
    traj = np.zeros((1, 2))
    s, _, _ = step(reset(cfg, traj), 0.0, traj)
    with pytest.raises(RuntimeError):
        step(s, 0.0, traj)


def test_out_of_range_action_clamped():
    cfg = EnvConfig(horizon=1, initial_wealth_ratio=1.0)
    traj = np.array([[0.01, 0.05]])
    hi, _, _ = step(reset(cfg, traj), 7.0, traj)
    lo, _, _ = step(reset(cfg, traj), -3.0, traj)
    assert hi.wealth == pytest.approx(1.05) and lo.wealth == pytest.approx(1.01)


@given(
    st.lists(st.floats(0, 1), min_size=12, max_size=12),
    st.lists(st.tuples(st.floats(-0.3, 0.3), st.floats(-0.5, 0.5)), min_size=12, max_size=12),
)
def test_batch_matches_scalar(alphas, rows):
    cfg = EnvConfig(horizon=12)
    traj = np.array(rows)
    s = reset(cfg, traj)
    env = BatchEnv(cfg, traj[None])
    for t, a in enumerate(alphas):
        np.testing.assert_allclose(env.observation()[0], s.observation)
        s, r, done = step(s, a, traj)
        rb, dn = env.step(np.array([a]))
        assert done == dn and rb[0] == r
    assert env.wealth[0] == pytest.approx(s.wealth, rel=1e-12)
    assert s.wealth > 0


def test_rewards_zero_before_terminal():
    cfg = EnvConfig(horizon=5)
    env = BatchEnv(cfg, np.full((3, 5, 2), 0.2))
    for t in range(4):
        r, done = env.step(np.ones(3))
        assert not done and not r.any()
    r, done = env.step(np.ones(3))
    assert done and r.tolist() == [1.0, 1.0, 1.0]
