import numpy as np
import pytest

from flockwork.config import Obstacle, SwarmConfig
from flockwork.core import make_state
from flockwork.dynamics import EpisodeStatus, clamp_per_axis, step


def state_of(positions, velocities, cfg, t=0):
    return make_state(t, np.asarray(positions, dtype=float),
                      np.asarray(velocities, dtype=float), cfg.comm_range)


class TestClamp:
    def test_one_axis_saturates(self):
        assert (clamp_per_axis(np.array([15.0, -3.0]), 10.0)
                == np.array([10.0, -3.0])).all()

    def test_within_bounds_unchanged(self):
        x = np.array([1.0, 2.0])
        assert (clamp_per_axis(x, 10.0) == x).all()

    def test_both_axes_saturate(self):
        assert (clamp_per_axis(np.array([-12.0, -12.0]), 10.0)
                == np.array([-10.0, -10.0])).all()

    def test_bad_bound(self):
        with pytest.raises(ValueError):
            clamp_per_axis(np.zeros(2), 0.0)


class TestStep:
    def test_semi_implicit_euler_hand_values(self):
        cfg = SwarmConfig(n_robots=1, obstacles=(), episode_steps=100)
        st = state_of([[0.0, 0.0]], [[1.0, 0.0]], cfg)
        out = step(st, np.array([[0.0, 1.0]]), cfg)
        assert (out.next_state.velocities == np.array([[1.0, 0.01]])).all()
        assert (out.next_state.positions == np.array([[0.01, 0.0001]])).all()
        assert out.next_state.time_step == 1
        assert out.status is EpisodeStatus.RUNNING

    def test_rest_stays_at_rest(self):
        cfg = SwarmConfig(n_robots=2, obstacles=(), episode_steps=100)
        st = state_of([[0.0, 0.0], [1.0, 1.0]], [[0.0, 0.0], [0.0, 0.0]], cfg)
        out = step(st, np.zeros((2, 2)), cfg)
        assert (out.next_state.positions == st.positions).all()
        assert (out.next_state.velocities == 0).all()
        assert out.next_state.time_step == st.time_step + 1

    def test_robot_collision_detected(self):
        cfg = SwarmConfig(n_robots=2, obstacles=(), episode_steps=100)
        st = state_of([[0.0, 0.0], [0.14, 0.0]], np.zeros((2, 2)), cfg)
        out = step(st, np.zeros((2, 2)), cfg)
        assert out.status is EpisodeStatus.FAILED_ROBOT_COLLISION

    def test_obstacle_collision_detected(self):
        cfg = SwarmConfig(n_robots=1, episode_steps=100,
                          obstacles=(Obstacle((1.0, 0.0), 0.5),))
        st = state_of([[0.45, 0.0]], [[10.0, 0.0]], cfg)
        out = step(st, np.zeros((1, 2)), cfg)  # moves to 0.55, inside radius
        assert out.status is EpisodeStatus.FAILED_OBSTACLE_COLLISION

    def test_robot_collision_takes_priority(self):
        cfg = SwarmConfig(n_robots=2, episode_steps=100,
                          obstacles=(Obstacle((0.0, 0.0), 0.5),))
        st = state_of([[0.05, 0.0], [0.0, 0.05]], np.zeros((2, 2)), cfg)
        out = step(st, np.zeros((2, 2)), cfg)
        assert out.status is EpisodeStatus.FAILED_ROBOT_COLLISION

    def test_completion_at_episode_end(self):
        cfg = SwarmConfig(n_robots=1, obstacles=(), episode_steps=5)
        st = state_of([[0.0, 0.0]], [[0.0, 0.0]], cfg, t=4)
        out = step(st, np.zeros((1, 2)), cfg)
        assert out.status is EpisodeStatus.COMPLETED

    def test_non_finite_rejected(self):
        cfg = SwarmConfig(n_robots=1, obstacles=())
        st = state_of([[0.0, 0.0]], [[0.0, 0.0]], cfg)
        with pytest.raises(ValueError):
            step(st, np.array([[np.inf, 0.0]]), cfg)

    def test_shape_mismatch_rejected(self):
        cfg = SwarmConfig(n_robots=1, obstacles=())
        st = state_of([[0.0, 0.0]], [[0.0, 0.0]], cfg)
        with pytest.raises(ValueError):
            step(st, np.zeros((2, 2)), cfg)

    def test_bounds_hold_for_random_controls(self):
        cfg = SwarmConfig(n_robots=4, obstacles=(), episode_steps=10**6,
                          u_max=10.0, v_max=10.0)
        rng = np.random.default_rng(0)
        st = state_of(rng.uniform(0, 5, (4, 2)) * 3, np.zeros((4, 2)), cfg)
        for _ in range(200):
            u = rng.uniform(-100, 100, (4, 2))
            prev_v = st.velocities.copy()
            out = step(st, u, cfg)
            st = out.next_state
            assert (np.abs(st.velocities) <= cfg.v_max + 1e-12).all()
            dv = st.velocities - prev_v
            assert (np.abs(dv) <= cfg.u_max * cfg.sample_period + 1e-12).all()

    def test_zero_control_velocity_constant_position_affine(self):
        cfg = SwarmConfig(n_robots=2, obstacles=(), episode_steps=10**6)
        v0 = np.array([[0.5, -0.25], [1.0, 2.0]])
        p0 = np.array([[0.0, 0.0], [5.0, 5.0]])
        st = state_of(p0, v0, cfg)
        for k in range(1, 50):
            st = step(st, np.zeros((2, 2)), cfg).next_state
            assert (st.velocities == v0).all()
            np.testing.assert_allclose(
                st.positions, p0 + v0 * cfg.sample_period * k, atol=1e-12
            )

    def test_determinism(self):
        cfg = SwarmConfig(n_robots=3, obstacles=())
        rng = np.random.default_rng(5)
        st = state_of(rng.uniform(0, 3, (3, 2)), rng.standard_normal((3, 2)), cfg)
        u = rng.standard_normal((3, 2))
        a = step(st, u, cfg)
        b = step(st, u, cfg)
        assert (a.next_state.positions == b.next_state.positions).all()
        assert (a.next_state.velocities == b.next_state.velocities).all()
        assert a.next_state.edges == b.next_state.edges
        assert a.status == b.status
