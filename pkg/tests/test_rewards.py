from types import SimpleNamespace

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from teleop.config import RewardConfig
from teleop.rewards import REWARD_TERMS, TASK_TERMS, RewardShapeError, compute_reward


@pytest.fixture
def ref(standing_motion):
    return standing_motion.frame(10)


def _tracking_state(ref, model, **overrides):
    fields = dict(
        q=ref.q.copy(), qd=ref.dq.copy(), qdd=np.zeros(model.num_dof),
        link_pos=ref.link_pos.copy(), link_rot=ref.link_rot.copy(),
        link_vel=ref.link_vel.copy(), link_ang_vel=ref.link_ang_vel.copy(),
        foot_force=np.zeros((2, 3)), touchdown_air_time=np.zeros(2),
    )
    fields.update(overrides)
    return SimpleNamespace(**fields)


def _reward(state, ref, model, torque=None, terminated=False, cfg=None, action=None):
    action = ref.q if action is None else action
    torque = np.zeros(model.num_dof) if torque is None else torque
    return compute_reward(state, ref, action, ref.q, torque, terminated, cfg or RewardConfig(), model)


class TestComputeReward:
    """Test the tracking reward terms and weights"""

    def test_perfect_tracking(self, ref, model):
        """Test that perfect tracking earns exactly the task weights"""
        result = _reward(_tracking_state(ref, model), ref, model)
        assert result.task_total() == pytest.approx(224.0, rel=1e-6)
        assert result.total == pytest.approx(224.0, rel=1e-6)
        assert set(result.weighted) == set(REWARD_TERMS)
        for term in REWARD_TERMS:
            if term not in TASK_TERMS:
                assert result.weighted[term] == 0.0

    def test_torque_over_limit(self, ref, model):
        """Test that one saturated joint counts once in the limit penalty"""
        torque = np.zeros(model.num_dof)
        torque[0] = 1e6
        result = _reward(_tracking_state(ref, model), ref, model, torque=torque)
        assert result.raw["torque_limits"] == 1.0
        assert result.weighted["torque_limits"] == pytest.approx(-0.2)
        assert result.raw["torque"] == pytest.approx(1e6)

    def test_termination(self, ref, model):
        """Test that an early termination costs 200"""
        result = _reward(_tracking_state(ref, model), ref, model, terminated=True)
        assert result.weighted["termination"] == pytest.approx(-200.0)

    def test_joint_limit_violations_are_counted(self, ref, model):
        """Test the limit term counts joints outside their range"""
        q = ref.q.copy()
        q[0] = model.limit_hi[0] + 0.1
        q[1] = model.limit_lo[1] - 0.1
        result = _reward(_tracking_state(ref, model, q=q), ref, model)
        assert result.raw["dof_pos_limits"] == 2.0

    def test_dof_pos_uses_unsquared_norm(self, ref, model):
        """Test the joint position task term decays with the plain error norm"""
        q = ref.q.copy()
        q[:4] += 1.0
        result = _reward(_tracking_state(ref, model, q=q), ref, model)
        assert result.raw["task_dof_pos"] == pytest.approx(np.exp(-0.5))

    def test_body_pos_uses_squared_norm(self, ref, model):
        """Test the body position term averages squared link errors"""
        link_pos = ref.link_pos + np.array([0.0, 0.0, 1.0])
        result = _reward(_tracking_state(ref, model, link_pos=link_pos), ref, model)
        assert result.raw["task_body_pos"] == pytest.approx(np.exp(-0.5))

    def test_air_time_credited_at_touchdown(self, ref, model):
        """Test the air time term pays T_air - 0.25 on touchdown"""
        state = _tracking_state(ref, model, touchdown_air_time=np.array([0.5, 0.0]))
        result = _reward(state, ref, model)
        assert result.raw["feet_air_time"] == pytest.approx(0.25)
        assert result.weighted["feet_air_time"] == pytest.approx(200.0)

    def test_contact_force_normalization(self, ref, model):
        """Test the squared contact force is divided by the configured scale"""
        force = np.array([[0.0, 0.0, 300.0], [0.0, 0.0, 400.0]])
        state = _tracking_state(ref, model, foot_force=force)
        raw = _reward(state, ref, model).raw["feet_contact_force"]
        scaled = _reward(state, ref, model, cfg=RewardConfig(contact_force_normalization=1e6)).raw["feet_contact_force"]
        assert raw == pytest.approx(250000.0)
        assert scaled == pytest.approx(0.25)

    def test_stumble(self, ref, model):
        """Test a foot pushing mostly sideways counts as a stumble"""
        force = np.array([[10.0, 0.0, 1.0], [0.0, 0.0, 100.0]])
        result = _reward(_tracking_state(ref, model, foot_force=force), ref, model)
        assert result.raw["stumble"] == 1.0

    def test_slippage(self, ref, model):
        """Test that loaded sliding feet are penalized"""
        link_vel = ref.link_vel.copy()
        link_vel[model.foot_link[0]] = [0.2, 0.0, 0.0]
        force = np.array([[0.0, 0.0, 100.0], [0.0, 0.0, 100.0]])
        result = _reward(_tracking_state(ref, model, link_vel=link_vel, foot_force=force), ref, model)
        assert result.raw["slippage"] == pytest.approx(0.04)

    def test_action_rate(self, ref, model):
        """Test the action-rate term on consecutive actions"""
        action = ref.q + 0.1
        result = _reward(_tracking_state(ref, model), ref, model, action=action)
        assert result.raw["action_rate"] == pytest.approx(model.num_dof * 0.01)

    def test_shape_mismatch(self, ref, model):
        """Test that a wrongly sized input is rejected"""
        state = _tracking_state(ref, model, q=np.zeros(5))
        with pytest.raises(RewardShapeError, match="q has shape"):
            _reward(state, ref, model)


WEIGHTS = {
    "torque_limits": -0.2, "dof_pos_limits": -100.0, "termination": -200.0,
    "dof_acc": -8.4e-6, "dof_vel": -3e-3, "action_rate": -0.9, "torque": -9e-5, "feet_air_time": 800.0,
    "feet_contact_force": -0.1, "stumble": -1000.0, "slippage": -30.0,
    "task_dof_pos": 24.0, "task_dof_vel": 24.0, "task_body_pos": 40.0, "task_body_rot": 16.0,
    "task_body_vel": 60.0, "task_body_ang_vel": 60.0,
}


def _expected_terms(state, ref, action, prev_action, torque, terminated, model):
    n = model.num_dof
    links = model.num_links
    feet = list(model.foot_link)

    def norm(v):
        return float(np.sqrt(sum(x * x for x in v)))

    terms = {
        "torque_limits": sum(1.0 for j in range(n) if abs(torque[j]) > model.torque_limit[j]),
        "dof_pos_limits": sum(1.0 for j in range(n) if not model.limit_lo[j] <= state.q[j] <= model.limit_hi[j]),
        "termination": 1.0 if terminated else 0.0,
        "dof_acc": sum(x * x for x in state.qdd),
        "dof_vel": sum(x * x for x in state.qd),
        "action_rate": sum((a - b) ** 2 for a, b in zip(action, prev_action)),
        "torque": norm(torque),
        "feet_air_time": sum(t - 0.25 for t in state.touchdown_air_time if t > 0.0),
        "feet_contact_force": sum(norm(f) ** 2 for f in state.foot_force),
        "stumble": sum(1.0 for f in state.foot_force if np.hypot(f[0], f[1]) > 5.0 * f[2]),
        "slippage": sum(norm(state.link_vel[link]) ** 2
                        for i, link in enumerate(feet) if norm(state.foot_force[i]) >= 1.0),
    }
    pos_err = [norm(state.link_pos[k] - ref.link_pos[k]) ** 2 for k in range(links)]
    rot_err = [Rotation.from_matrix(ref.link_rot[k].T @ state.link_rot[k]).magnitude() for k in range(links)]
    vel_err = [norm(state.link_vel[k] - ref.link_vel[k]) for k in range(links)]
    ang_err = [norm(state.link_ang_vel[k] - ref.link_ang_vel[k]) for k in range(links)]
    terms.update({
        "task_dof_pos": np.exp(-0.25 * norm(ref.q - state.q)),
        "task_dof_vel": np.exp(-0.25 * sum(x * x for x in ref.dq - state.qd)),
        "task_body_pos": np.exp(-0.5 * sum(pos_err) / links),
        "task_body_rot": np.exp(-0.1 * sum(rot_err) / links),
        "task_body_vel": np.exp(-10.0 * sum(vel_err) / links),
        "task_body_ang_vel": np.exp(-0.01 * sum(ang_err) / links),
    })
    return terms


def _random_state(ref, model, rng):
    n = model.num_dof
    links = model.num_links
    touchdown = rng.uniform(0.0, 1.0, 2) * (rng.random(2) < 0.5)
    force = rng.normal(scale=[20.0, 20.0, 200.0], size=(2, 3)) * (rng.random((2, 1)) < 0.7)
    spin = Rotation.from_rotvec(rng.normal(scale=1.0, size=(links, 3))).as_matrix()
    link_rot = np.einsum("lij,ljk->lik", ref.link_rot, spin)
    return _tracking_state(
        ref, model,
        q=ref.q + rng.normal(scale=0.4, size=n), qd=ref.dq + rng.normal(scale=1.0, size=n),
        qdd=rng.normal(scale=50.0, size=n), link_pos=ref.link_pos + rng.normal(scale=0.2, size=(links, 3)),
        link_rot=link_rot, link_vel=ref.link_vel + rng.normal(scale=0.3, size=(links, 3)),
        link_ang_vel=ref.link_ang_vel + rng.normal(scale=2.0, size=(links, 3)),
        foot_force=force, touchdown_air_time=touchdown,
    )


class TestRewardOracle:
    """Test the weighted reward against a term-by-term recomputation on random states"""

    @pytest.mark.parametrize("seed", range(10))
    def test_random_states(self, ref, model, seed):
        """Test 100 random states per seed against the per-term formulas and weight table"""
        rng = np.random.default_rng(seed)
        cfg = RewardConfig()
        n = model.num_dof
        for _ in range(100):
            state = _random_state(ref, model, rng)
            action = ref.q + rng.normal(scale=0.3, size=n)
            prev_action = ref.q + rng.normal(scale=0.3, size=n)
            torque = model.torque_limit * rng.uniform(-1.5, 1.5, n)
            terminated = bool(rng.random() < 0.2)

            result = compute_reward(state, ref, action, prev_action, torque, terminated, cfg, model)
            expected = _expected_terms(state, ref, action, prev_action, torque, terminated, model)

            for term in REWARD_TERMS:
                assert result.raw[term] == pytest.approx(expected[term], rel=1e-9, abs=1e-9), term
            total = sum(WEIGHTS[term] * expected[term] for term in REWARD_TERMS)
            assert result.total == pytest.approx(total, rel=1e-9, abs=1e-6)
