import json

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from teleop.config import TrainConfig
from teleop.dynamics import InitFrame, init_sim
from teleop.policy import (
    DEPLOY_OBS_DIM, REDUCED_OBS_DIM, CheckpointError, ObservationError, PolicyParams, RunningMeanStd, act,
    actor_forward, build_obs, critic_forward, gaussian_log_prob, load_checkpoint, make_goal, obs_dim,
    save_checkpoint,
)
from teleop.randomization import DRParams
from teleop.retarget import RetargetedMotion

TINY = TrainConfig(hidden_sizes=[16, 16])


def _standing_state(model, yaw=0.0, shift=(0.0, 0.0)):
    quat = Rotation.from_euler("z", yaw).as_quat()
    init = InitFrame(np.array([shift[0], shift[1], model.nominal_root_height]), quat, model.default_q)
    return init_sim(model, None, DRParams.nominal(model), init)


def _standing_reference(model, yaw=0.0, shift=(0.0, 0.0), n=10):
    root_pos = np.tile([shift[0], shift[1], model.nominal_root_height], (n, 1))
    root_rot = np.tile(Rotation.from_euler("z", yaw).as_quat(), (n, 1))
    return RetargetedMotion.from_arrays(model, 50.0, "stand", root_pos, root_rot, np.tile(model.default_q, (n, 1)))


class TestObservations:
    """Test observation builders"""

    @pytest.mark.parametrize("mode,expected", [("deploy", 138), ("reduced", 90), ("privileged", 504)])
    def test_dimensions(self, model, mode, expected):
        """Test each mode's observation size"""
        state = _standing_state(model)
        ref = _standing_reference(model).frame(1)
        obs = build_obs(mode, state, model.default_q, ref, model)
        assert obs.shape == (expected,)
        assert obs_dim(mode, model) == expected

    def test_goal_at_reference_pose(self, model):
        """Test that the keypoint difference vanishes when the pose matches the goal"""
        goal = make_goal(_standing_state(model), _standing_reference(model).frame(0), model)
        np.testing.assert_allclose(goal.kp8_diff, 0.0, atol=1e-9)
        np.testing.assert_allclose(goal.kp8_vel, 0.0, atol=1e-9)

    @pytest.mark.parametrize("mode", ["deploy", "reduced", "privileged"])
    def test_heading_invariance(self, model, mode):
        """Test that a world yaw and shift leave the observation unchanged"""
        base = build_obs(mode, _standing_state(model), model.default_q, _standing_reference(model).frame(1), model)
        moved = build_obs(
            mode, _standing_state(model, yaw=0.8, shift=(1.5, -2.0)), model.default_q,
            _standing_reference(model, yaw=0.8, shift=(1.5, -2.0)).frame(1), model,
        )
        np.testing.assert_allclose(moved, base, atol=1e-9)

    def test_unknown_mode(self, model):
        """Test an unknown observation mode"""
        with pytest.raises(ObservationError, match="Unknown observation mode"):
            obs_dim("oracle", model)


class TestActorCritic:
    """Test the Gaussian actor-critic"""

    def test_create(self, model):
        """Test network sizes follow the observation mode"""
        params = PolicyParams.create("deploy", model, TINY, np.random.default_rng(0))
        assert params.obs_dim == DEPLOY_OBS_DIM
        assert params.critic_obs_dim == DEPLOY_OBS_DIM
        assert params.actor.sizes == [DEPLOY_OBS_DIM, 16, 16, model.num_dof]
        assert params.shares_critic_obs

    def test_privileged_critic(self, model):
        """Test an asymmetric critic on privileged observations"""
        cfg = TrainConfig(hidden_sizes=[16], critic_privileged=True)
        params = PolicyParams.create("reduced", model, cfg, np.random.default_rng(0))
        assert params.obs_dim == REDUCED_OBS_DIM
        assert params.critic_obs_dim == obs_dim("privileged", model)
        assert not params.shares_critic_obs

    def test_deterministic_action_is_mean(self, model):
        """Test deterministic actions equal the actor mean"""
        params = PolicyParams.create("reduced", model, TINY, np.random.default_rng(1))
        obs = np.random.default_rng(2).normal(size=REDUCED_OBS_DIM)
        mean, std = actor_forward(params, obs)
        action, log_prob = act(params, obs, deterministic=True)
        np.testing.assert_array_equal(action, mean)
        expected = -np.sum(np.log(std)) - 0.5 * model.num_dof * np.log(2.0 * np.pi)
        assert float(log_prob) == pytest.approx(expected)

    def test_batch_matches_single(self, model):
        """Test batched forward passes against single observations"""
        params = PolicyParams.create("deploy", model, TINY, np.random.default_rng(3))
        obs = np.random.default_rng(4).normal(size=(3, DEPLOY_OBS_DIM))
        values = critic_forward(params, obs)
        for i in range(3):
            assert critic_forward(params, obs[i]) == pytest.approx(values[i])

    def test_observation_size_mismatch(self, model):
        """Test that an observation of the wrong size is rejected"""
        params = PolicyParams.create("deploy", model, TINY, np.random.default_rng(0))
        with pytest.raises(ObservationError, match="network expects 138"):
            actor_forward(params, np.zeros(REDUCED_OBS_DIM))

    def test_log_prob_of_sample(self):
        """Test the Gaussian log density against scipy"""
        from scipy.stats import norm

        mean = np.array([0.1, -0.2])
        log_std = np.array([-1.0, 0.0])
        action = np.array([0.3, 0.5])
        expected = norm.logpdf(action, mean, np.exp(log_std)).sum()
        assert gaussian_log_prob(mean, log_std, action) == pytest.approx(expected)


class TestRunningMeanStd:
    """Test the observation normalizer"""

    def test_update_matches_batch_statistics(self):
        """Test merged statistics of two batches"""
        rng = np.random.default_rng(0)
        data = rng.normal(2.0, 3.0, size=(1000, 4))
        rms = RunningMeanStd.create(4)
        rms.update(data[:400])
        rms.update(data[400:])
        np.testing.assert_allclose(rms.mean, data.mean(axis=0), atol=1e-3)
        np.testing.assert_allclose(rms.var, data.var(axis=0), rtol=1e-3)

    def test_normalize_clips(self):
        """Test normalized values are clipped"""
        rms = RunningMeanStd.create(2)
        np.testing.assert_allclose(rms.normalize(np.array([100.0, -0.5]), 5.0), [5.0, -0.5], atol=1e-6)


class TestCheckpoints:
    """Test policy checkpoint files"""

    def test_roundtrip(self, tmp_path, model):
        """Test save then load restores weights and metadata"""
        params = PolicyParams.create("deploy", model, TINY, np.random.default_rng(0), config_hash="abc")
        params.metadata["dr_enabled"] = True
        path = tmp_path / "policy.npz"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.obs_mode == "deploy"
        assert loaded.config_hash == "abc"
        assert loaded.metadata == {"dr_enabled": True}
        obs = np.random.default_rng(1).normal(size=DEPLOY_OBS_DIM)
        np.testing.assert_array_equal(actor_forward(loaded, obs)[0], actor_forward(params, obs)[0])

    def test_missing(self, tmp_path):
        """Test loading a missing checkpoint"""
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "missing.npz")

    def test_other_format(self, tmp_path):
        """Test that an npz of another format is rejected"""
        path = tmp_path / "other.npz"
        np.savez(path, metadata=np.array(json.dumps({"format": "other", "version": 1})))
        with pytest.raises(CheckpointError, match="is not a teleop-policy"):
            load_checkpoint(path)

    def test_corrupt_file(self, tmp_path):
        """Test a file that is not an npz archive"""
        path = tmp_path / "broken.npz"
        path.write_bytes(b"not a zip archive")
        with pytest.raises(CheckpointError, match="Cannot read"):
            load_checkpoint(path)
