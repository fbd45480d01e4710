import json

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from teleop.config import AdamConfig, HeuristicRules, RetargetConfig
from teleop.kinematics import human_kp12_indices, humanoid_fk
from teleop.motiondata import MotionFormatError, MotionSequence, MotionValidationError, synth_motion
from teleop.retarget import (
    RetargetedMotion, ShapeFitError, _rest_human_kp12, fit_shape, fit_shape_to_keypoints, heuristic_filter,
    load_retargeted, retarget_frame, retarget_sequence, save_retargeted,
)

ADAM = AdamConfig(max_steps=2000)


def _true_pose(model, seed):
    rng = np.random.default_rng(seed)
    lo, hi = model.limit_lo + 0.1, model.limit_hi - 0.1
    q = np.clip(rng.uniform(-0.4, 0.4, model.num_dof), lo, hi)
    root_pos = np.array([0.2, -0.1, 0.9])
    root_rot = Rotation.from_rotvec([0.05, -0.05, 0.4]).as_quat()
    return root_pos, root_rot, q


def _motion(model, root_pos, q=None, fps=50.0):
    n = root_pos.shape[0]
    rot = np.tile([0.0, 0.0, 0.0, 1.0], (n, 1))
    q = np.tile(model.default_q, (n, 1)) if q is None else q
    return RetargetedMotion.from_arrays(model, fps, "test", root_pos, rot, q)


class TestShapeFit:
    """Test fitting the human shape to the humanoid"""

    def test_recovers_known_shape(self, skeleton):
        """Test that keypoints generated from a known beta are matched to 0.1 mm"""
        beta_true = np.array([0.3, -0.2, 0.4, 0.1, -0.3, 0.0, 0.0, 0.0, 0.0, 0.0])
        idx = human_kp12_indices()
        target = _rest_human_kp12(skeleton, beta_true, idx)
        report = fit_shape_to_keypoints(skeleton, target, lr=4.0, max_iters=20000, kp_indices=idx)
        assert report.initial_error > 1e-3
        assert report.final_error <= 1e-4

    def test_fit_to_humanoid_improves(self, skeleton, model):
        """Test that fitting to the humanoid reduces the keypoint error"""
        report = fit_shape(skeleton, model, lr=2.0, max_iters=500)
        assert report.final_error < report.initial_error
        assert report.beta_prime.shape == (10,)

    def test_non_positive_lr(self, skeleton, model):
        """Test that the learning rate must be positive"""
        with pytest.raises(ShapeFitError, match="lr"):
            fit_shape(skeleton, model, lr=0.0, max_iters=10)


class TestRetargetFrame:
    """Test per-frame keypoint retargeting"""

    def test_self_generated_keypoints(self, model):
        """Test that humanoid-generated keypoints are reached within 1 mm"""
        root_pos, root_rot, q = _true_pose(model, 0)
        target = humanoid_fk(model, root_pos, root_rot, q).kp12
        rng = np.random.default_rng(1)
        sol = retarget_frame(target, q + rng.uniform(-0.05, 0.05, model.num_dof),
                             (root_pos + 0.02, root_rot), ADAM, model)
        assert sol.residual < 1e-3
        assert np.all(sol.q >= model.limit_lo) and np.all(sol.q <= model.limit_hi)

    def test_translation_equivariance(self, model):
        """Test that shifting targets and initial root shifts the solution"""
        root_pos, root_rot, q = _true_pose(model, 2)
        target = humanoid_fk(model, root_pos, root_rot, q).kp12
        shift = np.array([2.0, -1.0, 0.5])
        q_init = q + np.random.default_rng(4).uniform(-0.05, 0.05, model.num_dof)
        a = retarget_frame(target, q_init, (root_pos, root_rot), ADAM, model)
        b = retarget_frame(target + shift, q_init, (root_pos + shift, root_rot), ADAM, model)
        np.testing.assert_allclose(b.root_pos - a.root_pos, shift, atol=1e-4)
        np.testing.assert_allclose(b.q, a.q, atol=1e-4)

    def test_loss_history_decreases_overall(self, model):
        """Test the accepted losses end below where they started"""
        root_pos, root_rot, q = _true_pose(model, 3)
        target = humanoid_fk(model, root_pos, root_rot, q).kp12
        sol = retarget_frame(target, model.default_q, (root_pos, root_rot), ADAM, model)
        assert sol.losses[-1] < sol.losses[0]


class TestRetargetSequence:
    """Test sequence retargeting"""

    def test_stand(self, model, skeleton):
        """Test retargeting a short stand motion at 50 Hz"""
        seq = synth_motion("stand", 0.2, 30.0, 0)
        beta = fit_shape(skeleton, model, 2.0, 500).beta_prime
        rt = retarget_sequence(seq, beta, model, skeleton, RetargetConfig(), target_fps=50.0, config_hash="h")
        assert len(rt) == 10
        assert rt.fps == 50.0
        assert rt.source_id == "stand"
        assert rt.config_hash == "h"
        assert np.all(np.isfinite(rt.q))
        assert heuristic_filter(rt, HeuristicRules()).keep

    def test_empty_sequence(self, model, skeleton):
        """Test that an empty sequence cannot be retargeted"""
        seq = MotionSequence(fps=30.0, shape=np.zeros(10), root_pos=np.zeros((0, 3)), root_rot=np.zeros((0, 4)),
                             joint_rot=np.zeros((0, 23, 3)), name="empty")
        with pytest.raises(MotionValidationError, match="empty"):
            retarget_sequence(seq, np.zeros(10), model, skeleton, RetargetConfig())


class TestReferenceTrack:
    """Test derived reference quantities"""

    def test_frame_clamps_index(self, model):
        """Test frame() clamps to the valid range"""
        pos = np.zeros((5, 3))
        pos[:, 2] = 0.9
        pos[:, 0] = np.arange(5) * 0.01
        rt = _motion(model, pos)
        np.testing.assert_array_equal(rt.frame(10).root_pos, rt.root_pos[4])
        np.testing.assert_array_equal(rt.frame(-3).root_pos, rt.root_pos[0])

    def test_constant_velocity(self, model):
        """Test link velocities of a translating rigid pose"""
        pos = np.zeros((6, 3))
        pos[:, 2] = 0.9
        pos[:, 0] = np.arange(6) * 0.01
        rt = _motion(model, pos)
        np.testing.assert_allclose(rt.ref.link_vel[..., 0], 0.5, atol=1e-9)
        np.testing.assert_allclose(rt.ref.link_ang_vel, 0.0, atol=1e-9)


class TestHeuristicFilter:
    """Test the unsafe-motion rules"""

    def test_keeps_standing(self, standing_motion):
        """Test a standing motion is kept"""
        assert heuristic_filter(standing_motion, HeuristicRules()).keep

    def test_low_root(self, model):
        """Test that a crouched root is rejected with its frame"""
        pos = np.zeros((5, 3))
        pos[:, 2] = [0.9, 0.9, 0.4, 0.9, 0.9]
        verdict = heuristic_filter(_motion(model, pos), HeuristicRules())
        assert not verdict.keep
        assert verdict.reason == "low-root"
        assert verdict.frame == 2

    def test_root_jump(self, model):
        """Test that a root teleport is rejected at the landing frame"""
        pos = np.zeros((5, 3))
        pos[:, 2] = 0.9
        pos[3:, 0] = 1.5
        verdict = heuristic_filter(_motion(model, pos), HeuristicRules())
        assert verdict.reason == "root-jump"
        assert verdict.frame == 3
        assert verdict.value == pytest.approx(1.5)

    def test_joint_rate(self, model):
        """Test that an implausibly fast joint is rejected"""
        pos = np.zeros((4, 3))
        pos[:, 2] = 0.9
        q = np.zeros((4, model.num_dof))
        q[2, 3] = 1.0
        verdict = heuristic_filter(_motion(model, pos, q), HeuristicRules())
        assert verdict.reason == "joint-rate"
        assert verdict.frame == 2
        assert verdict.value == pytest.approx(50.0)


class TestRetargetedFiles:
    """Test the retargeted motion file format"""

    def test_roundtrip(self, tmp_path, model):
        """Test save then load restores the trajectory and derived track"""
        pos = np.zeros((4, 3))
        pos[:, 2] = 0.9
        pos[:, 1] = np.arange(4) * 0.02
        rt = _motion(model, pos)
        path = tmp_path / "rt.json"
        save_retargeted(rt, path)
        loaded = load_retargeted(path, model)
        np.testing.assert_array_equal(loaded.root_pos, rt.root_pos)
        np.testing.assert_array_equal(loaded.q, rt.q)
        np.testing.assert_allclose(loaded.ref.link_pos, rt.ref.link_pos)

    def test_wrong_format(self, tmp_path, model):
        """Test a document of another format is rejected"""
        path = tmp_path / "rt.json"
        path.write_text(json.dumps({"format": "other", "version": 1}))
        with pytest.raises(MotionFormatError, match="Invalid retargeted motion"):
            load_retargeted(path, model)

    def test_wrong_dof(self, tmp_path, model):
        """Test a q row of the wrong width is rejected"""
        doc = {"format": "teleop-retargeted", "version": 1, "source_id": "x", "fps": 50.0,
               "root_pos": [[0, 0, 1]], "root_rot": [[0, 0, 0, 1]], "q": [[0.0] * 5]}
        path = tmp_path / "rt.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(MotionFormatError):
            load_retargeted(path, model)

    def test_malformed_json(self, tmp_path, model):
        """Test broken JSON is reported"""
        path = tmp_path / "rt.json"
        path.write_text("{not json")
        with pytest.raises(MotionFormatError, match="line 1"):
            load_retargeted(path, model)
