import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from teleop.kinematics import (
    HUMAN_PARENTS, KinematicsError, correspondence, human_fk_batch, humanoid_fk, keypoint_jacobian, load_humanoid,
    mirror_name,
)
from teleop.motiondata import NUM_JOINTS


class TestHumanoidModel:
    """Test the humanoid model config"""

    def test_sizes(self, model):
        """Test DoF, link and keypoint counts"""
        assert model.num_dof == 19
        assert model.num_bodies == 20
        assert model.num_links == 14
        assert len(model.keypoint12_names) == 12
        assert len(model.keypoint8_names) == 8
        assert model.total_mass == pytest.approx(47.2)

    def test_default_pose_within_limits(self, model):
        """Test the default joint pose respects the limits"""
        q = model.default_q
        assert np.all(q >= model.limit_lo)
        assert np.all(q <= model.limit_hi)

    def test_topological_order(self, model):
        """Test every joint's parent body precedes its own body"""
        assert np.all(model.joint_parent < np.arange(model.num_dof) + 1)

    def test_clamp(self, model):
        """Test joint clamping"""
        q = np.full(model.num_dof, 10.0)
        np.testing.assert_array_equal(model.clamp(q), model.limit_hi)

    def test_body_inertias_preserve_mass(self, model):
        """Test that merging links onto bodies keeps the total mass"""
        mass, com, inertia = model.body_inertias()
        assert mass.sum() == pytest.approx(model.total_mass)
        scaled, _, _ = model.body_inertias(mass_scale=np.full(model.num_links, 1.3))
        assert scaled.sum() == pytest.approx(1.3 * model.total_mass)
        assert np.allclose(inertia, np.swapaxes(inertia, -1, -2))

    def test_missing_config(self, tmp_path):
        """Test loading a missing humanoid config"""
        with pytest.raises(KinematicsError, match="not found"):
            load_humanoid(tmp_path / "missing.yaml")

    def test_invalid_config(self, tmp_path):
        """Test that a config violating the schema is rejected"""
        path = tmp_path / "bad.yaml"
        path.write_text("version: 1\nname: broken\n")
        with pytest.raises(KinematicsError, match="Invalid humanoid config"):
            load_humanoid(path)


class TestHumanoidFK:
    """Test humanoid forward kinematics"""

    def test_rest_pose_feet_below_root(self, model):
        """Test that the rest pose hangs the ankles 0.88 m below the root"""
        pose = humanoid_fk(model, np.zeros(3), np.array([0.0, 0.0, 0.0, 1.0]), model.default_q)
        ankle = pose.kp12[model.keypoint12_names.index("left_ankle")]
        np.testing.assert_allclose(ankle, [0.0, 0.10, -0.88], atol=1e-12)

    def test_translation_equivariance(self, model):
        """Test that translating the root translates every link"""
        rng = np.random.default_rng(0)
        q = model.clamp(rng.uniform(-1, 1, model.num_dof))
        rot = Rotation.from_rotvec(rng.normal(size=3)).as_quat()
        shift = np.array([1.0, -2.0, 0.5])
        a = humanoid_fk(model, np.zeros(3), rot, q)
        b = humanoid_fk(model, shift, rot, q)
        np.testing.assert_allclose(b.link_pos - a.link_pos, np.broadcast_to(shift, a.link_pos.shape), atol=1e-12)
        np.testing.assert_allclose(b.link_rot, a.link_rot, atol=1e-12)

    def test_rotation_equivariance(self, model):
        """Test that rotating the root about the origin rotates every link and keypoint"""
        rng = np.random.default_rng(6)
        q = model.clamp(rng.uniform(-1, 1, model.num_dof))
        root_pos = np.array([0.3, -0.1, 0.9])
        root_rot = Rotation.from_rotvec([0.2, 0.1, -0.4]).as_matrix()
        turn = Rotation.from_rotvec([0.5, -1.0, 2.0]).as_matrix()
        a = humanoid_fk(model, root_pos, root_rot, q)
        b = humanoid_fk(model, turn @ root_pos, turn @ root_rot, q)
        np.testing.assert_allclose(b.link_pos, a.link_pos @ turn.T, atol=1e-12)
        np.testing.assert_allclose(b.link_rot, np.einsum("ij,ljk->lik", turn, a.link_rot), atol=1e-12)
        np.testing.assert_allclose(b.kp12, a.kp12 @ turn.T, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_bone_lengths_are_pose_invariant(self, model, seed):
        """Test limb segment lengths for random poses"""
        rng = np.random.default_rng(seed)
        q = rng.uniform(model.limit_lo, model.limit_hi)
        root_rot = Rotation.from_rotvec(rng.normal(size=3)).as_quat()
        pose = humanoid_fk(model, rng.normal(size=3), root_rot, q)
        names = model.keypoint12_names
        bones = {("hip", "knee"): 0.40, ("knee", "ankle"): 0.40, ("shoulder", "elbow"): 0.28, ("elbow", "hand"): 0.25}
        for side in ("left", "right"):
            for (a, b), length in bones.items():
                kp_a = pose.kp12[names.index(f"{side}_{a}")]
                kp_b = pose.kp12[names.index(f"{side}_{b}")]
                assert np.linalg.norm(kp_a - kp_b) == pytest.approx(length, abs=1e-12)

    def test_mirrored_pose_is_reflected(self, model):
        """Test that the left/right mirrored joint pose reflects keypoints through the sagittal plane"""
        reflect = np.diag([1.0, -1.0, 1.0])
        joints = model.joint_names
        mirror = [joints.index(mirror_name(name)) for name in joints]
        # conjugating by a reflection flips the angle of x and z axis rotations
        sign = np.array([-model.joint_axis[mirror[j]] @ reflect @ model.joint_axis[j] for j in range(model.num_dof)])

        q = model.clamp(np.random.default_rng(7).uniform(-1, 1, model.num_dof))
        q_mirror = np.zeros(model.num_dof)
        q_mirror[mirror] = sign * q
        identity = np.array([0.0, 0.0, 0.0, 1.0])
        a = humanoid_fk(model, np.zeros(3), identity, q)
        b = humanoid_fk(model, np.zeros(3), identity, q_mirror)

        names = model.keypoint12_names
        swapped = [names.index(mirror_name(name)) for name in names]
        np.testing.assert_allclose(b.kp12[swapped], a.kp12 @ reflect, atol=1e-12)

    def test_right_angle_knee(self, model):
        """Test a 90 degree knee swings the ankle a shin length behind the knee"""
        q = model.default_q.copy()
        q[model.joint_names.index("left_knee")] = np.pi / 2
        pose = humanoid_fk(model, np.zeros(3), np.array([0.0, 0.0, 0.0, 1.0]), q)
        names = model.keypoint12_names
        np.testing.assert_allclose(pose.kp12[names.index("left_knee")], [0.0, 0.10, -0.48], atol=1e-12)
        np.testing.assert_allclose(pose.kp12[names.index("left_ankle")], [-0.40, 0.10, -0.48], atol=1e-12)
        np.testing.assert_allclose(pose.kp12[names.index("right_ankle")], [0.0, -0.10, -0.88], atol=1e-12)

    def test_right_angle_shoulder(self, model):
        """Test a 90 degree shoulder pitch lays the arm horizontal at shoulder height"""
        q = model.default_q.copy()
        q[model.joint_names.index("left_shoulder_pitch")] = np.pi / 2
        pose = humanoid_fk(model, np.zeros(3), np.array([0.0, 0.0, 0.0, 1.0]), q)
        names = model.keypoint12_names
        np.testing.assert_allclose(pose.kp12[names.index("left_shoulder")], [0.0, 0.15, 0.45], atol=1e-12)
        np.testing.assert_allclose(pose.kp12[names.index("left_elbow")], [-0.28, 0.15, 0.45], atol=1e-12)
        np.testing.assert_allclose(pose.kp12[names.index("left_hand")], [-0.53, 0.15, 0.45], atol=1e-12)

    def test_batch_matches_single(self, model):
        """Test batched FK against per-frame FK"""
        rng = np.random.default_rng(1)
        q = model.clamp(rng.uniform(-1, 1, (4, model.num_dof)))
        pos = rng.normal(size=(4, 3))
        rot = Rotation.random(4, random_state=2).as_quat()
        batch = humanoid_fk(model, pos, rot, q)
        for t in range(4):
            single = humanoid_fk(model, pos[t], rot[t], q[t])
            np.testing.assert_allclose(batch.kp12[t], single.kp12, atol=1e-12)

    def test_rotations_are_orthonormal(self, model):
        """Test link rotations stay in SO(3)"""
        rng = np.random.default_rng(3)
        pose = humanoid_fk(model, np.zeros(3), Rotation.random(random_state=4).as_quat(),
                           model.clamp(rng.uniform(-2, 2, model.num_dof)))
        eye = np.einsum("lij,lkj->lik", pose.link_rot, pose.link_rot)
        np.testing.assert_allclose(eye, np.broadcast_to(np.eye(3), eye.shape), atol=1e-12)

    def test_keypoint_jacobian_matches_finite_differences(self, model):
        """Test the analytic keypoint Jacobian against central differences"""
        rng = np.random.default_rng(5)
        q = model.clamp(rng.uniform(-0.8, 0.8, model.num_dof))
        root_pos = np.array([0.1, -0.2, 0.9])
        root_rot = Rotation.from_rotvec([0.1, -0.2, 0.3]).as_matrix()
        jac = keypoint_jacobian(model, humanoid_fk(model, root_pos, root_rot, q))

        eps = 1e-6
        numeric = np.zeros_like(jac)
        for i in range(3):
            d = np.zeros(3)
            d[i] = eps
            plus = humanoid_fk(model, root_pos + d, root_rot, q).kp12
            minus = humanoid_fk(model, root_pos - d, root_rot, q).kp12
            numeric[:, :, i] = (plus - minus) / (2 * eps)
            plus = humanoid_fk(model, root_pos, Rotation.from_rotvec(d).as_matrix() @ root_rot, q).kp12
            minus = humanoid_fk(model, root_pos, Rotation.from_rotvec(-d).as_matrix() @ root_rot, q).kp12
            numeric[:, :, 3 + i] = (plus - minus) / (2 * eps)
        for i in range(model.num_dof):
            d = np.zeros(model.num_dof)
            d[i] = eps
            plus = humanoid_fk(model, root_pos, root_rot, q + d).kp12
            minus = humanoid_fk(model, root_pos, root_rot, q - d).kp12
            numeric[:, :, 6 + i] = (plus - minus) / (2 * eps)
        np.testing.assert_allclose(jac, numeric, atol=1e-7)


class TestHumanSkeleton:
    """Test the human keypoint skeleton"""

    def test_parents_precede_children(self):
        """Test the skeleton is topologically ordered"""
        assert HUMAN_PARENTS[0] == -1
        assert np.all(HUMAN_PARENTS[1:] < np.arange(1, NUM_JOINTS))

    def test_rest_jacobian_is_exact(self, skeleton):
        """Test rest keypoints are linear in beta with the reported Jacobian"""
        rng = np.random.default_rng(0)
        beta = 0.1 * rng.normal(size=10)
        zeros = (np.zeros((1, 3)), np.array([[0.0, 0.0, 0.0, 1.0]]), np.zeros((1, 23, 3)))
        base = human_fk_batch(skeleton, np.zeros(10), *zeros)[0]
        moved = human_fk_batch(skeleton, beta, *zeros)[0]
        predicted = base + skeleton.rest_keypoints_jacobian() @ beta
        np.testing.assert_allclose(moved, predicted, atol=1e-12)

    def test_degenerate_shape(self, skeleton):
        """Test that a shape collapsing a bone is rejected"""
        with pytest.raises(KinematicsError, match="below"):
            skeleton.rest_offset(-10.0 * np.eye(10)[0])

    def test_root_translation(self, skeleton):
        """Test that every joint follows the root translation"""
        joints = np.zeros((1, 23, 3))
        identity = np.array([[0.0, 0.0, 0.0, 1.0]])
        a = human_fk_batch(skeleton, np.zeros(10), np.zeros((1, 3)), identity, joints)
        b = human_fk_batch(skeleton, np.zeros(10), np.array([[1.0, 2.0, 3.0]]), identity, joints)
        np.testing.assert_allclose(b - a, np.broadcast_to([1.0, 2.0, 3.0], a.shape), atol=1e-12)


class TestCorrespondence:
    """Test the human/humanoid keypoint correspondence"""

    def test_twelve_pairs(self, model):
        """Test every humanoid keypoint has a human joint"""
        pairs = correspondence(model)
        assert len(pairs) == 12
        assert len({j for _, j in pairs}) == 12

    def test_mirror_name(self):
        """Test left/right mirroring"""
        assert mirror_name("left_knee") == "right_knee"
        assert mirror_name("right_hand") == "left_hand"
