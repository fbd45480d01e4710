import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import yaml
from pydantic import ValidationError
from scipy.spatial.transform import Rotation

from teleop.motiondata import NUM_BETAS, NUM_JOINTS, MotionFrame, MotionSequence
from teleop.rotations import skew
from teleop.schemas import NUM_DOF, HumanoidSpec

logger = logging.getLogger(__name__)

DEFAULT_HUMANOID_CONFIG = Path(__file__).resolve().parent.parent / "config" / "humanoid.yaml"
MIN_BONE_LENGTH = 0.01


class KinematicsError(Exception):
    """Custom exception for kinematic model errors"""
    pass


# ---------------------------------------------------------------------------
# Human skeleton
# ---------------------------------------------------------------------------

HUMAN_JOINT_NAMES = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hand", "right_hand",
]

HUMAN_PARENTS = np.array([-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21])

# Rest offsets from the parent joint, arms hanging down; z up, x forward, y left
HUMAN_REST_OFFSETS = np.array([
    [0.0, 0.0, 0.0],
    [0.0, 0.08, -0.07],
    [0.0, -0.08, -0.07],
    [0.0, 0.0, 0.11],
    [0.0, 0.01, -0.40],
    [0.0, -0.01, -0.40],
    [0.0, 0.0, 0.13],
    [0.0, 0.0, -0.41],
    [0.0, 0.0, -0.41],
    [0.0, 0.0, 0.05],
    [0.12, 0.0, -0.06],
    [0.12, 0.0, -0.06],
    [0.0, 0.0, 0.21],
    [0.0, 0.05, 0.12],
    [0.0, -0.05, 0.12],
    [0.05, 0.0, 0.09],
    [0.0, 0.10, 0.03],
    [0.0, -0.10, 0.03],
    [0.0, 0.0, -0.27],
    [0.0, 0.0, -0.27],
    [0.0, 0.0, -0.25],
    [0.0, 0.0, -0.25],
    [0.0, 0.0, -0.08],
    [0.0, 0.0, -0.08],
])


def _default_shape_basis() -> np.ndarray:
    basis = np.zeros((NUM_JOINTS, NUM_BETAS))
    basis[:, 0] = 0.1
    basis[[4, 5, 7, 8, 10, 11], 1] = 0.1
    basis[[18, 19, 20, 21, 22, 23], 2] = 0.1
    basis[[13, 14, 16, 17], 3] = 0.1
    basis[[1, 2], 4] = 0.1
    return basis


# Left/right joint pairs, used to mirror poses
HUMAN_MIRROR = np.array([0, 2, 1, 3, 5, 4, 6, 8, 7, 9, 11, 10, 12, 14, 13, 15, 17, 16, 19, 18, 21, 20, 23, 22])


@dataclass(frozen=True)
class HumanSkeleton:
    """Keypoint skeleton with an affine bone-length shape model"""
    parent: np.ndarray
    offset0: np.ndarray
    basis: np.ndarray

    @classmethod
    def default(cls) -> "HumanSkeleton":
        return cls(HUMAN_PARENTS.copy(), HUMAN_REST_OFFSETS.copy(), _default_shape_basis())

    def scales(self, beta: np.ndarray) -> np.ndarray:
        return 1.0 + self.basis @ np.asarray(beta, dtype=float)

    def rest_offset(self, beta: np.ndarray) -> np.ndarray:
        """
        Per-joint offsets from the parent joint for shape beta.

        Raises:
            KinematicsError: If a bone becomes shorter than MIN_BONE_LENGTH
        """
        offsets = self.offset0 * self.scales(beta)[:, None]
        lengths = np.linalg.norm(offsets[1:], axis=1)
        if np.any(lengths <= MIN_BONE_LENGTH):
            j = int(np.argmin(lengths)) + 1
            raise KinematicsError(f"Bone {HUMAN_JOINT_NAMES[j]} length {lengths[j - 1]:.4f} m below {MIN_BONE_LENGTH} m")
        return offsets

    def path_matrix(self) -> np.ndarray:
        """(24, 24) matrix with [j, a] = 1 when a lies on the path root..j"""
        paths = np.zeros((NUM_JOINTS, NUM_JOINTS))
        for j in range(NUM_JOINTS):
            a = j
            while a >= 0:
                paths[j, a] = 1.0
                a = self.parent[a]
        return paths

    def rest_keypoints_jacobian(self) -> np.ndarray:
        """d(rest joint positions)/d(beta), shape (24, 3, 10); rest positions are linear in beta"""
        per_joint = self.offset0[:, :, None] * self.basis[:, None, :]
        return np.einsum("ja,aki->jki", self.path_matrix(), per_joint)


def human_fk_batch(skeleton: HumanSkeleton, beta: np.ndarray, root_pos: np.ndarray,
                   root_rot: np.ndarray, joint_rot: np.ndarray) -> np.ndarray:
    """
    World joint positions for a batch of frames.

    Args:
        root_pos: (T, 3)
        root_rot: (T, 4) quaternions
        joint_rot: (T, 23, 3) axis-angle

    Returns:
        (T, 24, 3) positions
    """
    offsets = skeleton.rest_offset(beta)
    n = root_pos.shape[0]
    local = Rotation.from_rotvec(np.array(joint_rot.reshape(-1, 3))).as_matrix().reshape(n, NUM_JOINTS - 1, 3, 3)
    glob = np.zeros((n, NUM_JOINTS, 3, 3))
    pos = np.zeros((n, NUM_JOINTS, 3))
    glob[:, 0] = Rotation.from_quat(root_rot).as_matrix()
    pos[:, 0] = root_pos
    for j in range(1, NUM_JOINTS):
        p = skeleton.parent[j]
        glob[:, j] = glob[:, p] @ local[:, j - 1]
        pos[:, j] = pos[:, p] + glob[:, p] @ offsets[j]
    return pos


def human_fk(skeleton: HumanSkeleton, shape: np.ndarray, frame: MotionFrame) -> np.ndarray:
    """World positions (24, 3) of every skeleton joint for one frame"""
    return human_fk_batch(
        skeleton, shape, frame.root_pos[None], frame.root_rot[None], frame.joint_rot[None]
    )[0]


def human_fk_sequence(skeleton: HumanSkeleton, seq: MotionSequence, shape: Optional[np.ndarray] = None) -> np.ndarray:
    beta = seq.shape if shape is None else shape
    return human_fk_batch(skeleton, beta, seq.root_pos, seq.root_rot, seq.joint_rot)


# ---------------------------------------------------------------------------
# Humanoid model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HumanoidModel:
    """
    Kinematic and dynamic description of the floating-base humanoid.

    Bodies: index 0 is the floating root, body i + 1 is the child frame of
    actuated joint i. Links (the physical parts with mass and capsules) are
    attached to bodies with a fixed offset; several links may share a body
    and intermediate bodies of multi-axis joints carry no link.
    """
    name: str
    joint_names: List[str]
    joint_parent: np.ndarray     # (19,) parent body index
    joint_offset: np.ndarray     # (19, 3)
    joint_axis: np.ndarray       # (19, 3)
    limit_lo: np.ndarray
    limit_hi: np.ndarray
    torque_limit: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    armature: np.ndarray
    link_names: List[str]
    link_body: np.ndarray        # (L,) body index
    link_offset: np.ndarray      # (L, 3) link frame origin in body frame
    link_mass: np.ndarray
    link_com: np.ndarray         # (L, 3) in link frame
    link_inertia: np.ndarray     # (L, 3) principal, about com
    link_capsule: np.ndarray     # (L, 2) radius, length
    keypoint12_names: List[str]
    keypoint12_link: np.ndarray
    keypoint12_offset: np.ndarray
    keypoint8_index: np.ndarray  # rows of keypoint12
    foot_link: np.ndarray        # (2,)
    foot_points: np.ndarray      # (P, 3) in foot link frame
    nominal_root_height: float
    support: np.ndarray          # (B, 19) joint i moves body b

    @property
    def num_dof(self) -> int:
        return len(self.joint_names)

    @property
    def num_bodies(self) -> int:
        return self.num_dof + 1

    @property
    def num_links(self) -> int:
        return len(self.link_names)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.link_mass))

    @property
    def default_q(self) -> np.ndarray:
        return np.clip(np.zeros(self.num_dof), self.limit_lo, self.limit_hi)

    @property
    def keypoint8_names(self) -> List[str]:
        return [self.keypoint12_names[i] for i in self.keypoint8_index]

    def link_index(self, name: str) -> int:
        return self.link_names.index(name)

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.limit_lo, self.limit_hi)

    def body_inertias(self, mass_scale: Optional[np.ndarray] = None,
                      com_shift: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Merge link inertias onto their bodies.

        Args:
            mass_scale: per-link mass factor
            com_shift: (3,) offset added to the root link's centre of mass

        Returns:
            (mass (B,), com (B, 3) in body frame, rotational inertia about com (B, 3, 3))
        """
        masses = self.link_mass * (1.0 if mass_scale is None else mass_scale)
        coms = self.link_offset + self.link_com
        if com_shift is not None:
            coms = coms.copy()
            coms[self.link_body == 0] += com_shift
        body_mass = np.zeros(self.num_bodies)
        body_com = np.zeros((self.num_bodies, 3))
        body_inertia = np.zeros((self.num_bodies, 3, 3))
        for b in range(self.num_bodies):
            idx = np.flatnonzero(self.link_body == b)
            if idx.size == 0:
                continue
            m = masses[idx]
            c = np.sum(m[:, None] * coms[idx], axis=0) / np.sum(m)
            inertia = np.zeros((3, 3))
            for k, mk in zip(idx, m):
                d = coms[k] - c
                inertia += np.diag(self.link_inertia[k] * mk / self.link_mass[k])
                inertia += mk * (np.dot(d, d) * np.eye(3) - np.outer(d, d))
            body_mass[b] = np.sum(m)
            body_com[b] = c
            body_inertia[b] = inertia
        return body_mass, body_com, body_inertia


def build_humanoid(spec: HumanoidSpec) -> HumanoidModel:
    """Freeze a validated HumanoidSpec into array form"""
    joint_index = {j.name: i for i, j in enumerate(spec.joints)}

    def body_of(parent: str) -> int:
        return 0 if parent == "root" else joint_index[parent] + 1

    link_names = [l.name for l in spec.links]
    link_body = np.zeros(len(link_names), dtype=int)
    link_offset = np.zeros((len(link_names), 3))
    for joint in spec.joints:
        if joint.link is not None:
            link_body[link_names.index(joint.link)] = joint_index[joint.name] + 1
    for fixed in spec.fixed_links:
        k = link_names.index(fixed.name)
        link_body[k] = body_of(fixed.parent)
        link_offset[k] = fixed.offset

    joint_parent = np.array([body_of(j.parent) for j in spec.joints])
    num_bodies = len(spec.joints) + 1
    support = np.zeros((num_bodies, len(spec.joints)), dtype=bool)
    for i in range(len(spec.joints)):
        support[i + 1] = support[joint_parent[i]]
        support[i + 1, i] = True

    kp_names = [k.name for k in spec.keypoint12]
    arr = np.array
    model = HumanoidModel(
        name=spec.name,
        joint_names=[j.name for j in spec.joints],
        joint_parent=joint_parent,
        joint_offset=arr([j.offset for j in spec.joints], dtype=float),
        joint_axis=arr([j.axis for j in spec.joints], dtype=float),
        limit_lo=arr([j.limit[0] for j in spec.joints]),
        limit_hi=arr([j.limit[1] for j in spec.joints]),
        torque_limit=arr([j.torque_limit for j in spec.joints]),
        kp=arr([j.kp for j in spec.joints]),
        kd=arr([j.kd for j in spec.joints]),
        armature=arr([j.armature for j in spec.joints]),
        link_names=link_names,
        link_body=link_body,
        link_offset=link_offset,
        link_mass=arr([l.mass for l in spec.links]),
        link_com=arr([l.com for l in spec.links], dtype=float),
        link_inertia=arr([l.inertia for l in spec.links], dtype=float),
        link_capsule=arr([[l.capsule.radius, l.capsule.length] for l in spec.links]),
        keypoint12_names=kp_names,
        keypoint12_link=arr([link_names.index(k.link) for k in spec.keypoint12]),
        keypoint12_offset=arr([k.offset for k in spec.keypoint12], dtype=float),
        keypoint8_index=arr([kp_names.index(k) for k in spec.keypoint8]),
        foot_link=arr([link_names.index(f) for f in spec.foot_links]),
        foot_points=arr(spec.foot_contact_points, dtype=float),
        nominal_root_height=spec.nominal_root_height,
        support=support,
    )
    if model.num_dof != NUM_DOF:
        raise KinematicsError(f"Expected {NUM_DOF} actuated joints, got {model.num_dof}")
    return model


def load_humanoid(path=None) -> HumanoidModel:
    """
    Load the humanoid model config.

    Args:
        path: YAML file, defaults to the in-repo config/humanoid.yaml

    Raises:
        KinematicsError: If the file is missing or violates the schema
    """
    path = Path(path) if path else DEFAULT_HUMANOID_CONFIG
    if not path.exists():
        raise KinematicsError(f"Humanoid config not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
        spec = HumanoidSpec(**raw)
    except yaml.YAMLError as e:
        raise KinematicsError(f"Malformed humanoid config {path}: {str(e)}") from e
    except (ValidationError, TypeError) as e:
        raise KinematicsError(f"Invalid humanoid config {path}: {str(e)}") from e
    model = build_humanoid(spec)
    logger.debug(f"Loaded humanoid {model.name}: {model.num_links} links, {model.num_dof} DoF, {model.total_mass:.1f} kg")
    return model


# ---------------------------------------------------------------------------
# Humanoid forward kinematics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HumanoidPose:
    body_pos: np.ndarray   # (..., B, 3)
    body_rot: np.ndarray   # (..., B, 3, 3)
    link_pos: np.ndarray   # (..., L, 3)
    link_rot: np.ndarray   # (..., L, 3, 3)
    kp12: np.ndarray       # (..., 12, 3)
    kp8: np.ndarray        # (..., 8, 3)


def joint_rotations(model: HumanoidModel, q: np.ndarray) -> np.ndarray:
    """Local rotation matrices (..., 19, 3, 3) of each joint about its axis"""
    k = np.stack([skew(a) for a in model.joint_axis])
    k2 = k @ k
    s = np.sin(q)[..., None, None]
    c = np.cos(q)[..., None, None]
    return np.eye(3) + s * k + (1.0 - c) * k2


def humanoid_fk(model: HumanoidModel, root_pos: np.ndarray, root_rot: np.ndarray, q: np.ndarray) -> HumanoidPose:
    """
    Forward kinematics of the humanoid, vectorized over leading batch dims.

    Args:
        root_pos: (..., 3) world root position
        root_rot: (..., 4) root quaternion or (..., 3, 3) rotation matrix
        q: (..., 19) joint angles (rad)

    Returns:
        HumanoidPose with world body/link poses and keypoints
    """
    root_pos = np.asarray(root_pos, dtype=float)
    root_rot = np.asarray(root_rot, dtype=float)
    if root_rot.shape[-1] == 4:
        batch = root_rot.shape[:-1]
        root_rot = Rotation.from_quat(root_rot.reshape(-1, 4)).as_matrix().reshape(batch + (3, 3))
    batch = root_pos.shape[:-1]
    local = joint_rotations(model, q)

    body_rot = np.zeros(batch + (model.num_bodies, 3, 3))
    body_pos = np.zeros(batch + (model.num_bodies, 3))
    body_rot[..., 0, :, :] = root_rot
    body_pos[..., 0, :] = root_pos
    for i in range(model.num_dof):
        p = model.joint_parent[i]
        parent_rot = body_rot[..., p, :, :]
        body_rot[..., i + 1, :, :] = parent_rot @ local[..., i, :, :]
        body_pos[..., i + 1, :] = body_pos[..., p, :] + parent_rot @ model.joint_offset[i]

    link_rot = body_rot[..., model.link_body, :, :]
    link_pos = body_pos[..., model.link_body, :] + np.einsum("...lij,lj->...li", link_rot, model.link_offset)
    kp_rot = link_rot[..., model.keypoint12_link, :, :]
    kp12 = link_pos[..., model.keypoint12_link, :] + np.einsum("...kij,kj->...ki", kp_rot, model.keypoint12_offset)
    return HumanoidPose(body_pos, body_rot, link_pos, link_rot, kp12, kp12[..., model.keypoint8_index, :])


def keypoint_jacobian(model: HumanoidModel, pose: HumanoidPose) -> np.ndarray:
    """
    Jacobian of world keypoint12 positions for a single pose.

    Columns: root translation (3), world-frame root rotation vector (3), q (19).

    Returns:
        (12, 3, 25) array
    """
    kp = pose.kp12
    jac = np.zeros((kp.shape[0], 3, 6 + model.num_dof))
    jac[:, :, 0:3] = np.eye(3)
    for k in range(kp.shape[0]):
        jac[k, :, 3:6] = -skew(kp[k] - pose.body_pos[0])
    axes = np.einsum("bij,bj->bi", pose.body_rot[1:], model.joint_axis)
    origins = pose.body_pos[1:]
    kp_body = model.link_body[model.keypoint12_link]
    for k in range(kp.shape[0]):
        for i in np.flatnonzero(model.support[kp_body[k]]):
            jac[k, :, 6 + i] = np.cross(axes[i], kp[k] - origins[i])
    return jac


# ---------------------------------------------------------------------------
# Human/humanoid correspondence
# ---------------------------------------------------------------------------

# Human joint index for each humanoid keypoint12 name
CORRESPONDENCE = {
    "left_shoulder": 16, "left_elbow": 18, "left_hand": 20,
    "left_hip": 1, "left_knee": 4, "left_ankle": 7,
    "right_shoulder": 17, "right_elbow": 19, "right_hand": 21,
    "right_hip": 2, "right_knee": 5, "right_ankle": 8,
}


def correspondence(model: Optional[HumanoidModel] = None) -> List[Tuple[str, int]]:
    """(humanoid keypoint name, human joint index) pairs in keypoint12 order"""
    names = model.keypoint12_names if model is not None else list(CORRESPONDENCE)
    missing = [n for n in names if n not in CORRESPONDENCE]
    if missing:
        raise KinematicsError(f"No human correspondence for keypoints: {missing}")
    return [(n, CORRESPONDENCE[n]) for n in names]


def human_kp12_indices(model: Optional[HumanoidModel] = None) -> np.ndarray:
    return np.array([j for _, j in correspondence(model)])


def mirror_name(name: str) -> str:
    if name.startswith("left_"):
        return "right_" + name[len("left_"):]
    if name.startswith("right_"):
        return "left_" + name[len("right_"):]
    return name
