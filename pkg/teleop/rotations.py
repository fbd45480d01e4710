"""
Rotation helpers shared by the kinematics, dynamics and observation code.

Quaternions are scalar-last (x, y, z, w). Batch conversions go through
scipy's Rotation; single quaternions and matrices use the closed forms below.
"""
import numpy as np
from scipy.spatial.transform import Rotation

IDENTITY_QUAT = np.array([0.0, 0.0, 0.0, 1.0])


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix of a 3-vector"""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis"""
    c = np.cos(angle)
    s = np.sin(angle)
    k = skew(axis)
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b for (..., 4) scalar-last quaternions"""
    ax, ay, az, aw = np.moveaxis(a, -1, 0)
    bx, by, bz, bw = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ], axis=-1)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a single unit quaternion"""
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(m).as_quat()


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(rv).as_quat()


def integrate_quat(q: np.ndarray, omega_world: np.ndarray, dt: float) -> np.ndarray:
    """Advance a unit quaternion by a world-frame angular velocity over dt"""
    dq = Rotation.from_rotvec(omega_world * dt).as_quat()
    return quat_normalize(quat_mul(dq, q))


def heading_yaw(rot: np.ndarray) -> float:
    """Yaw angle of the body x axis projected on the ground plane"""
    return float(np.arctan2(rot[1, 0], rot[0, 0]))


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot6d(rot: np.ndarray) -> np.ndarray:
    """First two columns of (..., 3, 3) rotation matrices, flattened to (..., 6)"""
    cols = rot[..., :, :2]
    return np.concatenate([cols[..., :, 0], cols[..., :, 1]], axis=-1)


def relative_rotvec(rot_from: np.ndarray, rot_to: np.ndarray) -> np.ndarray:
    """World-frame rotation vectors of rot_to @ rot_from.T for (..., 3, 3) stacks"""
    rel = rot_to @ np.swapaxes(rot_from, -1, -2)
    return Rotation.from_matrix(rel.reshape(-1, 3, 3)).as_rotvec().reshape(rel.shape[:-2] + (3,))


def geodesic_angle(rot_a: np.ndarray, rot_b: np.ndarray) -> np.ndarray:
    """Angle (rad) of the relative rotation between matching rotation stacks"""
    return np.linalg.norm(relative_rotvec(rot_a, rot_b), axis=-1)
