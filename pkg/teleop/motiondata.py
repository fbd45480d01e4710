import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

logger = logging.getLogger(__name__)

NUM_JOINTS = 24
NUM_BODY_JOINTS = NUM_JOINTS - 1
NUM_BETAS = 10
STAND_ROOT_HEIGHT = 0.95
QUAT_TOL = 1e-6

MOTION_FORMAT = "teleop-motion"
MOTION_VERSION = 1
MANIFEST_FORMAT = "teleop-manifest"
MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"

FEASIBLE_KINDS = ("stand", "wave", "squat", "step_in_place", "walk", "kick")
INFEASIBLE_KINDS = ("infeasible_teleport", "infeasible_underground", "infeasible_superhuman_speed")
MOTION_KINDS = FEASIBLE_KINDS + INFEASIBLE_KINDS

# Human joint indices (SMPL ordering)
L_HIP, R_HIP, L_KNEE, R_KNEE = 1, 2, 4, 5
L_ANKLE, R_ANKLE = 7, 8
L_SHOULDER, R_SHOULDER, L_ELBOW, R_ELBOW = 16, 17, 18, 19

# Largest rotation magnitude a feasible synthetic joint may reach
HUMAN_JOINT_LIMIT = 2.5


class MotionFormatError(Exception):
    """Custom exception for malformed motion files"""
    pass


class MotionValidationError(Exception):
    """Custom exception for motion invariant violations"""
    pass


class DatasetError(Exception):
    """Custom exception for dataset manifest errors"""
    pass


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MotionFrame:
    root_pos: np.ndarray
    root_rot: np.ndarray
    joint_rot: np.ndarray


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """
    Human motion at a fixed frame rate.

    Frames are stored column-wise: root_pos (T, 3), root_rot (T, 4) unit
    quaternions (x, y, z, w) and joint_rot (T, 23, 3) axis-angle vectors for
    the non-root joints. Arrays are read-only once constructed.
    """
    fps: float
    shape: np.ndarray
    root_pos: np.ndarray
    root_rot: np.ndarray
    joint_rot: np.ndarray
    name: str = ""
    tags: Sequence[str] = field(default_factory=tuple)

    def __post_init__(self):
        n = np.asarray(self.root_pos).reshape(-1, 3).shape[0]
        object.__setattr__(self, "fps", float(self.fps))
        object.__setattr__(self, "shape", _frozen(self.shape, (NUM_BETAS,)))
        object.__setattr__(self, "root_pos", _frozen(self.root_pos, (n, 3)))
        object.__setattr__(self, "root_rot", _frozen(self.root_rot, (n, 4)))
        object.__setattr__(self, "joint_rot", _frozen(self.joint_rot, (n, NUM_BODY_JOINTS, 3)))
        object.__setattr__(self, "tags", tuple(self.tags))
        validate_motion(self)

    def __len__(self) -> int:
        return self.root_pos.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, MotionSequence):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.name == other.name
            and self.tags == other.tags
            and np.array_equal(self.shape, other.shape)
            and np.array_equal(self.root_pos, other.root_pos)
            and np.array_equal(self.root_rot, other.root_rot)
            and np.array_equal(self.joint_rot, other.joint_rot)
        )

    @property
    def duration(self) -> float:
        return (len(self) - 1) / self.fps if len(self) else 0.0

    def frame(self, i: int) -> MotionFrame:
        return MotionFrame(self.root_pos[i], self.root_rot[i], self.joint_rot[i])

    @property
    def frames(self) -> List[MotionFrame]:
        return [self.frame(i) for i in range(len(self))]


@dataclass(frozen=True)
class MotionVelocities:
    root_lin_vel: np.ndarray   # (T, 3) m/s, world frame
    root_ang_vel: np.ndarray   # (T, 3) rad/s, world frame
    joint_ang_vel: np.ndarray  # (T, 23, 3) rad/s, local joint frame


def validate_motion(seq: MotionSequence) -> None:
    """
    Check the MotionSequence invariants.

    Raises:
        MotionValidationError: If any invariant is violated
    """
    if not seq.fps > 0 or not math.isfinite(seq.fps):
        raise MotionValidationError(f"fps must be positive, got {seq.fps}")
    for name in ("shape", "root_pos", "root_rot", "joint_rot"):
        if not np.all(np.isfinite(getattr(seq, name))):
            raise MotionValidationError(f"{name} contains non-finite values")
    if len(seq) == 0:
        return
    norms = np.linalg.norm(seq.root_rot, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > QUAT_TOL)
    if bad.size:
        raise MotionValidationError(f"frame {bad[0]}: root_rot norm {norms[bad[0]]:.6f} is not unit")
    angles = np.linalg.norm(seq.joint_rot, axis=2)
    bad = np.argwhere(angles > np.pi + 1e-6)
    if bad.size:
        f, j = bad[0]
        raise MotionValidationError(f"frame {f}: joint {j + 1} axis-angle magnitude {angles[f, j]:.6f} exceeds pi")


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


def save_motion(seq: MotionSequence, path) -> None:
    """
    Write a sequence as JSON Lines: one header line, then one line per frame.

    Raises:
        OSError: If the file cannot be written
    """
    header = {
        "format": MOTION_FORMAT,
        "version": MOTION_VERSION,
        "name": seq.name,
        "fps": seq.fps,
        "num_frames": len(seq),
        "tags": list(seq.tags),
        "shape": seq.shape.tolist(),
    }
    lines = [_dumps(header)]
    for pos, rot, joints in zip(seq.root_pos.tolist(), seq.root_rot.tolist(), seq.joint_rot.tolist()):
        lines.append(_dumps({"root_pos": pos, "root_rot": rot, "joint_rot": joints}))

    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    logger.debug(f"Saved motion {seq.name} ({len(seq)} frames) to {path}")


def _field(record: Dict, key: str, shape, lineno: int) -> np.ndarray:
    if key not in record:
        raise MotionFormatError(f"line {lineno}: missing field '{key}'")
    try:
        arr = np.array(record[key], dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise MotionFormatError(f"line {lineno}: field '{key}' is not numeric") from e
    if arr.shape != shape:
        raise MotionFormatError(f"line {lineno}: field '{key}' has shape {arr.shape}, expected {shape}")
    return arr


def load_motion(path) -> MotionSequence:
    """
    Load a motion file written by save_motion.

    Returns:
        Validated MotionSequence

    Raises:
        MotionFormatError: If the file cannot be parsed (line/field context)
        MotionValidationError: If the parsed data violates an invariant
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise MotionFormatError(f"Cannot read motion file {path}: {str(e)}") from e

    lines = text.splitlines()
    if not lines:
        raise MotionFormatError(f"{path}: empty motion file")

    records = []
    for lineno, line in enumerate(lines, start=1):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise MotionFormatError(f"{path} line {lineno}: {e.msg}") from e

    header = records[0]
    if not isinstance(header, dict) or header.get("format") != MOTION_FORMAT:
        raise MotionFormatError(f"{path} line 1: not a {MOTION_FORMAT} header")
    if header.get("version") != MOTION_VERSION:
        raise MotionFormatError(f"{path} line 1: unsupported version {header.get('version')}")
    for key in ("fps", "num_frames", "shape"):
        if key not in header:
            raise MotionFormatError(f"{path} line 1: missing field '{key}'")

    frames = records[1:]
    if header["num_frames"] != len(frames):
        raise MotionFormatError(f"{path}: header declares {header['num_frames']} frames, found {len(frames)}")

    shape = _field(header, "shape", (NUM_BETAS,), 1)
    root_pos = np.zeros((len(frames), 3))
    root_rot = np.zeros((len(frames), 4))
    joint_rot = np.zeros((len(frames), NUM_BODY_JOINTS, 3))
    for i, record in enumerate(frames):
        lineno = i + 2
        if not isinstance(record, dict):
            raise MotionFormatError(f"{path} line {lineno}: frame must be an object")
        root_pos[i] = _field(record, "root_pos", (3,), lineno)
        root_rot[i] = _field(record, "root_rot", (4,), lineno)
        joint_rot[i] = _field(record, "joint_rot", (NUM_BODY_JOINTS, 3), lineno)

    return MotionSequence(
        fps=header["fps"],
        shape=shape,
        root_pos=root_pos,
        root_rot=root_rot,
        joint_rot=joint_rot,
        name=str(header.get("name", "")),
        tags=tuple(header.get("tags", ())),
    )


# ---------------------------------------------------------------------------
# Resampling and velocities
# ---------------------------------------------------------------------------

def _align_hemisphere(q: np.ndarray, ref: np.ndarray) -> np.ndarray:
    sign = np.where(np.sum(q * ref, axis=-1, keepdims=True) < 0.0, -1.0, 1.0)
    return q * sign


def resample(seq: MotionSequence, target_fps: float) -> MotionSequence:
    """
    Resample a sequence to a new frame rate.

    Root translation is interpolated linearly, root and joint rotations by
    slerp. The first and last frames are kept exactly.

    Raises:
        MotionValidationError: If the sequence is empty or target_fps <= 0
    """
    if target_fps <= 0:
        raise MotionValidationError(f"target_fps must be positive, got {target_fps}")
    n = len(seq)
    if n == 0:
        raise MotionValidationError("Cannot resample an empty sequence")
    if target_fps == seq.fps:
        return seq

    n_new = max(1, int(round(n * target_fps / seq.fps)))
    if n == 1:
        return MotionSequence(
            fps=target_fps, shape=seq.shape,
            root_pos=np.repeat(seq.root_pos, n_new, axis=0),
            root_rot=np.repeat(seq.root_rot, n_new, axis=0),
            joint_rot=np.repeat(seq.joint_rot, n_new, axis=0),
            name=seq.name, tags=seq.tags,
        )

    t_src = np.arange(n) / seq.fps
    t_end = t_src[-1]
    t_new = np.minimum(np.arange(n_new) / target_fps, t_end)
    t_new[-1] = t_end

    root_pos = np.stack([np.interp(t_new, t_src, seq.root_pos[:, k]) for k in range(3)], axis=1)

    nearest = np.clip(np.round(t_new * seq.fps).astype(int), 0, n - 1)
    root_rot = Slerp(t_src, Rotation.from_quat(seq.root_rot))(t_new).as_quat()
    root_rot = _align_hemisphere(root_rot, seq.root_rot[nearest])

    joint_rot = np.zeros((n_new, NUM_BODY_JOINTS, 3))
    for j in range(NUM_BODY_JOINTS):
        joint_rot[:, j] = Slerp(t_src, Rotation.from_rotvec(np.array(seq.joint_rot[:, j])))(t_new).as_rotvec()

    root_pos[0], root_rot[0], joint_rot[0] = seq.root_pos[0], seq.root_rot[0], seq.joint_rot[0]
    root_pos[-1], root_rot[-1], joint_rot[-1] = seq.root_pos[-1], seq.root_rot[-1], seq.joint_rot[-1]

    logger.debug(f"Resampled {seq.name}: {n} frames @ {seq.fps} Hz -> {n_new} frames @ {target_fps} Hz")
    return MotionSequence(
        fps=target_fps, shape=seq.shape, root_pos=root_pos, root_rot=root_rot,
        joint_rot=joint_rot, name=seq.name, tags=seq.tags,
    )


def rotation_rates(rots: Rotation, dt: float, world: bool = True) -> np.ndarray:
    """
    Angular velocity of a rotation track by differencing rotation logs.

    Central differences in the interior, one-sided at the ends. World-frame
    rates use R_b R_a^T, body-frame rates R_a^T R_b.
    """
    n = len(rots)
    lo = np.concatenate([[0], np.arange(n - 2), [n - 2]])
    hi = np.concatenate([[1], np.arange(2, n), [n - 1]])
    span = (hi - lo) * dt
    if world:
        delta = rots[hi] * rots[lo].inv()
    else:
        delta = rots[lo].inv() * rots[hi]
    return delta.as_rotvec() / span[:, None]


def finite_diff_velocities(seq: MotionSequence) -> MotionVelocities:
    """
    Root linear/angular velocities and local joint angular rates.

    Raises:
        MotionValidationError: If the sequence has fewer than 2 frames
    """
    if len(seq) < 2:
        raise MotionValidationError(f"Need at least 2 frames for velocities, got {len(seq)}")
    dt = 1.0 / seq.fps
    root_lin_vel = np.gradient(seq.root_pos, dt, axis=0)
    root_ang_vel = rotation_rates(Rotation.from_quat(seq.root_rot), dt, world=True)
    joint_ang_vel = np.stack([
        rotation_rates(Rotation.from_rotvec(np.array(seq.joint_rot[:, j])), dt, world=False)
        for j in range(NUM_BODY_JOINTS)
    ], axis=1)
    return MotionVelocities(root_lin_vel, root_ang_vel, joint_ang_vel)


# ---------------------------------------------------------------------------
# Synthetic motions
# ---------------------------------------------------------------------------

def _smooth_pulse(t: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def _pose_legs(joints: np.ndarray, hip: int, knee: int, ankle: int, hip_pitch, knee_pitch, ankle_pitch):
    joints[:, hip - 1, 1] = hip_pitch
    joints[:, knee - 1, 1] = knee_pitch
    joints[:, ankle - 1, 1] = ankle_pitch


def _leg_drop(bend: np.ndarray) -> np.ndarray:
    # Pelvis drop for a symmetric crouch with thigh and shin tilted by `bend`
    return 0.81 * (1.0 - np.cos(bend))


def synth_motion(kind: str, duration_s: float, fps: float, seed: int, name: Optional[str] = None) -> MotionSequence:
    """
    Generate a deterministic synthetic motion.

    Feasible kinds stay within human joint ranges. The infeasible kinds each
    break one property: infeasible_teleport jumps the root by 1.5 m in one
    frame, infeasible_underground sinks the root to -0.3 m, and
    infeasible_superhuman_speed sprints the root at 15 m/s while the legs
    flip by 2 rad every frame.

    Args:
        kind: one of MOTION_KINDS
        duration_s: sequence length in seconds
        fps: frame rate in Hz
        seed: RNG seed for per-sequence variation
        name: sequence name, defaults to kind

    Returns:
        MotionSequence with round(duration_s * fps) frames

    Raises:
        MotionValidationError: If kind is unknown or sizes are invalid
    """
    if kind not in MOTION_KINDS:
        raise MotionValidationError(f"Unknown motion kind: {kind}")
    if fps <= 0 or duration_s <= 0:
        raise MotionValidationError("duration_s and fps must be positive")

    n = int(round(duration_s * fps))
    rng = np.random.default_rng(seed)
    t = np.arange(n) / fps
    root_pos = np.zeros((n, 3))
    root_pos[:, 2] = STAND_ROOT_HEIGHT
    yaw = np.zeros(n)
    joints = np.zeros((n, NUM_BODY_JOINTS, 3))

    if kind == "wave":
        freq = rng.uniform(1.2, 1.8)
        raise_ = np.minimum(t / 0.5, 1.0)
        joints[:, R_SHOULDER - 1, 0] = -1.4 * raise_
        joints[:, R_ELBOW - 1, 0] = -0.3 * raise_ + 0.4 * raise_ * np.sin(2 * np.pi * freq * t)
    elif kind == "squat":
        freq = rng.uniform(0.4, 0.6)
        bend = 0.8 * 0.5 * (1.0 - np.cos(2 * np.pi * freq * t))
        root_pos[:, 2] -= _leg_drop(bend)
        for hip, knee, ankle in ((L_HIP, L_KNEE, L_ANKLE), (R_HIP, R_KNEE, R_ANKLE)):
            _pose_legs(joints, hip, knee, ankle, -bend, 2.0 * bend, -bend)
        joints[:, L_SHOULDER - 1, 1] = -0.8 * bend
        joints[:, R_SHOULDER - 1, 1] = -0.8 * bend
    elif kind == "step_in_place":
        freq = rng.uniform(0.8, 1.2)
        phase = 2 * np.pi * freq * t
        for offset, (hip, knee, ankle) in ((0.0, (L_HIP, L_KNEE, L_ANKLE)), (np.pi, (R_HIP, R_KNEE, R_ANKLE))):
            lift = np.maximum(0.0, np.sin(phase + offset))
            _pose_legs(joints, hip, knee, ankle, -0.6 * lift, 1.2 * lift, -0.6 * lift)
        root_pos[:, 2] -= 0.01 * np.abs(np.sin(phase))
    elif kind == "walk":
        speed = rng.uniform(0.4, 0.6)
        freq = rng.uniform(1.6, 2.0)
        phase = 2 * np.pi * freq * t + rng.uniform(0.0, 2 * np.pi)
        root_pos[:, 0] = speed * t
        root_pos[:, 2] -= 0.02 + 0.01 * np.cos(2 * phase)
        swing = 0.35 * np.sin(phase)
        joints[:, L_HIP - 1, 1] = -swing
        joints[:, R_HIP - 1, 1] = swing
        joints[:, L_KNEE - 1, 1] = 0.6 * np.maximum(0.0, np.sin(phase))
        joints[:, R_KNEE - 1, 1] = 0.6 * np.maximum(0.0, -np.sin(phase))
        joints[:, L_SHOULDER - 1, 1] = 0.3 * np.sin(phase)
        joints[:, R_SHOULDER - 1, 1] = -0.3 * np.sin(phase)
    elif kind == "kick":
        center = duration_s * rng.uniform(0.4, 0.6)
        pulse = _smooth_pulse(t, center, 0.15 * duration_s)
        chamber = _smooth_pulse(t, center - 0.1 * duration_s, 0.08 * duration_s)
        joints[:, R_HIP - 1, 1] = -1.1 * pulse
        joints[:, R_KNEE - 1, 1] = 1.2 * chamber
        joints[:, L_SHOULDER - 1, 0] = 0.3 * pulse
        joints[:, R_SHOULDER - 1, 0] = -0.3 * pulse
    elif kind == "infeasible_teleport":
        root_pos[n // 2:, 0] += 1.5
    elif kind == "infeasible_underground":
        sink = np.clip((t - 0.5 * duration_s) / (0.25 * duration_s), 0.0, 1.0)
        root_pos[:, 2] -= sink * (STAND_ROOT_HEIGHT + 0.3)
    elif kind == "infeasible_superhuman_speed":
        root_pos[:, 0] = 15.0 * t
        flip = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        joints[:, L_HIP - 1, 1] = flip
        joints[:, R_HIP - 1, 1] = -flip

    root_rot = Rotation.from_rotvec(np.stack([np.zeros(n), np.zeros(n), yaw], axis=1)).as_quat()
    tags = ("feasible" if kind in FEASIBLE_KINDS else "infeasible", kind)
    return MotionSequence(
        fps=fps,
        shape=np.zeros(NUM_BETAS),
        root_pos=root_pos,
        root_rot=root_rot,
        joint_rot=joints,
        name=name if name is not None else kind,
        tags=tags,
    )


def suite_kinds(suite: str) -> List[tuple]:
    """(kind, seed) pairs of a named synthetic suite"""
    if suite == "default":
        return [(kind, 0) for kind in MOTION_KINDS]
    if suite == "feasible":
        return [(kind, 0) for kind in FEASIBLE_KINDS]
    if suite == "extended":
        return [(kind, seed) for seed in (0, 1) for kind in FEASIBLE_KINDS]
    raise MotionValidationError(f"Unknown suite: {suite}")


def sequence_id(kind: str, seed: int) -> str:
    return f"{kind}_s{seed}"


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

class Status(str, Enum):
    RAW = "raw"
    RETARGETED = "retargeted"
    REJECTED_HEURISTIC = "rejected-heuristic"
    REJECTED_SIM2DATA = "rejected-sim2data"
    CLEAN = "clean"


_TRANSITIONS = {
    Status.RAW: {Status.RETARGETED},
    Status.RETARGETED: {Status.REJECTED_HEURISTIC, Status.REJECTED_SIM2DATA, Status.CLEAN},
    Status.REJECTED_HEURISTIC: set(),
    Status.REJECTED_SIM2DATA: set(),
    Status.CLEAN: set(),
}

# Statuses of sequences that went through retargeting (the uncleaned set)
RETARGETED_STATUSES = (Status.RETARGETED, Status.REJECTED_SIM2DATA, Status.CLEAN)


@dataclass
class DatasetEntry:
    id: str
    path: str
    status: Status = Status.RAW
    reason: Optional[str] = None


class MotionDataset:
    """
    On-disk dataset manifest.

    Entry paths are relative to the manifest directory. The manifest has a
    single writer; statuses only move forward.
    """

    def __init__(self, manifest_path, entries: Optional[List[DatasetEntry]] = None, config_hash: str = ""):
        self.manifest_path = Path(manifest_path)
        self.config_hash = config_hash
        self._entries: Dict[str, DatasetEntry] = {}
        for entry in entries or []:
            self.add(entry.id, entry.path, entry.status, entry.reason)

    @classmethod
    def create(cls, root, config_hash: str = "") -> "MotionDataset":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        return cls(root / MANIFEST_NAME, config_hash=config_hash)

    @classmethod
    def load(cls, path) -> "MotionDataset":
        """
        Load a manifest from a file or from a directory holding manifest.json.

        Raises:
            DatasetError: If the manifest is missing or malformed
        """
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise DatasetError(f"Manifest not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise DatasetError(f"{path}: malformed manifest ({e.msg})") from e
        if doc.get("format") != MANIFEST_FORMAT or doc.get("version") != MANIFEST_VERSION:
            raise DatasetError(f"{path}: unsupported manifest format/version")
        try:
            entries = [
                DatasetEntry(e["id"], e["path"], Status(e["status"]), e.get("reason"))
                for e in doc["entries"]
            ]
        except (KeyError, ValueError, TypeError) as e:
            raise DatasetError(f"{path}: invalid entry ({str(e)})") from e
        return cls(path, entries, doc.get("config_hash", ""))

    @property
    def root(self) -> Path:
        return self.manifest_path.parent

    @property
    def entries(self) -> List[DatasetEntry]:
        return [self._entries[k] for k in sorted(self._entries)]

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, seq_id: str) -> bool:
        return seq_id in self._entries

    def ids(self) -> List[str]:
        return sorted(self._entries)

    def get(self, seq_id: str) -> DatasetEntry:
        if seq_id not in self._entries:
            raise DatasetError(f"Unknown sequence id: {seq_id}")
        return self._entries[seq_id]

    def path_of(self, seq_id: str) -> Path:
        return self.root / self.get(seq_id).path

    def add(self, seq_id: str, path, status: Status = Status.RAW, reason: Optional[str] = None) -> DatasetEntry:
        if seq_id in self._entries:
            raise DatasetError(f"Duplicate sequence id: {seq_id}")
        entry = DatasetEntry(seq_id, str(path), Status(status), reason)
        self._entries[seq_id] = entry
        return entry

    def set_status(self, seq_id: str, status: Status, reason: Optional[str] = None) -> None:
        """
        Move an entry to a later status. Re-applying the current status is a no-op.

        Raises:
            DatasetError: If the transition goes backwards or skips a stage
        """
        entry = self.get(seq_id)
        status = Status(status)
        if status == entry.status:
            return
        if status not in _TRANSITIONS[entry.status]:
            raise DatasetError(f"{seq_id}: illegal status transition {entry.status.value} -> {status.value}")
        entry.status = status
        entry.reason = reason

    def with_status(self, *statuses: Status) -> List[str]:
        wanted = {Status(s) for s in statuses}
        return [e.id for e in self.entries if e.status in wanted]

    def subset(self, fraction: float, rng: np.random.Generator, ids: Optional[List[str]] = None) -> List[str]:
        """Random subset of ids of size max(1, round(fraction * n)), sorted"""
        pool = sorted(ids if ids is not None else self.ids())
        if not pool:
            return []
        if not 0.0 < fraction <= 1.0:
            raise DatasetError(f"fraction must lie in (0, 1], got {fraction}")
        k = max(1, int(round(fraction * len(pool))))
        picked = rng.choice(len(pool), size=k, replace=False)
        return sorted(pool[i] for i in picked)

    def load_motion(self, seq_id: str) -> MotionSequence:
        return load_motion(self.path_of(seq_id))

    def save(self) -> None:
        doc = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "config_hash": self.config_hash,
            "entries": [
                {"id": e.id, "path": e.path, "status": e.status.value, "reason": e.reason}
                for e in self.entries
            ],
        }
        self.manifest_path.parent.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        logger.info(f"Wrote manifest {self.manifest_path} ({len(self)} entries)")


def write_suite(suite: str, out_dir, duration_s: float, fps: float, seed_offset: int = 0,
                config_hash: str = "") -> MotionDataset:
    """Synthesize a named suite into out_dir and create its manifest"""
    dataset = MotionDataset.create(out_dir, config_hash=config_hash)
    for kind, seed in suite_kinds(suite):
        seq_id = sequence_id(kind, seed)
        seq = synth_motion(kind, duration_s, fps, seed + seed_offset, name=seq_id)
        filename = f"{seq_id}.jsonl"
        save_motion(seq, dataset.root / filename)
        dataset.add(seq_id, filename, Status.RAW)
        logger.info(f"Synthesized {seq_id} ({len(seq)} frames)")
    dataset.save()
    return dataset
