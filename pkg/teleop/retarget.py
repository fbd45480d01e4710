import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import ValidationError
from scipy.spatial.transform import Rotation

from teleop.config import AdamConfig, HeuristicRules, RetargetConfig
from teleop.kinematics import (
    HumanoidModel, HumanSkeleton, human_fk_sequence, human_kp12_indices, humanoid_fk, keypoint_jacobian,
)
from teleop.motiondata import MotionFormatError, MotionSequence, MotionValidationError, resample, rotation_rates
from teleop.optim import AdamOptimizer
from teleop.schemas import RetargetedMotionDoc

logger = logging.getLogger(__name__)

RETARGET_FORMAT = "teleop-retargeted"
RETARGET_VERSION = 1
ZERO_LOSS = 1e-20


class ShapeFitError(Exception):
    """Custom exception for shape fitting failures"""
    pass


class RetargetDivergenceError(Exception):
    """Custom exception for diverging retarget optimization"""

    def __init__(self, message: str, last_iterate=None, frame: Optional[int] = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.frame = frame


# ---------------------------------------------------------------------------
# Shape fitting
# ---------------------------------------------------------------------------

@dataclass
class FitReport:
    beta_prime: np.ndarray
    initial_error: float
    final_error: float
    iterations: int
    loss_history: List[float] = field(default_factory=list)


def _rest_human_kp12(skeleton: HumanSkeleton, beta: np.ndarray, idx: np.ndarray) -> np.ndarray:
    paths = skeleton.path_matrix()
    offsets = skeleton.offset0 * skeleton.scales(beta)[:, None]
    return (paths @ offsets)[idx]


def fit_shape_to_keypoints(skeleton: HumanSkeleton, target_kp12: np.ndarray, lr: float, max_iters: int,
                           kp_indices: Optional[np.ndarray] = None,
                           beta_init: Optional[np.ndarray] = None) -> FitReport:
    """
    Gradient descent on beta so the rest-pose human keypoints match target_kp12.

    Loss is the summed squared keypoint distance; its gradient is analytic
    since rest positions are linear in beta. The reported error is the mean
    keypoint distance (m), and the best iterate seen is returned.

    Raises:
        ShapeFitError: If lr is not positive or the loss becomes non-finite
    """
    if lr <= 0:
        raise ShapeFitError(f"lr must be positive, got {lr}")
    idx = human_kp12_indices() if kp_indices is None else kp_indices
    jac = skeleton.rest_keypoints_jacobian()[idx]  # (12, 3, 10)
    beta = np.zeros(jac.shape[-1]) if beta_init is None else np.array(beta_init, dtype=float)

    def residual(b):
        return _rest_human_kp12(skeleton, b, idx) - target_kp12

    r = residual(beta)
    initial_error = float(np.mean(np.linalg.norm(r, axis=1)))
    best_beta, best_error = beta.copy(), initial_error
    history = [float(np.sum(r * r))]

    for it in range(max_iters):
        grad = 2.0 * np.einsum("kd,kdi->i", r, jac)
        beta = beta - lr * grad
        r = residual(beta)
        loss = float(np.sum(r * r))
        if not np.isfinite(loss):
            raise ShapeFitError(f"Non-finite shape loss at iteration {it}: beta={beta.tolist()}, lr={lr}")
        history.append(loss)
        error = float(np.mean(np.linalg.norm(r, axis=1)))
        if error < best_error:
            best_beta, best_error = beta.copy(), error

    logger.info(f"Shape fit: error {initial_error * 1000:.2f} mm -> {best_error * 1000:.2f} mm in {max_iters} iterations")
    return FitReport(best_beta, initial_error, best_error, max_iters, history)


def fit_shape(skeleton: HumanSkeleton, humanoid: HumanoidModel, lr: float, max_iters: int) -> FitReport:
    """Fit beta' to the humanoid's rest-pose keypoint12 (both roots at the origin, identity rotation)"""
    pose = humanoid_fk(humanoid, np.zeros(3), np.eye(3), humanoid.default_q)
    return fit_shape_to_keypoints(skeleton, pose.kp12, lr, max_iters, kp_indices=human_kp12_indices(humanoid))


# ---------------------------------------------------------------------------
# Per-frame retargeting
# ---------------------------------------------------------------------------

@dataclass
class FrameSolution:
    root_pos: np.ndarray
    root_rot: np.ndarray  # quaternion
    q: np.ndarray
    loss: float
    residual: float       # max keypoint distance (m) after clamping
    steps: int
    losses: List[float]


@dataclass
class RetargetObjective:
    model: HumanoidModel
    target: np.ndarray
    w_limit: float = 10.0
    limit_margin: float = 0.05
    w_smooth: float = 0.0
    q_prev: Optional[np.ndarray] = None

    def evaluate(self, root_pos, root_rot_m, q, with_grad: bool = True):
        """Loss and gradient over [root translation, world rotation vector, q]"""
        pose = humanoid_fk(self.model, root_pos, root_rot_m, q)
        r = pose.kp12 - self.target
        loss = float(np.sum(r * r))

        lo = self.model.limit_lo + self.limit_margin
        hi = self.model.limit_hi - self.limit_margin
        below = np.minimum(q - lo, 0.0)
        above = np.maximum(q - hi, 0.0)
        loss += self.w_limit * float(np.sum(below * below) + np.sum(above * above))

        smooth = None
        if self.q_prev is not None and self.w_smooth > 0.0:
            smooth = q - self.q_prev
            loss += self.w_smooth * float(np.sum(smooth * smooth))

        if not with_grad:
            return loss, None, pose

        jac = keypoint_jacobian(self.model, pose)
        grad = 2.0 * np.einsum("kd,kdi->i", r, jac)
        grad[6:] += 2.0 * self.w_limit * (below + above)
        if smooth is not None:
            grad[6:] += 2.0 * self.w_smooth * smooth
        return loss, grad, pose


def retarget_frame(human_kp12: np.ndarray, q_init: np.ndarray, root_init, adam_cfg: AdamConfig,
                   model: HumanoidModel, w_limit: float = 10.0, limit_margin: float = 0.05,
                   w_smooth: float = 0.0, q_prev: Optional[np.ndarray] = None) -> FrameSolution:
    """
    Fit root pose and joint angles so the humanoid keypoint12 match human_kp12.

    Adam runs over [root translation, root rotation increment, q]. After the
    warm-up steps, a trial step that raises the objective is rejected and the
    step scale halves (doubling back up to 1 on acceptance). The loop stops
    on a small gradient, a collapsed step scale or the step cap. The
    returned q is clamped to the joint limits.

    Args:
        root_init: (root position (3,), root quaternion (4,))

    Raises:
        RetargetDivergenceError: On a non-finite objective, or when the
            objective rises for divergence_patience consecutive steps with
            step rejection disabled
    """
    objective = RetargetObjective(model, np.asarray(human_kp12, dtype=float), w_limit, limit_margin, w_smooth, q_prev)
    root_pos = np.array(root_init[0], dtype=float)
    root_rot = Rotation.from_quat(root_init[1]).as_matrix()
    q = np.array(q_init, dtype=float)

    loss, grad, _ = objective.evaluate(root_pos, root_rot, q)
    losses = [loss]
    optimizer = AdamOptimizer([(6 + model.num_dof,)], lr=adam_cfg.lr, beta1=adam_cfg.beta1,
                              beta2=adam_cfg.beta2, eps=adam_cfg.eps)
    scale = 1.0
    rises = 0
    steps = 0

    while loss > ZERO_LOSS and steps < adam_cfg.max_steps:
        if not np.all(np.isfinite(grad)):
            raise RetargetDivergenceError("Non-finite retarget gradient", (root_pos, root_rot, q))
        if np.max(np.abs(grad)) < adam_cfg.grad_tol or scale < adam_cfg.min_step_scale:
            break
        steps += 1
        delta = optimizer.propose([grad], scale=scale)[0]
        cand_pos = root_pos + delta[0:3]
        cand_rot = Rotation.from_rotvec(delta[3:6]).as_matrix() @ root_rot
        cand_q = q + delta[6:]
        cand_loss, cand_grad, _ = objective.evaluate(cand_pos, cand_rot, cand_q)
        if not np.isfinite(cand_loss):
            raise RetargetDivergenceError(f"Non-finite retarget loss at step {steps}", (root_pos, root_rot, q))

        if adam_cfg.backtrack and steps > adam_cfg.warmup_steps and cand_loss > loss:
            scale *= 0.5
            continue

        if cand_loss > loss:
            rises += 1
            if rises >= adam_cfg.divergence_patience:
                raise RetargetDivergenceError(
                    f"Retarget loss increased for {rises} consecutive steps (loss {cand_loss:.4g})",
                    (cand_pos, cand_rot, cand_q),
                )
        else:
            rises = 0
        optimizer.commit()
        root_pos, root_rot, q = cand_pos, cand_rot, cand_q
        loss, grad = cand_loss, cand_grad
        losses.append(loss)
        scale = min(1.0, scale * 2.0)

    q = model.clamp(q)
    pose = humanoid_fk(model, root_pos, root_rot, q)
    residual = float(np.max(np.linalg.norm(pose.kp12 - objective.target, axis=1)))
    return FrameSolution(root_pos, Rotation.from_matrix(root_rot).as_quat(), q, loss, residual, steps, losses)


# ---------------------------------------------------------------------------
# Retargeted motions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceTrack:
    """Quantities derived from a retargeted trajectory by FK and finite differences"""
    dq: np.ndarray            # (T, 19)
    root_lin_vel: np.ndarray  # (T, 3)
    root_ang_vel: np.ndarray  # (T, 3)
    link_pos: np.ndarray      # (T, L, 3)
    link_rot: np.ndarray      # (T, L, 3, 3)
    link_vel: np.ndarray      # (T, L, 3)
    link_ang_vel: np.ndarray  # (T, L, 3)
    kp12: np.ndarray          # (T, 12, 3)
    kp8: np.ndarray           # (T, 8, 3)
    kp8_vel: np.ndarray       # (T, 8, 3)


def _diff(x: np.ndarray, dt: float) -> np.ndarray:
    if x.shape[0] < 2:
        return np.zeros_like(x)
    return np.gradient(x, dt, axis=0)


def build_reference(model: HumanoidModel, fps: float, root_pos: np.ndarray, root_rot: np.ndarray,
                    q: np.ndarray) -> ReferenceTrack:
    dt = 1.0 / fps
    pose = humanoid_fk(model, root_pos, root_rot, q)
    n = q.shape[0]
    if n >= 2:
        root_ang_vel = rotation_rates(Rotation.from_quat(root_rot), dt, world=True)
        link_ang_vel = np.stack([
            rotation_rates(Rotation.from_matrix(pose.link_rot[:, l]), dt, world=True)
            for l in range(model.num_links)
        ], axis=1)
    else:
        root_ang_vel = np.zeros((n, 3))
        link_ang_vel = np.zeros((n, model.num_links, 3))
    return ReferenceTrack(
        dq=_diff(q, dt),
        root_lin_vel=_diff(root_pos, dt),
        root_ang_vel=root_ang_vel,
        link_pos=pose.link_pos,
        link_rot=pose.link_rot,
        link_vel=_diff(pose.link_pos, dt),
        link_ang_vel=link_ang_vel,
        kp12=pose.kp12,
        kp8=pose.kp8,
        kp8_vel=_diff(pose.kp8, dt),
    )


@dataclass(frozen=True)
class ReferenceFrame:
    """One frame of a reference track, the tracking target of a control step"""
    root_pos: np.ndarray
    root_rot: np.ndarray   # quaternion
    q: np.ndarray
    dq: np.ndarray
    root_lin_vel: np.ndarray
    root_ang_vel: np.ndarray
    link_pos: np.ndarray
    link_rot: np.ndarray
    link_vel: np.ndarray
    link_ang_vel: np.ndarray
    kp8: np.ndarray
    kp8_vel: np.ndarray


@dataclass(frozen=True, eq=False)
class RetargetedMotion:
    fps: float
    source_id: str
    root_pos: np.ndarray   # (T, 3)
    root_rot: np.ndarray   # (T, 4)
    q: np.ndarray          # (T, 19)
    ref: ReferenceTrack
    config_hash: str = ""
    residual: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.q.shape[0]

    @property
    def duration(self) -> float:
        return (len(self) - 1) / self.fps

    def frame(self, t: int) -> "ReferenceFrame":
        """Reference quantities at frame t, clamped to the last frame"""
        t = min(max(int(t), 0), len(self) - 1)
        ref = self.ref
        return ReferenceFrame(
            root_pos=self.root_pos[t], root_rot=self.root_rot[t], q=self.q[t], dq=ref.dq[t],
            root_lin_vel=ref.root_lin_vel[t], root_ang_vel=ref.root_ang_vel[t],
            link_pos=ref.link_pos[t], link_rot=ref.link_rot[t], link_vel=ref.link_vel[t],
            link_ang_vel=ref.link_ang_vel[t], kp8=ref.kp8[t], kp8_vel=ref.kp8_vel[t],
        )

    @classmethod
    def from_arrays(cls, model: HumanoidModel, fps: float, source_id: str, root_pos, root_rot, q,
                    config_hash: str = "", residual=None) -> "RetargetedMotion":
        root_pos = np.asarray(root_pos, dtype=float)
        root_rot = np.asarray(root_rot, dtype=float)
        q = np.asarray(q, dtype=float)
        return cls(fps, source_id, root_pos, root_rot, q,
                   build_reference(model, fps, root_pos, root_rot, q), config_hash, residual)


def retarget_sequence(seq: MotionSequence, beta_prime: np.ndarray, model: HumanoidModel,
                      skeleton: HumanSkeleton, cfg: RetargetConfig, target_fps: Optional[float] = None,
                      config_hash: str = "") -> RetargetedMotion:
    """
    Retarget a human sequence frame by frame with warm starts.

    The human keypoints use the sequence's translation and pose with the
    fitted shape beta_prime. Frame 0 starts from the rest pose at the human
    pelvis; frame t starts from frame t-1's solution advanced by the pelvis
    motion, with a smoothness term tying q_t to q_{t-1}.

    Raises:
        MotionValidationError: If the sequence is empty
        RetargetDivergenceError: With the failing frame index
    """
    if len(seq) == 0:
        raise MotionValidationError(f"Cannot retarget empty sequence {seq.name}")
    if target_fps is not None:
        seq = resample(seq, target_fps)

    targets = human_fk_sequence(skeleton, seq, beta_prime)[:, human_kp12_indices(model)]
    human_rot = Rotation.from_quat(seq.root_rot)
    n = len(seq)
    root_pos = np.zeros((n, 3))
    root_rot = np.zeros((n, 4))
    q = np.zeros((n, model.num_dof))
    residual = np.zeros(n)

    q_init = model.default_q
    pos_init, rot_init = seq.root_pos[0].copy(), seq.root_rot[0].copy()
    total_steps = 0
    for t in range(n):
        q_prev = q[t - 1] if t > 0 else None
        try:
            sol = retarget_frame(
                targets[t], q_init, (pos_init, rot_init), cfg.adam, model,
                w_limit=cfg.w_limit, limit_margin=cfg.limit_margin,
                w_smooth=cfg.w_smooth if t > 0 else 0.0, q_prev=q_prev,
            )
        except RetargetDivergenceError as e:
            e.frame = t
            raise RetargetDivergenceError(f"{seq.name} frame {t}: {str(e)}", e.last_iterate, t) from e
        root_pos[t], root_rot[t], q[t], residual[t] = sol.root_pos, sol.root_rot, sol.q, sol.residual
        total_steps += sol.steps

        if t + 1 < n:
            q_init = sol.q
            pos_init = sol.root_pos + (seq.root_pos[t + 1] - seq.root_pos[t])
            rot_init = (human_rot[t + 1] * human_rot[t].inv() * Rotation.from_quat(sol.root_rot)).as_quat()

    logger.info(f"Retargeted {seq.name}: {n} frames, {total_steps} Adam steps, max residual {residual.max() * 100:.2f} cm")
    return RetargetedMotion.from_arrays(model, seq.fps, seq.name, root_pos, root_rot, q, config_hash, residual)


# ---------------------------------------------------------------------------
# Heuristic filter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterVerdict:
    keep: bool
    reason: Optional[str] = None
    frame: Optional[int] = None
    value: Optional[float] = None


def heuristic_filter(rt: RetargetedMotion, rules: HeuristicRules) -> FilterVerdict:
    """
    Reject unsafe retargeted motions.

    Rules are checked in order: low-root (sitting/crawling proxy), root-jump
    between consecutive frames, then joint-rate from forward differences.
    """
    heights = rt.root_pos[:, 2]
    f = int(np.argmin(heights))
    if heights[f] < rules.min_root_height:
        return FilterVerdict(False, "low-root", f, float(heights[f]))

    if len(rt) >= 2:
        jumps = np.linalg.norm(np.diff(rt.root_pos, axis=0), axis=1)
        f = int(np.argmax(jumps))
        if jumps[f] > rules.max_root_jump:
            return FilterVerdict(False, "root-jump", f + 1, float(jumps[f]))

        rates = np.max(np.abs(np.diff(rt.q, axis=0)), axis=1) * rt.fps
        f = int(np.argmax(rates))
        if rates[f] > rules.max_joint_rate:
            return FilterVerdict(False, "joint-rate", f + 1, float(rates[f]))

    return FilterVerdict(True)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def save_retargeted(rt: RetargetedMotion, path) -> None:
    doc = {
        "format": RETARGET_FORMAT,
        "version": RETARGET_VERSION,
        "source_id": rt.source_id,
        "fps": rt.fps,
        "config_hash": rt.config_hash,
        "root_pos": rt.root_pos.tolist(),
        "root_rot": rt.root_rot.tolist(),
        "q": rt.q.tolist(),
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def load_retargeted(path, model: HumanoidModel) -> RetargetedMotion:
    """
    Load a retargeted motion and recompute its derived reference track.

    Raises:
        MotionFormatError: If the file is unreadable or violates the schema
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
        doc = RetargetedMotionDoc(**raw)
    except OSError as e:
        raise MotionFormatError(f"Cannot read retargeted motion {path}: {str(e)}") from e
    except json.JSONDecodeError as e:
        raise MotionFormatError(f"{path} line {e.lineno}: {e.msg}") from e
    except (ValidationError, TypeError) as e:
        raise MotionFormatError(f"Invalid retargeted motion {path}: {str(e)}") from e
    return RetargetedMotion.from_arrays(model, doc.fps, doc.source_id, doc.root_pos, doc.root_rot, doc.q,
                                        doc.config_hash)
