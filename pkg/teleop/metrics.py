"""
Imitation metrics and the policy evaluation harness.

Positions are in metres on input; reported errors are in millimetres.
Velocity and acceleration errors difference positions per control frame.
"""
import logging
import zlib
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from teleop.config import PipelineConfig
from teleop.env import TrackingEnv, mean_action_policy, rollout
from teleop.kinematics import HumanoidModel
from teleop.policy import ObservationError, PolicyParams
from teleop.retarget import RetargetedMotion
from worker.pool import run_jobs

logger = logging.getLogger(__name__)

SUCCESS_THRESHOLD = 0.5
SPLITS = ("all", "successful")


class MetricsError(Exception):
    """Custom exception for metric inputs that cannot be compared"""
    pass


def _pair(pos: np.ndarray, ref: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pos = np.asarray(pos, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pos.shape != ref.shape or pos.ndim != 3 or pos.shape[-1] != 3:
        raise MetricsError(f"Trajectory shapes differ or are not (T, J, 3): {pos.shape} vs {ref.shape}")
    if pos.shape[0] == 0:
        raise MetricsError("Empty trajectory")
    return pos, ref


def mean_body_distance(pos: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Per-frame mean over bodies of the position error (m)"""
    pos, ref = _pair(pos, ref)
    return np.mean(np.linalg.norm(pos - ref, axis=-1), axis=-1)


def success(pos: np.ndarray, ref: np.ndarray, threshold: float = SUCCESS_THRESHOLD) -> bool:
    """False iff some frame's mean body distance exceeds threshold"""
    return bool(np.all(mean_body_distance(pos, ref) <= threshold))


def mpjpe(pos: np.ndarray, ref: np.ndarray, root_relative: bool = True, root_index: int = 0) -> float:
    """
    Mean per-joint position error in mm.

    Args:
        root_relative: subtract each trajectory's own root (joint root_index) first
    """
    pos, ref = _pair(pos, ref)
    if root_relative:
        pos = pos - pos[:, root_index:root_index + 1]
        ref = ref - ref[:, root_index:root_index + 1]
    return float(np.mean(np.linalg.norm(pos - ref, axis=-1)) * 1000.0)


def acc_vel_error(pos: np.ndarray, ref: np.ndarray) -> Tuple[float, float]:
    """
    (acceleration error mm/frame^2, velocity error mm/frame) from frame
    differences; 0 where the trajectory is too short to difference.
    """
    pos, ref = _pair(pos, ref)
    e_vel = e_acc = 0.0
    if pos.shape[0] >= 2:
        dv = np.diff(pos, axis=0) - np.diff(ref, axis=0)
        e_vel = float(np.mean(np.linalg.norm(dv, axis=-1)) * 1000.0)
    if pos.shape[0] >= 3:
        da = np.diff(pos, n=2, axis=0) - np.diff(ref, n=2, axis=0)
        e_acc = float(np.mean(np.linalg.norm(da, axis=-1)) * 1000.0)
    return e_acc, e_vel


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class SequenceMetrics:
    id: str
    success: bool
    g_mpjpe: float
    mpjpe: float
    acc: float
    vel: float
    max_deviation: float
    failure_frame: Optional[int]
    steps: int
    episodes: int = 1

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SplitMetrics:
    succ: float
    g_mpjpe: float
    mpjpe: float
    acc: float
    vel: float
    num_sequences: int


@dataclass
class MetricsReport:
    method: str
    rows: List[SequenceMetrics] = field(default_factory=list)

    @property
    def succ(self) -> float:
        if not self.rows:
            return 0.0
        return float(np.mean([r.success for r in self.rows]))

    def split(self, name: str) -> SplitMetrics:
        """Mean over sequences of the per-sequence metrics; NaN errors for an empty split"""
        if name not in SPLITS:
            raise MetricsError(f"Unknown split: {name}")
        rows = self.rows if name == "all" else [r for r in self.rows if r.success]
        if not rows:
            nan = float("nan")
            return SplitMetrics(self.succ if name == "all" else 0.0, nan, nan, nan, nan, 0)
        mean = lambda key: float(np.mean([getattr(r, key) for r in rows]))
        succ = self.succ if name == "all" else 1.0
        return SplitMetrics(succ, mean("g_mpjpe"), mean("mpjpe"), mean("acc"), mean("vel"), len(rows))

    def failed_ids(self) -> List[str]:
        return [r.id for r in self.rows if not r.success]


def sequence_metrics(seq_id: str, sim_links: np.ndarray, ref_links: np.ndarray, diverged: bool = False,
                     threshold: float = SUCCESS_THRESHOLD) -> SequenceMetrics:
    deviation = mean_body_distance(sim_links, ref_links)
    over = np.flatnonzero(deviation > threshold)
    e_acc, e_vel = acc_vel_error(sim_links, ref_links)
    return SequenceMetrics(
        id=seq_id,
        success=bool(over.size == 0 and not diverged),
        g_mpjpe=mpjpe(sim_links, ref_links, root_relative=False),
        mpjpe=mpjpe(sim_links, ref_links, root_relative=True),
        acc=e_acc,
        vel=e_vel,
        max_deviation=float(np.max(deviation)),
        failure_frame=int(over[0]) if over.size else None,
        steps=int(sim_links.shape[0] - 1),
    )


def merge_episodes(episodes: List[SequenceMetrics]) -> SequenceMetrics:
    """Average repeated episodes of one sequence; success is the mean's majority"""
    if len(episodes) == 1:
        return episodes[0]
    mean = lambda key: float(np.mean([getattr(e, key) for e in episodes]))
    failures = [e.failure_frame for e in episodes if e.failure_frame is not None]
    return SequenceMetrics(
        id=episodes[0].id,
        success=mean("success") >= 0.5,
        g_mpjpe=mean("g_mpjpe"), mpjpe=mean("mpjpe"), acc=mean("acc"), vel=mean("vel"),
        max_deviation=max(e.max_deviation for e in episodes),
        failure_frame=min(failures) if failures else None,
        steps=max(e.steps for e in episodes),
        episodes=len(episodes),
    )


# ---------------------------------------------------------------------------
# Evaluation harness
# ---------------------------------------------------------------------------

class ReferenceReplayTracker:
    """Tracker that reproduces the reference exactly; validates the harness end to end"""
    obs_mode = None

    def track(self, motion: RetargetedMotion) -> Tuple[np.ndarray, np.ndarray, bool]:
        links = motion.ref.link_pos
        return links.copy(), links.copy(), False


def episode_seed(seq_id: str, episode: int, seed: int = 0) -> int:
    return (zlib.crc32(seq_id.encode("utf-8")) + 7919 * episode + 104729 * seed) % (2 ** 31)


def evaluate_sequence(tracker, seq_id: str, motion: RetargetedMotion, model: HumanoidModel, cfg: PipelineConfig,
                      episodes: int = 1, seed: int = 0) -> SequenceMetrics:
    """Roll out the whole motion from frame 0 with mean actions, without DR"""
    runs = []
    for episode in range(episodes):
        if isinstance(tracker, ReferenceReplayTracker):
            sim_links, ref_links, diverged = tracker.track(motion)
        else:
            env = TrackingEnv(model, cfg, tracker.obs_mode, dr_enabled=False,
                              seed=episode_seed(seq_id, episode, seed), critic_mode=tracker.obs_mode)
            out = rollout(env, mean_action_policy(tracker), motion)
            sim_links, ref_links = out["sim_links"], out["ref_links"]
            diverged = out["diverged"]
        runs.append(sequence_metrics(seq_id, sim_links, ref_links, diverged, cfg.eval.success_threshold))
    return merge_episodes(runs)


def evaluate_policy(tracker, dataset: Sequence[Tuple[str, RetargetedMotion]], model: HumanoidModel,
                    cfg: PipelineConfig, episodes_per_seq: Optional[int] = None, method: str = "policy",
                    expected_mode: Optional[str] = None, seed: int = 0, threads: Optional[int] = None) -> MetricsReport:
    """
    Evaluate a policy (or ReferenceReplayTracker) on (id, motion) pairs.

    Raises:
        ObservationError: If expected_mode is given and the policy uses another one
    """
    if expected_mode is not None and isinstance(tracker, PolicyParams) and tracker.obs_mode != expected_mode:
        raise ObservationError(f"Policy uses {tracker.obs_mode} observations, expected {expected_mode}")
    episodes = episodes_per_seq or cfg.eval.episodes_per_seq
    jobs = [(tracker, seq_id, motion, model, cfg, episodes, seed) for seq_id, motion in dataset]
    rows = run_jobs(evaluate_sequence, jobs, threads, label="evaluation rollouts")
    report = MetricsReport(method, rows)
    logger.info(f"Evaluated {method} on {len(rows)} sequences: succ {report.succ:.3f}")
    for row in rows:
        if not row.success:
            logger.debug(f"{row.id} failed at frame {row.failure_frame} (max deviation {row.max_deviation:.3f} m)")
    return report
