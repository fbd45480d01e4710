"""
Sim-to-data filtering: keep only the motions a privileged tracking policy
trained without domain randomization can follow.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

from teleop.config import PipelineConfig
from teleop.env import TrackingEnv, mean_action_policy, rollout
from teleop.kinematics import HumanoidModel
from teleop.metrics import episode_seed, sequence_metrics
from teleop.motiondata import MotionDataset, Status
from teleop.policy import PolicyParams
from teleop.ppo import TrainResult, train
from teleop.retarget import RetargetedMotion, load_retargeted
from worker.pool import run_jobs

logger = logging.getLogger(__name__)

FILTER_CANDIDATES = (Status.RETARGETED, Status.CLEAN)


class FilterError(Exception):
    """Custom exception for sim-to-data filtering errors"""
    pass


def train_privileged(dataset: Sequence[RetargetedMotion], cfg: PipelineConfig, model: HumanoidModel,
                     seed: Optional[int] = None, out_dir=None,
                     eval_fn: Optional[Callable[[PolicyParams], dict]] = None) -> TrainResult:
    """Privileged observations, no domain randomization, hard-negative sampling on"""
    return train(dataset, "privileged", False, cfg, model, seed=seed, out_dir=out_dir,
                 eval_fn=eval_fn, hard_negative=True)


@dataclass
class FilterDecision:
    id: str
    clean: bool
    successes: int
    trials: int
    failure_frame: Optional[int]
    max_deviation: float


def filter_sequence(policy: PolicyParams, seq_id: str, motion: RetargetedMotion, model: HumanoidModel,
                    cfg: PipelineConfig, trials: int) -> FilterDecision:
    """
    Track motion trials times from jittered initial states with mean actions.
    Clean iff at least ceil(trials / 2) trials succeed.
    """
    successes = 0
    failure_frame = None
    max_deviation = 0.0
    for trial in range(trials):
        env = TrackingEnv(model, cfg, policy.obs_mode, dr_enabled=False, seed=episode_seed(seq_id, trial),
                          critic_mode=policy.obs_mode)
        out = rollout(env, mean_action_policy(policy), motion,
                      jitter_q=cfg.filter.init_jitter_q, jitter_root=cfg.filter.init_jitter_root)
        m = sequence_metrics(seq_id, out["sim_links"], out["ref_links"], out["diverged"],
                             cfg.eval.success_threshold)
        successes += int(m.success)
        max_deviation = max(max_deviation, m.max_deviation)
        if m.failure_frame is not None and (failure_frame is None or m.failure_frame < failure_frame):
            failure_frame = m.failure_frame
    clean = successes >= math.ceil(trials / 2)
    return FilterDecision(seq_id, clean, successes, trials, failure_frame, max_deviation)


def load_candidates(dataset: MotionDataset, model: HumanoidModel,
                    statuses: Tuple[Status, ...] = FILTER_CANDIDATES) -> List[Tuple[str, RetargetedMotion]]:
    return [(seq_id, load_retargeted(dataset.path_of(seq_id), model)) for seq_id in dataset.with_status(*statuses)]


def filter_dataset(policy: PolicyParams, dataset: MotionDataset, model: HumanoidModel, cfg: PipelineConfig,
                   trials_per_seq: Optional[int] = None, threads: Optional[int] = None,
                   report_path=None) -> Tuple[List[str], List[FilterDecision]]:
    """
    Evaluate every retargeted (or already clean) sequence and update the
    manifest statuses to clean / rejected-sim2data.

    Returns:
        (clean ids, per-sequence decisions)

    Raises:
        FilterError: If the policy was not trained on privileged observations
    """
    if policy.obs_mode != "privileged":
        raise FilterError(f"Sim-to-data filtering needs a privileged policy, got {policy.obs_mode}")
    trials = trials_per_seq or cfg.filter.trials_per_seq
    candidates = load_candidates(dataset, model)
    jobs = [(policy, seq_id, motion, model, cfg, trials) for seq_id, motion in candidates]
    decisions = run_jobs(filter_sequence, jobs, threads, label="filter rollouts")

    for decision in decisions:
        if decision.clean:
            dataset.set_status(decision.id, Status.CLEAN)
        else:
            dataset.set_status(decision.id, Status.REJECTED_SIM2DATA,
                               reason=f"tracking failed in {decision.trials - decision.successes}/{decision.trials} trials")
            logger.warning(
                f"Rejected {decision.id}: {decision.successes}/{decision.trials} successful trials, "
                f"failure frame {decision.failure_frame}, max deviation {decision.max_deviation:.3f} m"
            )
    dataset.save()

    if report_path is not None:
        write_filter_report(decisions, report_path)
    clean = [d.id for d in decisions if d.clean]
    logger.info(f"Sim-to-data filter kept {len(clean)}/{len(decisions)} sequences")
    return clean, decisions


def write_filter_report(decisions: List[FilterDecision], path) -> None:
    """JSON lines, one decision per sequence in id order"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(asdict(d), sort_keys=True, separators=(",", ":")) for d in sorted(decisions, key=lambda d: d.id)]
    path.write_text("".join(line + "\n" for line in lines))
