"""
Per-sequence stage jobs, run through worker.pool.run_jobs.
"""
import logging
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from teleop.config import RetargetConfig
from teleop.kinematics import HumanoidModel, HumanSkeleton
from teleop.motiondata import Status, load_motion
from teleop.retarget import RetargetDivergenceError, heuristic_filter, retarget_sequence, save_retargeted

logger = logging.getLogger(__name__)


def retarget_job(seq_id: str, raw_path, out_path, beta_prime: np.ndarray, model: HumanoidModel,
                 skeleton: HumanSkeleton, cfg: RetargetConfig, target_fps: Optional[float],
                 config_hash: str = "", apply_heuristics: bool = True) -> Dict:
    """
    Retarget one raw sequence, write the result and judge it with the heuristic rules.

    Returns:
        Dict with id, status, filename and, for rejections, rule/frame/value

    Raises:
        RetargetDivergenceError: If the optimizer diverges on some frame
    """
    seq = load_motion(raw_path)
    try:
        rt = retarget_sequence(seq, beta_prime, model, skeleton, cfg, target_fps=target_fps, config_hash=config_hash)
    except RetargetDivergenceError as e:
        logger.error(f"Retargeting {seq_id} diverged at frame {e.frame}: {str(e)}")
        raise

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_retargeted(rt, out_path)

    result = {"id": seq_id, "status": Status.RETARGETED.value, "filename": out_path.name}
    if apply_heuristics:
        verdict = heuristic_filter(rt, cfg.heuristics)
        if not verdict.keep:
            logger.warning(f"Rejected {seq_id}: {verdict.reason} at frame {verdict.frame} (value {verdict.value:.3f})")
            result.update(status=Status.REJECTED_HEURISTIC.value, rule=verdict.reason,
                          frame=verdict.frame, value=verdict.value)
    return result
