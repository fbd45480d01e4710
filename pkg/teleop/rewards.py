"""
Tracking reward: penalty, regularization and task terms.

Per-body task terms average the per-link error over all humanoid links
before the exponential. Indicator terms count violating joints or feet.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from teleop.config import RewardConfig
from teleop.kinematics import HumanoidModel
from teleop.retarget import ReferenceFrame
from teleop.rotations import geodesic_angle

logger = logging.getLogger(__name__)

PENALTY_TERMS = ("torque_limits", "dof_pos_limits", "termination")
REGULARIZATION_TERMS = (
    "dof_acc", "dof_vel", "action_rate", "torque", "feet_air_time",
    "feet_contact_force", "stumble", "slippage",
)
TASK_TERMS = (
    "task_dof_pos", "task_dof_vel", "task_body_pos", "task_body_rot",
    "task_body_vel", "task_body_ang_vel",
)
REWARD_TERMS = PENALTY_TERMS + REGULARIZATION_TERMS + TASK_TERMS


class RewardShapeError(Exception):
    """Custom exception for inconsistent reward inputs"""
    pass


@dataclass(frozen=True)
class RewardBreakdown:
    raw: Dict[str, float]
    weighted: Dict[str, float]
    total: float

    def task_total(self) -> float:
        return sum(self.weighted[t] for t in TASK_TERMS)


def _check(name: str, arr: np.ndarray, shape) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.shape != shape:
        raise RewardShapeError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def reward_terms(state, ref: ReferenceFrame, action: np.ndarray, prev_action: np.ndarray,
                 torque: np.ndarray, terminated: bool, cfg: RewardConfig,
                 model: HumanoidModel) -> Dict[str, float]:
    """Unweighted value of every reward term"""
    n = model.num_dof
    links = model.num_links
    q = _check("q", state.q, (n,))
    qd = _check("qd", state.qd, (n,))
    qdd = _check("qdd", state.qdd, (n,))
    action = _check("action", action, (n,))
    prev_action = _check("prev_action", prev_action, (n,))
    torque = _check("torque", torque, (n,))
    link_pos = _check("link_pos", state.link_pos, (links, 3))
    link_vel = _check("link_vel", state.link_vel, (links, 3))
    link_ang_vel = _check("link_ang_vel", state.link_ang_vel, (links, 3))
    link_rot = _check("link_rot", state.link_rot, (links, 3, 3))
    _check("ref.q", ref.q, (n,))
    _check("ref.link_pos", ref.link_pos, (links, 3))

    feet = model.foot_link
    force = np.asarray(state.foot_force, dtype=float)
    if force.shape != (len(feet), 3):
        raise RewardShapeError(f"foot_force has shape {force.shape}, expected {(len(feet), 3)}")
    force_norm = np.linalg.norm(force, axis=1)
    touchdown = np.asarray(state.touchdown_air_time, dtype=float)
    feet_vel = link_vel[feet]

    rot_err = geodesic_angle(link_rot, np.asarray(ref.link_rot))
    return {
        "torque_limits": float(np.sum((torque < -model.torque_limit) | (torque > model.torque_limit))),
        "dof_pos_limits": float(np.sum((q < model.limit_lo) | (q > model.limit_hi))),
        "termination": float(bool(terminated)),
        "dof_acc": float(qdd @ qdd),
        "dof_vel": float(qd @ qd),
        "action_rate": float(np.sum((action - prev_action) ** 2)),
        "torque": float(np.linalg.norm(torque)),
        "feet_air_time": float(np.sum(np.where(touchdown > 0.0, touchdown - cfg.air_time_offset, 0.0))),
        "feet_contact_force": float(np.sum(force_norm ** 2)) / cfg.contact_force_normalization,
        "stumble": float(np.sum(np.linalg.norm(force[:, :2], axis=1) > cfg.stumble_ratio * force[:, 2])),
        "slippage": float(np.sum(np.sum(feet_vel ** 2, axis=1) * (force_norm >= cfg.slip_force_threshold))),
        "task_dof_pos": float(np.exp(-0.25 * np.linalg.norm(ref.q - q))),
        "task_dof_vel": float(np.exp(-0.25 * np.sum((ref.dq - qd) ** 2))),
        "task_body_pos": float(np.exp(-0.5 * np.mean(np.sum((link_pos - ref.link_pos) ** 2, axis=1)))),
        "task_body_rot": float(np.exp(-0.1 * np.mean(rot_err))),
        "task_body_vel": float(np.exp(-10.0 * np.mean(np.linalg.norm(link_vel - ref.link_vel, axis=1)))),
        "task_body_ang_vel": float(np.exp(-0.01 * np.mean(np.linalg.norm(link_ang_vel - ref.link_ang_vel, axis=1)))),
    }


def compute_reward(state, ref: ReferenceFrame, action: np.ndarray, prev_action: np.ndarray,
                   torque: Optional[np.ndarray], terminated: bool, cfg: RewardConfig,
                   model: Optional[HumanoidModel] = None) -> RewardBreakdown:
    """
    Weighted reward of one control step.

    Args:
        state: simulator state after the step
        ref: reference frame the step tracked
        torque: joint torque before clamping; None uses state.torque_desired
        terminated: whether the step ended the episode early
        model: humanoid model, defaults to the state's simulator model

    Raises:
        RewardShapeError: If any input has the wrong shape
    """
    model = model if model is not None else state.sim.model
    torque = state.torque_desired if torque is None else torque
    raw = reward_terms(state, ref, action, prev_action, torque, terminated, cfg, model)
    weighted = {name: getattr(cfg, name) * value for name, value in raw.items()}
    return RewardBreakdown(raw, weighted, float(sum(weighted[name] for name in REWARD_TERMS)))
