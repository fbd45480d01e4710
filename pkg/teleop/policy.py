"""
Observation builders and the Gaussian actor-critic.

Observation modes:
    deploy      proprioception (66) + keypoint goal [p_hat, p_hat - p, v_hat] (72) = 138
    reduced     proprioception (66) + keypoint goal [p_hat] (24) = 90
    privileged  per link [p, rot6d, v, w] (15) + per link goal
                [rot diff, p_hat - p, v_hat - v, w_hat - w, rot6d_hat, p_hat] (21) = 36 * links

Spatial quantities are expressed in the heading frame: the root's yaw
rotation about z, positions relative to the root's ground projection.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from teleop.config import OBS_MODES, TrainConfig
from teleop.kinematics import HumanoidModel
from teleop.nn import MLP
from teleop.retarget import ReferenceFrame
from teleop.rotations import heading_yaw, relative_rotvec, rot6d, yaw_matrix

logger = logging.getLogger(__name__)

PROPRIO_DIM = 66
DEPLOY_OBS_DIM = 138
REDUCED_OBS_DIM = 90
PRIVILEGED_PER_LINK = 36
LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0

CHECKPOINT_FORMAT = "teleop-policy"
CHECKPOINT_VERSION = 1


class ObservationError(Exception):
    """Custom exception for observation mode or dimension mismatches"""
    pass


class CheckpointError(Exception):
    """Custom exception for unreadable policy checkpoints"""
    pass


def obs_dim(mode: str, model: HumanoidModel) -> int:
    if mode == "deploy":
        return DEPLOY_OBS_DIM
    if mode == "reduced":
        return REDUCED_OBS_DIM
    if mode == "privileged":
        return PRIVILEGED_PER_LINK * model.num_links
    raise ObservationError(f"Unknown observation mode: {mode}")


# ---------------------------------------------------------------------------
# Observation builders
# ---------------------------------------------------------------------------

def heading_frame(state) -> Tuple[np.ndarray, np.ndarray]:
    """(heading rotation, ground-projected root origin)"""
    rot = yaw_matrix(heading_yaw(state.root_rot))
    origin = np.array([state.root_pos[0], state.root_pos[1], 0.0])
    return rot, origin


def state_keypoints(model: HumanoidModel, link_pos: np.ndarray, link_rot: np.ndarray) -> np.ndarray:
    """World keypoint12 positions from link poses"""
    kp_rot = link_rot[model.keypoint12_link]
    return link_pos[model.keypoint12_link] + np.einsum("kij,kj->ki", kp_rot, model.keypoint12_offset)


@dataclass(frozen=True)
class GoalFrame:
    kp8: np.ndarray       # reference keypoints
    kp8_diff: np.ndarray  # reference minus current keypoints
    kp8_vel: np.ndarray   # reference keypoint velocities

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.kp8.ravel(), self.kp8_diff.ravel(), self.kp8_vel.ravel()])


def make_goal(state, ref: ReferenceFrame, model: HumanoidModel) -> GoalFrame:
    """Keypoint goal in the state's heading frame, rows in keypoint8 order"""
    rot, origin = heading_frame(state)
    current = state_keypoints(model, state.link_pos, state.link_rot)[model.keypoint8_index]
    target = np.asarray(ref.kp8)
    return GoalFrame(
        kp8=(target - origin) @ rot,
        kp8_diff=(target - current) @ rot,
        kp8_vel=np.asarray(ref.kp8_vel) @ rot,
    )


def proprioception(state, prev_action: np.ndarray) -> np.ndarray:
    """[q, qd, v, w, projected gravity, previous action]"""
    rot, _ = heading_frame(state)
    return np.concatenate([
        state.q, state.qd, rot.T @ state.root_lin_vel, rot.T @ state.root_ang_vel,
        state.projected_gravity, prev_action,
    ])


def build_obs_deploy(state, prev_action: np.ndarray, goal: GoalFrame) -> np.ndarray:
    obs = np.concatenate([proprioception(state, prev_action), goal.flatten()])
    if obs.shape != (DEPLOY_OBS_DIM,):
        raise ObservationError(f"Deploy observation has {obs.size} entries, expected {DEPLOY_OBS_DIM}")
    return obs


def build_obs_reduced(state, prev_action: np.ndarray, goal: GoalFrame) -> np.ndarray:
    obs = np.concatenate([proprioception(state, prev_action), goal.kp8.ravel()])
    if obs.shape != (REDUCED_OBS_DIM,):
        raise ObservationError(f"Reduced observation has {obs.size} entries, expected {REDUCED_OBS_DIM}")
    return obs


def build_obs_privileged(state, ref: ReferenceFrame) -> np.ndarray:
    rot, origin = heading_frame(state)
    link_pos = (state.link_pos - origin) @ rot
    ref_pos = (np.asarray(ref.link_pos) - origin) @ rot
    link_rot = rot.T @ state.link_rot
    ref_rot = rot.T @ np.asarray(ref.link_rot)
    link_vel = state.link_vel @ rot
    link_ang = state.link_ang_vel @ rot
    ref_vel = np.asarray(ref.link_vel) @ rot
    ref_ang = np.asarray(ref.link_ang_vel) @ rot
    per_link = np.concatenate([
        link_pos, rot6d(link_rot), link_vel, link_ang,
        relative_rotvec(link_rot, ref_rot), ref_pos - link_pos, ref_vel - link_vel, ref_ang - link_ang,
        rot6d(ref_rot), ref_pos,
    ], axis=1)
    return per_link.ravel()


def build_obs(mode: str, state, prev_action: np.ndarray, ref: ReferenceFrame, model: HumanoidModel) -> np.ndarray:
    if mode == "privileged":
        return build_obs_privileged(state, ref)
    goal = make_goal(state, ref, model)
    if mode == "deploy":
        return build_obs_deploy(state, prev_action, goal)
    if mode == "reduced":
        return build_obs_reduced(state, prev_action, goal)
    raise ObservationError(f"Unknown observation mode: {mode}")


# ---------------------------------------------------------------------------
# Actor-critic
# ---------------------------------------------------------------------------

@dataclass
class RunningMeanStd:
    mean: np.ndarray
    var: np.ndarray
    count: float = 1e-4

    @classmethod
    def create(cls, dim: int) -> "RunningMeanStd":
        return cls(np.zeros(dim), np.ones(dim))

    def update(self, batch: np.ndarray) -> None:
        """Merge a (N, dim) batch with the parallel variance formula"""
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        total = self.count + n
        delta = b_mean - self.mean
        m2 = self.var * self.count + b_var * n + delta ** 2 * self.count * n / total
        self.mean = self.mean + delta * n / total
        self.var = m2 / total
        self.count = total

    def normalize(self, obs: np.ndarray, clip: float) -> np.ndarray:
        return np.clip((obs - self.mean) / np.sqrt(self.var + 1e-8), -clip, clip)


@dataclass
class PolicyParams:
    obs_mode: str
    actor: MLP
    critic: MLP
    log_std: np.ndarray
    obs_rms: RunningMeanStd
    critic_mode: str
    critic_rms: RunningMeanStd
    obs_clip: float = 5.0
    config_hash: str = ""
    metadata: dict = field(default_factory=dict)

    @classmethod
    def create(cls, obs_mode: str, model: HumanoidModel, cfg: TrainConfig, rng: np.random.Generator,
               config_hash: str = "") -> "PolicyParams":
        if obs_mode not in OBS_MODES:
            raise ObservationError(f"Unknown observation mode: {obs_mode}")
        critic_mode = "privileged" if cfg.critic_privileged else obs_mode
        actor_in = obs_dim(obs_mode, model)
        critic_in = obs_dim(critic_mode, model)
        return cls(
            obs_mode=obs_mode,
            actor=MLP.create([actor_in] + list(cfg.hidden_sizes) + [model.num_dof], rng, output_gain=0.01),
            critic=MLP.create([critic_in] + list(cfg.hidden_sizes) + [1], rng, output_gain=1.0),
            log_std=np.full(model.num_dof, cfg.init_log_std),
            obs_rms=RunningMeanStd.create(actor_in),
            critic_mode=critic_mode,
            critic_rms=RunningMeanStd.create(critic_in),
            obs_clip=cfg.obs_clip,
            config_hash=config_hash,
        )

    @property
    def obs_dim(self) -> int:
        return self.actor.sizes[0]

    @property
    def critic_obs_dim(self) -> int:
        return self.critic.sizes[0]

    @property
    def shares_critic_obs(self) -> bool:
        return self.critic_mode == self.obs_mode

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            self.obs_mode, self.actor.copy(), self.critic.copy(), self.log_std.copy(),
            RunningMeanStd(self.obs_rms.mean.copy(), self.obs_rms.var.copy(), self.obs_rms.count),
            self.critic_mode,
            RunningMeanStd(self.critic_rms.mean.copy(), self.critic_rms.var.copy(), self.critic_rms.count),
            self.obs_clip, self.config_hash, dict(self.metadata),
        )


def _as_batch(obs: np.ndarray, dim: int) -> Tuple[np.ndarray, bool]:
    obs = np.asarray(obs, dtype=float)
    single = obs.ndim == 1
    batch = obs[None] if single else obs
    if batch.shape[-1] != dim:
        raise ObservationError(f"Observation has {batch.shape[-1]} entries, network expects {dim}")
    return batch, single


def actor_forward(params: PolicyParams, obs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean action and standard deviation for one observation or a batch.

    Raises:
        ObservationError: If the observation size does not match the actor
    """
    batch, single = _as_batch(obs, params.obs_dim)
    mean = params.actor(params.obs_rms.normalize(batch, params.obs_clip))
    std = np.exp(np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX))
    return (mean[0] if single else mean), std


def critic_forward(params: PolicyParams, obs: np.ndarray) -> np.ndarray:
    batch, single = _as_batch(obs, params.critic_obs_dim)
    value = params.critic(params.critic_rms.normalize(batch, params.obs_clip))[:, 0]
    return value[0] if single else value


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, actions: np.ndarray) -> np.ndarray:
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    z = (actions - mean) / np.exp(log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * np.log(2.0 * np.pi), axis=-1)


def gaussian_entropy(log_std: np.ndarray) -> float:
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    return float(np.sum(log_std + 0.5 * np.log(2.0 * np.pi * np.e)))


def act(params: PolicyParams, obs: np.ndarray, rng: Optional[np.random.Generator] = None,
        deterministic: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Sample (or take the mean) action; returns (actions, log probs)"""
    mean, std = actor_forward(params, obs)
    if deterministic or rng is None:
        actions = mean
    else:
        actions = mean + std * rng.standard_normal(mean.shape)
    return actions, gaussian_log_prob(mean, params.log_std, actions)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: PolicyParams, path) -> None:
    """
    Write params as .npz: actor_<i>, critic_<i>, log_std, obs_rms_{mean,var,count},
    critic_rms_{mean,var,count} arrays plus a JSON metadata string.
    """
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "obs_mode": params.obs_mode,
        "critic_mode": params.critic_mode,
        "obs_dim": params.obs_dim,
        "actor_sizes": params.actor.sizes,
        "critic_sizes": params.critic.sizes,
        "obs_clip": params.obs_clip,
        "config_hash": params.config_hash,
        **params.metadata,
    }
    arrays = {f"actor_{i}": p for i, p in enumerate(params.actor.params)}
    arrays.update({f"critic_{i}": p for i, p in enumerate(params.critic.params)})
    arrays.update(
        log_std=params.log_std,
        obs_rms_mean=params.obs_rms.mean, obs_rms_var=params.obs_rms.var,
        obs_rms_count=np.array(params.obs_rms.count),
        critic_rms_mean=params.critic_rms.mean, critic_rms_var=params.critic_rms.var,
        critic_rms_count=np.array(params.critic_rms.count),
        metadata=np.array(json.dumps(meta, sort_keys=True)),
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    logger.info(f"Saved {params.obs_mode} policy checkpoint to {path}")


def load_checkpoint(path) -> PolicyParams:
    """
    Raises:
        CheckpointError: If the file is missing, unreadable or of another format/version
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["metadata"]))
            if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"{path} is not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} checkpoint"
                )
            n_actor = len(meta["actor_sizes"]) - 1
            n_critic = len(meta["critic_sizes"]) - 1
            actor = MLP([data[f"actor_{i}"].copy() for i in range(2 * n_actor)])
            critic = MLP([data[f"critic_{i}"].copy() for i in range(2 * n_critic)])
            params = PolicyParams(
                obs_mode=meta["obs_mode"], actor=actor, critic=critic, log_std=data["log_std"].copy(),
                obs_rms=RunningMeanStd(data["obs_rms_mean"].copy(), data["obs_rms_var"].copy(),
                                       float(data["obs_rms_count"])),
                critic_mode=meta["critic_mode"],
                critic_rms=RunningMeanStd(data["critic_rms_mean"].copy(), data["critic_rms_var"].copy(),
                                          float(data["critic_rms_count"])),
                obs_clip=float(meta["obs_clip"]), config_hash=meta.get("config_hash", ""),
            )
    except CheckpointError:
        raise
    except (OSError, KeyError, ValueError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {str(e)}") from e
    known = {"format", "version", "obs_mode", "critic_mode", "obs_dim", "actor_sizes", "critic_sizes",
             "obs_clip", "config_hash"}
    params.metadata = {k: v for k, v in meta.items() if k not in known}
    return params
