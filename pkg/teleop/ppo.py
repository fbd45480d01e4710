"""
PPO training of tracking policies.

Rollouts come from a pool of TrackingEnv instances stepped in lockstep on
one thread; each iteration collects num_envs x horizon transitions, computes
GAE, then runs clipped-surrogate updates of the actor and a regression of
the critic with separate Adam optimizers.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from teleop.config import PipelineConfig, TrainConfig, config_hash
from teleop.env import TerminationResult, TrackingEnv, check_termination, make_env_pool
from teleop.kinematics import HumanoidModel
from teleop.optim import AdamOptimizer, clip_grad_norm
from teleop.policy import (
    LOG_STD_MAX, LOG_STD_MIN, PolicyParams, act, critic_forward, gaussian_entropy, save_checkpoint,
)
from teleop.retarget import RetargetedMotion
from teleop.rewards import REWARD_TERMS

logger = logging.getLogger(__name__)

__all__ = [
    "TrainingError", "TrainingDivergedError", "TerminationResult", "check_termination", "sample_goal",
    "hard_negative_probs", "gae", "RolloutBatch", "Optimizers", "actor_loss_and_grads",
    "critic_loss_and_grads", "ppo_update", "TrainResult", "train",
]

LOG_COLUMNS = (
    ["iteration"] + [f"reward_{t}" for t in REWARD_TERMS]
    + ["reward_total", "episode_length", "termination_fraction", "divergence_fraction",
       "policy_loss", "value_loss", "entropy", "eval_succ", "eval_g_mpjpe"]
)


class TrainingError(Exception):
    """Custom exception for invalid training setups"""
    pass


class TrainingDivergedError(Exception):
    """Custom exception for training runs aborted on non-finite losses or simulation blow-ups"""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# ---------------------------------------------------------------------------
# Goal sampling
# ---------------------------------------------------------------------------

def sample_goal(dataset: Sequence[RetargetedMotion], rng: np.random.Generator,
                probs: Optional[np.ndarray] = None) -> Tuple[int, int]:
    """
    Pick (sequence index, start frame): a sequence by probs (uniform by default),
    then a start frame uniform over [0, len - 2].

    Raises:
        TrainingError: If the dataset is empty
    """
    if len(dataset) == 0:
        raise TrainingError("Cannot sample goals from an empty dataset")
    if probs is None:
        index = int(rng.integers(len(dataset)))
    else:
        index = int(rng.choice(len(dataset), p=probs))
    start = int(rng.integers(max(len(dataset[index]) - 1, 1)))
    return index, start


def hard_negative_probs(failure_rates: np.ndarray, gain: float) -> np.ndarray:
    """Sampling probabilities proportional to 1 + gain * failure rate"""
    weights = 1.0 + gain * np.asarray(failure_rates, dtype=float)
    return weights / np.sum(weights)


# ---------------------------------------------------------------------------
# Advantage estimation
# ---------------------------------------------------------------------------

def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, gamma: float, lam: float,
        last_value: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Generalized advantage estimation over time-major arrays (T,) or (T, E).

    dones[t] marks that the episode ended after step t, so no value is
    carried across it. Truncated episodes are expected to have their
    bootstrap value folded into the reward already.

    Returns:
        (advantages, returns)

    Raises:
        TrainingError: If the array shapes differ
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise TrainingError(f"gae shape mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")
    if last_value is None:
        last_value = np.zeros(rewards.shape[1:])

    advantages = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    next_value = np.asarray(last_value, dtype=float)
    for t in reversed(range(rewards.shape[0])):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * not_done - values[t]
        running = delta + gamma * lam * not_done * running
        advantages[t] = running
        next_value = values[t]
    return advantages, advantages + values


# ---------------------------------------------------------------------------
# PPO update
# ---------------------------------------------------------------------------

@dataclass
class RolloutBatch:
    obs: np.ndarray
    critic_obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]


@dataclass
class Optimizers:
    actor: AdamOptimizer
    critic: AdamOptimizer

    @classmethod
    def create(cls, params: PolicyParams, cfg: TrainConfig) -> "Optimizers":
        return cls(
            AdamOptimizer.for_params(params.actor.params + [params.log_std], lr=cfg.actor_lr),
            AdamOptimizer.for_params(params.critic.params, lr=cfg.critic_lr),
        )


def actor_loss_and_grads(params: PolicyParams, obs: np.ndarray, actions: np.ndarray, old_log_probs: np.ndarray,
                         advantages: np.ndarray, clip: float, entropy_coef: float) -> Tuple[float, dict, List[np.ndarray]]:
    """
    Clipped surrogate loss minus the entropy bonus.

    Returns:
        (loss, stats, gradients for actor params followed by log_std)
    """
    m = obs.shape[0]
    norm_obs = params.obs_rms.normalize(obs, params.obs_clip)
    mean, cache = params.actor.forward(norm_obs)
    log_std = np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)
    z = (actions - mean) / std
    log_probs = np.sum(-0.5 * z * z - log_std - 0.5 * np.log(2.0 * np.pi), axis=1)
    ratio = np.exp(log_probs - old_log_probs)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages
    unclipped = surr1 <= surr2
    entropy = gaussian_entropy(params.log_std)
    loss = -float(np.mean(np.minimum(surr1, surr2))) - entropy_coef * entropy

    g_logp = -(advantages * ratio * unclipped) / m
    g_mean = g_logp[:, None] * z / std
    grads, _ = params.actor.backward(cache, g_mean)
    inside = (params.log_std > LOG_STD_MIN) & (params.log_std < LOG_STD_MAX)
    g_log_std = (np.sum(g_logp[:, None] * (z * z - 1.0), axis=0) - entropy_coef) * inside
    stats = {
        "policy_loss": loss,
        "entropy": entropy,
        "approx_kl": float(np.mean(old_log_probs - log_probs)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip)),
    }
    return loss, stats, grads + [g_log_std]


def critic_loss_and_grads(params: PolicyParams, critic_obs: np.ndarray,
                          returns: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    norm_obs = params.critic_rms.normalize(critic_obs, params.obs_clip)
    values, cache = params.critic.forward(norm_obs)
    err = values[:, 0] - returns
    grads, _ = params.critic.backward(cache, err[:, None] / critic_obs.shape[0])
    return 0.5 * float(np.mean(err * err)), grads


def ppo_update(params: PolicyParams, batch: RolloutBatch, cfg: TrainConfig, optimizers: Optional[Optimizers] = None,
               rng: Optional[np.random.Generator] = None) -> Tuple[PolicyParams, dict]:
    """
    Run cfg.epochs passes of minibatch updates on a copy of params.

    Raises:
        TrainingDivergedError: If a loss turns non-finite
    """
    params = params.copy()
    if optimizers is None:
        optimizers = Optimizers.create(params, cfg)
    else:
        optimizers = Optimizers(optimizers.actor, optimizers.critic)
    rng = rng if rng is not None else np.random.default_rng(0)

    advantages = batch.advantages.astype(float)
    if cfg.normalize_advantages and len(batch) > 1:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    n = len(batch)
    size = min(cfg.minibatch_size, n)
    history = {"policy_loss": [], "value_loss": [], "entropy": [], "approx_kl": [], "clip_fraction": []}
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_stats = {k: [] for k in history}
        for start in range(0, n, size):
            idx = order[start:start + size]
            loss, stats, actor_grads = actor_loss_and_grads(
                params, batch.obs[idx], batch.actions[idx], batch.log_probs[idx], advantages[idx],
                cfg.clip, cfg.entropy_coef,
            )
            value_loss, critic_grads = critic_loss_and_grads(params, batch.critic_obs[idx], batch.returns[idx])
            if not (np.isfinite(loss) and np.isfinite(value_loss)):
                raise TrainingDivergedError(
                    f"Non-finite PPO loss in epoch {epoch} (policy {loss}, value {value_loss})",
                    {"epoch": epoch, "policy_loss": loss, "value_loss": value_loss,
                     "log_std": params.log_std.tolist()},
                )
            clip_grad_norm(actor_grads, cfg.max_grad_norm)
            clip_grad_norm(critic_grads, cfg.max_grad_norm)
            optimizers.actor.step(params.actor.params + [params.log_std], actor_grads)
            optimizers.critic.step(params.critic.params, critic_grads)
            np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX, out=params.log_std)

            stats["value_loss"] = value_loss
            for k in epoch_stats:
                epoch_stats[k].append(stats[k])
        for k in history:
            history[k].append(float(np.mean(epoch_stats[k])))

    summary = {k: v[-1] for k, v in history.items()}
    summary["history"] = history
    return params, summary


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: PolicyParams
    log: List[dict] = field(default_factory=list)
    failure_rates: Optional[np.ndarray] = None


def _write_log(rows: List[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=LOG_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})


def train(dataset: Sequence[RetargetedMotion], obs_mode: str, dr_enabled: bool, cfg: PipelineConfig,
          model: HumanoidModel, seed: Optional[int] = None, out_dir=None,
          eval_fn: Optional[Callable[[PolicyParams], dict]] = None,
          hard_negative: Optional[bool] = None, init_params: Optional[PolicyParams] = None) -> TrainResult:
    """
    Train a tracking policy with PPO.

    Args:
        dataset: reference motions to sample goals from
        obs_mode: privileged, deploy or reduced
        dr_enabled: sample dynamics randomization per episode
        seed: overrides cfg.seed
        out_dir: if set, receives train_log.csv and periodic checkpoints
        eval_fn: called every eval_interval iterations, returns {"succ", "g_mpjpe"}
        hard_negative: overrides cfg.train.hard_negative

    Raises:
        TrainingError: On an empty dataset
        TrainingDivergedError: When more than max_divergence_rate of the
            environments diverge within one iteration, or on a non-finite loss
    """
    if len(dataset) == 0:
        raise TrainingError("Training dataset is empty")
    tcfg = cfg.train
    seed = cfg.seed if seed is None else seed
    hard_negative = tcfg.hard_negative if hard_negative is None else hard_negative
    chash = config_hash(cfg)

    root = np.random.SeedSequence(seed)
    init_ss, env_ss, goal_ss, action_ss, update_ss = root.spawn(5)
    params = init_params.copy() if init_params is not None else PolicyParams.create(
        obs_mode, model, tcfg, np.random.default_rng(init_ss), config_hash=chash
    )
    if params.obs_mode != obs_mode:
        raise TrainingError(f"Initial params use {params.obs_mode} observations, not {obs_mode}")
    goal_rng = np.random.default_rng(goal_ss)
    action_rng = np.random.default_rng(action_ss)
    update_rng = np.random.default_rng(update_ss)
    optimizers = Optimizers.create(params, tcfg)

    envs: List[TrackingEnv] = make_env_pool(
        model, cfg, obs_mode, dr_enabled, int(env_ss.generate_state(1)[0]), tcfg.num_envs, params.critic_mode
    )
    failure_rates = np.zeros(len(dataset))
    probs = None

    def reset(env: TrackingEnv):
        index, start = sample_goal(dataset, goal_rng, probs)
        return env.reset(dataset[index], start, motion_index=index)

    current = [reset(env) for env in envs]
    episode_steps = np.zeros(len(envs), dtype=int)
    out_dir = Path(out_dir) if out_dir is not None else None
    log_rows: List[dict] = []
    last_eval = {"eval_succ": "", "eval_g_mpjpe": ""}
    logger.info(
        f"Training {obs_mode} policy on {len(dataset)} motions: {tcfg.iterations} iterations x "
        f"{len(envs)} envs x {tcfg.horizon} steps, DR {'on' if dr_enabled else 'off'}, seed {seed}"
    )

    horizon = tcfg.horizon
    num_envs = len(envs)
    for iteration in range(1, tcfg.iterations + 1):
        obs_buf = np.zeros((horizon, num_envs, params.obs_dim))
        cobs_buf = np.zeros((horizon, num_envs, params.critic_obs_dim))
        act_buf = np.zeros((horizon, num_envs, model.num_dof))
        logp_buf = np.zeros((horizon, num_envs))
        rew_buf = np.zeros((horizon, num_envs))
        val_buf = np.zeros((horizon, num_envs))
        done_buf = np.zeros((horizon, num_envs))
        term_sums = {t: 0.0 for t in REWARD_TERMS}
        total_sum = 0.0
        finished_lengths: List[int] = []
        terminations = 0
        diverged_envs = np.zeros(num_envs, dtype=bool)

        for h in range(horizon):
            obs = np.stack([c[0] for c in current])
            cobs = np.stack([c[1] for c in current])
            actions, log_probs = act(params, obs, action_rng)
            values = critic_forward(params, cobs)
            obs_buf[h], cobs_buf[h], act_buf[h], logp_buf[h], val_buf[h] = obs, cobs, actions, log_probs, values

            for e, env in enumerate(envs):
                result = env.step(actions[e])
                episode_steps[e] += 1
                reward = tcfg.reward_scale * result.reward.total
                for t in REWARD_TERMS:
                    term_sums[t] += result.reward.weighted[t]
                total_sum += result.reward.total
                if result.truncated:
                    reward += tcfg.gamma * float(critic_forward(params, result.critic_obs))
                rew_buf[h, e] = reward
                done = result.terminated or result.truncated
                done_buf[h, e] = float(done)
                if result.diverged:
                    diverged_envs[e] = True
                if done:
                    failed = float(result.terminated)
                    terminations += int(result.terminated)
                    failure_rates[env.motion_index] = 0.9 * failure_rates[env.motion_index] + 0.1 * failed
                    finished_lengths.append(int(episode_steps[e]))
                    episode_steps[e] = 0
                    current[e] = reset(env)
                else:
                    current[e] = (result.obs, result.critic_obs)

        divergence_fraction = float(np.mean(diverged_envs))
        if divergence_fraction > tcfg.max_divergence_rate:
            raise TrainingDivergedError(
                f"{divergence_fraction:.0%} of environments diverged in iteration {iteration}",
                {"iteration": iteration, "divergence_fraction": divergence_fraction},
            )

        last_values = critic_forward(params, np.stack([c[1] for c in current]))
        advantages, returns = gae(rew_buf, val_buf, done_buf, tcfg.gamma, tcfg.lam, last_values)
        flat = lambda x: x.reshape((horizon * num_envs,) + x.shape[2:])
        batch = RolloutBatch(
            flat(obs_buf), flat(cobs_buf), flat(act_buf), flat(logp_buf), flat(rew_buf), flat(val_buf),
            flat(done_buf), flat(advantages), flat(returns),
        )
        params, stats = ppo_update(params, batch, tcfg, optimizers, update_rng)
        params.obs_rms.update(batch.obs)
        if params.shares_critic_obs:
            params.critic_rms = params.obs_rms
        else:
            params.critic_rms.update(batch.critic_obs)

        if hard_negative and tcfg.eval_interval and iteration % tcfg.eval_interval == 0:
            probs = hard_negative_probs(failure_rates, tcfg.hard_negative_gain)
        if eval_fn is not None and tcfg.eval_interval and iteration % tcfg.eval_interval == 0:
            result = eval_fn(params)
            last_eval = {"eval_succ": float(result["succ"]), "eval_g_mpjpe": float(result["g_mpjpe"])}

        steps = horizon * num_envs
        row = {"iteration": iteration}
        row.update({f"reward_{t}": term_sums[t] / steps for t in REWARD_TERMS})
        row.update({
            "reward_total": total_sum / steps,
            "episode_length": float(np.mean(finished_lengths)) if finished_lengths else float(horizon),
            "termination_fraction": terminations / max(len(finished_lengths), 1),
            "divergence_fraction": divergence_fraction,
            "policy_loss": stats["policy_loss"],
            "value_loss": stats["value_loss"],
            "entropy": stats["entropy"],
        })
        row.update(last_eval)
        log_rows.append(row)
        logger.info(
            f"Iteration {iteration}/{tcfg.iterations}: reward {row['reward_total']:.2f}, "
            f"episode length {row['episode_length']:.1f}, value loss {stats['value_loss']:.4f}"
        )

        if out_dir is not None:
            _write_log(log_rows, out_dir / "train_log.csv")
            if tcfg.checkpoint_interval and iteration % tcfg.checkpoint_interval == 0:
                save_checkpoint(params, out_dir / f"checkpoint_{iteration:05d}.npz")

    params.metadata.update({"iterations": tcfg.iterations, "seed": seed, "dr_enabled": dr_enabled})
    if out_dir is not None:
        _write_log(log_rows, out_dir / "train_log.csv")
        save_checkpoint(params, out_dir / "policy.npz")
    return TrainResult(params, log_rows, failure_rates)
