"""
Motion-tracking environment around the simulator.

An episode starts at a reference frame's pose and velocities, then at each
control step applies the policy's joint targets, scores the result against
the next reference frame and checks the early-termination rules.
"""
import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from teleop.config import PipelineConfig, TerminationConfig
from teleop.dynamics import InitFrame, SimState, SimulationDivergedError, init_sim
from teleop.kinematics import HumanoidModel, humanoid_fk
from teleop.policy import act, build_obs
from teleop.randomization import DRParams, sample_dr
from teleop.retarget import ReferenceFrame, RetargetedMotion
from teleop.rewards import RewardBreakdown, compute_reward
from teleop.terrain import make_terrain

logger = logging.getLogger(__name__)

INIT_CLEARANCE = 0.002


@dataclass(frozen=True)
class TerminationResult:
    terminate: bool
    reason: Optional[str] = None
    value: Optional[float] = None


def check_termination(state, ref: ReferenceFrame, cfg: TerminationConfig) -> TerminationResult:
    """
    Early termination: base too low, body tilted too far, or the mean link
    distance to the reference beyond the teleoperation tolerance.
    """
    height = float(state.root_pos[2])
    if height < cfg.min_base_height:
        return TerminationResult(True, "low-height", height)
    tilt = float(np.max(np.abs(state.projected_gravity[:2])))
    if tilt > cfg.max_projected_gravity_xy:
        return TerminationResult(True, "tilt", tilt)
    deviation = float(np.mean(np.linalg.norm(np.asarray(state.link_pos) - np.asarray(ref.link_pos), axis=1)))
    if deviation > cfg.teleop_tolerance:
        return TerminationResult(True, "teleop-tolerance", deviation)
    return TerminationResult(False)


def init_frame_from_reference(motion: RetargetedMotion, t: int) -> InitFrame:
    ref = motion.frame(t)
    return InitFrame(ref.root_pos.copy(), ref.root_rot.copy(), ref.q.copy(),
                     ref.root_lin_vel.copy(), ref.root_ang_vel.copy(), ref.dq.copy())


def lift_to_ground(model: HumanoidModel, terrain, frame: InitFrame) -> InitFrame:
    """Raise the root so no foot contact point starts below the terrain"""
    pose = humanoid_fk(model, frame.root_pos, frame.root_quat, frame.q)
    points = np.concatenate([
        pose.link_pos[f] + model.foot_points @ pose.link_rot[f].T for f in model.foot_link
    ])
    depth = float(np.max(terrain.height(points[:, :2]) - points[:, 2]))
    if depth <= -INIT_CLEARANCE:
        return frame
    root_pos = frame.root_pos.copy()
    root_pos[2] += depth + INIT_CLEARANCE
    return replace(frame, root_pos=root_pos)


@dataclass
class StepResult:
    obs: np.ndarray
    critic_obs: np.ndarray
    reward: RewardBreakdown
    terminated: bool
    truncated: bool
    termination: TerminationResult
    diverged: bool = False


class TrackingEnv:
    """
    One humanoid tracking one reference motion per episode.

    Separate generators drive DR sampling (dr_rng) and everything else in
    the episode (sim_rng), so toggling DR leaves the remaining streams intact.
    """

    def __init__(self, model: HumanoidModel, cfg: PipelineConfig, obs_mode: str, dr_enabled: bool,
                 seed: int, critic_mode: Optional[str] = None):
        self.model = model
        self.cfg = cfg
        self.obs_mode = obs_mode
        self.critic_mode = critic_mode or obs_mode
        self.dr_enabled = dr_enabled
        streams = np.random.SeedSequence(seed).spawn(2)
        self.dr_rng = np.random.default_rng(streams[0])
        self.sim_rng = np.random.default_rng(streams[1])
        self.state: Optional[SimState] = None
        self.motion: Optional[RetargetedMotion] = None
        self.motion_index = -1
        self.start_frame = 0
        self.steps = 0
        self.prev_action = np.zeros(model.num_dof)
        self.dr: Optional[DRParams] = None

    @property
    def frame_index(self) -> int:
        return self.start_frame + int(round(self.state.time * self.motion.fps))

    def _ref(self, offset: int = 0) -> ReferenceFrame:
        return self.motion.frame(self.frame_index + offset)

    def observe(self, mode: str) -> np.ndarray:
        """Observation for choosing the next action: goal is the next reference frame"""
        return build_obs(mode, self.state, self.prev_action, self._ref(1), self.model)

    def reset(self, motion: RetargetedMotion, start_frame: int, motion_index: int = 0,
              jitter_q: float = 0.0, jitter_root: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
        """
        Start an episode at the reference pose of start_frame.

        Returns:
            (actor observation, critic observation)
        """
        if self.dr_enabled:
            self.dr = sample_dr(self.dr_rng, self.cfg.randomization, self.model)
            terrain_seed = int(self.dr_rng.integers(2 ** 31))
        else:
            self.dr = replace(DRParams.nominal(self.model), terrain_kind=self.cfg.sim.terrain_kind)
            terrain_seed = 0
        terrain = make_terrain(self.dr.terrain_kind, terrain_seed, self.cfg.sim.terrain)

        frame = init_frame_from_reference(motion, start_frame)
        if jitter_q > 0.0 or jitter_root > 0.0:
            frame = replace(
                frame,
                q=self.model.clamp(frame.q + self.sim_rng.uniform(-jitter_q, jitter_q, size=frame.q.shape)),
                root_pos=frame.root_pos + self.sim_rng.uniform(-jitter_root, jitter_root, size=3),
            )
        frame = lift_to_ground(self.model, terrain, frame)

        sim_seed = int(self.sim_rng.integers(2 ** 31))
        self.state = init_sim(self.model, terrain, self.dr, frame, self.cfg.sim, seed=sim_seed)
        self.motion = motion
        self.motion_index = motion_index
        self.start_frame = start_frame
        self.steps = 0
        self.prev_action = frame.q.copy()
        obs = self.observe(self.obs_mode)
        critic_obs = obs if self.critic_mode == self.obs_mode else self.observe(self.critic_mode)
        return obs, critic_obs

    def step(self, action: np.ndarray) -> StepResult:
        """
        Apply joint targets for one control step.

        A diverged simulation ends the episode as terminated with zero reward
        and the last finite observation.
        """
        action = np.asarray(action, dtype=float)
        cmd = self.model.clamp(action)
        diverged = False
        try:
            self.state = self.state.sim.step_control(self.state, cmd)
        except SimulationDivergedError as e:
            logger.warning(f"Episode on motion {self.motion.source_id} diverged: {str(e)}")
            self.state = e.last_state
            diverged = True
        self.steps += 1

        ref = self._ref(0)
        if diverged:
            termination = TerminationResult(True, "diverged")
        else:
            termination = check_termination(self.state, ref, self.cfg.train.termination)
        reward = compute_reward(self.state, ref, action, self.prev_action, None,
                                termination.terminate, self.cfg.rewards, self.model)
        if diverged:
            zero = {k: 0.0 for k in reward.raw}
            reward = RewardBreakdown(zero, dict(zero), 0.0)
        self.prev_action = action

        at_end = self.frame_index >= len(self.motion) - 1
        timeout = self.state.time >= self.cfg.train.episode_length_s - 1e-9
        truncated = not termination.terminate and (at_end or timeout)
        obs = self.observe(self.obs_mode)
        critic_obs = obs if self.critic_mode == self.obs_mode else self.observe(self.critic_mode)
        return StepResult(obs, critic_obs, reward, termination.terminate, truncated, termination, diverged)


def make_env_pool(model: HumanoidModel, cfg: PipelineConfig, obs_mode: str, dr_enabled: bool, seed: int,
                  num_envs: int, critic_mode: Optional[str] = None) -> List[TrackingEnv]:
    """Independent environments with seeds spawned from one root seed"""
    seeds = np.random.SeedSequence(seed).generate_state(num_envs)
    return [TrackingEnv(model, cfg, obs_mode, dr_enabled, int(s), critic_mode) for s in seeds]


def rollout(env: TrackingEnv, policy_fn, motion: RetargetedMotion, start_frame: int = 0,
            max_steps: Optional[int] = None, jitter_q: float = 0.0, jitter_root: float = 0.0,
            stop_on_termination: bool = False) -> dict:
    """
    Run one episode to the end of the motion with policy_fn(obs) -> action.

    Returns a dict with the simulated and reference link positions per step
    (index 0 is the initial state), the first termination and the step count.
    """
    obs, _ = env.reset(motion, start_frame, jitter_q=jitter_q, jitter_root=jitter_root)
    limit = len(motion) - 1 - start_frame if max_steps is None else max_steps
    sim_links = [env.state.link_pos.copy()]
    ref_links = [env._ref(0).link_pos.copy()]
    sim_root = [env.state.root_pos.copy()]
    ref_root = [env._ref(0).root_pos.copy()]
    first_failure: Optional[Tuple[int, TerminationResult]] = None
    diverged = False
    for k in range(limit):
        result = env.step(policy_fn(obs, env))
        sim_links.append(env.state.link_pos.copy())
        ref_links.append(env._ref(0).link_pos.copy())
        sim_root.append(env.state.root_pos.copy())
        ref_root.append(env._ref(0).root_pos.copy())
        obs = result.obs
        if result.terminated and first_failure is None:
            first_failure = (k + 1, result.termination)
        diverged = diverged or result.diverged
        if result.diverged or (result.terminated and stop_on_termination):
            break
        if env.frame_index >= len(motion) - 1:
            break
    return {
        "sim_links": np.stack(sim_links),
        "ref_links": np.stack(ref_links),
        "sim_root": np.stack(sim_root),
        "ref_root": np.stack(ref_root),
        "failure": first_failure,
        "diverged": diverged,
        "steps": len(sim_links) - 1,
    }


def mean_action_policy(params) -> Callable:
    """Deterministic policy_fn for rollout()"""
    def policy_fn(obs, env):
        return act(params, obs, deterministic=True)[0]
    return policy_fn
