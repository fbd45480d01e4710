import hashlib
import json
import logging
from pathlib import Path
from typing import List, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)

TERRAIN_KINDS = ("flat", "rough", "low_obstacles")
OBS_MODES = ("privileged", "deploy", "reduced")


class ConfigError(Exception):
    """Custom exception for configuration errors"""
    pass


class Settings(BaseSettings):
    # Paths
    data_root: str = "./data"
    config_path: str = "config/default.yaml"
    humanoid_config: str = "config/humanoid.yaml"

    # Runtime
    threads: int = 1
    log_level: str = "INFO"

    model_config = SettingsConfigDict(env_file=".env", env_prefix="TELEOP_", case_sensitive=False)


settings = Settings()


Range = Tuple[float, float]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _check_range(name: str, value: Range) -> Range:
    lo, hi = value
    if lo > hi:
        raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
    return value


class MotionConfig(_Section):
    target_fps: float = Field(default=50.0, gt=0)
    synth_fps: float = Field(default=30.0, gt=0)
    synth_duration_s: float = Field(default=2.0, gt=0)
    suite: str = Field(default="default", pattern="^(default|feasible|extended)$")


class AdamConfig(_Section):
    lr: float = Field(default=0.01, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    max_steps: int = Field(default=500, ge=0)
    grad_tol: float = Field(default=1e-6, ge=0)
    warmup_steps: int = Field(default=10, ge=0)
    backtrack: bool = True
    min_step_scale: float = Field(default=1e-6, gt=0)
    divergence_patience: int = Field(default=100, ge=1)


class HeuristicRules(_Section):
    min_root_height: float = 0.45
    max_root_jump: float = Field(default=0.5, gt=0)
    max_joint_rate: float = Field(default=25.0, gt=0)


class RetargetConfig(_Section):
    adam: AdamConfig = AdamConfig()
    w_limit: float = Field(default=10.0, ge=0)
    limit_margin: float = Field(default=0.05, ge=0)
    w_smooth: float = Field(default=0.1, ge=0)
    shape_lr: float = Field(default=2.0, gt=0)
    shape_iters: int = Field(default=5000, ge=0)
    heuristics: HeuristicRules = HeuristicRules()


class TerrainConfig(_Section):
    size: float = Field(default=20.0, gt=0)
    cell_size: float = Field(default=0.1, gt=0)
    rough_amplitude: float = Field(default=0.025, ge=0)
    obstacle_count: int = Field(default=40, ge=0)
    obstacle_max_height: float = Field(default=0.05, ge=0)
    obstacle_size: Range = (0.2, 0.8)
    clear_radius: float = Field(default=0.5, ge=0)

    @field_validator("obstacle_size")
    @classmethod
    def validate_obstacle_size(cls, v):
        return _check_range("obstacle_size", v)


class SimConfig(_Section):
    physics_dt: float = Field(default=0.005, gt=0)
    substeps: int = Field(default=4, ge=1)
    gravity: float = 9.81
    contact_stiffness: float = Field(default=3e4, gt=0)
    contact_damping: float = Field(default=3e3, ge=0)
    friction_damping: float = Field(default=1e4, ge=0)
    max_init_penetration: float = Field(default=0.05, ge=0)
    terrain_kind: str = Field(default="flat", pattern="^(flat|rough|low_obstacles)$")
    terrain: TerrainConfig = TerrainConfig()

    @property
    def control_dt(self) -> float:
        return self.physics_dt * self.substeps


class RandomizationConfig(_Section):
    friction: Range = (0.2, 1.1)
    com_offset: Range = (-0.1, 0.1)
    link_mass_scale: Range = (0.7, 1.3)
    kp_scale: Range = (0.75, 1.25)
    kd_scale: Range = (0.75, 1.25)
    rfi_fraction: float = Field(default=0.1, ge=0)
    control_delay: Range = (0.020, 0.060)
    push_interval: float = Field(default=5.0, gt=0)
    push_speed: float = Field(default=0.5, ge=0)
    terrain_kinds: List[str] = list(TERRAIN_KINDS)

    @field_validator("friction", "com_offset", "link_mass_scale", "kp_scale", "kd_scale", "control_delay")
    @classmethod
    def validate_ranges(cls, v, info):
        return _check_range(info.field_name, v)

    @field_validator("terrain_kinds")
    @classmethod
    def validate_terrain_kinds(cls, v):
        if not v:
            raise ValueError("terrain_kinds must not be empty")
        unknown = [k for k in v if k not in TERRAIN_KINDS]
        if unknown:
            raise ValueError(f"Unknown terrain kinds: {unknown}")
        return v


class RewardConfig(_Section):
    # Penalty
    torque_limits: float = -2e-1
    dof_pos_limits: float = -1e2
    termination: float = -2e2
    # Regularization
    dof_acc: float = -8.4e-6
    dof_vel: float = -3e-3
    action_rate: float = -9e-1
    torque: float = -9e-5
    feet_air_time: float = 8e2
    feet_contact_force: float = -1e-1
    stumble: float = -1e3
    slippage: float = -3e1
    # Task
    task_dof_pos: float = 2.4e1
    task_dof_vel: float = 2.4e1
    task_body_pos: float = 4e1
    task_body_rot: float = 1.6e1
    task_body_vel: float = 6e1
    task_body_ang_vel: float = 6e1

    # Expression constants
    air_time_offset: float = 0.25
    contact_force_normalization: float = Field(default=1.0, gt=0)
    stumble_ratio: float = 5.0
    slip_force_threshold: float = 1.0


class TerminationConfig(_Section):
    min_base_height: float = 0.3
    max_projected_gravity_xy: float = 0.7
    teleop_tolerance: float = Field(default=0.5, gt=0)


class TrainConfig(_Section):
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = Field(default=0.2, gt=0)
    epochs: int = Field(default=5, ge=1)
    minibatch_size: int = Field(default=512, ge=1)
    num_envs: int = Field(default=64, ge=1)
    horizon: int = Field(default=32, ge=1)
    actor_lr: float = Field(default=1e-4, gt=0)
    critic_lr: float = Field(default=1e-3, gt=0)
    iterations: int = Field(default=200, ge=0)
    entropy_coef: float = Field(default=1e-3, ge=0)
    max_grad_norm: float = Field(default=1.0, gt=0)
    normalize_advantages: bool = True
    hidden_sizes: List[int] = [512, 256, 128]
    init_log_std: float = -1.5
    obs_clip: float = Field(default=5.0, gt=0)
    reward_scale: float = Field(default=0.01, gt=0)
    episode_length_s: float = Field(default=10.0, gt=0)
    checkpoint_interval: int = Field(default=50, ge=0)
    eval_interval: int = Field(default=25, ge=0)
    hard_negative: bool = False
    hard_negative_gain: float = Field(default=4.0, ge=0)
    critic_privileged: bool = False
    max_divergence_rate: float = Field(default=0.5, ge=0, le=1)
    dataset_fraction: float = Field(default=1.0, gt=0, le=1)
    include_unfiltered: bool = False
    termination: TerminationConfig = TerminationConfig()

    @field_validator("gamma", "lam")
    @classmethod
    def validate_discount(cls, v, info):
        if not 0.0 < v < 1.0:
            raise ValueError(f"{info.field_name} must lie in (0, 1), got {v}")
        return v

    @field_validator("hidden_sizes")
    @classmethod
    def validate_hidden_sizes(cls, v):
        if any(h <= 0 for h in v):
            raise ValueError("hidden_sizes must be positive")
        return v


class FilterConfig(_Section):
    trials_per_seq: int = Field(default=3, ge=1)
    init_jitter_q: float = Field(default=0.02, ge=0)
    init_jitter_root: float = Field(default=0.01, ge=0)


class EvalConfig(_Section):
    episodes_per_seq: int = Field(default=1, ge=1)
    success_threshold: float = Field(default=0.5, gt=0)


class PlotConfig(_Section):
    width: float = Field(default=8.0, gt=0)
    height: float = Field(default=4.5, gt=0)


class PipelineConfig(_Section):
    version: int = 1
    seed: int = 0
    motion: MotionConfig = MotionConfig()
    retarget: RetargetConfig = RetargetConfig()
    sim: SimConfig = SimConfig()
    randomization: RandomizationConfig = RandomizationConfig()
    rewards: RewardConfig = RewardConfig()
    train: TrainConfig = TrainConfig()
    filter: FilterConfig = FilterConfig()
    eval: EvalConfig = EvalConfig()
    plot: PlotConfig = PlotConfig()

    @model_validator(mode="after")
    def validate_rates(self):
        # one reference frame per control step
        control_hz = 1.0 / self.sim.control_dt
        if abs(control_hz - self.motion.target_fps) > 1e-6 * control_hz:
            raise ValueError(
                f"motion.target_fps {self.motion.target_fps} must equal the control rate {control_hz:g} Hz "
                f"(sim.physics_dt x sim.substeps = {self.sim.control_dt:g} s)"
            )
        return self


def load_pipeline_config(path: Optional[str] = None) -> PipelineConfig:
    """
    Load and validate the root pipeline configuration.

    Args:
        path: YAML file; None returns the built-in defaults

    Returns:
        Validated PipelineConfig

    Raises:
        ConfigError: If the file is missing, malformed or violates the schema
    """
    if path is None:
        return PipelineConfig()

    config_file = Path(path)
    if not config_file.exists():
        raise ConfigError(f"Config file not found: {path}")

    try:
        raw = yaml.safe_load(config_file.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Malformed YAML in {path}: {str(e)}") from e

    if not isinstance(raw, dict):
        raise ConfigError(f"Config root must be a mapping, got {type(raw).__name__}")

    try:
        config = PipelineConfig(**raw)
    except ValidationError as e:
        errors = "; ".join([f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()])
        raise ConfigError(f"Invalid config {path}: {errors}") from e

    logger.info(f"Loaded pipeline config {path} (hash {config_hash(config)})")
    return config


def config_hash(config: BaseModel) -> str:
    """Short SHA-256 of the canonical JSON dump of a config model"""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
