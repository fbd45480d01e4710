import logging
from dataclasses import dataclass

import numpy as np

from teleop.config import RandomizationConfig
from teleop.kinematics import HumanoidModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DRParams:
    """
    Per-episode dynamics randomization.

    Everything is episodic except the torque noise, whose amplitude is fixed
    here and whose value is redrawn every physics substep.
    """
    friction: float
    com_offset: np.ndarray       # (3,) m, added to the root link com
    link_mass_scale: np.ndarray  # (L,)
    kp_scale: np.ndarray         # (19,)
    kd_scale: np.ndarray         # (19,)
    rfi_amplitude: np.ndarray    # (19,) N*m
    control_delay: float         # s
    push_interval: float         # s; inf disables pushes
    push_speed: float            # m/s
    terrain_kind: str

    @classmethod
    def nominal(cls, model: HumanoidModel) -> "DRParams":
        """Unrandomized dynamics: model defaults, no delay, noise or pushes, flat ground"""
        return cls(
            friction=1.0,
            com_offset=np.zeros(3),
            link_mass_scale=np.ones(model.num_links),
            kp_scale=np.ones(model.num_dof),
            kd_scale=np.ones(model.num_dof),
            rfi_amplitude=np.zeros(model.num_dof),
            control_delay=0.0,
            push_interval=float("inf"),
            push_speed=0.0,
            terrain_kind="flat",
        )

    def as_dict(self) -> dict:
        return {
            "friction": self.friction,
            "com_offset": self.com_offset.tolist(),
            "link_mass_scale": self.link_mass_scale.tolist(),
            "kp_scale": self.kp_scale.tolist(),
            "kd_scale": self.kd_scale.tolist(),
            "rfi_amplitude": self.rfi_amplitude.tolist(),
            "control_delay": self.control_delay,
            "push_interval": self.push_interval,
            "push_speed": self.push_speed,
            "terrain_kind": self.terrain_kind,
        }


def sample_dr(rng: np.random.Generator, config: RandomizationConfig, model: HumanoidModel) -> DRParams:
    """
    Draw one episode's randomization.

    Link masses and PD gains are sampled independently per link and per
    joint; the torque-noise amplitude is rfi_fraction times each joint's
    torque limit.
    """
    friction = float(rng.uniform(*config.friction))
    com_offset = rng.uniform(*config.com_offset, size=3)
    link_mass_scale = rng.uniform(*config.link_mass_scale, size=model.num_links)
    kp_scale = rng.uniform(*config.kp_scale, size=model.num_dof)
    kd_scale = rng.uniform(*config.kd_scale, size=model.num_dof)
    control_delay = float(rng.uniform(*config.control_delay))
    terrain_kind = config.terrain_kinds[int(rng.integers(len(config.terrain_kinds)))]
    return DRParams(
        friction=friction,
        com_offset=com_offset,
        link_mass_scale=link_mass_scale,
        kp_scale=kp_scale,
        kd_scale=kd_scale,
        rfi_amplitude=config.rfi_fraction * model.torque_limit,
        control_delay=control_delay,
        push_interval=config.push_interval,
        push_speed=config.push_speed,
        terrain_kind=terrain_kind,
    )
