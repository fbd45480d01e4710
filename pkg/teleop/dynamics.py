"""
Floating-base articulated rigid-body simulation of the humanoid.

Spatial vectors are 6-vectors [angular; linear] in body coordinates. The
generalized velocity is [base spatial velocity in base coordinates (6),
joint rates (19)]. Each physics substep computes PD torques, free
accelerations with the articulated-body algorithm, then resolves foot
contact with a linearly-implicit penalty solve on the joint-space mass
matrix (composite rigid-body algorithm) before a semi-implicit Euler update.
"""
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from teleop.config import SimConfig
from teleop.kinematics import HumanoidModel, joint_rotations
from teleop.randomization import DRParams
from teleop.rotations import integrate_quat, quat_to_matrix, skew
from teleop.terrain import TerrainSpec, make_terrain

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


class SimulationError(Exception):
    """Custom exception for invalid simulation setups or commands"""
    pass


class SimulationDivergedError(Exception):
    """Custom exception for simulations that produced non-finite state"""

    def __init__(self, message: str, last_state=None):
        super().__init__(message)
        self.last_state = last_state


# ---------------------------------------------------------------------------
# Spatial algebra
# ---------------------------------------------------------------------------

def crm(v: np.ndarray) -> np.ndarray:
    """Motion cross-product operator"""
    out = np.zeros((6, 6))
    w = skew(v[:3])
    out[:3, :3] = w
    out[3:, 3:] = w
    out[3:, :3] = skew(v[3:])
    return out


def crf(v: np.ndarray) -> np.ndarray:
    """Force cross-product operator"""
    return -crm(v).T


def spatial_inertia(mass: float, com: np.ndarray, inertia_com: np.ndarray) -> np.ndarray:
    """6x6 inertia about the frame origin of a body with com offset and rotational inertia about the com"""
    cx = skew(com)
    out = np.zeros((6, 6))
    out[:3, :3] = inertia_com + mass * cx @ cx.T
    out[:3, 3:] = mass * cx
    out[3:, :3] = mass * cx.T
    out[3:, 3:] = mass * np.eye(3)
    return out


def plucker(rot: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Motion transform from parent to child coords; child frame = parent translated by offset, rotated by rot"""
    e = rot.T
    out = np.zeros((6, 6))
    out[:3, :3] = e
    out[3:, 3:] = e
    out[3:, :3] = -e @ skew(offset)
    return out


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitFrame:
    root_pos: np.ndarray
    root_quat: np.ndarray
    q: np.ndarray
    root_lin_vel: Optional[np.ndarray] = None
    root_ang_vel: Optional[np.ndarray] = None
    qd: Optional[np.ndarray] = None

    @classmethod
    def standing(cls, model: HumanoidModel, height: Optional[float] = None) -> "InitFrame":
        h = model.nominal_root_height if height is None else height
        return cls(np.array([0.0, 0.0, h]), np.array([0.0, 0.0, 0.0, 1.0]), model.default_q)


@dataclass(frozen=True, eq=False)
class SimState:
    """
    One simulated humanoid. Velocities are world-frame; link quantities are per model link.
    """
    sim: "Simulator"
    time: float
    root_pos: np.ndarray
    root_quat: np.ndarray
    q: np.ndarray
    root_lin_vel: np.ndarray
    root_ang_vel: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    link_pos: np.ndarray       # (L, 3)
    link_rot: np.ndarray       # (L, 3, 3)
    link_vel: np.ndarray       # (L, 3)
    link_ang_vel: np.ndarray   # (L, 3)
    foot_force: np.ndarray     # (2, 3) world
    in_contact: np.ndarray     # (2,) bool
    air_time: np.ndarray       # (2,) s
    touchdown_air_time: np.ndarray  # (2,) air time credited at touchdown this step, else 0
    torque: np.ndarray         # applied (clamped) torque of the last substep
    torque_desired: np.ndarray  # PD + noise before clamping
    cmd_queue: Tuple[np.ndarray, ...] = ()
    next_push_time: float = float("inf")

    @property
    def root_rot(self) -> np.ndarray:
        return quat_to_matrix(self.root_quat)

    @property
    def q_gen(self) -> np.ndarray:
        return np.concatenate([self.root_pos, self.root_quat, self.q])

    @property
    def v_gen(self) -> np.ndarray:
        return np.concatenate([self.root_lin_vel, self.root_ang_vel, self.qd])

    @property
    def projected_gravity(self) -> np.ndarray:
        """Unit gravity direction in the root frame"""
        return self.root_rot.T @ np.array([0.0, 0.0, -1.0])

    @property
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.q_gen)) and np.all(np.isfinite(self.v_gen)))


@dataclass
class _Kinematics:
    local_rot: np.ndarray   # (19, 3, 3)
    xform: np.ndarray       # (19, 6, 6) parent -> child motion transforms
    body_rot: np.ndarray    # (B, 3, 3) world
    body_pos: np.ndarray    # (B, 3) world


# ---------------------------------------------------------------------------
# Simulator
# ---------------------------------------------------------------------------

class Simulator:
    """
    Per-episode simulator holding the randomized model, terrain and RNG.

    Args:
        fixed_base: pin the root in place
        locked: joint indices held rigid at their initial angle
        contact: disable to simulate without ground contact
    """

    def __init__(self, model: HumanoidModel, cfg: SimConfig, terrain: TerrainSpec, dr: DRParams,
                 seed: int = 0, fixed_base: bool = False, locked: Optional[Sequence[int]] = None,
                 contact: bool = True):
        self.model = model
        self.cfg = cfg
        self.terrain = terrain
        self.dr = dr
        self.rng = np.random.default_rng(seed)
        self.fixed_base = fixed_base
        self.contact = contact
        self.dt = cfg.physics_dt
        self.gravity = np.array([0.0, 0.0, -cfg.gravity])

        mass, com, inertia = model.body_inertias(dr.link_mass_scale, dr.com_offset)
        self.body_mass = mass
        self.body_com = com
        self.inertia6 = np.stack([spatial_inertia(m, c, i) for m, c, i in zip(mass, com, inertia)])
        self.kp = model.kp * dr.kp_scale
        self.kd = model.kd * dr.kd_scale
        self.delay_substeps = int(round(dr.control_delay / self.dt))
        self.locked = np.zeros(model.num_dof, dtype=bool)
        if locked is not None:
            self.locked[list(locked)] = True
        self.free = np.concatenate([np.full(6, not fixed_base), ~self.locked])

        self.motion_subspace = np.zeros((model.num_dof, 6))
        self.motion_subspace[:, :3] = model.joint_axis

        foot_bodies = model.link_body[model.foot_link]
        self.contact_body = np.repeat(foot_bodies, len(model.foot_points))
        self.contact_foot = np.repeat(np.arange(len(foot_bodies)), len(model.foot_points))
        self.contact_local = np.concatenate([
            model.link_offset[f] + model.foot_points for f in model.foot_link
        ])

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.body_mass))

    @property
    def control_dt(self) -> float:
        return self.dt * self.cfg.substeps

    # -- kinematics ---------------------------------------------------------

    def kinematics(self, root_pos: np.ndarray, root_rot: np.ndarray, q: np.ndarray) -> _Kinematics:
        model = self.model
        local = joint_rotations(model, q)
        xform = np.stack([plucker(local[i], model.joint_offset[i]) for i in range(model.num_dof)])
        body_rot = np.zeros((model.num_bodies, 3, 3))
        body_pos = np.zeros((model.num_bodies, 3))
        body_rot[0] = root_rot
        body_pos[0] = root_pos
        for i in range(model.num_dof):
            p = model.joint_parent[i]
            body_rot[i + 1] = body_rot[p] @ local[i]
            body_pos[i + 1] = body_pos[p] + body_rot[p] @ model.joint_offset[i]
        return _Kinematics(local, xform, body_rot, body_pos)

    def body_velocities(self, kin: _Kinematics, base_vel: np.ndarray, qd: np.ndarray) -> np.ndarray:
        """Spatial velocity of every body in its own coordinates"""
        model = self.model
        vel = np.zeros((model.num_bodies, 6))
        vel[0] = base_vel
        for i in range(model.num_dof):
            vel[i + 1] = kin.xform[i] @ vel[model.joint_parent[i]] + self.motion_subspace[i] * qd[i]
        return vel

    # -- dynamics -----------------------------------------------------------

    def forward_dynamics(self, kin: _Kinematics, base_vel: np.ndarray, qd: np.ndarray,
                         tau: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Articulated-body algorithm.

        Returns:
            (base spatial acceleration in base coords including gravity, joint accelerations)
        """
        model = self.model
        n = model.num_dof
        parent = model.joint_parent
        s = self.motion_subspace
        x = kin.xform

        vel = np.zeros((model.num_bodies, 6))
        bias_acc = np.zeros((model.num_bodies, 6))
        art_inertia = self.inertia6.copy()
        art_bias = np.zeros((model.num_bodies, 6))
        vel[0] = base_vel
        art_bias[0] = crf(vel[0]) @ (self.inertia6[0] @ vel[0])
        for i in range(n):
            b = i + 1
            v_joint = s[i] * qd[i]
            vel[b] = x[i] @ vel[parent[i]] + v_joint
            bias_acc[b] = crm(vel[b]) @ v_joint
            art_bias[b] = crf(vel[b]) @ (self.inertia6[b] @ vel[b])

        u_vec = np.zeros((n, 6))
        d = np.ones(n)
        u = np.zeros(n)
        for i in reversed(range(n)):
            b = i + 1
            if self.locked[i]:
                ia = art_inertia[b]
                pa = art_bias[b] + ia @ bias_acc[b]
            else:
                u_vec[i] = art_inertia[b] @ s[i]
                d[i] = s[i] @ u_vec[i] + model.armature[i]
                u[i] = tau[i] - s[i] @ art_bias[b]
                ia = art_inertia[b] - np.outer(u_vec[i], u_vec[i]) / d[i]
                pa = art_bias[b] + ia @ bias_acc[b] + u_vec[i] * (u[i] / d[i])
            art_inertia[parent[i]] += x[i].T @ ia @ x[i]
            art_bias[parent[i]] += x[i].T @ pa

        # Gravity enters as a fictitious base acceleration
        grav_base = np.concatenate([np.zeros(3), kin.body_rot[0].T @ self.gravity])
        acc = np.zeros((model.num_bodies, 6))
        if self.fixed_base:
            acc[0] = -grav_base
        else:
            acc[0] = -np.linalg.solve(art_inertia[0], art_bias[0])
        qdd = np.zeros(n)
        for i in range(n):
            b = i + 1
            acc[b] = x[i] @ acc[parent[i]] + bias_acc[b]
            if not self.locked[i]:
                qdd[i] = (u[i] - u_vec[i] @ acc[b]) / d[i]
                acc[b] += s[i] * qdd[i]

        base_acc = np.zeros(6) if self.fixed_base else acc[0] + grav_base
        return base_acc, qdd

    def mass_matrix(self, kin: _Kinematics) -> np.ndarray:
        """Composite rigid-body algorithm; armature on the joint diagonal"""
        model = self.model
        n = model.num_dof
        parent = model.joint_parent
        s = self.motion_subspace
        x = kin.xform
        composite = self.inertia6.copy()
        for i in reversed(range(n)):
            composite[parent[i]] += x[i].T @ composite[i + 1] @ x[i]

        mass = np.zeros((6 + n, 6 + n))
        mass[:6, :6] = composite[0]
        for i in range(n):
            f = composite[i + 1] @ s[i]
            mass[6 + i, 6 + i] = s[i] @ f + model.armature[i]
            j = i
            while parent[j] != 0:
                f = x[j].T @ f
                j = parent[j] - 1
                mass[6 + i, 6 + j] = mass[6 + j, 6 + i] = s[j] @ f
            f = x[j].T @ f
            mass[:6, 6 + i] = f
            mass[6 + i, :6] = f
        return mass

    def point_jacobian(self, kin: _Kinematics, body: int, point: np.ndarray) -> np.ndarray:
        """(3, 25) map from generalized velocity to the world velocity of a point fixed on body"""
        model = self.model
        jac = np.zeros((3, 6 + model.num_dof))
        root_rot = kin.body_rot[0]
        jac[:, 0:3] = -skew(point - kin.body_pos[0]) @ root_rot
        jac[:, 3:6] = root_rot
        for i in np.flatnonzero(model.support[body]):
            axis = kin.body_rot[i + 1] @ model.joint_axis[i]
            jac[:, 6 + i] = np.cross(axis, point - kin.body_pos[i + 1])
        return jac

    def contact_points(self, kin: _Kinematics) -> np.ndarray:
        return kin.body_pos[self.contact_body] + np.einsum(
            "kij,kj->ki", kin.body_rot[self.contact_body], self.contact_local
        )

    def _resolve_contacts(self, kin: _Kinematics, nu: np.ndarray, nu_free: np.ndarray):
        """
        Penalty contact, implicit in velocity.

        Solves (M + dt J^T D J) nu' = M nu* + dt J^T f0, then clamps normal
        forces to be non-negative and tangential ones to the friction cone,
        re-integrating explicitly if any clamp was active.
        """
        points = self.contact_points(kin)
        depth = self.terrain.height(points[:, :2]) - points[:, 2]
        forces = np.zeros((len(points), 3))
        active = np.flatnonzero(depth > 0.0) if self.contact else np.array([], dtype=int)
        if active.size == 0:
            return nu_free, forces, depth

        cfg = self.cfg
        dt = self.dt
        mass = self.mass_matrix(kin)
        free = self.free
        jacs = np.stack([self.point_jacobian(kin, self.contact_body[k], points[k]) for k in active])
        jacs[:, :, ~free] = 0.0
        damping = np.array([cfg.friction_damping, cfg.friction_damping, cfg.contact_damping + dt * cfg.contact_stiffness])
        f0 = np.zeros((active.size, 3))
        f0[:, 2] = cfg.contact_stiffness * depth[active]

        lhs = mass + dt * np.einsum("kai,a,kaj->ij", jacs, damping, jacs)
        rhs = mass @ nu_free + dt * np.einsum("kai,ka->i", jacs, f0)
        nu_new = nu_free.copy()
        nu_new[free] = np.linalg.solve(lhs[np.ix_(free, free)], rhs[free])

        f = f0 - damping * np.einsum("kai,i->ka", jacs, nu_new)
        clamped = f.copy()
        clamped[clamped[:, 2] < 0.0] = 0.0
        tangential = np.linalg.norm(clamped[:, :2], axis=1)
        cap = self.terrain.friction * clamped[:, 2]
        over = tangential > cap
        clamped[over, :2] *= (cap[over] / tangential[over])[:, None]
        if not np.array_equal(clamped, f):
            impulse = dt * np.einsum("kai,ka->i", jacs, clamped)
            nu_new = nu_free.copy()
            nu_new[free] += np.linalg.solve(mass[np.ix_(free, free)], impulse[free])
        forces[active] = clamped
        return nu_new, forces, depth

    # -- stepping -----------------------------------------------------------

    def pd_torque(self, target: np.ndarray, q: np.ndarray, qd: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """PD law plus random force injection; returns (desired, clamped)"""
        noise = self.rng.uniform(-1.0, 1.0, size=q.shape) * self.dr.rfi_amplitude
        desired = self.kp * (target - q) - self.kd * qd + noise
        limit = self.model.torque_limit
        return desired, np.clip(desired, -limit, limit)

    def _physics_substep(self, root_pos, root_quat, q, lin_vel, ang_vel, qd, tau):
        root_rot = quat_to_matrix(root_quat)
        kin = self.kinematics(root_pos, root_rot, q)
        qd = np.where(self.locked, 0.0, qd)
        base_vel = np.concatenate([root_rot.T @ ang_vel, root_rot.T @ lin_vel])
        if self.fixed_base:
            base_vel = np.zeros(6)
        base_acc, qdd = self.forward_dynamics(kin, base_vel, qd, tau)

        nu = np.concatenate([base_vel, qd])
        nu_free = nu + self.dt * np.concatenate([base_acc, qdd])
        nu_new, point_forces, depth = self._resolve_contacts(kin, nu, nu_free)

        base_new = nu_new[:6]
        qd_new = nu_new[6:]
        q_new = q + self.dt * qd_new
        if self.fixed_base:
            return root_pos, root_quat, q_new, lin_vel, ang_vel, qd_new, point_forces, depth
        omega_world = root_rot @ base_new[:3]
        vel_world = root_rot @ base_new[3:]
        pos_new = root_pos + self.dt * vel_world
        quat_new = integrate_quat(root_quat, omega_world, self.dt)
        rot_new = quat_to_matrix(quat_new)
        return (pos_new, quat_new, q_new, rot_new @ base_new[3:], rot_new @ base_new[:3], qd_new,
                point_forces, depth)

    def step_physics(self, state: SimState, tau: np.ndarray) -> SimState:
        """Advance one substep with a given joint torque (no PD, no delay)"""
        pos, quat, q, lin, ang, qd, forces, depth = self._physics_substep(
            state.root_pos, state.root_quat, state.q, state.root_lin_vel, state.root_ang_vel, state.qd, tau
        )
        new = self._assemble(state, pos, quat, q, lin, ang, qd, (qd - state.qd) / self.dt, forces,
                             tau, tau, state.cmd_queue, self.dt)
        self._check_finite(state, new)
        return new

    def step_control(self, state: SimState, cmd: np.ndarray) -> SimState:
        """
        One control step: substeps x physics_dt with delayed PD targets.

        Raises:
            SimulationError: If the command is not finite or has the wrong size
            SimulationDivergedError: If the state becomes non-finite; carries the last finite state
        """
        cmd = np.asarray(cmd, dtype=float)
        if cmd.shape != (self.model.num_dof,) or not np.all(np.isfinite(cmd)):
            raise SimulationError(f"Invalid actuator command of shape {cmd.shape}")

        pos, quat, q = state.root_pos, state.root_quat, state.q
        lin, ang, qd = state.root_lin_vel, state.root_ang_vel, state.qd
        queue = list(state.cmd_queue)
        forces = np.zeros((len(self.contact_body), 3))
        tau_desired = tau = np.zeros(self.model.num_dof)
        for _ in range(self.cfg.substeps):
            if self.delay_substeps > 0:
                queue.append(cmd)
                target = queue.pop(0)
            else:
                target = cmd
            tau_desired, tau = self.pd_torque(target, q, qd)
            pos, quat, q, lin, ang, qd, forces, _ = self._physics_substep(pos, quat, q, lin, ang, qd, tau)
            if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(q)) and np.all(np.isfinite(qd))
                    and np.max(np.abs(qd)) < DIVERGENCE_LIMIT):
                raise SimulationDivergedError(f"Simulation diverged at t={state.time:.3f}s", last_state=state)

        new = self._assemble(state, pos, quat, q, lin, ang, qd, (qd - state.qd) / self.control_dt, forces,
                             tau, tau_desired, tuple(queue), self.control_dt)
        if new.time + 1e-9 >= state.next_push_time:
            new = replace(apply_push(new, self.dr.push_speed, self.rng),
                          next_push_time=state.next_push_time + self.dr.push_interval)
        return new

    def _assemble(self, prev: SimState, pos, quat, q, lin, ang, qd, qdd, point_forces, tau, tau_desired,
                  queue, dt) -> SimState:
        model = self.model
        rot = quat_to_matrix(quat)
        kin = self.kinematics(pos, rot, q)
        base_vel = np.concatenate([rot.T @ ang, rot.T @ lin])
        vel = self.body_velocities(kin, base_vel, qd)
        lb = model.link_body
        link_rot = kin.body_rot[lb]
        link_pos = kin.body_pos[lb] + np.einsum("lij,lj->li", link_rot, model.link_offset)
        link_ang = np.einsum("lij,lj->li", link_rot, vel[lb, :3])
        link_lin = np.einsum("lij,lj->li", link_rot, vel[lb, 3:] + np.cross(vel[lb, :3], model.link_offset))

        foot_force = np.zeros((len(model.foot_link), 3))
        np.add.at(foot_force, self.contact_foot, point_forces)
        in_contact = foot_force[:, 2] > 0.0
        air_time = prev.air_time + dt
        first_contact = in_contact & ~prev.in_contact
        touchdown = np.where(first_contact, air_time, 0.0)
        air_time = np.where(in_contact, 0.0, air_time)

        return replace(
            prev, time=prev.time + dt, root_pos=pos, root_quat=quat, q=q, root_lin_vel=lin, root_ang_vel=ang,
            qd=qd, qdd=qdd, link_pos=link_pos, link_rot=link_rot, link_vel=link_lin, link_ang_vel=link_ang,
            foot_force=foot_force, in_contact=in_contact, air_time=air_time, touchdown_air_time=touchdown,
            torque=tau, torque_desired=tau_desired, cmd_queue=queue,
        )

    @staticmethod
    def _check_finite(prev: SimState, new: SimState) -> None:
        if not new.is_finite:
            raise SimulationDivergedError(f"Simulation diverged at t={prev.time:.3f}s", last_state=prev)

    # -- diagnostics --------------------------------------------------------

    def _generalized(self, state: SimState) -> Tuple[_Kinematics, np.ndarray]:
        rot = state.root_rot
        kin = self.kinematics(state.root_pos, rot, state.q)
        nu = np.concatenate([rot.T @ state.root_ang_vel, rot.T @ state.root_lin_vel, state.qd])
        return kin, nu

    def linear_momentum(self, state: SimState) -> np.ndarray:
        kin, nu = self._generalized(state)
        vel = self.body_velocities(kin, nu[:6], nu[6:])
        total = np.zeros(3)
        for b in range(self.model.num_bodies):
            v_com = vel[b, 3:] + np.cross(vel[b, :3], self.body_com[b])
            total += self.body_mass[b] * (kin.body_rot[b] @ v_com)
        return total

    def energy(self, state: SimState) -> float:
        """Kinetic + gravitational + stored contact spring energy (J)"""
        kin, nu = self._generalized(state)
        kinetic = 0.5 * nu @ self.mass_matrix(kin) @ nu
        com_world = kin.body_pos + np.einsum("bij,bj->bi", kin.body_rot, self.body_com)
        potential = -float(np.sum(self.body_mass * (com_world @ self.gravity)))
        spring = 0.0
        if self.contact:
            points = self.contact_points(kin)
            depth = np.maximum(self.terrain.height(points[:, :2]) - points[:, 2], 0.0)
            spring = 0.5 * self.cfg.contact_stiffness * float(np.sum(depth * depth))
        return float(kinetic + potential + spring)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def init_sim(model: HumanoidModel, terrain: Optional[TerrainSpec], dr: DRParams, init_frame: InitFrame,
             cfg: Optional[SimConfig] = None, seed: int = 0, **sim_kwargs) -> SimState:
    """
    Build a simulator with DR baked in and place the humanoid at init_frame.

    Raises:
        SimulationError: If a foot starts more than max_init_penetration below ground
    """
    cfg = cfg or SimConfig()
    terrain = terrain if terrain is not None else make_terrain("flat", 0, cfg.terrain)
    sim = Simulator(model, cfg, terrain.with_friction(dr.friction), dr, seed=seed, **sim_kwargs)

    rot = quat_to_matrix(init_frame.root_quat)
    q = np.asarray(init_frame.q, dtype=float)
    kin = sim.kinematics(init_frame.root_pos, rot, q)
    points = sim.contact_points(kin)
    depth = sim.terrain.height(points[:, :2]) - points[:, 2]
    if np.max(depth) > cfg.max_init_penetration:
        raise SimulationError(
            f"Initial penetration {np.max(depth):.3f} m exceeds {cfg.max_init_penetration} m"
        )

    zeros = np.zeros(model.num_dof)
    state = SimState(
        sim=sim, time=0.0,
        root_pos=np.array(init_frame.root_pos, dtype=float),
        root_quat=np.array(init_frame.root_quat, dtype=float) / np.linalg.norm(init_frame.root_quat),
        q=q.copy(),
        root_lin_vel=np.zeros(3) if init_frame.root_lin_vel is None else np.array(init_frame.root_lin_vel, dtype=float),
        root_ang_vel=np.zeros(3) if init_frame.root_ang_vel is None else np.array(init_frame.root_ang_vel, dtype=float),
        qd=zeros.copy() if init_frame.qd is None else np.array(init_frame.qd, dtype=float),
        qdd=zeros.copy(),
        link_pos=np.zeros((model.num_links, 3)), link_rot=np.zeros((model.num_links, 3, 3)),
        link_vel=np.zeros((model.num_links, 3)), link_ang_vel=np.zeros((model.num_links, 3)),
        foot_force=np.zeros((2, 3)), in_contact=np.zeros(2, dtype=bool),
        air_time=np.zeros(2), touchdown_air_time=np.zeros(2),
        torque=zeros.copy(), torque_desired=zeros.copy(),
        cmd_queue=tuple(q.copy() for _ in range(sim.delay_substeps)),
        next_push_time=dr.push_interval if dr.push_speed > 0 else float("inf"),
    )
    state = sim._assemble(state, state.root_pos, state.root_quat, state.q, state.root_lin_vel,
                          state.root_ang_vel, state.qd, zeros.copy(), np.zeros((len(sim.contact_body), 3)),
                          zeros.copy(), zeros.copy(), state.cmd_queue, 0.0)
    in_contact = np.zeros(2, dtype=bool)
    for foot in range(2):
        in_contact[foot] = bool(np.any(depth[sim.contact_foot == foot] > 0.0))
    return replace(state, in_contact=in_contact)


def step_control(state: SimState, cmd: np.ndarray, dr: Optional[DRParams] = None) -> SimState:
    """Advance one 20 ms control step; dr must be the one baked into the state's simulator"""
    if dr is not None and dr is not state.sim.dr:
        raise SimulationError("DR parameters differ from the ones the simulator was built with")
    return state.sim.step_control(state, cmd)


def apply_push(state: SimState, v_xy: float, rng: np.random.Generator) -> SimState:
    """Add a planar root velocity of magnitude v_xy in a random direction"""
    if v_xy == 0.0:
        return state
    angle = rng.uniform(0.0, 2.0 * np.pi)
    delta = np.array([v_xy * np.cos(angle), v_xy * np.sin(angle), 0.0])
    logger.debug(f"Push at t={state.time:.2f}s: {v_xy} m/s towards {np.degrees(angle):.0f} deg")
    # a root velocity change moves every link by the same delta
    return replace(state, root_lin_vel=state.root_lin_vel + delta, link_vel=state.link_vel + delta)


# ---------------------------------------------------------------------------
# Trace dump
# ---------------------------------------------------------------------------

TRACE_VERSION = 1


def save_trace(states: List[SimState], path) -> None:
    """
    Write a rollout as .npz.

    Arrays (T = len(states), L links): version (), time (T,), root_pos (T, 3),
    root_quat (T, 4), q (T, 19), qd (T, 19), link_pos (T, L, 3),
    foot_force (T, 2, 3), torque (T, 19).
    """
    np.savez(
        Path(path),
        version=np.array(TRACE_VERSION),
        time=np.array([s.time for s in states]),
        root_pos=np.stack([s.root_pos for s in states]),
        root_quat=np.stack([s.root_quat for s in states]),
        q=np.stack([s.q for s in states]),
        qd=np.stack([s.qd for s in states]),
        link_pos=np.stack([s.link_pos for s in states]),
        foot_force=np.stack([s.foot_force for s in states]),
        torque=np.stack([s.torque for s in states]),
    )
