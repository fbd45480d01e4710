from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Vec3 = Tuple[float, float, float]
Vec4 = Tuple[float, float, float, float]

NUM_DOF = 19


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# Humanoid model file

class CapsuleSpec(_Strict):
    radius: float = Field(ge=0)
    length: float = Field(ge=0)


class LinkSpec(_Strict):
    name: str = Field(..., min_length=1)
    mass: float = Field(gt=0)
    com: Vec3
    inertia: Vec3
    capsule: CapsuleSpec

    @field_validator("inertia")
    @classmethod
    def validate_inertia(cls, v):
        if any(i <= 0 for i in v):
            raise ValueError("principal inertia must be positive")
        return v


class JointSpec(_Strict):
    name: str = Field(..., min_length=1)
    parent: str
    offset: Vec3
    axis: Vec3
    limit: Tuple[float, float]
    torque_limit: float = Field(gt=0)
    kp: float = Field(ge=0)
    kd: float = Field(ge=0)
    armature: float = Field(default=0.0, ge=0)
    link: Optional[str] = None

    @field_validator("axis")
    @classmethod
    def validate_axis(cls, v):
        norm = sum(a * a for a in v) ** 0.5
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"axis must be a unit vector, got norm {norm}")
        return v

    @field_validator("limit")
    @classmethod
    def validate_limit(cls, v):
        if not v[0] < v[1]:
            raise ValueError(f"limit_lo must be below limit_hi, got {v}")
        return v


class FixedLinkSpec(_Strict):
    name: str
    parent: str
    offset: Vec3


class KeypointSpec(_Strict):
    name: str
    link: str
    offset: Vec3 = (0.0, 0.0, 0.0)


class HumanoidSpec(_Strict):
    version: Literal[1]
    name: str
    nominal_root_height: float = Field(gt=0)
    root_link: str
    links: List[LinkSpec]
    joints: List[JointSpec] = Field(..., min_length=NUM_DOF, max_length=NUM_DOF)
    fixed_links: List[FixedLinkSpec] = []
    foot_links: List[str] = Field(..., min_length=2, max_length=2)
    foot_contact_points: List[Vec3] = Field(..., min_length=1)
    keypoint12: List[KeypointSpec] = Field(..., min_length=12, max_length=12)
    keypoint8: List[str] = Field(..., min_length=8, max_length=8)

    @model_validator(mode="after")
    def validate_references(self):
        link_names = [l.name for l in self.links]
        if len(set(link_names)) != len(link_names):
            raise ValueError("link names must be unique")
        joint_names = [j.name for j in self.joints]
        if len(set(joint_names)) != len(joint_names):
            raise ValueError("joint names must be unique")

        seen = {"root"}
        attached = {self.root_link}
        for joint in self.joints:
            if joint.parent not in seen:
                raise ValueError(f"joint {joint.name}: parent {joint.parent} must be declared before it")
            seen.add(joint.name)
            if joint.link is not None:
                attached.add(joint.link)
        for fixed in self.fixed_links:
            if fixed.parent not in seen:
                raise ValueError(f"fixed link {fixed.name}: unknown parent joint {fixed.parent}")
            attached.add(fixed.name)
        if attached != set(link_names):
            raise ValueError(f"links without a frame: {sorted(set(link_names) - attached)}")

        for name in self.foot_links:
            if name not in link_names:
                raise ValueError(f"unknown foot link {name}")
        kp_names = [k.name for k in self.keypoint12]
        for kp in self.keypoint12:
            if kp.link not in link_names:
                raise ValueError(f"keypoint {kp.name}: unknown link {kp.link}")
        missing = [k for k in self.keypoint8 if k not in kp_names]
        if missing:
            raise ValueError(f"keypoint8 entries not in keypoint12: {missing}")
        return self


# Retargeted motion file

class RetargetedMotionDoc(_Strict):
    format: Literal["teleop-retargeted"]
    version: Literal[1]
    source_id: str
    fps: float = Field(gt=0)
    config_hash: str = ""
    root_pos: List[Vec3]
    root_rot: List[Vec4]
    q: List[List[float]]

    @model_validator(mode="after")
    def validate_lengths(self):
        n = len(self.root_pos)
        if n == 0:
            raise ValueError("retargeted motion has no frames")
        if len(self.root_rot) != n or len(self.q) != n:
            raise ValueError("root_pos, root_rot and q must have the same number of frames")
        if any(len(row) != NUM_DOF for row in self.q):
            raise ValueError(f"every q row must have {NUM_DOF} entries")
        return self


# Evaluation report rows

class ReportRow(_Strict):
    method: str = Field(..., min_length=1)
    state_dim: int = Field(ge=0)
    sim2real: bool
    succ: float = Field(ge=0, le=1)
    g_mpjpe: float = Field(ge=0)
    mpjpe: float = Field(ge=0)
    acc: float = Field(ge=0)
    vel: float = Field(ge=0)
    succ_g_mpjpe: Optional[float] = None
    succ_mpjpe: Optional[float] = None
    succ_acc: Optional[float] = None
    succ_vel: Optional[float] = None
    num_sequences: int = Field(ge=0)
    config_hash: str = ""
    fraction: Optional[float] = Field(default=None, gt=0, le=1)


# Fitted human shape

class ShapeDoc(_Strict):
    format: Literal["teleop-shape"]
    version: Literal[1]
    beta: List[float] = Field(min_length=1)
    initial_error: float = Field(ge=0)
    final_error: float = Field(ge=0)
    iterations: int = Field(ge=0)
    config_hash: str = ""
