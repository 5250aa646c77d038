"""
.. _sim:

Simulating a Low-Rigidity Humanoid
==================================

Small plastic humanoids bend. Their servos have backlash, their links flex, and
the heavier the tool in their hand, the further the arm and the whole body sag
under gravity. This module is a static simulator of exactly that: a four joint
robot (shoulder pitch, shoulder yaw, elbow pitch and ankle pitch) whose joints
give way in proportion to the gravity torque they hold.

TL;DR

>>> import flexbody as fb
>>> model = fb.RobotModel.from_config(fb.load_config())
>>> tool = fb.tool_state("Long/Heavy")
>>> sample = fb.observe(model, [45, 0, 45, -5], tool, noise=fb.NoiseSpec.zero())
>>> sample.present
(True, True, True, True)
>>> fb.joint_torques(model, [90, 0, 0, 0], tool).round(3)
array([ 0.742,  0.   ,  0.433, -0.742])

What gets simulated
-------------------

Every observation is an 11 number sensor vector made of four modalities:

* ``theta``: the four *commanded* joint angles (deg). This is what the robot was
  told to do, not where it ended up.
* ``x_cog``: the center of gravity projected on the ground (mm), measured
  through eight one-axis force sensors at the corners of the two feet.
* ``x_tool``: the 3D position of the tool tip (mm).
* ``s_tool``: the pixel position of the tool tip in the image of the torso
  camera (px). When the tip leaves the image, the two tool modalities are
  reported as absent.

The deflection model
--------------------

The actual joint angles solve the fixed point
``theta_act = theta_cmd - backlash - gain * tau(theta_act)`` where ``tau`` is
the holding torque of each joint (Nm) and ``gain`` is in deg/Nm. Because the
torque depends on the deflected pose itself, it is solved with a damped
fixed-point iteration (damping 0.5, tolerance 1e-6 deg, at most 100 steps).

Frames and conventions:

* World: x forward, y left, z up, origin at the center between the feet.
* The ankle sits ``ankle_height_mm`` above the ground; a positive ankle angle
  leans the robot forward.
* A positive shoulder pitch raises the arm forward, a positive elbow pitch
  bends the forearm up, and shoulder yaw turns the arm about its own axis.
* The tool hangs along the hand axis, ``length_mm`` long, with its mass at
  ``tool_com_ratio`` of its length.

The surrogate-real plant
------------------------

:func:`surrogate_real` returns a systematically different robot: stiffer or
softer joints, slightly wrong link masses, a constant backlash offset and an
extra tip sag that grows with tool length. It plays the part of the physical
robot that a network trained in simulation has to adapt to.
"""

__all__ = [
    "JOINT_NAMES",
    "LENGTH_CLASSES",
    "LINK_NAMES",
    "MODALITIES",
    "MODALITY_DIMS",
    "SAMPLE_COLUMNS",
    "TOOL_STATES",
    "WEIGHT_CLASSES",
    "CameraSpec",
    "JointSpec",
    "LinkSpec",
    "NoiseSpec",
    "PerturbSpec",
    "RobotModel",
    "StateSample",
    "ToolState",
    "center_of_gravity",
    "cog_from_forces",
    "cog_is_supported",
    "deflected_angles",
    "foot_forces",
    "forward_kinematics",
    "frame_to_samples",
    "joint_torques",
    "observe",
    "project_to_screen",
    "rigid_model",
    "samples_to_frame",
    "support_polygon",
    "surrogate_real",
    "tool_state",
]

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.spatial import ConvexHull
from scipy.spatial.transform import Rotation

from flexbody._errors import (
    ConfigurationError,
    InstabilityError,
    IterationLimitError,
    RangeViolationError,
)

JOINT_NAMES = ("shoulder-pitch", "shoulder-yaw", "elbow-pitch", "ankle-pitch")
LINK_NAMES = ("body", "upper_arm", "forearm", "hand")
MODALITIES = ("theta", "x_cog", "x_tool", "s_tool")
MODALITY_DIMS = (4, 2, 3, 2)

SAMPLE_COLUMNS = [
    "theta_sp_deg",
    "theta_sy_deg",
    "theta_ep_deg",
    "theta_ap_deg",
    "x_cog_x_mm",
    "x_cog_y_mm",
    "x_tool_x_mm",
    "x_tool_y_mm",
    "x_tool_z_mm",
    "s_tool_u_px",
    "s_tool_v_px",
]

WEIGHT_CLASSES = {40.0: "Light", 80.0: "Middle", 120.0: "Heavy"}
LENGTH_CLASSES = {176.0: "Short", 236.0: "Long"}

# (kind, name, direction along the frame z axis for links)
_CHAIN = (
    ("joint", "ankle-pitch", None),
    ("link", "body", 1.0),
    ("joint", "shoulder-pitch", None),
    ("joint", "shoulder-yaw", None),
    ("link", "upper_arm", -1.0),
    ("joint", "elbow-pitch", None),
    ("link", "forearm", -1.0),
    ("link", "hand", -1.0),
)


@dataclass(frozen=True)
class ToolState:
    """The tool in the robot's hand: its weight (g) and length (mm)."""

    weight_g: float
    length_mm: float

    def __post_init__(self):
        if self.weight_g < 0 or self.length_mm <= 0:
            raise ConfigurationError(
                f"invalid tool: weight {self.weight_g} g, length {self.length_mm} mm"
            )

    @property
    def weight_class(self):
        return WEIGHT_CLASSES.get(float(self.weight_g))

    @property
    def length_class(self):
        return LENGTH_CLASSES.get(float(self.length_mm))

    @property
    def label(self):
        if self.weight_class and self.length_class:
            return f"{self.length_class}/{self.weight_class}"
        return f"{self.length_mm:g}mm/{self.weight_g:g}g"


TOOL_STATES = tuple(
    ToolState(weight, length) for length in LENGTH_CLASSES for weight in WEIGHT_CLASSES
)


def tool_state(label):
    """Get one of the six :data:`TOOL_STATES` by its label, e.g. "Long/Heavy"."""
    for tool in TOOL_STATES:
        if tool.label.lower() == str(label).lower():
            return tool
    raise ConfigurationError(
        f"unknown tool state: {label!r}, expected one of "
        f"{[t.label for t in TOOL_STATES]}"
    )


@dataclass(frozen=True)
class LinkSpec:
    name: str
    length_mm: float
    mass_g: float
    com_offset_mm: float

    def __post_init__(self):
        if self.length_mm <= 0:
            raise ConfigurationError(f"link {self.name}: length must be positive")
        if self.mass_g < 0:
            raise ConfigurationError(f"link {self.name}: mass must be non-negative")
        if not 0 <= self.com_offset_mm <= self.length_mm:
            raise ConfigurationError(
                f"link {self.name}: com_offset_mm must be within [0, length_mm]"
            )


@dataclass(frozen=True)
class JointSpec:
    name: str
    axis: tuple
    range_deg: tuple
    deflection_gain_deg_per_nm: float
    backlash_deg: float = 0.0

    def __post_init__(self):
        if self.name not in JOINT_NAMES:
            raise ConfigurationError(
                f"unknown joint: {self.name!r}, expected one of {JOINT_NAMES}"
            )
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-9:
            raise ConfigurationError(f"joint {self.name}: axis must be a unit vector")
        if not self.range_deg[0] < self.range_deg[1]:
            raise ConfigurationError(f"joint {self.name}: range min must be < max")
        if self.deflection_gain_deg_per_nm < 0:
            raise ConfigurationError(
                f"joint {self.name}: deflection gain must be non-negative"
            )


@dataclass(frozen=True)
class CameraSpec:
    """Pinhole camera fixed to the torso, pitched down towards the workspace.

    `position_mm` is given in the torso frame, whose origin is the ankle joint.
    """

    focal_px: float = 320.0
    principal_point_px: tuple = (320.0, 240.0)
    image_size_px: tuple = (640, 480)
    position_mm: tuple = (30.0, 0.0, 300.0)
    pitch_down_deg: float = 20.0

    def __post_init__(self):
        if min(self.image_size_px) <= 0 or self.focal_px <= 0:
            raise ConfigurationError("camera image size and focal length must be > 0")

    def rotation(self):
        """Columns are the camera x (right), y (down) and z (optical) axes."""
        t = np.radians(self.pitch_down_deg)
        x_cam = [0.0, -1.0, 0.0]
        y_cam = [-np.sin(t), 0.0, -np.cos(t)]
        z_cam = [np.cos(t), 0.0, -np.sin(t)]
        return np.column_stack([x_cam, y_cam, z_cam])


@dataclass(frozen=True)
class RobotModel:
    """Links, joints, camera and foot sensors of the simulated robot."""

    links: tuple
    joints: tuple
    camera: CameraSpec
    foot_corners_mm: tuple
    ankle_height_mm: float = 30.0
    tool_com_ratio: float = 0.5
    tip_sag_mm_per_mm_nm: float = 0.0
    gravity_m_per_s2: float = 9.80665
    reference_pose_deg: tuple = (45.0, 0.0, 45.0, -5.0)

    def __post_init__(self):
        if tuple(link.name for link in self.links) != LINK_NAMES:
            raise ConfigurationError(f"links must be ordered as {LINK_NAMES}")
        if tuple(joint.name for joint in self.joints) != JOINT_NAMES:
            raise ConfigurationError(f"joints must be ordered as {JOINT_NAMES}")
        corners = np.asarray(self.foot_corners_mm, dtype=float)
        if corners.shape != (8, 2):
            raise ConfigurationError("foot_corners_mm must hold 8 (x, y) positions")
        for foot in (corners[:4], corners[4:]):
            x, y = foot[:, 0], foot[:, 1]
            area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
            if area <= 0:
                raise ConfigurationError("each foot needs a non-degenerate rectangle")

    @classmethod
    def from_config(cls, config):
        """Build a model from a full config or from its ``robot`` section."""
        robot = config.get("robot", config)
        try:
            links = tuple(LinkSpec(**link) for link in robot["links"])
            joints = tuple(
                JointSpec(
                    name=joint["name"],
                    axis=tuple(joint["axis"]),
                    range_deg=tuple(joint["range_deg"]),
                    deflection_gain_deg_per_nm=joint["deflection_gain_deg_per_nm"],
                    backlash_deg=joint.get("backlash_deg", 0.0),
                )
                for joint in robot["joints"]
            )
            cam = robot["camera"]
            camera = CameraSpec(
                focal_px=cam["focal_px"],
                principal_point_px=tuple(cam["principal_point_px"]),
                image_size_px=tuple(cam["image_size_px"]),
                position_mm=tuple(cam["position_mm"]),
                pitch_down_deg=cam["pitch_down_deg"],
            )
            return cls(
                links=links,
                joints=joints,
                camera=camera,
                foot_corners_mm=tuple(tuple(c) for c in robot["foot_corners_mm"]),
                ankle_height_mm=robot.get("ankle_height_mm", 30.0),
                tool_com_ratio=robot.get("tool_com_ratio", 0.5),
                tip_sag_mm_per_mm_nm=robot.get("tip_sag_mm_per_mm_nm", 0.0),
                gravity_m_per_s2=robot.get("gravity_m_per_s2", 9.80665),
                reference_pose_deg=tuple(
                    robot.get("reference_pose_deg", (45.0, 0.0, 45.0, -5.0))
                ),
            )
        except (KeyError, TypeError) as e:
            raise ConfigurationError(f"incomplete robot config: {e!r}")

    @property
    def total_mass_g(self):
        return sum(link.mass_g for link in self.links)

    @cached_property
    def joint_ranges(self):
        """(4, 2) array of joint limits in deg."""
        return np.array([joint.range_deg for joint in self.joints], dtype=float)

    @cached_property
    def _joints_by_name(self):
        return {joint.name: joint for joint in self.joints}

    @cached_property
    def _links_by_name(self):
        return {link.name: link for link in self.links}

    @cached_property
    def _axes(self):
        return {joint.name: np.asarray(joint.axis, dtype=float) for joint in self.joints}

    def joint(self, name):
        return self._joints_by_name[name]

    def link(self, name):
        return self._links_by_name[name]


@dataclass(frozen=True)
class NoiseSpec:
    """Standard deviation of the additive Gaussian noise of each modality."""

    theta_deg: float = 0.0
    x_cog_mm: float = 0.5
    x_tool_mm: float = 2.0
    s_tool_px: float = 2.0

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_config(cls, config):
        return cls(**config.get("noise", {}))

    def sigmas(self):
        return (self.theta_deg, self.x_cog_mm, self.x_tool_mm, self.s_tool_px)


@dataclass(frozen=True)
class PerturbSpec:
    gain_scale: float = 1.4
    mass_perturbation: float = 0.1
    backlash_deg: float = 1.0
    tip_sag_mm_per_mm_nm: float = 0.02
    seed: int = 0

    @classmethod
    def identity(cls):
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_config(cls, config):
        return cls(**config.get("perturbation", {}))


@dataclass
class StateSample:
    """One observation: commanded angles, COG, tool tip and its pixel position.

    Absent modalities are stored as zeros and flagged in `present`.
    """

    theta: np.ndarray
    x_cog: np.ndarray
    x_tool: np.ndarray
    s_tool: np.ndarray
    present: tuple = (True, True, True, True)
    tool: ToolState = field(default=None, compare=False)

    def to_vector(self):
        return np.concatenate([self.theta, self.x_cog, self.x_tool, self.s_tool])

    @classmethod
    def from_vector(cls, vector, present=(True, True, True, True), tool=None):
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (11,):
            raise ValueError(f"expected an 11-vector, got shape {vector.shape}")
        blocks = np.split(vector, np.cumsum(MODALITY_DIMS)[:-1])
        return cls(*[b.copy() for b in blocks], present=tuple(present), tool=tool)


@dataclass
class _Chain:
    points: np.ndarray
    masses: np.ndarray
    joint_pos: dict
    joint_axis: dict
    first_distal: dict
    torso_rotation: np.ndarray
    tip: np.ndarray


def _rotation(model, name, angle_deg):
    return Rotation.from_rotvec(model._axes[name] * np.radians(angle_deg)).as_matrix()


def _chain(model, theta, tool):
    angles = dict(zip(JOINT_NAMES, np.asarray(theta, dtype=float)))
    rot = np.eye(3)
    pos = np.array([0.0, 0.0, model.ankle_height_mm])
    points, masses = [], []
    joint_pos, joint_axis, first_distal = {}, {}, {}
    torso_rotation = None
    for kind, name, direction in _CHAIN:
        if kind == "joint":
            joint_pos[name] = pos.copy()
            joint_axis[name] = rot @ model._axes[name]
            first_distal[name] = len(masses)
            rot = rot @ _rotation(model, name, angles[name])
            if name == "ankle-pitch":
                torso_rotation = rot
        else:
            link = model.link(name)
            along = rot[:, 2] * direction
            points.append(pos + along * link.com_offset_mm)
            masses.append(link.mass_g)
            pos = pos + along * link.length_mm
    along = -rot[:, 2]
    tool_com = pos + along * model.tool_com_ratio * tool.length_mm
    points.append(tool_com)
    masses.append(tool.weight_g)
    tip = pos + along * tool.length_mm
    if model.tip_sag_mm_per_mm_nm:
        grip_moment = (
            tool.weight_g / 1000 * model.gravity_m_per_s2
            * np.linalg.norm((tool_com - pos)[:2]) / 1000
        )
        tip[2] -= model.tip_sag_mm_per_mm_nm * tool.length_mm * grip_moment
    return _Chain(
        points=np.array(points),
        masses=np.array(masses, dtype=float),
        joint_pos=joint_pos,
        joint_axis=joint_axis,
        first_distal=first_distal,
        torso_rotation=torso_rotation,
        tip=tip,
    )


def _check_range(model, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (4,):
        raise ValueError(f"theta must be a 4-vector, got shape {theta.shape}")
    ranges = model.joint_ranges
    outside = (theta < ranges[:, 0]) | (theta > ranges[:, 1])
    if outside.any():
        names = [n for n, out in zip(JOINT_NAMES, outside) if out]
        raise RangeViolationError(
            f"joint angles out of range for {names}", theta=theta, ranges=ranges
        )
    return theta


def _torques(model, chain):
    weights = np.zeros((len(chain.masses), 3))
    weights[:, 2] = -chain.masses / 1000 * model.gravity_m_per_s2
    torques = np.empty(4)
    for i, name in enumerate(JOINT_NAMES):
        first = chain.first_distal[name]
        arms = (chain.points[first:] - chain.joint_pos[name]) / 1000
        moment = np.cross(arms, weights[first:]).sum(axis=0)
        torques[i] = -np.dot(chain.joint_axis[name], moment)
    return torques


def joint_torques(model, theta, tool):
    """Gravity torque (Nm) each joint has to hold at pose `theta` (deg).

    The sign is chosen so that deflecting by ``-gain * torque`` moves the joint
    along the gravity load.

    Parameters
    ----------
    model : RobotModel
      The robot.
    theta : array-like
      Four joint angles in deg, ordered as :data:`JOINT_NAMES`.
    tool : ToolState
      The grasped tool.

    Returns
    -------
    torques : numpy.ndarray
      Four holding torques in Nm.
    """
    theta = _check_range(model, theta)
    return _torques(model, _chain(model, theta, tool))


def deflected_angles(model, theta_cmd, tool, damping=0.5, tol=1e-6, max_iter=100):
    """Solve for the angles the joints actually reach under load.

    Iterates ``theta <- theta + damping * (theta_cmd - backlash - gain * tau(theta) - theta)``
    until the fixed-point residual is at most `tol` deg.

    Parameters
    ----------
    model : RobotModel
      The robot.
    theta_cmd : array-like
      Four commanded joint angles in deg.
    tool : ToolState
      The grasped tool.
    damping : float
      Fraction of the residual applied per iteration.
    tol : float
      Maximum absolute residual in deg.
    max_iter : int
      Number of iterations before giving up.

    Returns
    -------
    theta_act : numpy.ndarray
      The deflected joint angles in deg.

    Raises
    ------
    IterationLimitError
      When the iteration does not converge, with the last iterate and residual.
    """
    theta_cmd = _check_range(model, theta_cmd)
    gains = np.array([j.deflection_gain_deg_per_nm for j in model.joints])
    backlash = np.array([j.backlash_deg for j in model.joints])
    theta_act = theta_cmd.copy()
    residual = np.inf
    for _ in range(max_iter):
        torques = _torques(model, _chain(model, theta_act, tool))
        target = theta_cmd - backlash - gains * torques
        residual = np.max(np.abs(target - theta_act))
        if residual <= tol:
            return theta_act
        theta_act = theta_act + damping * (target - theta_act)
    raise IterationLimitError(
        f"deflection did not converge in {max_iter} iterations "
        f"(residual {residual:.3g} deg)",
        last_iterate=theta_act,
        residual=float(residual),
    )


def forward_kinematics(model, theta_act, tool):
    """Tool tip position (mm, world frame) at joint angles `theta_act` (deg)."""
    return _chain(model, theta_act, tool).tip


def center_of_gravity(model, theta_act, tool):
    """Ground projection (mm) of the center of mass of robot plus tool."""
    chain = _chain(model, theta_act, tool)
    return chain.masses @ chain.points[:, :2] / chain.masses.sum()


def support_polygon(model):
    """Convex hull of the foot-sensor corners, a :class:`scipy.spatial.ConvexHull`."""
    return ConvexHull(np.asarray(model.foot_corners_mm, dtype=float))


def cog_is_supported(model, x_cog, margin_mm=0.0):
    """Whether `x_cog` lies strictly inside the support polygon shrunk by `margin_mm`."""
    equations = support_polygon(model).equations
    distances = equations[:, :2] @ np.asarray(x_cog, dtype=float) + equations[:, 2]
    return bool(np.all(distances < -margin_mm))


def _min_norm_forces(corners, weight, x_cog, max_iter=50):
    # Minimum-norm f >= 0 with sum(f) = W and sum(f * corner) = W * x_cog,
    # found from the dual: f = max(0, A.T @ lam).
    scale = np.abs(corners).max()
    A = np.vstack([np.ones(len(corners)), corners.T / scale])
    b = weight * np.array([1.0, x_cog[0] / scale, x_cog[1] / scale])

    def dual(lam):
        f = np.maximum(A.T @ lam, 0.0)
        return 0.5 * f @ f - b @ lam, A @ f - b

    lam = np.linalg.solve(A @ A.T, b)
    converged = False
    for _ in range(max_iter):
        value, grad = dual(lam)
        if np.linalg.norm(grad) <= 1e-13 * (1.0 + np.linalg.norm(b)):
            converged = True
            break
        active = A.T @ lam > 0
        hessian = A[:, active] @ A[:, active].T
        step = -np.linalg.lstsq(hessian, grad, rcond=None)[0]
        t = 1.0
        while t > 1e-12 and dual(lam + t * step)[0] > value + 1e-4 * t * (grad @ step):
            t *= 0.5
        lam = lam + t * step
    if not converged:
        logging.debug(msg="foot force Newton iteration stalled, using BFGS")
        lam = minimize(dual, lam, jac=True, method="BFGS", options={"gtol": 1e-12}).x
    active = A.T @ lam > 0
    forces = np.zeros(len(corners))
    A_active = A[:, active]
    forces[active] = A_active.T @ np.linalg.lstsq(A_active @ A_active.T, b, rcond=None)[0]
    if forces.min() < 0:
        forces = np.maximum(A.T @ lam, 0.0)
    return forces


def foot_forces(model, x_cog, weight_g=None):
    """Distribute the robot's weight over the eight foot-corner sensors.

    The forces are the minimum-norm non-negative distribution whose total is
    the weight and whose force-weighted centroid is `x_cog`.

    Parameters
    ----------
    model : RobotModel
      The robot, for the corner positions.
    x_cog : array-like
      Center of gravity on the ground (mm).
    weight_g : float, optional
      Total supported mass in g, by default the robot's own mass.

    Returns
    -------
    forces : numpy.ndarray
      Eight non-negative forces in N, ordered as ``model.foot_corners_mm``.
    """
    x_cog = np.asarray(x_cog, dtype=float)
    if not cog_is_supported(model, x_cog):
        raise InstabilityError(
            f"center of gravity {x_cog.round(2).tolist()} mm is outside the "
            "support polygon",
            x_cog=x_cog,
        )
    mass = model.total_mass_g if weight_g is None else weight_g
    weight = mass / 1000 * model.gravity_m_per_s2
    corners = np.asarray(model.foot_corners_mm, dtype=float)
    return _min_norm_forces(corners, weight, x_cog)


def cog_from_forces(model, forces):
    """Force-weighted centroid (mm) of the foot-corner positions."""
    forces = np.asarray(forces, dtype=float)
    total = forces.sum()
    if total <= 0:
        raise InstabilityError("no load on the foot sensors", forces=forces)
    return forces @ np.asarray(model.foot_corners_mm, dtype=float) / total


def project_to_screen(model, x_tool, ankle_deg=0.0):
    """Project a world point into the torso camera.

    Parameters
    ----------
    model : RobotModel
      The robot, for the camera.
    x_tool : array-like
      World point in mm.
    ankle_deg : float
      Actual ankle pitch; the camera leans with the torso.

    Returns
    -------
    s_tool : numpy.ndarray
      Pixel coordinates (u, v); NaN when the point is behind the camera.
    visible : bool
      Whether the point is in front of the camera and inside the image.
    """
    camera = model.camera
    torso = _rotation(model, "ankle-pitch", ankle_deg)
    origin = np.array([0.0, 0.0, model.ankle_height_mm])
    cam_pos = origin + torso @ np.asarray(camera.position_mm, dtype=float)
    cam_rot = torso @ camera.rotation()
    x_c, y_c, z_c = cam_rot.T @ (np.asarray(x_tool, dtype=float) - cam_pos)
    if z_c < 1.0:
        return np.array([np.nan, np.nan]), False
    u = camera.focal_px * x_c / z_c + camera.principal_point_px[0]
    v = camera.focal_px * y_c / z_c + camera.principal_point_px[1]
    width, height = camera.image_size_px
    visible = bool(0 <= u < width and 0 <= v < height)
    return np.array([u, v]), visible


def observe(model, theta_cmd, tool, noise=None, rng=None):
    """Command a pose and read every sensor.

    Parameters
    ----------
    model : RobotModel
      The plant to observe (nominal or surrogate-real).
    theta_cmd : array-like
      Commanded joint angles (deg); stored as the sample's ``theta``.
    tool : ToolState
      The grasped tool.
    noise : NoiseSpec, optional
      Sensor noise, :class:`NoiseSpec` defaults when omitted.
    rng : int or numpy.random.Generator, optional
      Seed or generator for the noise.

    Returns
    -------
    sample : StateSample
      Tool modalities are absent (zeros) when the tip is not visible.
    """
    noise = NoiseSpec() if noise is None else noise
    rng = np.random.default_rng(rng)
    theta_cmd = _check_range(model, theta_cmd)
    theta_act = deflected_angles(model, theta_cmd, tool)
    chain = _chain(model, theta_act, tool)
    forces = foot_forces(
        model,
        chain.masses @ chain.points[:, :2] / chain.masses.sum(),
        weight_g=chain.masses.sum(),
    )
    x_cog = cog_from_forces(model, forces)
    s_tool, visible = project_to_screen(model, chain.tip, ankle_deg=theta_act[3])
    blocks = [theta_cmd.copy(), x_cog, chain.tip.copy(), s_tool]
    for i, sigma in enumerate(noise.sigmas()):
        if sigma > 0:
            blocks[i] = blocks[i] + rng.normal(0.0, sigma, size=blocks[i].shape)
    if visible:
        width, height = model.camera.image_size_px
        blocks[3] = np.clip(blocks[3], 0.0, [width - 1e-6, height - 1e-6])
    else:
        blocks[2] = np.zeros(3)
        blocks[3] = np.zeros(2)
    return StateSample(*blocks, present=(True, True, visible, visible), tool=tool)


def surrogate_real(model, perturbation):
    """Return a systematically perturbed copy of `model`.

    Deflection gains are scaled by ``gain_scale``, every link mass by a factor
    drawn uniformly from ``1 +/- mass_perturbation`` (seeded), every joint gets
    ``backlash_deg`` of constant offset and the tool tip sags an extra
    ``tip_sag_mm_per_mm_nm`` per mm of tool length and Nm of grip moment.
    """
    rng = np.random.default_rng(perturbation.seed)
    spread = perturbation.mass_perturbation
    scales = 1.0 + rng.uniform(-spread, spread, size=len(model.links))
    links = tuple(
        replace(link, mass_g=link.mass_g * scale)
        for link, scale in zip(model.links, scales)
    )
    joints = tuple(
        replace(
            joint,
            deflection_gain_deg_per_nm=joint.deflection_gain_deg_per_nm
            * perturbation.gain_scale,
            backlash_deg=joint.backlash_deg + perturbation.backlash_deg,
        )
        for joint in model.joints
    )
    return replace(
        model,
        links=links,
        joints=joints,
        tip_sag_mm_per_mm_nm=model.tip_sag_mm_per_mm_nm
        + perturbation.tip_sag_mm_per_mm_nm,
    )


def rigid_model(model):
    """A copy of `model` without deflection, backlash or tip sag."""
    joints = tuple(
        replace(joint, deflection_gain_deg_per_nm=0.0, backlash_deg=0.0)
        for joint in model.joints
    )
    return replace(model, joints=joints, tip_sag_mm_per_mm_nm=0.0)


def samples_to_frame(samples):
    """Convert a list of :class:`StateSample` to a DataFrame with unit-suffixed columns."""
    rows = []
    for sample in samples:
        row = dict(zip(SAMPLE_COLUMNS, sample.to_vector().tolist()))
        for modality, present in zip(MODALITIES, sample.present):
            row[f"present_{modality}"] = bool(present)
        if sample.tool is not None:
            row["tool_label"] = sample.tool.label
            row["tool_weight_g"] = sample.tool.weight_g
            row["tool_length_mm"] = sample.tool.length_mm
        rows.append(row)
    columns = (
        ["tool_label", "tool_weight_g", "tool_length_mm"]
        + SAMPLE_COLUMNS
        + [f"present_{m}" for m in MODALITIES]
    )
    return pd.DataFrame(rows, columns=columns)


def frame_to_samples(df):
    """Inverse of :func:`samples_to_frame`."""
    samples = []
    values = df[SAMPLE_COLUMNS].to_numpy(dtype=float)
    presence = df[[f"present_{m}" for m in MODALITIES]].to_numpy(dtype=bool)
    for i, (_, row) in enumerate(df.iterrows()):
        tool = None
        if "tool_weight_g" in df and pd.notna(row["tool_weight_g"]):
            tool = ToolState(float(row["tool_weight_g"]), float(row["tool_length_mm"]))
        samples.append(
            StateSample.from_vector(
                values[i], present=tuple(bool(p) for p in presence[i]), tool=tool
            )
        )
    return samples
