"""Forward kinematics of a 6-DOF arm and the world poses of its lidar units.

Standard Denavit-Hartenberg convention: the transform from frame i-1 to
frame i is ``Rz(theta) Tz(d) Tx(a) Rx(alpha)``. A lidar ring is rigidly
attached to a link frame; each unit looks radially outward from the link
axis along its own local +x.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

UNITS_PER_RING = 16
SENSING_AXIS = np.array([1.0, 0.0, 0.0])


class JointLimitError(ValueError):
    pass


class InvalidRangeError(ValueError):
    pass


@dataclass(frozen=True)
class Transform:
    """Rigid pose: ``x_world = rotation @ x_local + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Transform":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Transform":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: "Transform") -> "Transform":
        return Transform(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Transform":
        rt = self.rotation.T
        return Transform(rt, -rt @ self.translation)

    def apply(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def is_rigid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return bool(np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0)
                    and abs(np.linalg.det(r) - 1.0) <= tol)


def rot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def dh_matrix(a: float, alpha: float, d: float, theta: float) -> np.ndarray:
    """4x4 homogeneous transform for one standard DH row."""
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


@dataclass(frozen=True)
class RobotModel:
    """Arm geometry. ``dh_rows`` has one ``(a, alpha, d, theta_offset)`` row per joint."""

    dh_rows: np.ndarray
    joint_low: np.ndarray
    joint_high: np.ndarray
    base_in_world: Transform = field(default_factory=Transform.identity)
    link_radii: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        rows = np.asarray(self.dh_rows, dtype=float)
        if rows.shape != (6, 4):
            raise ValueError(f"dh_rows must be 6x4, got shape {rows.shape}")
        low = np.asarray(self.joint_low, dtype=float).reshape(6)
        high = np.asarray(self.joint_high, dtype=float).reshape(6)
        bad = np.nonzero(low > high)[0]
        if bad.size:
            raise ValueError(f"joint {bad[0] + 1}: low limit above high limit")
        radii = np.asarray(self.link_radii, dtype=float).reshape(6)
        if np.any(radii < 0):
            raise ValueError("link radii must be nonnegative")
        if abs(self.base_in_world.translation[0]) > 1e-12 or abs(self.base_in_world.translation[1]) > 1e-12:
            raise ValueError("robot base must sit on the world origin (zero x/y translation)")
        object.__setattr__(self, "dh_rows", rows)
        object.__setattr__(self, "joint_low", low)
        object.__setattr__(self, "joint_high", high)
        object.__setattr__(self, "link_radii", radii)

    @classmethod
    def from_config(cls, cfg: dict) -> "RobotModel":
        rows = np.column_stack([cfg["robot.dh_a"], cfg["robot.dh_alpha"],
                                cfg["robot.dh_d"], cfg["robot.dh_theta_offset"]])
        base = Transform(np.eye(3), [0.0, 0.0, cfg["robot.base_z"]])
        return cls(rows, cfg["robot.joint_low"], cfg["robot.joint_high"], base, cfg["robot.link_radii"])

    def check_joints(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (6,):
            raise ValueError(f"joint configuration must have 6 angles, got shape {q.shape}")
        for j in range(6):
            if not self.joint_low[j] <= q[j] <= self.joint_high[j]:
                raise JointLimitError(
                    f"joint {j + 1} = {q[j]:.6g} rad outside limits "
                    f"[{self.joint_low[j]:.6g}, {self.joint_high[j]:.6g}]")
        return q

    def reach(self) -> float:
        """Upper bound on the distance from base to any link origin."""
        a, d = self.dh_rows[:, 0], self.dh_rows[:, 2]
        return float(np.sum(np.abs(a)) + np.sum(np.abs(d)))


@dataclass(frozen=True)
class RingSpec:
    link_index: int
    radius: float
    unit_count: int = UNITS_PER_RING
    fov_half_angle: float = math.radians(12.5)
    max_range: float = 2.0

    def __post_init__(self):
        if not 1 <= self.link_index <= 6:
            raise ValueError(f"ring link index must be in 1..6, got {self.link_index}")
        if self.unit_count != UNITS_PER_RING:
            raise ValueError(f"a ring carries exactly {UNITS_PER_RING} units")
        if self.radius < 0:
            raise ValueError("ring radius must be nonnegative")


def rings_from_config(cfg: dict) -> tuple[RingSpec, ...]:
    half = math.radians(cfg["rings.fov_deg"]) / 2
    return tuple(RingSpec(int(link), float(radius), fov_half_angle=half, max_range=cfg["rings.max_range"])
                 for link, radius in zip(cfg["rings.links"], cfg["rings.radii"]))


def forward_kinematics(model: RobotModel, q) -> list[Transform]:
    """World transform of every link frame, link 1 first."""
    q = model.check_joints(q)
    m = model.base_in_world.matrix()
    links = []
    for (a, alpha, d, offset), theta in zip(model.dh_rows, q):
        m = m @ dh_matrix(a, alpha, d, theta + offset)
        links.append(Transform.from_matrix(m))
    return links


def link_segments(model: RobotModel, q) -> np.ndarray:
    """(6, 2, 3) start/end points of each link, from frame i-1 origin to frame i origin."""
    origins = [model.base_in_world.translation] + [t.translation for t in forward_kinematics(model, q)]
    origins = np.array(origins)
    return np.stack([origins[:-1], origins[1:]], axis=1)


def link_axis(model: RobotModel, link_index: int) -> np.ndarray:
    """Unit direction of link ``link_index`` expressed in its own frame.

    The segment from the previous frame origin, seen from frame i, is
    ``(a, d sin(alpha), d cos(alpha))`` whatever the joint angle. Zero-length
    links fall back to the local x axis.
    """
    a, alpha, d, _ = model.dh_rows[link_index - 1]
    return _ring_frames(float(a), float(alpha), float(d), UNITS_PER_RING, 0.0)[0][0, :, 2].copy()


def _ring_basis(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.eye(3)[int(np.argmin(np.abs(axis)))]
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2


def ring_local_frames(model: RobotModel, ring: RingSpec) -> tuple[np.ndarray, np.ndarray]:
    """Rotations (n, 3, 3) and offsets (n, 3) of every unit relative to its link frame.

    Unit j sits at azimuth 2*pi*(j-1)/n around the link axis; its local +x
    (the sensing axis) points radially outward. These do not depend on the
    joint angles: the ring is rigid on its link.
    """
    a, alpha, d, _ = model.dh_rows[ring.link_index - 1]
    rot, offset = _ring_frames(float(a), float(alpha), float(d), ring.unit_count, ring.radius)
    return rot.copy(), offset.copy()


@functools.lru_cache(maxsize=64)
def _ring_frames(a, alpha, d, unit_count, radius):
    v = np.array([a, d * math.sin(alpha), d * math.cos(alpha)])
    n = np.linalg.norm(v)
    axis = v / n if n >= 1e-12 else SENSING_AXIS.copy()
    e1, e2 = _ring_basis(axis)
    phi = 2 * np.pi * np.arange(unit_count) / unit_count
    radial = np.outer(np.cos(phi), e1) + np.outer(np.sin(phi), e2)
    tangent = np.cross(axis, radial)
    rot = np.stack([radial, tangent, np.broadcast_to(axis, radial.shape)], axis=2)
    return rot, radius * radial


def ring_unit_local(model: RobotModel, ring: RingSpec, unit_index: int) -> Transform:
    if not 1 <= unit_index <= ring.unit_count:
        raise IndexError(f"unit index must be in 1..{ring.unit_count}, got {unit_index}")
    rot, offset = ring_local_frames(model, ring)
    return Transform(rot[unit_index - 1], offset[unit_index - 1])


def lidar_pose(model: RobotModel, q, ring: RingSpec, unit_index: int) -> Transform:
    local = ring_unit_local(model, ring, unit_index)
    return forward_kinematics(model, q)[ring.link_index - 1] @ local


def lidar_frames(model: RobotModel, q, rings: Sequence[RingSpec]) -> tuple[np.ndarray, np.ndarray]:
    """World rotations (48, 3, 3) and positions (48, 3) of all units, ring-major."""
    links = forward_kinematics(model, q)
    rots, pos = [], []
    for ring in rings:
        link = links[ring.link_index - 1]
        r_local, t_local = ring_local_frames(model, ring)
        rots.append(link.rotation @ r_local)
        pos.append(t_local @ link.rotation.T + link.translation)
    return np.concatenate(rots), np.concatenate(pos)


def all_lidar_poses(model: RobotModel, q, rings: Sequence[RingSpec]) -> list[Transform]:
    """Poses of every unit, ring-major then unit-minor (48 for three rings)."""
    rots, pos = lidar_frames(model, q, rings)
    return [Transform(r, t) for r, t in zip(rots, pos)]


def observation_to_world(pose: Transform, distance: float, max_range: float = 2.0) -> np.ndarray:
    if not 0 < distance <= max_range:
        raise InvalidRangeError(f"range {distance!r} outside (0, {max_range}]")
    return pose.translation + distance * (pose.rotation @ SENSING_AXIS)
