"""Workspace simulation: a walking human, a randomly moving arm, and lidar returns.

The human is a vertical cylinder standing on the floor; each arm link is a
capsule around the segment between consecutive DH frame origins. Lidar
returns are found analytically (ray against cylinder / capsule), which also
gives the robot-vs-human label used for self-occlusion filtering.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .kinematics import RingSpec, RobotModel, lidar_frames, link_segments

NO_HIT = None


class Label(enum.IntEnum):
    NONE = 0
    HUMAN = 1
    ROBOT = 2


class InvalidDirectionError(ValueError):
    pass


@dataclass(frozen=True)
class HumanState:
    x_h: float
    y_h: float
    heading: float
    speed: float

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x_h, self.y_h, 0.0])


@dataclass(frozen=True)
class HumanGeometry:
    body_radius: float = 0.25
    body_height: float = 1.7

    def __post_init__(self):
        if self.body_radius <= 0 or self.body_height <= 0:
            raise ValueError("human body radius and height must be positive")


@dataclass(frozen=True)
class LidarObservation:
    ring: int
    unit: int
    range: float | None
    hit_point_world: np.ndarray | None
    label: Label


@dataclass(frozen=True)
class WorldState:
    time: float
    q: np.ndarray
    q_target: np.ndarray
    human: HumanState


@dataclass(frozen=True)
class Workspace:
    radius: float = 2.5
    keepout_radius: float = 0.0


@dataclass(frozen=True)
class WalkParams:
    p_turn: float = 0.05
    max_turn: float = math.pi / 2


# --- ray geometry -----------------------------------------------------------
#
# Every primitive is a convex solid. Along a ray it occupies one interval
# [t_in, t_out]; the first surface crossing at t > 0 is t_in when the origin is
# outside and t_out when it is inside. All routines are vectorized over rays.

def _quadratic_interval(a, b, c):
    """Interval where a t^2 + b t + c <= 0 (a >= 0). Empty -> (inf, -inf)."""
    t0 = np.full(np.shape(c), np.inf)
    t1 = np.full(np.shape(c), -np.inf)
    flat = a < 1e-18
    inside_flat = flat & (c <= 0)
    t0[inside_flat], t1[inside_flat] = -np.inf, np.inf
    disc = b * b - 4 * a * c
    ok = ~flat & (disc >= 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    # Numerically stable root pair.
    q = -0.5 * (b + np.copysign(sq, b))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(ok, q / np.where(ok, a, 1.0), np.inf)
        r2 = np.where(ok & (q != 0), c / np.where(q != 0, q, 1.0), r1)
    t0 = np.where(ok, np.minimum(r1, r2), t0)
    t1 = np.where(ok, np.maximum(r1, r2), t1)
    return t0, t1


def _slab_interval(o, d, lo, hi):
    """Interval where lo <= o + t d <= hi, per ray (scalar axis components)."""
    t0 = np.full(np.shape(o), -np.inf)
    t1 = np.full(np.shape(o), np.inf)
    flat = np.abs(d) < 1e-18
    outside = flat & ((o < lo) | (o > hi))
    t0[outside], t1[outside] = np.inf, -np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - o) / d
        tb = (hi - o) / d
    t0 = np.where(flat, t0, np.minimum(ta, tb))
    t1 = np.where(flat, t1, np.maximum(ta, tb))
    return t0, t1


def _first_crossing(t0, t1):
    hit = t0 <= t1
    out = np.where(hit & (t0 > 0), t0, np.where(hit & (t1 > 0), t1, np.inf))
    return out


def _cylinder_interval(origins, dirs, center_xy, radius, height):
    dx = origins[:, 0] - center_xy[0]
    dy = origins[:, 1] - center_xy[1]
    ux, uy = dirs[:, 0], dirs[:, 1]
    a0, a1 = _quadratic_interval(ux * ux + uy * uy, 2 * (dx * ux + dy * uy), dx * dx + dy * dy - radius * radius)
    b0, b1 = _slab_interval(origins[:, 2], dirs[:, 2], 0.0, height)
    return np.maximum(a0, b0), np.minimum(a1, b1)


def ray_cylinder(origins, dirs, center_xy, radius: float, height: float) -> np.ndarray:
    """First crossing distance of each ray with a vertical cylinder on the floor (inf if none)."""
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    return _first_crossing(*_cylinder_interval(origins, dirs, center_xy, radius, height))


def _sphere_interval(origins, dirs, centers, radii):
    """Intervals of n rays against m spheres, shape (n, m)."""
    oc = origins[:, None, :] - centers[None, :, :]
    a = np.einsum("ij,ij->i", dirs, dirs)[:, None]
    b = 2 * np.einsum("imj,ij->im", oc, dirs)
    c = np.einsum("imj,imj->im", oc, oc) - radii * radii
    return _quadratic_interval(np.broadcast_to(a, c.shape), b, c)


def _capsule_interval(origins, dirs, p0, p1, radii):
    """Intervals of n rays against m capsules (segments p0[k]-p1[k]), shape (n, m).

    The capsule is the union of two end spheres and a finite cylinder; the
    union is convex, so the ray interval is the hull of the piece intervals.
    """
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    p1 = np.atleast_2d(np.asarray(p1, dtype=float))
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(p0),))
    s0, s1 = _sphere_interval(origins, dirs, p0, radii)
    e0, e1 = _sphere_interval(origins, dirs, p1, radii)
    lo = np.minimum(s0, e0)
    hi = np.maximum(np.where(s0 <= s1, s1, -np.inf), np.where(e0 <= e1, e1, -np.inf))

    axis = p1 - p0
    length = np.linalg.norm(axis, axis=1)
    has_body = length > 1e-12
    u = axis / np.where(has_body, length, 1.0)[:, None]
    oc = origins[:, None, :] - p0[None, :, :]
    o_ax = np.einsum("imj,mj->im", oc, u)
    d_ax = dirs @ u.T
    o_perp = oc - o_ax[..., None] * u[None]
    d_perp = dirs[:, None, :] - d_ax[..., None] * u[None]
    a = np.einsum("imj,imj->im", d_perp, d_perp)
    b = 2 * np.einsum("imj,imj->im", o_perp, d_perp)
    c = np.einsum("imj,imj->im", o_perp, o_perp) - radii * radii
    c0, c1 = _quadratic_interval(a, b, c)
    z0, z1 = _slab_interval(o_ax, d_ax, 0.0, length)
    k0, k1 = np.maximum(c0, z0), np.minimum(c1, z1)
    body = (k0 <= k1) & has_body
    lo = np.where(body, np.minimum(lo, k0), lo)
    hi = np.where(body, np.maximum(hi, k1), hi)
    return lo, hi


def ray_capsule(origins, dirs, p0, p1, radius: float) -> np.ndarray:
    """First crossing distance of each ray with the capsule around segment p0-p1 (inf if none)."""
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    return _first_crossing(*_capsule_interval(origins, dirs, p0, p1, radius))[:, 0]


def cast_rays(origins, dirs, human_xy, geom: HumanGeometry, segments, link_radii, max_range: float = 2.0):
    """Nearest hit per ray among the human cylinder and robot capsules.

    Returns ``(distance, label)`` arrays; misses have distance inf and label
    NONE. Equal distances go to the robot. A ray starting inside a robot
    capsule is self-occluded: only robot surfaces count for it.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    n = len(origins)
    segments = np.asarray(segments, dtype=float)
    link_radii = np.asarray(link_radii, dtype=float)
    solid = link_radii > 0
    t_robot = np.full(n, np.inf)
    buried = np.zeros(n, dtype=bool)
    if solid.any():
        lo, hi = _capsule_interval(origins, dirs, segments[solid, 0], segments[solid, 1], link_radii[solid])
        t_robot = _first_crossing(lo, hi).min(axis=1)
        buried = ((lo <= 0) & (hi >= 0)).any(axis=1)
    t_human = ray_cylinder(origins, dirs, human_xy, geom.body_radius, geom.body_height)
    t_human[buried] = np.inf

    human_wins = t_human < t_robot
    dist = np.where(human_wins, t_human, t_robot)
    label = np.where(human_wins, Label.HUMAN, Label.ROBOT).astype(int)
    miss = ~(dist <= max_range)
    dist[miss] = np.inf
    label[miss] = Label.NONE
    return dist, label


def cast_ray(origin, direction, w: WorldState, geom: HumanGeometry, model: RobotModel,
             max_range: float = 2.0) -> tuple[float | None, Label]:
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise InvalidDirectionError(f"ray direction must be unit length, |d| = {np.linalg.norm(direction)!r}")
    segments = link_segments(model, w.q)
    dist, label = cast_rays(origin, direction, (w.human.x_h, w.human.y_h), geom, segments,
                            model.link_radii, max_range)
    if label[0] == Label.NONE:
        return NO_HIT, Label.NONE
    return float(dist[0]), Label(int(label[0]))


# --- sensing ----------------------------------------------------------------

def cone_directions(cone_rays: int, half_angle: float) -> np.ndarray:
    """Unit directions sampling a lidar cone in the unit's frame (+x is the axis)."""
    dirs = [np.array([1.0, 0.0, 0.0])]
    rim = cone_rays - 1
    for k in range(rim):
        psi = 2 * math.pi * k / rim
        dirs.append(np.array([math.cos(half_angle),
                              math.sin(half_angle) * math.cos(psi),
                              math.sin(half_angle) * math.sin(psi)]))
    return np.array(dirs)


def sense(w: WorldState, rings: Sequence[RingSpec], geom: HumanGeometry, model: RobotModel,
          cone_rays: int = 5, human_present: bool = True) -> list[LidarObservation]:
    """One observation per unit; range is the nearest hit over the unit's cone rays."""
    rots, positions = lidar_frames(model, w.q, rings)
    k = cone_rays
    n_units = len(positions)
    max_range = rings[0].max_range
    local_dirs = cone_directions(k, rings[0].fov_half_angle)
    origins = np.repeat(positions, k, axis=0)
    dirs = np.einsum("uij,kj->uki", rots, local_dirs).reshape(-1, 3)
    segments = link_segments(model, w.q)
    human_xy = (w.human.x_h, w.human.y_h) if human_present else (1e9, 1e9)
    dist, label = cast_rays(origins, dirs, human_xy, geom, segments, model.link_radii, max_range)

    dist = dist.reshape(n_units, k)
    label = label.reshape(n_units, k)
    best = np.argmin(dist, axis=1)

    obs = []
    idx = 0
    for ring_no, ring in enumerate(rings, 1):
        for unit in range(1, ring.unit_count + 1):
            b = best[idx]
            d = dist[idx, b]
            if np.isfinite(d):
                point = origins[idx * k + b] + d * dirs[idx * k + b]
                obs.append(LidarObservation(ring_no, unit, float(d), point, Label(int(label[idx, b]))))
            else:
                obs.append(LidarObservation(ring_no, unit, NO_HIT, None, Label.NONE))
            idx += 1
    return obs


def associate(obs: Sequence[LidarObservation]) -> list[LidarObservation]:
    """Keep only returns attributed to the human; self-hits and misses are dropped."""
    return [o for o in obs if o.label == Label.HUMAN]


# --- motion -----------------------------------------------------------------

def _reflect(heading: float, normal: np.ndarray) -> float:
    d = np.array([math.cos(heading), math.sin(heading)])
    r = d - 2 * (d @ normal) * normal
    return math.atan2(r[1], r[0])


def step_human(h: HumanState, dt: float, rng: np.random.Generator,
               walk: WalkParams = WalkParams(), space: Workspace = Workspace()) -> HumanState:
    """Random-turn walk inside an annulus; the boundary reflects the heading inward."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = h.x_h + h.speed * dt * math.cos(h.heading)
    y = h.y_h + h.speed * dt * math.sin(h.heading)
    heading = h.heading
    turn = rng.random()
    delta = rng.uniform(-walk.max_turn, walk.max_turn)
    if turn < walk.p_turn:
        heading += delta

    r = math.hypot(x, y)
    if r > space.radius:
        n = np.array([x, y]) / r
        d = np.array([math.cos(heading), math.sin(heading)])
        if d @ n > 0:
            heading = _reflect(heading, n)
        x, y = n * space.radius
    elif r < space.keepout_radius:
        n = np.array([x, y]) / r if r > 0 else np.array([1.0, 0.0])
        d = np.array([math.cos(heading), math.sin(heading)])
        if d @ n < 0:
            heading = _reflect(heading, n)
        x, y = n * space.keepout_radius
    heading = math.atan2(math.sin(heading), math.cos(heading))
    return HumanState(float(x), float(y), heading, h.speed)


def draw_joint_target(model: RobotModel, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(model.joint_low, model.joint_high)


def step_robot(w: WorldState, dt: float, rng: np.random.Generator, model: RobotModel,
               max_speed: float = 0.6, reach_tol: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    """Rate-limited joint controller chasing uniformly drawn targets.

    At the target (every joint within ``reach_tol``) a fresh target is drawn
    and the arm holds still for that tick.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = np.asarray(w.q, dtype=float)
    target = np.asarray(w.q_target, dtype=float)
    if np.all(np.abs(target - q) <= reach_tol):
        return q.copy(), draw_joint_target(model, rng)
    max_step = max_speed * dt
    q_new = q + np.clip(target - q, -max_step, max_step)
    return np.clip(q_new, model.joint_low, model.joint_high), target.copy()


class Simulator:
    """One episode of the workspace, advanced tick by tick from a seeded RNG."""

    def __init__(self, cfg: dict, rng: np.random.Generator, t0: float = 0.0):
        from .kinematics import rings_from_config

        self.model = RobotModel.from_config(cfg)
        self.rings = rings_from_config(cfg)
        self.geom = HumanGeometry(cfg["human.radius"], cfg["human.height"])
        self.walk = WalkParams(cfg["human.p_turn"], cfg["human.max_turn"])
        self.space = Workspace(cfg["world.radius"], cfg["world.keepout_radius"])
        self.dt = cfg["world.dt"]
        self.cone_rays = cfg["rings.cone_rays"]
        self.max_speed = cfg["robot.max_joint_speed"]
        self.reach_tol = cfg["robot.reach_tolerance"]
        self.rng = rng
        self.t0 = t0
        self.tick = 0

        r = math.sqrt(rng.uniform(self.space.keepout_radius ** 2, self.space.radius ** 2))
        phi = rng.uniform(-math.pi, math.pi)
        human = HumanState(r * math.cos(phi), r * math.sin(phi), rng.uniform(-math.pi, math.pi), cfg["human.speed"])
        q = draw_joint_target(self.model, rng)
        self.state = WorldState(t0, q, draw_joint_target(self.model, rng), human)

    def observe(self) -> list[LidarObservation]:
        return sense(self.state, self.rings, self.geom, self.model, self.cone_rays)

    def step(self) -> WorldState:
        w = self.state
        human = step_human(w.human, self.dt, self.rng, self.walk, self.space)
        q, target = step_robot(w, self.dt, self.rng, self.model, self.max_speed, self.reach_tol)
        self.tick += 1
        self.state = replace(w, time=self.t0 + self.tick * self.dt, q=q, q_target=target, human=human)
        return self.state
