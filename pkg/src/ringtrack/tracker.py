"""Particle filter over the human's planar state [x, y, vx, vy].

Constant-velocity motion with Gaussian process noise; the measurement is the
network's position estimate with an isotropic Gaussian likelihood. A tick
whose input carries no human return is handled by prediction alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import N_RANGES, NO_RETURN, normalize
from .neuralnet import MlpModel, forward


class FilterStateError(RuntimeError):
    pass


class DegenerateLikelihoodError(ValueError):
    pass


@dataclass(frozen=True)
class FilterConfig:
    n_particles: int = 500
    sigma_pos: float = 0.01
    sigma_vel: float = 0.05
    sigma_meas: float = 0.12
    dt: float = 0.05
    ess_fraction: float = 0.5
    seed: int = 0
    workspace_radius: float | None = None

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be >= 2")
        if min(self.sigma_pos, self.sigma_vel, self.sigma_meas) < 0:
            raise ValueError("noise standard deviations must be >= 0")
        if not 0 < self.ess_fraction <= 1:
            raise ValueError("ess_fraction must be in (0, 1]")

    @classmethod
    def from_config(cls, cfg: dict, n_particles: int | None = None, seed: int | None = None) -> "FilterConfig":
        return cls(cfg["tracker.n_particles"] if n_particles is None else n_particles,
                   cfg["tracker.sigma_pos"], cfg["tracker.sigma_vel"], cfg["tracker.sigma_meas"],
                   cfg["world.dt"], cfg["tracker.ess_fraction"], cfg["seed"] if seed is None else seed,
                   cfg["world.radius"] if cfg["tracker.reflect"] else None)


@dataclass(frozen=True)
class UniformDisc:
    radius: float


@dataclass(frozen=True)
class GaussianPrior:
    mean: tuple[float, float]
    sigma: float


@dataclass(frozen=True)
class ParticleSet:
    states: np.ndarray   # (N, 4): x, y, vx, vy
    weights: np.ndarray  # (N,)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:, 2:]


def initialize(cfg: FilterConfig, prior, rng: np.random.Generator) -> ParticleSet:
    n = cfg.n_particles
    if isinstance(prior, UniformDisc):
        r = prior.radius * np.sqrt(rng.random(n))
        phi = rng.uniform(-math.pi, math.pi, n)
        pos = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    elif isinstance(prior, GaussianPrior):
        pos = np.asarray(prior.mean, dtype=float) + rng.normal(0.0, prior.sigma, (n, 2))
    else:
        raise TypeError(f"unsupported prior {prior!r}")
    vel = rng.normal(0.0, cfg.sigma_vel, (n, 2))
    return ParticleSet(np.column_stack([pos, vel]), np.full(n, 1.0 / n))


def predict(p: ParticleSet, dt: float, rng: np.random.Generator, sigma_pos: float, sigma_vel: float,
            workspace_radius: float | None = None) -> ParticleSet:
    """Constant-velocity step with additive Gaussian noise; weights untouched.

    With ``workspace_radius`` set, particles that leave the workspace disc are
    mirrored back inside and their outward velocity component is flipped, the
    same way the walking human bounces off the boundary.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    s = p.states.copy()
    n = len(p)
    s[:, :2] += s[:, 2:] * dt
    if sigma_pos > 0:
        s[:, :2] += rng.normal(0.0, sigma_pos, (n, 2))
    if sigma_vel > 0:
        s[:, 2:] += rng.normal(0.0, sigma_vel, (n, 2))
    if workspace_radius is not None:
        _reflect_into_disc(s, workspace_radius)
    return ParticleSet(s, p.weights)


def _reflect_into_disc(s: np.ndarray, radius: float) -> None:
    r = np.hypot(s[:, 0], s[:, 1])
    out = r > radius
    if not out.any():
        return
    normal = s[out, :2] / r[out, None]
    # Mirror the overshoot back inside; clamp keeps far outliers in the disc.
    depth = np.minimum(r[out] - radius, radius)
    s[out, :2] = normal * (radius - depth)[:, None]
    vn = np.einsum("ij,ij->i", s[out, 2:], normal)
    s[out, 2:] -= 2 * np.maximum(vn, 0.0)[:, None] * normal


def correct(p: ParticleSet, measurement, sigma_meas: float) -> ParticleSet:
    """Reweight by the Gaussian likelihood of the measured position.

    Computed in log space; if every particle's likelihood is zero in floating
    point the weights restart uniform rather than becoming NaN.
    """
    if sigma_meas <= 0:
        raise DegenerateLikelihoodError("measurement sigma must be > 0")
    z = np.asarray(measurement, dtype=float)
    if z.shape != (2,) or not np.all(np.isfinite(z)):
        raise ValueError(f"measurement must be a finite 2-vector, got {measurement!r}")
    d2 = np.sum((p.positions - z) ** 2, axis=1)
    lik = np.exp(-d2 / (2 * sigma_meas ** 2))
    w = p.weights * lik
    total = w.sum()
    if not total > 0 or not math.isfinite(total):
        w = np.full(len(p), 1.0 / len(p))
    else:
        w = w / total
    return ParticleSet(p.states, w)


def effective_sample_size(p: ParticleSet) -> float:
    return float(1.0 / np.sum(p.weights ** 2))


def systematic_indices(weights: np.ndarray, u: float) -> np.ndarray:
    """Offspring indices for systematic resampling with offset ``u`` in [0, 1)."""
    n = len(weights)
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    positions = (u + np.arange(n)) / n
    return np.searchsorted(cdf, positions, side="right")


def resample(p: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    n = len(p)
    idx = systematic_indices(p.weights, rng.random())
    return ParticleSet(p.states[idx].copy(), np.full(n, 1.0 / n))


def estimate(p: ParticleSet) -> np.ndarray:
    return p.weights @ p.positions


def velocity_estimate(p: ParticleSet) -> np.ndarray:
    return p.weights @ p.velocities


def input_is_valid(z) -> bool:
    """True when the input exists and at least one range slot holds a human return."""
    if z is None:
        return False
    z = np.asarray(z, dtype=float)
    return bool(np.any(z[:N_RANGES] < NO_RETURN))


class Tracker:
    """Validity-gated predict/correct loop driven by network outputs.

    >>> trk = Tracker(FilterConfig(n_particles=100), net)   # doctest: +SKIP
    >>> trk.initialize(UniformDisc(2.5))                    # doctest: +SKIP
    >>> trk.step(z, dt=0.05)                                # doctest: +SKIP
    """

    def __init__(self, cfg: FilterConfig, net: MlpModel | None = None, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.net = net
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.particles: ParticleSet | None = None
        self.last_output: np.ndarray | None = None
        self.last_resampled = False

    def initialize(self, prior) -> ParticleSet:
        self.particles = initialize(self.cfg, prior, self.rng)
        return self.particles

    def step(self, z=None, dt: float | None = None, measurement=None) -> np.ndarray:
        """Advance one tick and return the position estimate.

        ``measurement`` bypasses the network (used when the position estimate
        comes from elsewhere); otherwise a valid ``z`` is fed through it.
        """
        if self.particles is None:
            raise FilterStateError("step() called before initialize()")
        dt = self.cfg.dt if dt is None else dt
        cfg = self.cfg
        self.last_resampled = False
        if measurement is None and input_is_valid(z):
            if self.net is None:
                raise FilterStateError("no network to turn the input into a position")
            measurement = forward(self.net, normalize(np.asarray(z, dtype=float)))
        self.last_output = None if measurement is None else np.asarray(measurement, dtype=float)

        p = predict(self.particles, dt, self.rng, cfg.sigma_pos, cfg.sigma_vel, cfg.workspace_radius)
        if self.last_output is not None:
            p = correct(p, self.last_output, cfg.sigma_meas)
            if effective_sample_size(p) < cfg.ess_fraction * len(p):
                p = resample(p, self.rng)
                self.last_resampled = True
        self.particles = p
        return estimate(p)
