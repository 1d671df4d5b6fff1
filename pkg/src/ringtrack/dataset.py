"""Time-synchronized training samples and their CSV persistence.

A sample's input vector has 54 entries: the 48 unit ranges (ring-major,
unit-minor) followed by the 6 joint angles. Slots without a human return hold
the sentinel ``NO_RETURN`` (the lidar's maximum range), so "nothing seen" and
"something far away" sit at the same end of the scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

N_RINGS = 3
N_UNITS = 16
N_RANGES = N_RINGS * N_UNITS
N_JOINTS = 6
N_FEATURES = N_RANGES + N_JOINTS
NO_RETURN = 2.0

HEADER = (["t"]
          + [f"r_{i}_{j}" for i in range(1, N_RINGS + 1) for j in range(1, N_UNITS + 1)]
          + [f"theta_{k}" for k in range(1, N_JOINTS + 1)]
          + ["x_h", "y_h"])


class DatasetError(ValueError):
    pass


class DatasetParseError(DatasetError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class TrainingSample:
    z: np.ndarray
    y: np.ndarray
    t: float

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if z.shape != (N_FEATURES,):
            raise DatasetError(f"input vector must have {N_FEATURES} entries, got {z.size}")
        if y.shape != (2,):
            raise DatasetError(f"target must have 2 entries, got {y.size}")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", float(self.t))

    @property
    def ranges(self) -> np.ndarray:
        return self.z[:N_RANGES]

    @property
    def angles(self) -> np.ndarray:
        return self.z[N_RANGES:]

    def has_return(self) -> bool:
        return bool(np.any(self.ranges < NO_RETURN))


@dataclass(frozen=True)
class Dataset:
    """Column-stacked samples: ``t`` (n,), ``z`` (n, 54), ``y`` (n, 2)."""

    t: np.ndarray
    z: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        z = np.asarray(self.z, dtype=float).reshape(-1, N_FEATURES)
        y = np.asarray(self.y, dtype=float).reshape(-1, 2)
        if not len(t) == len(z) == len(y):
            raise DatasetError(f"column lengths differ: t={len(t)} z={len(z)} y={len(y)}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "meta", {str(k): str(v) for k, v in self.meta.items()})

    @classmethod
    def empty(cls, meta: dict | None = None) -> "Dataset":
        return cls(np.zeros(0), np.zeros((0, N_FEATURES)), np.zeros((0, 2)), meta or {})

    @classmethod
    def from_samples(cls, samples: Sequence[TrainingSample], meta: dict | None = None) -> "Dataset":
        if not samples:
            return cls.empty(meta)
        return cls([s.t for s in samples], [s.z for s in samples], [s.y for s in samples], meta or {})

    @classmethod
    def concat(cls, parts: Sequence["Dataset"], meta: dict | None = None) -> "Dataset":
        if not parts:
            return cls.empty(meta)
        return cls(np.concatenate([p.t for p in parts]), np.concatenate([p.z for p in parts]),
                   np.concatenate([p.y for p in parts]), meta if meta is not None else parts[0].meta)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> TrainingSample:
        return TrainingSample(self.z[i], self.y[i], self.t[i])

    def __iter__(self) -> Iterator[TrainingSample]:
        return (self[i] for i in range(len(self)))

    def take(self, idx) -> "Dataset":
        return Dataset(self.t[idx], self.z[idx], self.y[idx], self.meta)

    def valid_mask(self) -> np.ndarray:
        """Rows with at least one human return."""
        return np.any(self.z[:, :N_RANGES] < NO_RETURN, axis=1)

    def check(self, workspace_radius: float | None = None, ordered: bool = False) -> None:
        r = self.z[:, :N_RANGES]
        if np.any((r < 0) | (r > NO_RETURN)) or not np.all(np.isfinite(self.z)):
            raise DatasetError(f"range entries must lie in [0, {NO_RETURN}]")
        if workspace_radius is not None and np.any(np.hypot(self.y[:, 0], self.y[:, 1]) > workspace_radius + 1e-9):
            raise DatasetError("target outside the workspace disc")
        if ordered and np.any(np.diff(self.t) <= 0):
            raise DatasetError("timestamps must be strictly increasing")


def record(w, filtered_obs: Iterable, q) -> TrainingSample:
    """Pack one tick: human-associated ranges into their slots, angles, true position."""
    z = np.full(N_FEATURES, NO_RETURN)
    for o in filtered_obs:
        z[(o.ring - 1) * N_UNITS + (o.unit - 1)] = o.range
    z[N_RANGES:] = q
    return TrainingSample(z, [w.human.x_h, w.human.y_h], w.time)


def run_episode(cfg: dict, seed: int, episode: int, ticks: int):
    """Yield ``(world, observations)`` for each tick of one simulated episode.

    Each episode draws from its own generator (seed, episode) so episodes are
    independent and can be produced in any order. Episode ``e`` starts at
    ``e * (ticks * dt + episode_gap)`` so timestamps increase across episodes.
    """
    from .simworld import Simulator

    dt = cfg["world.dt"]
    t0 = episode * (ticks * dt + cfg["world.episode_gap"])
    sim = Simulator(cfg, np.random.default_rng([seed, episode]), t0=t0)
    for k in range(ticks):
        if k:
            sim.step()
        yield sim.state, sim.observe()


def record_episode(cfg: dict, seed: int, episode: int, ticks: int) -> Dataset:
    from .simworld import associate

    samples = [record(w, associate(obs), w.q) for w, obs in run_episode(cfg, seed, episode, ticks)]
    return Dataset.from_samples(samples)


def _check_sigmas(*sigmas: float) -> None:
    for s in sigmas:
        if s < 0 or not math.isfinite(s):
            raise ValueError(f"noise standard deviation must be finite and >= 0, got {s!r}")


def add_noise(s: TrainingSample, sigma_range: float, sigma_angle: float, sigma_gt: float,
              rng: np.random.Generator) -> TrainingSample:
    """Gaussian jitter on ranges, angles and target; sentinel slots are left as they are."""
    _check_sigmas(sigma_range, sigma_angle, sigma_gt)
    z = s.z.copy()
    hit = z[:N_RANGES] < NO_RETURN
    r = z[:N_RANGES]
    r[hit] = np.clip(r[hit] + rng.normal(0.0, sigma_range, hit.sum()), 0.0, NO_RETURN)
    z[N_RANGES:] += rng.normal(0.0, sigma_angle, N_JOINTS)
    y = s.y + rng.normal(0.0, sigma_gt, 2)
    return TrainingSample(z, y, s.t)


def add_noise_batch(d: Dataset, sigma_range: float, sigma_angle: float, sigma_gt: float,
                    rng: np.random.Generator) -> Dataset:
    """``add_noise`` applied row by row, vectorized."""
    _check_sigmas(sigma_range, sigma_angle, sigma_gt)
    z = d.z.copy()
    r = z[:, :N_RANGES]
    hit = r < NO_RETURN
    r[hit] = np.clip(r[hit] + rng.normal(0.0, sigma_range, hit.sum()), 0.0, NO_RETURN)
    z[:, N_RANGES:] += rng.normal(0.0, sigma_angle, (len(d), N_JOINTS))
    y = d.y + rng.normal(0.0, sigma_gt, d.y.shape)
    return Dataset(d.t, z, y, d.meta)


def augment(d: Dataset, copies: int, rng: np.random.Generator, sigma_range: float = 0.01,
            sigma_angle: float = 0.002, sigma_gt: float = 0.02) -> Dataset:
    """Originals first, then ``copies`` freshly noised replicas of the whole set."""
    if copies < 0:
        raise ValueError("copies must be >= 0")
    parts = [d] + [add_noise_batch(d, sigma_range, sigma_angle, sigma_gt, rng) for _ in range(copies)]
    return Dataset.concat(parts, d.meta)


def split(d: Dataset, test_fraction: float, seed) -> tuple[Dataset, Dataset]:
    if len(d) == 0:
        raise DatasetError("cannot split an empty dataset")
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(d))
    n_test = int(round(test_fraction * len(d)))
    return d.take(np.sort(order[n_test:])), d.take(np.sort(order[:n_test]))


def normalize(z: np.ndarray) -> np.ndarray:
    """Ranges to [0, 1], angles to [-1, 1] (angles beyond +-pi are clamped)."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    out[..., :N_RANGES] = z[..., :N_RANGES] / NO_RETURN
    out[..., N_RANGES:] = np.clip(z[..., N_RANGES:] / math.pi, -1.0, 1.0)
    return out


def denormalize(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    out[..., :N_RANGES] = u[..., :N_RANGES] * NO_RETURN
    out[..., N_RANGES:] = u[..., N_RANGES:] * math.pi
    return out


# --- persistence --------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def save(d: Dataset, path: str | Path) -> None:
    lines = []
    if d.meta:
        lines.append("# " + " ".join(f"{k}={v}" for k, v in sorted(d.meta.items())))
    lines.append(",".join(HEADER))
    rows = np.column_stack([d.t, d.z, d.y]) if len(d) else np.zeros((0, len(HEADER)))
    for row in rows.tolist():
        lines.append(",".join(map(_fmt, row)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _parse_meta(text: str) -> dict:
    meta = {}
    for token in text.split():
        key, sep, value = token.partition("=")
        if sep:
            meta[key] = value
    return meta


def load(path: str | Path) -> Dataset:
    path = Path(path)
    meta: dict = {}
    header_seen = False
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if line.startswith("#"):
                if header_seen:
                    raise DatasetParseError(path, lineno, "comment line after header")
                meta.update(_parse_meta(line[1:]))
                continue
            cells = line.split(",")
            if not header_seen:
                if cells != HEADER:
                    n_feat = len(cells) - 3
                    raise DatasetParseError(
                        path, lineno, f"bad header: expected {len(HEADER)} columns "
                        f"({N_FEATURES} feature columns), got {len(cells)} ({n_feat} feature columns)")
                header_seen = True
                continue
            if len(cells) != len(HEADER):
                raise DatasetParseError(
                    path, lineno, f"expected {len(HEADER)} columns ({N_FEATURES} feature columns), "
                    f"got {len(cells)} ({len(cells) - 3} feature columns)")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise DatasetParseError(path, lineno, f"non-numeric value: {exc}") from None
    if not header_seen:
        raise DatasetParseError(path, 1, "missing header row")
    if not rows:
        return Dataset.empty(meta)
    a = np.array(rows)
    d = Dataset(a[:, 0], a[:, 1:1 + N_FEATURES], a[:, 1 + N_FEATURES:], meta)
    try:
        d.check()
    except DatasetError as exc:
        raise DatasetParseError(path, 0, str(exc)) from None
    return d
