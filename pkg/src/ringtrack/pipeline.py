"""The five pipeline stages behind the CLI: simgen, train, track, eval, plot.

Each stage reads and writes plain files so stages can be rerun or swapped
independently. Every stage is deterministic given its seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import dataset as ds
from . import neuralnet as nn
from . import tracker as tr
from .config import fingerprint
from .svgplot import render_svg

TRAJ_HEADER = ["t", "x_true", "y_true", "x_nn", "y_nn", "x_pf", "y_pf"]

Log = Callable[[str], None]


class TrajectoryError(ValueError):
    pass


def _quiet(_msg: str) -> None:
    pass


# --- simgen -------------------------------------------------------------------

def simgen(cfg: dict, episodes: int, ticks: int, seed: int, out_path, log: Log = _quiet) -> ds.Dataset:
    """Simulate ``episodes`` x ``ticks`` and write the recorded samples as CSV."""
    if episodes < 0 or ticks < 0:
        raise ValueError("episodes and ticks must be >= 0")
    parts = []
    for e in range(episodes):
        part = ds.record_episode(cfg, seed, e, ticks)
        frac = float(part.valid_mask().mean()) if len(part) else 0.0
        log(json.dumps({"episode": e, "ticks": ticks, "human_visible_fraction": round(frac, 4)}))
        parts.append(part)
    meta = {"seed": seed, "config": fingerprint(cfg), "episodes": episodes, "ticks": ticks}
    data = ds.Dataset.concat(parts, meta) if parts else ds.Dataset.empty(meta)
    ds.save(data, out_path)
    return data


# --- train --------------------------------------------------------------------

def prepare_training_set(train: ds.Dataset, cfg: dict, rng: np.random.Generator) -> ds.Dataset:
    """Noisy copy of the usable training rows plus augmentation replicas.

    Rows without any human return are dropped: the network is never asked
    about them.
    """
    usable = train.take(train.valid_mask())
    if len(usable) == 0:
        raise ds.DatasetError("training partition has no samples with a human return")
    sig = (cfg["dataset.sigma_range"], cfg["dataset.sigma_angle"], cfg["dataset.sigma_gt"])
    noisy = ds.add_noise_batch(usable, *sig, rng)
    full = ds.augment(usable, cfg["dataset.augment_copies"], rng, *sig)
    return ds.Dataset.concat([noisy, full.take(slice(len(usable), None))], usable.meta)


@dataclass
class TrainResult:
    model: nn.MlpModel
    history: nn.History
    test: ds.Dataset
    test_rmse: float | None


def train(data_path, cfg: dict, model_out, seed: int, history_out=None, test_out=None,
          log: Log = _quiet) -> TrainResult:
    data = ds.load(data_path)
    if len(data) == 0:
        raise ds.DatasetError(f"{data_path}: dataset is empty")
    train_part, test_part = ds.split(data, cfg["dataset.test_fraction"], seed)
    rng = np.random.default_rng([seed, 1])
    fit = prepare_training_set(train_part, cfg, rng)
    val = test_part.take(test_part.valid_mask())

    model = nn.model_from_config(cfg, np.random.default_rng([seed, 2]), ds.N_FEATURES)
    tcfg = nn.TrainConfig.from_config(cfg, seed)

    def emit(row: dict) -> None:
        log(json.dumps({k: (round(v, 6) if isinstance(v, float) else v) for k, v in row.items()}))

    model, history = nn.train(model, ds.normalize(fit.z), fit.y,
                              ds.normalize(val.z) if len(val) else None, val.y if len(val) else None,
                              tcfg, log=emit)
    nn.save_model(model, model_out)
    history_out = Path(history_out) if history_out else Path(str(model_out) + ".history.csv")
    history_out.write_text(history.to_csv(), encoding="utf-8")
    if test_out is not None:
        ds.save(ds.Dataset(test_part.t, test_part.z, test_part.y, {**data.meta, "split": "test", "split_seed": seed}),
                test_out)
    test_rmse = nn.loss_rmse(nn.forward(model, ds.normalize(val.z)), val.y) if len(val) else None
    return TrainResult(model, history, test_part, test_rmse)


# --- track --------------------------------------------------------------------

@dataclass
class Trajectory:
    t: np.ndarray
    truth: np.ndarray
    nn: np.ndarray      # NaN rows where the input was invalid
    pf: np.ndarray
    meta: dict

    @property
    def nn_valid(self) -> np.ndarray:
        return ~np.isnan(self.nn[:, 0])


def track_dataset(model: nn.MlpModel, data: ds.Dataset, cfg: dict, particles: int, seed: int) -> Trajectory:
    """Run the filter over the samples in time order.

    Samples further apart than one tick get prediction-only steps for the
    ticks in between; a gap longer than ``tracker.reset_gap`` starts a new
    episode and the filter is re-initialized over the whole workspace.
    """
    if model.layer_dims[0] != ds.N_FEATURES or model.layer_dims[-1] != 2:
        raise nn.ShapeError(f"model maps {model.layer_dims[0]} -> {model.layer_dims[-1]}, "
                            f"dataset needs {ds.N_FEATURES} -> 2")
    order = np.argsort(data.t, kind="stable")
    data = data.take(order)
    fcfg = tr.FilterConfig.from_config(cfg, n_particles=particles, seed=seed)
    trk = tr.Tracker(fcfg, model)
    prior = tr.UniformDisc(cfg["world.radius"])
    n = len(data)
    nn_out = np.full((n, 2), np.nan)
    pf_out = np.zeros((n, 2))
    prev_t = None
    for i in range(n):
        t = data.t[i]
        if prev_t is None or t - prev_t > cfg["tracker.reset_gap"]:
            trk.initialize(prior)
            ticks = 1
        else:
            ticks = max(1, int(round((t - prev_t) / fcfg.dt)))
        for _ in range(ticks - 1):
            trk.step(None)
        pf_out[i] = trk.step(data.z[i])
        if trk.last_output is not None:
            nn_out[i] = trk.last_output
        prev_t = t
    meta = {"particles": particles, "seed": seed, "samples": n}
    return Trajectory(data.t, data.y, nn_out, pf_out, meta)


def _cell(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def save_trajectory(traj: Trajectory, path) -> None:
    lines = ["# " + " ".join(f"{k}={v}" for k, v in sorted(traj.meta.items())), ",".join(TRAJ_HEADER)]
    for i in range(len(traj.t)):
        cells = [traj.t[i], *traj.truth[i], *traj.nn[i], *traj.pf[i]]
        lines.append(",".join(_cell(c) for c in cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    meta: dict = {}
    rows = []
    header = False
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TrajectoryError(f"{path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                k, sep, v = tok.partition("=")
                if sep:
                    meta[k] = v
            continue
        cells = line.split(",")
        if not header:
            if cells != TRAJ_HEADER:
                raise TrajectoryError(f"{path}:{lineno}: expected header {','.join(TRAJ_HEADER)}")
            header = True
            continue
        if len(cells) != len(TRAJ_HEADER):
            raise TrajectoryError(f"{path}:{lineno}: expected {len(TRAJ_HEADER)} columns, got {len(cells)}")
        try:
            vals = [float(c) if c != "" else math.nan for c in cells]
        except ValueError:
            raise TrajectoryError(f"{path}:{lineno}: non-numeric value") from None
        if any(math.isnan(v) for i, v in enumerate(vals) if i not in (3, 4)):
            raise TrajectoryError(f"{path}:{lineno}: only the network columns may be empty")
        if math.isnan(vals[3]) != math.isnan(vals[4]):
            raise TrajectoryError(f"{path}:{lineno}: x_nn and y_nn must be both present or both empty")
        rows.append(vals)
    if not header:
        raise TrajectoryError(f"{path}: missing header row")
    a = np.array(rows).reshape(-1, len(TRAJ_HEADER))
    return Trajectory(a[:, 0], a[:, 1:3], a[:, 3:5], a[:, 5:7], meta)


def track(model_path, data_path, cfg: dict, particles: int, seed: int, out_path) -> Trajectory:
    model = nn.load_model(model_path)
    data = ds.load(data_path)
    traj = track_dataset(model, data, cfg, particles, seed)
    save_trajectory(traj, out_path)
    return traj


# --- eval / plot ----------------------------------------------------------------

def evaluate(traj: Trajectory) -> dict:
    """RMSE of the network on ticks where it produced an output, and of the filter on every tick."""
    n = len(traj.t)
    if n == 0:
        raise TrajectoryError("empty trajectory")
    valid = traj.nn_valid
    nn_rmse = nn.loss_rmse(traj.nn[valid], traj.truth[valid]) if valid.any() else None
    pf_rmse = nn.loss_rmse(traj.pf, traj.truth)
    return {"rows": n, "valid_fraction": float(valid.mean()), "nn_rmse": nn_rmse, "pf_rmse": pf_rmse,
            "pf_rmse_valid": nn.loss_rmse(traj.pf[valid], traj.truth[valid]) if valid.any() else None}


def plot(traj_path, out_svg) -> str:
    traj = load_trajectory(traj_path)
    svg = render_svg({"truth": traj.truth, "nn": traj.nn[traj.nn_valid], "pf": traj.pf})
    Path(out_svg).write_text(svg, encoding="utf-8")
    return svg
