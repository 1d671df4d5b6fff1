"""Fully connected regressor from the 54-entry input vector to (x_h, y_h).

Written directly on numpy: forward pass, root-mean-square loss, exact
backpropagation and a Nesterov-momentum SGD trainer. Dropout is inverted
(scaled by 1/(1-p) while training) and only sits on the last hidden layer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")
MODEL_FORMAT = "ringtrack-mlp"


class ShapeError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class MlpModel:
    """``weights[l]`` has shape (dims[l+1], dims[l]); the last activation is identity."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    dropout_rate: float = 0.0

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        self.activations = list(self.activations)
        self.dropout_rate = float(self.dropout_rate)
        self.validate()

    def validate(self) -> None:
        n = len(self.layer_dims) - 1
        if n < 1:
            raise ShapeError("need at least an input and an output layer")
        if not (len(self.weights) == len(self.biases) == len(self.activations) == n):
            raise ShapeError(f"expected {n} weight/bias/activation entries, got "
                             f"{len(self.weights)}/{len(self.biases)}/{len(self.activations)}")
        for l, (w, b) in enumerate(zip(self.weights, self.biases), 1):
            want = (self.layer_dims[l], self.layer_dims[l - 1])
            if w.shape != want:
                raise ShapeError(f"layer {l}: weight shape {w.shape}, expected {want}")
            if b.shape != (want[0],):
                raise ShapeError(f"layer {l}: bias shape {b.shape}, expected ({want[0]},)")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ShapeError(f"unknown activation {a!r}")
        if self.activations[-1] != "identity":
            raise ShapeError("output layer activation must be identity")
        if not 0 <= self.dropout_rate < 1:
            raise ShapeError("dropout rate must be in [0, 1)")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def copy(self) -> "MlpModel":
        return MlpModel(self.layer_dims, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.activations, self.dropout_rate)

    def with_params(self, params: list[np.ndarray]) -> "MlpModel":
        n = self.n_layers
        return MlpModel(self.layer_dims, params[:n], params[n:], self.activations, self.dropout_rate)


def init_model(layer_dims, hidden_activations, dropout_rate: float, rng: np.random.Generator) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(list(layer_dims), weights, biases, list(hidden_activations) + ["identity"], dropout_rate)


def model_from_config(cfg: dict, rng: np.random.Generator, n_inputs: int = 54) -> MlpModel:
    dims = [n_inputs] + list(cfg["net.hidden"]) + [2]
    return init_model(dims, cfg["net.activations"], cfg["net.dropout"], rng)


def _act(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    return x


def _act_grad(name: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (pre > 0).astype(float)
    if name == "tanh":
        return 1.0 - post * post
    return np.ones_like(pre)


def dropout_mask(m: MlpModel, n: int, rng: np.random.Generator) -> np.ndarray | None:
    """Inverted-dropout mask for the last hidden layer (entries 0 or 1/(1-p))."""
    if m.dropout_rate == 0 or m.n_layers < 2:
        return None
    keep = 1.0 - m.dropout_rate
    return (rng.random((n, m.layer_dims[-2])) < keep) / keep


def _forward_cache(m: MlpModel, z: np.ndarray, mask: np.ndarray | None):
    h = z
    cache = []
    for l, (w, b, act) in enumerate(zip(m.weights, m.biases, m.activations)):
        if h.shape[-1] != w.shape[1]:
            raise ShapeError(f"layer {l + 1}: input has {h.shape[-1]} features, weight expects {w.shape[1]}")
        pre = h @ w.T + b
        post = _act(act, pre)
        cache.append((h, pre, post))
        h = post
        if mask is not None and l == m.n_layers - 2:
            h = h * mask
    return h, cache


def forward(m: MlpModel, z, train: bool = False, rng: np.random.Generator | None = None,
            mask: np.ndarray | None = None) -> np.ndarray:
    """Network output for one input (54,) or a batch (n, 54).

    ``train=True`` samples a fresh dropout mask from ``rng`` unless ``mask``
    is given; evaluation mode ignores dropout entirely.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zb = z[None, :] if single else z
    if train and mask is None:
        if rng is None:
            raise ValueError("train-mode forward needs an rng for the dropout mask")
        mask = dropout_mask(m, len(zb), rng)
    out, _ = _forward_cache(m, zb, mask if train else None)
    return out[0] if single else out


def loss_rmse(pred, truth) -> float:
    """sqrt of the mean squared Euclidean error over the batch."""
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if pred.shape != truth.shape:
        raise ValueError(f"prediction batch {pred.shape} and truth batch {truth.shape} differ")
    if len(pred) == 0:
        raise ValueError("empty batch")
    return float(np.sqrt(np.mean(np.sum((pred - truth) ** 2, axis=1))))


def gradients(m: MlpModel, z, y_true, mask: np.ndarray | None = None):
    """Exact gradient of the RMSE loss; returns (loss, dW list, dB list).

    At zero loss the gradient is defined as zero. Pass a fixed ``mask`` to
    differentiate the train-mode network; ``None`` differentiates eval mode.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float))
    out, cache = _forward_cache(m, z, mask)
    loss = loss_rmse(out, y_true)
    d_w = [np.zeros_like(w) for w in m.weights]
    d_b = [np.zeros_like(b) for b in m.biases]
    if loss == 0.0:
        return loss, d_w, d_b
    n = len(z)
    # d sqrt(mean |e|^2) / d pred = e / (n * loss)
    delta = (out - y_true) / (n * loss)
    for l in range(m.n_layers - 1, -1, -1):
        h_in, pre, post = cache[l]
        delta = delta * _act_grad(m.activations[l], pre, post)
        d_w[l] = delta.T @ h_in
        d_b[l] = delta.sum(axis=0)
        if l:
            delta = delta @ m.weights[l]
            if mask is not None and l == m.n_layers - 1:
                delta = delta * mask
    return loss, d_w, d_b


@dataclass
class TrainConfig:
    lr0: float = 0.01
    decay: float = 1e-6
    momentum: float = 0.9
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.lr0 < 0:
            raise ValueError("lr0 must be >= 0")
        if self.decay < 0:
            raise ValueError("decay must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    @classmethod
    def from_config(cls, cfg: dict, seed: int | None = None) -> "TrainConfig":
        return cls(cfg["train.lr0"], cfg["train.decay"], cfg["train.momentum"], cfg["train.epochs"],
                   cfg["train.batch_size"], cfg["seed"] if seed is None else seed)


def learning_rate(cfg: TrainConfig, step: int) -> float:
    return cfg.lr0 / (1.0 + cfg.decay * step)


@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)

    def append(self, **row) -> None:
        self.epochs.append(row)

    def to_csv(self) -> str:
        lines = ["epoch,updates,lr,train_rmse,val_rmse"]
        for r in self.epochs:
            val = "" if r["val_rmse"] is None else repr(r["val_rmse"])
            lines.append(f"{r['epoch']},{r['updates']},{r['lr']!r},{r['train_rmse']!r},{val}")
        return "\n".join(lines) + "\n"


def train(m: MlpModel, z_train, y_train, z_val=None, y_val=None, cfg: TrainConfig = TrainConfig(),
          log: Callable[[dict], None] | None = None) -> tuple[MlpModel, History]:
    """Minibatch SGD with Nesterov momentum on the RMSE loss.

    Update per minibatch: ``v <- mu v - lr_t grad(theta + mu v); theta <- theta + v``
    with ``lr_t = lr0 / (1 + decay t)``. Inputs are expected already normalized.
    Epoch 0 in the history is the untrained model.
    """
    z_train = np.asarray(z_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    if len(z_train) == 0:
        raise ValueError("empty training set")
    has_val = z_val is not None and len(z_val) > 0
    rng = np.random.default_rng(cfg.seed)
    m = m.copy()
    params = m.params()
    velocity = [np.zeros_like(p) for p in params]
    history = History()
    step = 0

    def record(epoch: int) -> float:
        train_rmse = loss_rmse(forward(m, z_train), y_train)
        val_rmse = loss_rmse(forward(m, z_val), y_val) if has_val else None
        row = dict(epoch=epoch, updates=step, lr=learning_rate(cfg, step), train_rmse=train_rmse, val_rmse=val_rmse)
        history.append(**row)
        if log is not None:
            log(row)
        return train_rmse

    initial = record(0)
    n = len(z_train)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            mask = dropout_mask(m, len(idx), rng)
            lookahead = m.with_params([p + cfg.momentum * v for p, v in zip(params, velocity)])
            _, d_w, d_b = gradients(lookahead, z_train[idx], y_train[idx], mask)
            lr = learning_rate(cfg, step)
            for p, v, g in zip(params, velocity, d_w + d_b):
                v *= cfg.momentum
                v -= lr * g
                p += v
            step += 1
        current = record(epoch)
        if not math.isfinite(current) or current > 10 * initial:
            raise DivergenceError(
                f"training diverged at epoch {epoch}: train RMSE {current:.6g} vs initial {initial:.6g}")
    return m, history


# --- persistence --------------------------------------------------------------

def model_to_dict(m: MlpModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": 1,
        "layer_dims": m.layer_dims,
        "activations": m.activations,
        "dropout_rate": m.dropout_rate,
        "weights": [w.tolist() for w in m.weights],
        "biases": [b.tolist() for b in m.biases],
    }


def save_model(m: MlpModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(m), indent=1) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> MlpModel:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a model file ({exc})") from None
    if not isinstance(data, dict) or data.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: not a {MODEL_FORMAT} file")
    try:
        return MlpModel(data["layer_dims"], data["weights"], data["biases"], data["activations"],
                        data["dropout_rate"])
    except KeyError as exc:
        raise ModelFormatError(f"{path}: missing field {exc}") from None
    except (ShapeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
