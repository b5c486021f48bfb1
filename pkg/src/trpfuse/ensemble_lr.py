"""Logistic-regression fusion trained by full-batch gradient descent."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .errors import SchemaError, TrainingError, ValidationError
from .features import FeatureMatrix
from .timeline import FRAME_RATE, FrameStream

log = logging.getLogger(__name__)

MAGIC = "lr-model v1"


@dataclass(frozen=True)
class LRConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    l2: float = 1e-4
    seed: int = 0


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray  # 0 marks a constant column
    column_names: Tuple[str, ...] = ()
    final_loss: float = float("nan")
    history: List[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return self.weights.size

    def standardize(self, X: np.ndarray) -> np.ndarray:
        scale = np.where(self.std > 0, self.std, 1.0)
        Z = (X - self.mean) / scale
        Z[:, self.std == 0] = 0.0
        return Z


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def loss_and_grad(w: np.ndarray, b: float, Z: np.ndarray, y: np.ndarray, l2: float):
    """Mean log loss plus ``l2/2 * |w|^2`` and its gradient."""
    z = Z @ w + b
    # log(1 + e^z) - y z, stable form
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * float(w @ w)
    r = (_sigmoid(z) - y) / y.size
    return loss, Z.T @ r + l2 * w, float(r.sum())


def _as_array(X) -> np.ndarray:
    return X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)


def fit_logistic(X, y, cfg: LRConfig = LRConfig()) -> LogisticModel:
    """Fit on standardized columns; zero init, halves the step when loss rises."""
    A = _as_array(X)
    if A.ndim != 2:
        raise ValidationError("feature matrix must be 2-D")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size != A.shape[0]:
        raise ValidationError(f"{y.size} labels for {A.shape[0]} rows")
    if np.isnan(A).any():
        raise ValidationError("feature matrix contains NaN")
    if y.size == 0 or np.all(y == y[0]):
        raise TrainingError("training labels contain a single class")

    mean = A.mean(axis=0)
    std = A.std(axis=0)
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 0.0)
    names = X.column_names if isinstance(X, FeatureMatrix) else ()
    model = LogisticModel(np.zeros(A.shape[1]), 0.0, mean, std, names)
    Z = model.standardize(A)

    w, b, step = model.weights, 0.0, cfg.learning_rate
    loss, gw, gb = loss_and_grad(w, b, Z, y, cfg.l2)
    history = [loss]
    for _ in range(cfg.epochs):
        while True:
            w_new, b_new = w - step * gw, b - step * gb
            new_loss, new_gw, new_gb = loss_and_grad(w_new, b_new, Z, y, cfg.l2)
            if new_loss <= loss or step < 1e-12:
                break
            step *= 0.5
            log.debug("loss rose, step halved to %g", step)
        w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
        history.append(loss)
    model.weights, model.bias, model.final_loss, model.history = w, b, loss, history
    return model


def predict_logistic(model: LogisticModel, X, frame_rate: int = FRAME_RATE) -> FrameStream:
    A = _as_array(X)
    if A.ndim != 2 or A.shape[1] != model.n_features:
        raise ValidationError(f"expected {model.n_features} feature columns, got {A.shape[-1] if A.ndim else 0}")
    return FrameStream(_sigmoid(model.standardize(A) @ model.weights + model.bias), frame_rate, "lr")


def _floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def save_logistic(model: LogisticModel, path) -> None:
    lines = [
        MAGIC,
        f"n_features={model.n_features}",
        f"bias={model.bias!r}",
        f"weights={_floats(model.weights)}",
        f"mean={_floats(model.mean)}",
        f"std={_floats(model.std)}",
        f"columns={','.join(model.column_names)}",
        f"final_loss={float(model.final_loss)!r}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_logistic(path) -> LogisticModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != MAGIC:
        raise SchemaError(f"{path}: not an '{MAGIC}' file")
    kv = dict(line.split("=", 1) for line in lines[1:] if "=" in line)

    def vec(key):
        return np.array([float(v) for v in kv[key].split(",")]) if kv.get(key) else np.zeros(0)

    try:
        model = LogisticModel(
            vec("weights"),
            float(kv["bias"]),
            vec("mean"),
            vec("std"),
            tuple(kv["columns"].split(",")) if kv.get("columns") else (),
            float(kv.get("final_loss", "nan")),
        )
    except KeyError as exc:
        raise SchemaError(f"{path}: missing key {exc}") from None
    if model.n_features != int(kv["n_features"]) or model.mean.size != model.n_features:
        raise SchemaError(f"{path}: inconsistent vector lengths")
    return model
