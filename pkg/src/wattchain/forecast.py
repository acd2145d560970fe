"""From-scratch feedforward regressor for solar output prediction.

Architecture: 4 weather inputs (irradiance, air temperature, relative
humidity, rainfall) through dense ReLU hidden layers of 256, 128 and 64
units to one linear output. Inputs and targets are min-max scaled to
[0, 1] on the training split; predictions are inverse-scaled and clamped
at zero since generation is never negative. Training is full-batch Adam
on mean squared error unless a batch size is given.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from datetime import timedelta

import numpy as np

from .energy_data import Dataset, WeatherRecord

DEFAULT_LAYER_SIZES = [4, 256, 128, 64, 1]
MINUTE_GRID_STEPS = 286
MINUTE_GRID_SPACING_S = 300


class ForecastError(Exception):
    pass


class UnfittedScaler(ForecastError):
    pass


class ConstantColumn(ForecastError):
    def __init__(self, column):
        super().__init__(f"column {column!r} is constant; min-max scaling undefined")
        self.column = column


class TooFewRows(ForecastError):
    pass


class ShapeMismatch(ForecastError):
    pass


class NonFiniteActivation(ForecastError):
    pass


class Diverged(ForecastError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class GridShapeError(ForecastError):
    def __init__(self, got: int, want: int = MINUTE_GRID_STEPS, detail: str = ""):
        message = f"expected a {want}-step day grid, got {got}"
        super().__init__(message + (f" ({detail})" if detail else ""))
        self.got = got
        self.want = want


class LengthMismatch(ForecastError):
    pass


class DegenerateActuals(ForecastError):
    pass


def relu(x):
    """Rectifier: identity on positives, zero elsewhere."""
    return np.maximum(x, 0.0)


@dataclass
class Scaler:
    """Per-column min-max map onto [0, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.lo) / (self.hi - self.lo)

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return x * (self.hi - self.lo) + self.lo


@dataclass
class MlffModel:
    layer_sizes: list[int]
    weights: list[np.ndarray]  # weights[l] has shape (fan_in, fan_out)
    biases: list[np.ndarray]
    feature_scaler: Scaler | None = None
    target_scaler: Scaler | None = None
    seed: int = 0


def init_model(layer_sizes: list[int] | None = None, seed: int = 0) -> MlffModel:
    """He-style uniform fan-in initialisation; biases start at zero."""
    sizes = list(layer_sizes or DEFAULT_LAYER_SIZES)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"bad layer sizes {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        limit = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlffModel(layer_sizes=sizes, weights=weights, biases=biases, seed=seed)


def _net_forward(model: MlffModel, x: np.ndarray) -> np.ndarray:
    """Raw network output in scaled space; x is (n, features)."""
    a = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        a = z if l == last else relu(z)
    return a[:, 0]


def forward(model: MlffModel, x) -> float:
    """Predict one sample in physical units (watts), clamped at zero."""
    return float(forward_batch(model, np.asarray(x, dtype=float).reshape(1, -1))[0])


def forward_batch(model: MlffModel, x: np.ndarray) -> np.ndarray:
    if model.feature_scaler is None or model.target_scaler is None:
        raise UnfittedScaler("fit scalers (or train) before predicting")
    scaled = model.feature_scaler.transform(np.asarray(x, dtype=float))
    out = _net_forward(model, scaled)
    return np.maximum(model.target_scaler.inverse(out), 0.0)


def fit_scalers(dataset: Dataset) -> tuple[Scaler, Scaler]:
    """Min-max bounds from (training) data; constant columns are rejected."""
    if len(dataset) == 0:
        raise ValueError("cannot fit scalers on an empty dataset")
    lo = dataset.features.min(axis=0)
    hi = dataset.features.max(axis=0)
    for i, (a, b) in enumerate(zip(lo, hi)):
        if a == b:
            raise ConstantColumn(i)
    t_lo, t_hi = dataset.targets.min(), dataset.targets.max()
    if t_lo == t_hi:
        raise ConstantColumn("target")
    return Scaler(lo=lo, hi=hi), Scaler(lo=np.asarray(t_lo), hi=np.asarray(t_hi))


def split(dataset: Dataset, ratio: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split: ceil(ratio*n) training rows, rest validation."""
    n = len(dataset)
    if n < 5:
        raise TooFewRows(f"need at least 5 rows to split, got {n}")
    if not 0 < ratio < 1:
        raise ValueError("ratio must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(n)
    cut = math.ceil(ratio * n)
    train_idx, val_idx = order[:cut], order[cut:]
    return (
        Dataset(features=dataset.features[train_idx], targets=dataset.targets[train_idx]),
        Dataset(features=dataset.features[val_idx], targets=dataset.targets[val_idx]),
    )


def backward(model: MlffModel, inputs: np.ndarray,
             targets: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact gradients of mean squared error w.r.t. every weight and bias.

    Inputs and targets are in network (scaled) space. The ReLU subgradient
    at exactly zero is taken as zero.
    """
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.ndim != 2 or len(x) == 0 or len(x) != len(y):
        raise ShapeMismatch(f"bad batch shapes {x.shape} vs {y.shape}")
    n = len(x)
    last = len(model.weights) - 1

    activations = [x]
    pre = []
    a = x
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if l == last else relu(z)
        activations.append(a)
    if not np.isfinite(activations[-1]).all():
        raise NonFiniteActivation("forward pass produced non-finite values")

    grads_w = [np.empty(0)] * len(model.weights)
    grads_b = [np.empty(0)] * len(model.biases)
    delta = 2.0 * (activations[-1][:, 0] - y)[:, None] / n
    for l in range(last, -1, -1):
        grads_w[l] = activations[l].T @ delta
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l].T) * (pre[l - 1] > 0)
    return grads_w, grads_b


def mse_loss(model: MlffModel, inputs: np.ndarray, targets: np.ndarray) -> float:
    pred = _net_forward(model, np.asarray(inputs, dtype=float))
    return float(np.mean((pred - np.asarray(targets, dtype=float)) ** 2))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              t: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place; t counts steps from 1."""
    if t < 1:
        raise ValueError("step number t starts at 1")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("parameter, gradient and state lists differ in length")
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatch(f"parameter shape {p.shape} vs gradient {g.shape}")
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


@dataclass
class MetricsReport:
    corr: float
    mae: float
    rmse: float
    mse: float
    mpe: float  # +inf whenever any actual value is zero
    mafe: float
    accuracy_pct: float
    r2: float


def metrics(actual, predicted) -> MetricsReport:
    """Forecast quality metrics.

    mafe is 100*mae; mpe is flagged infinite when any actual is zero (as at
    night for solar); accuracy is the relative-absolute-error complement,
    clamped to [0, 100].
    """
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape or a.ndim != 1:
        raise LengthMismatch(f"shapes differ: {a.shape} vs {p.shape}")
    if len(a) < 2:
        raise LengthMismatch("need at least 2 points")
    if np.all(a == a[0]):
        raise DegenerateActuals("all actual values are equal; r2 undefined")

    err = a - p
    mae = float(np.mean(np.abs(err)))
    mse = float(np.mean(err**2))
    rmse = math.sqrt(mse)
    mafe = 100.0 * mae
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        mpe = math.inf if np.any(a == 0) else float(100.0 * np.mean(err / a))
    accuracy = 100.0 * (1.0 - np.sum(np.abs(err)) / np.sum(np.abs(a)))
    accuracy = float(min(max(accuracy, 0.0), 100.0))
    ss_res = float(np.sum(err**2))
    ss_tot = float(np.sum((a - a.mean()) ** 2))
    if ss_tot == 0.0:  # spread below float resolution
        raise DegenerateActuals("actual values carry no variance; r2 undefined")
    r2 = 1.0 - ss_res / ss_tot
    pd = p - p.mean()
    ad = a - a.mean()
    denom = math.sqrt(float(np.sum(ad**2)) * float(np.sum(pd**2)))
    corr = float(np.sum(ad * pd) / denom) if denom > 0 else math.nan
    return MetricsReport(corr=corr, mae=mae, rmse=rmse, mse=mse, mpe=mpe,
                         mafe=mafe, accuracy_pct=accuracy, r2=r2)


METRIC_ROWS = [
    ("Correlation <Corr>:", "corr"),
    ("Mean Absolute Error <MAE> (Forecast):", "mae"),
    ("Root Mean Squared Error <RMSE>:", "rmse"),
    ("Mean Square Error <MSE>:", "mse"),
    ("Mean Percentage Error <MPE>:", "mpe"),
    ("Mean Absolute Forecast Error <MAFE>:", "mafe"),
    ("Accuracy:", "accuracy_pct"),
    ("Coefficient of variation <R>:", "r2"),
]


def format_metrics_table(report: MetricsReport) -> str:
    width = max(len(label) for label, _ in METRIC_ROWS)
    lines = []
    for label, attr in METRIC_ROWS:
        value = getattr(report, attr)
        if attr == "accuracy_pct":
            rendered = f"{value:.2f}%"
        elif math.isinf(value):
            rendered = "inf"
        else:
            rendered = f"{value:.9g}"
        lines.append(f"{label:<{width}}  {rendered}")
    return "\n".join(lines)


@dataclass
class TrainReport:
    epochs_run: int
    train_losses: list[float]
    val_losses: list[float]
    final_metrics: MetricsReport
    wall_time_s: float


def train(model: MlffModel, dataset: Dataset, epochs: int,
          batch_size: int | None = None, seed: int = 0, lr: float = 1e-3,
          split_ratio: float = 0.8) -> TrainReport:
    """Fit the model in place and report per-epoch losses.

    Deterministic for a given seed: the same split, the same batch order,
    the same final weights.
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    started = time.monotonic()
    train_ds, val_ds = split(dataset, ratio=split_ratio, seed=seed)
    model.feature_scaler, model.target_scaler = fit_scalers(train_ds)

    x_train = model.feature_scaler.transform(train_ds.features)
    y_train = model.target_scaler.transform(train_ds.targets)
    x_val = model.feature_scaler.transform(val_ds.features)
    y_val = model.target_scaler.transform(val_ds.targets)

    params = model.weights + model.biases
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(seed)
    n = len(x_train)
    size = n if batch_size is None else max(1, min(batch_size, n))

    train_losses: list[float] = []
    val_losses: list[float] = []
    t = 0
    for epoch in range(epochs):
        if size == n:
            batches = [(x_train, y_train)]
        else:
            order = rng.permutation(n)
            batches = [
                (x_train[order[i:i + size]], y_train[order[i:i + size]])
                for i in range(0, n, size)
            ]
        try:
            for bx, by in batches:
                grads_w, grads_b = backward(model, bx, by)
                t += 1
                adam_step(params, grads_w + grads_b, state, t, lr=lr)
        except NonFiniteActivation:
            raise Diverged(epoch) from None
        train_loss = mse_loss(model, x_train, y_train)
        val_loss = mse_loss(model, x_val, y_val)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise Diverged(epoch)
        train_losses.append(train_loss)
        val_losses.append(val_loss)

    report = metrics(val_ds.targets, forward_batch(model, val_ds.features))
    return TrainReport(epochs_run=epochs, train_losses=train_losses,
                       val_losses=val_losses, final_metrics=report,
                       wall_time_s=time.monotonic() - started)


def predict_minute_ahead(model: MlffModel, day_grid: list[WeatherRecord]) -> np.ndarray:
    """Predict the 286-step five-minute day grid (00:00:00 through 23:45:00)."""
    if len(day_grid) != MINUTE_GRID_STEPS:
        raise GridShapeError(len(day_grid))
    first = day_grid[0].timestamp
    if (first.hour, first.minute, first.second) != (0, 0, 0):
        raise GridShapeError(len(day_grid), detail="grid must start at 00:00:00")
    for prev, cur in zip(day_grid, day_grid[1:]):
        if cur.timestamp - prev.timestamp != timedelta(seconds=MINUTE_GRID_SPACING_S):
            raise GridShapeError(len(day_grid), detail="grid spacing must be 5 minutes")
    features = np.array([r.features() for r in day_grid], dtype=float)
    return forward_batch(model, features)


def save_model(model: MlffModel, path: str) -> None:
    """Self-describing JSON text; reload reproduces predictions exactly."""
    if model.feature_scaler is None or model.target_scaler is None:
        raise UnfittedScaler("train (or fit scalers) before saving")
    payload = {
        "layer_sizes": model.layer_sizes,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "feature_scaler": {
            "lo": model.feature_scaler.lo.tolist(),
            "hi": model.feature_scaler.hi.tolist(),
        },
        "target_scaler": {
            "lo": float(model.target_scaler.lo),
            "hi": float(model.target_scaler.hi),
        },
        "seed": model.seed,
    }
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".model-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path: str) -> MlffModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return MlffModel(
        layer_sizes=list(payload["layer_sizes"]),
        weights=[np.asarray(w, dtype=float) for w in payload["weights"]],
        biases=[np.asarray(b, dtype=float) for b in payload["biases"]],
        feature_scaler=Scaler(
            lo=np.asarray(payload["feature_scaler"]["lo"], dtype=float),
            hi=np.asarray(payload["feature_scaler"]["hi"], dtype=float),
        ),
        target_scaler=Scaler(
            lo=np.asarray(payload["target_scaler"]["lo"], dtype=float),
            hi=np.asarray(payload["target_scaler"]["hi"], dtype=float),
        ),
        seed=int(payload.get("seed", 0)),
    )
