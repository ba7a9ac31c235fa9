"""Small fully-connected networks trained with mini-batch SGD.

The hidden activation is any :class:`ActivationFn`; backprop uses its
``eval_deriv``. Outputs are softmax + cross-entropy or linear + squared
error.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .activations import ActivationFn, eval_activation, eval_deriv, sigmoid
from .data import LabeledDataset

CROSS_ENTROPY = "cross-entropy"
SQUARED_ERROR = "squared-error"


class MlpConfigError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, trace: "TrainingTrace"):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch
        self.trace = trace


@dataclass(frozen=True)
class MlpConfig:
    widths: tuple[int, ...] = (2, 16, 16, 2)
    activation: ActivationFn = field(default_factory=sigmoid)
    learning_rate: float = 0.1
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    loss: str = CROSS_ENTROPY
    probe_size: int = 64

    def validate(self) -> None:
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise MlpConfigError("need at least input and output widths, all >= 1")
        if not self.learning_rate >= 0:
            raise MlpConfigError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise MlpConfigError("batch size must be >= 1")
        if self.epochs < 1:
            raise MlpConfigError("epochs must be >= 1")
        if self.loss not in (CROSS_ENTROPY, SQUARED_ERROR):
            raise MlpConfigError(f"unknown loss {self.loss!r}")


@dataclass
class Params:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])

    def copy(self) -> "Params":
        return Params([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_params(widths: Sequence[int], rng: np.random.Generator) -> Params:
    """Gaussian weights with variance 1 / fan-in, zero biases."""
    ws = [rng.normal(0.0, 1.0 / math.sqrt(a), (a, b)) for a, b in zip(widths[:-1], widths[1:])]
    return Params(ws, [np.zeros(b) for b in widths[1:]])


def _one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def forward(params: Params, x: np.ndarray, act: ActivationFn):
    """Returns (output pre-activations, hidden pre-activations, layer inputs)."""
    inputs, pres = [x], []
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = h @ w + b
        pres.append(z)
        h = np.asarray(eval_activation(act, z))
        inputs.append(h)
    out = h @ params.weights[-1] + params.biases[-1]
    return out, pres, inputs


def loss_and_grad(params: Params, x: np.ndarray, y: np.ndarray, act: ActivationFn,
                  loss: str = CROSS_ENTROPY, need_grad: bool = True):
    """Mean loss over the batch and its gradient with respect to ``params``.

    ``y`` holds integer class labels for cross-entropy and target rows for
    squared error.
    """
    out, pres, inputs = forward(params, x, act)
    n = len(x)
    if loss == CROSS_ENTROPY:
        shifted = out - out.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        value = -float(np.mean(logp[np.arange(n), y]))
        delta = (np.exp(logp) - _one_hot(y, out.shape[1])) / n
    else:
        target = y.reshape(out.shape)
        diff = out - target
        value = 0.5 * float(np.mean(np.sum(diff**2, axis=1)))
        delta = diff / n
    if not need_grad:
        return value, None
    gw = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    for l in range(len(params.weights) - 1, -1, -1):
        gw[l] = inputs[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l:
            delta = (delta @ params.weights[l].T) * np.asarray(eval_deriv(act, pres[l - 1]))
    return value, Params(gw, gb)


def accuracy(params: Params, data: LabeledDataset, act: ActivationFn) -> float:
    out, _, _ = forward(params, data.features, act)
    return float(np.mean(out.argmax(axis=1) == data.labels))


@dataclass
class TrainingTrace:
    losses: list[float]
    batch_losses: list[float]
    hidden_snapshots: list[np.ndarray]
    final_accuracy: float
    params: Params | None = None
    config: MlpConfig | None = None

    def epochs_to(self, threshold: float) -> int | None:
        """1-based epoch at which the loss first reaches ``threshold``."""
        for i, v in enumerate(self.losses):
            if v <= threshold:
                return i + 1
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(self.losses):
            w.writerow([i + 1, repr(float(v))])
        return buf.getvalue()


def _check_dataset(config: MlpConfig, data: LabeledDataset) -> None:
    if data.features.ndim != 2 or data.features.shape[1] != config.widths[0]:
        raise MlpConfigError(f"features have shape {data.features.shape}, "
                             f"network expects width {config.widths[0]}")
    if config.loss == CROSS_ENTROPY:
        labels = np.asarray(data.labels)
        if labels.min() < 0 or labels.max() >= config.widths[-1]:
            raise MlpConfigError("labels fall outside the output classes")


def train(config: MlpConfig, data: LabeledDataset, params: Params | None = None) -> TrainingTrace:
    """Mini-batch SGD; the loss recorded per epoch is the full-dataset loss."""
    config.validate()
    _check_dataset(config, data)
    rng = np.random.default_rng(config.seed)
    params = init_params(config.widths, rng) if params is None else params.copy()
    x, y = data.features, np.asarray(data.labels)
    probe = x[: min(config.probe_size, len(x))]
    act, lr = config.activation, config.learning_rate
    losses, batch_losses, snaps = [], [], []
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, len(x), config.batch_size):
                idx = order[start: start + config.batch_size]
                value, grad = loss_and_grad(params, x[idx], y[idx], act, config.loss)
                batch_losses.append(value)
                if not math.isfinite(value):
                    break
                for p, g in zip(params.weights + params.biases, grad.weights + grad.biases):
                    p -= lr * g
            full, _ = loss_and_grad(params, x, y, act, config.loss, need_grad=False)
        losses.append(full)
        if not math.isfinite(full):
            trace = TrainingTrace(losses, batch_losses, snaps, math.nan, params, config)
            raise TrainingDiverged(epoch + 1, trace)
        _, _, inputs = forward(params, probe, act)
        snaps.append(np.hstack(inputs[1:]) if len(inputs) > 1 else probe.copy())
    acc = accuracy(params, data, act) if config.loss == CROSS_ENTROPY else math.nan
    return TrainingTrace(losses, batch_losses, snaps, acc, params, config)


def gradient_check(config: MlpConfig, data: LabeledDataset, step: float = 1e-5,
                   params: Params | None = None, atol: float = 1e-6) -> float:
    """Relative gap between backprop and central-difference gradients.

    The gap is ``||g - fd|| / max(||g||, ||fd||, atol)`` over all parameters
    at once. A per-entry ratio is not used because entries with near-zero
    gradient are dominated by finite-difference rounding when the loss is
    large.
    """
    config.validate()
    _check_dataset(config, data)
    rng = np.random.default_rng(config.seed)
    params = init_params(config.widths, rng) if params is None else params
    x, y = data.features, np.asarray(data.labels)
    act = config.activation
    _, grad = loss_and_grad(params, x, y, act, config.loss)
    analytic, numeric = [], []
    for p, g in zip(params.weights + params.biases, grad.weights + grad.biases):
        flat = p.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up, _ = loss_and_grad(params, x, y, act, config.loss, need_grad=False)
            flat[i] = keep - step
            down, _ = loss_and_grad(params, x, y, act, config.loss, need_grad=False)
            flat[i] = keep
            numeric.append((up - down) / (2 * step))
        analytic.extend(g.reshape(-1))
    g, fd = np.array(analytic), np.array(numeric)
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), atol))


@dataclass
class SweepRow:
    config_id: int
    param_value: float | str
    final_loss: float
    epochs_to_threshold: int | None
    diverged: bool
    trace: TrainingTrace | None = None


SWEEP_HEADER = ["config_id", "param_value", "final_loss", "epochs_to_threshold", "diverged"]


def sweep(configs: Sequence[MlpConfig], data: LabeledDataset,
          param_values: Sequence | None = None, threshold_factor: float = 1.1,
          map_fn: Callable = map) -> list[SweepRow]:
    """Train every config on ``data`` and score epochs to a shared loss threshold.

    The threshold is ``threshold_factor`` times the best final loss across
    the sweep. Diverged runs are recorded with ``final_loss = nan`` and never
    reach the threshold.
    """
    if param_values is None:
        param_values = list(range(len(configs)))

    def run(cfg):
        try:
            return train(cfg, data), False
        except TrainingDiverged as exc:
            return exc.trace, True

    results = list(map_fn(run, configs))
    finals = [tr.losses[-1] if not div else math.nan for tr, div in results]
    ok = [f for f in finals if math.isfinite(f)]
    threshold = threshold_factor * min(ok) if ok else math.nan
    rows = []
    for i, ((tr, div), value) in enumerate(zip(results, param_values)):
        ett = None if div or not ok else tr.epochs_to(threshold)
        rows.append(SweepRow(i, value, finals[i], ett, div, tr))
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow([r.config_id, r.param_value if isinstance(r.param_value, str) else repr(float(r.param_value)),
                    repr(float(r.final_loss)), "" if r.epochs_to_threshold is None else r.epochs_to_threshold,
                    int(r.diverged)])
    return buf.getvalue()


def best_param(rows: Sequence[SweepRow]):
    """Parameter value with the fewest epochs to threshold; earliest row wins ties."""
    scored = [(r.epochs_to_threshold if r.epochs_to_threshold is not None else math.inf, i)
              for i, r in enumerate(rows)]
    best_i = min(scored)[1]
    return rows[best_i].param_value


def loss_roughness(losses: Sequence[float]) -> float:
    """Variance of successive loss differences; lower means a smoother trace."""
    return float(np.var(np.diff(np.asarray(losses, dtype=float))))


def with_updates(config: MlpConfig, **changes) -> MlpConfig:
    return replace(config, **changes)
