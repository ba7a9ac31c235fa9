"""Deep echo state network: stacked leaky reservoirs with a ridge readout."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .activations import ActivationFn, eval_activation, parse_activation, tanh
from .data import ChronoSplit, MetricReport, metrics

FORMAT_VERSION = 1


class EsnConfigError(ValueError):
    pass


class SingularReadoutError(np.linalg.LinAlgError):
    """The readout normal equations are singular; raise ``ridge_lambda``."""


@dataclass(frozen=True)
class DeepEsnConfig:
    num_layers: int = 2
    reservoir_size: int | tuple[int, ...] = 100
    spectral_radius: float = 0.9
    input_scaling: float = 0.5
    inter_scaling: float = 0.5
    bias_scaling: float = 0.0
    leak_rate: float = 1.0
    washout: int = 100
    ridge_lambda: float = 1e-8
    density: float = 0.1
    preactivation_clip: float | None = None
    activation: ActivationFn = field(default_factory=tanh)
    seed: int = 0

    @property
    def sizes(self) -> tuple[int, ...]:
        if isinstance(self.reservoir_size, (tuple, list)):
            return tuple(int(s) for s in self.reservoir_size)
        return (int(self.reservoir_size),) * self.num_layers

    def validate(self, check_esp: bool = True) -> None:
        if self.num_layers < 1:
            raise EsnConfigError("num_layers must be >= 1")
        if len(self.sizes) != self.num_layers or min(self.sizes) < 1:
            raise EsnConfigError("need one positive reservoir size per layer")
        if not self.spectral_radius > 0 or (check_esp and not self.spectral_radius < 1):
            raise EsnConfigError(f"spectral_radius must lie in (0, 1), got {self.spectral_radius}")
        if not 0 < self.leak_rate <= 1:
            raise EsnConfigError("leak_rate must lie in (0, 1]")
        if self.washout < 0:
            raise EsnConfigError("washout must be non-negative")
        if self.ridge_lambda < 0:
            raise EsnConfigError("ridge_lambda must be non-negative")
        if not 0 < self.density <= 1:
            raise EsnConfigError("density must lie in (0, 1]")
        if self.preactivation_clip is not None and not self.preactivation_clip > 0:
            raise EsnConfigError("preactivation_clip must be positive when set")
        if self.input_scaling < 0 or self.inter_scaling < 0 or self.bias_scaling < 0:
            raise EsnConfigError("scalings must be non-negative")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["activation"] = self.activation.spec_string()
        out["reservoir_size"] = list(self.sizes)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DeepEsnConfig":
        data = dict(data)
        data["activation"] = parse_activation(data["activation"])
        sizes = data["reservoir_size"]
        if isinstance(sizes, list):
            # A uniform stack was written from a scalar size; restore the scalar.
            sizes = sizes[0] if len(set(sizes)) == 1 and len(sizes) == data["num_layers"] else tuple(sizes)
        data["reservoir_size"] = sizes
        return cls(**data)


@dataclass
class Reservoir:
    """Fixed weights of the stack. ``inputs[0]`` maps the external input;
    ``inputs[l]`` for ``l > 0`` maps layer ``l-1`` into layer ``l``."""

    config: DeepEsnConfig
    inputs: list[np.ndarray]
    recurrent: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.inputs[0].shape[1]

    @property
    def inter_layer(self) -> list[np.ndarray]:
        return self.inputs[1:]

    @property
    def state_dim(self) -> int:
        return sum(self.config.sizes)


def spectral_radius(matrix: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


def _sparse_uniform(rng: np.random.Generator, n: int, density: float) -> np.ndarray:
    mask = rng.random((n, n)) < density
    # Every row keeps at least one connection so no unit is cut off.
    mask[np.arange(n), rng.integers(0, n, n)] = True
    return np.where(mask, rng.uniform(-1.0, 1.0, (n, n)), 0.0)


def build(config: DeepEsnConfig, input_dim: int = 1, check_esp: bool = True) -> Reservoir:
    """Seeded reservoir stack with recurrent matrices at the target spectral radius."""
    config.validate(check_esp)
    if input_dim < 1:
        raise EsnConfigError("input_dim must be >= 1")
    rng = np.random.default_rng(config.seed)
    inputs, recurrent, biases = [], [], []
    prev = input_dim
    for layer, n in enumerate(config.sizes):
        scale = config.input_scaling if layer == 0 else config.inter_scaling
        inputs.append(scale * rng.uniform(-1.0, 1.0, (n, prev)))
        for _ in range(100):
            w = _sparse_uniform(rng, n, config.density)
            rho = spectral_radius(w)
            if rho > 1e-8:
                break
        else:  # pragma: no cover - needs a pathological RNG stream
            raise EsnConfigError("could not draw a reservoir with non-zero spectral radius")
        recurrent.append(w * (config.spectral_radius / rho))
        biases.append(config.bias_scaling * rng.uniform(-1.0, 1.0, n))
        prev = n
    return Reservoir(config, inputs, recurrent, biases)


def _as_inputs(series, input_dim: int) -> np.ndarray:
    u = np.asarray(series, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.ndim != 2 or u.shape[1] != input_dim:
        raise ValueError(f"input series must have shape (T, {input_dim}), got {np.shape(series)}")
    return u


def run_states(reservoir: Reservoir, series, washout: int | None = None,
               initial_states: Sequence[np.ndarray] | None = None,
               return_final: bool = False):
    """Drive the stack with ``series`` and collect per-layer states.

    Each layer follows ``x(n) = (1-a) x(n-1) + a act(W_in v(n) + W x(n-1) + b)``
    where ``v`` is the external input for layer 0 and the current state of
    the previous layer otherwise. With ``preactivation_clip`` set, the
    argument of ``act`` is clamped to ``[-clip, clip]`` first, which keeps
    polynomial (HP) activations bounded. The first ``washout`` steps are dropped.
    Returns a list of ``(T - washout, N_l)`` arrays.
    """
    cfg = reservoir.config
    washout = cfg.washout if washout is None else washout
    u = _as_inputs(series, reservoir.input_dim)
    if washout >= len(u):
        raise ValueError(f"series of length {len(u)} does not exceed washout {washout}")
    act, a = cfg.activation, cfg.leak_rate
    clip = cfg.preactivation_clip
    if initial_states is None:
        xs = [np.zeros(n) for n in cfg.sizes]
    else:
        xs = [np.asarray(x, dtype=float).copy() for x in initial_states]
    out = [np.empty((len(u), n)) for n in cfg.sizes]
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(len(u)):
            v = u[t]
            for l in range(cfg.num_layers):
                pre = reservoir.inputs[l] @ v + reservoir.recurrent[l] @ xs[l] + reservoir.biases[l]
                if clip is not None:
                    pre = np.clip(pre, -clip, clip)
                new = eval_activation(act, pre)
                xs[l] = new if a == 1.0 else (1.0 - a) * xs[l] + a * new
                out[l][t] = xs[l]
                v = xs[l]
    states = [s[washout:] for s in out]
    return (states, xs) if return_final else states


def concat_states(states: list[np.ndarray]) -> np.ndarray:
    return np.hstack(states)


def _design(states: np.ndarray) -> np.ndarray:
    return np.hstack([states, np.ones((len(states), 1))])


def fit_readout(states, targets, ridge_lambda: float) -> np.ndarray:
    """Ridge solution of ``(X'X + lambda I) W = X'Y``; ``X`` gets a bias column.

    Returns weights of shape ``(state_dim + 1, target_dim)``.
    """
    x = _design(np.atleast_2d(np.asarray(states, dtype=float)))
    y = np.asarray(targets, dtype=float)
    y = y[:, None] if y.ndim == 1 else y
    if len(x) != len(y):
        raise ValueError(f"{len(x)} state rows but {len(y)} targets")
    if not np.all(np.isfinite(x)):
        raise SingularReadoutError("reservoir states are not finite")
    if not ridge_lambda:
        # Plain least squares on X itself; the normal matrix would square its condition number.
        if np.linalg.matrix_rank(x) < x.shape[1]:
            raise SingularReadoutError("design matrix is rank deficient at ridge_lambda=0")
        return np.linalg.lstsq(x, y, rcond=None)[0]
    gram = x.T @ x + ridge_lambda * np.eye(x.shape[1])
    if np.linalg.cond(gram) > 1.0 / np.finfo(float).eps:
        raise SingularReadoutError(f"normal equations singular at ridge_lambda={ridge_lambda}")
    return np.linalg.solve(gram, x.T @ y)


def apply_readout(weights: np.ndarray, states) -> np.ndarray:
    return _design(np.atleast_2d(np.asarray(states, dtype=float))) @ weights


@dataclass
class TrainedEsn:
    reservoir: Reservoir
    readout: np.ndarray
    train_rmse: float
    horizon: int = 1

    @property
    def config(self) -> DeepEsnConfig:
        return self.reservoir.config

    def save(self, path) -> None:
        """``<path>.json`` holds config and summary, ``<path>.npz`` the matrices."""
        path = Path(path)
        meta = {"format_version": FORMAT_VERSION, "config": self.config.to_dict(),
                "input_dim": self.reservoir.input_dim, "horizon": self.horizon,
                "train_rmse": self.train_rmse, "matrices": path.with_suffix(".npz").name}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        arrays = {"readout": self.readout}
        for l in range(self.config.num_layers):
            arrays[f"input_{l}"] = self.reservoir.inputs[l]
            arrays[f"recurrent_{l}"] = self.reservoir.recurrent[l]
            arrays[f"bias_{l}"] = self.reservoir.biases[l]
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        path.with_suffix(".npz").write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path) -> "TrainedEsn":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {meta.get('format_version')}")
        config = DeepEsnConfig.from_dict(meta["config"])
        with np.load(path.with_name(meta["matrices"])) as z:
            layers = range(config.num_layers)
            res = Reservoir(config, [z[f"input_{l}"] for l in layers],
                            [z[f"recurrent_{l}"] for l in layers], [z[f"bias_{l}"] for l in layers])
            readout = z["readout"]
        return cls(res, readout, meta["train_rmse"], meta["horizon"])


def _targets(series: np.ndarray, horizon: int) -> np.ndarray:
    return series[horizon:]


def train(config: DeepEsnConfig, series, horizon: int = 1, train_stop: int | None = None,
          reservoir: Reservoir | None = None) -> TrainedEsn:
    """Fit a ``horizon``-step-ahead readout on ``series[:train_stop]``."""
    y = np.asarray(series, dtype=float)
    y = y[:, None] if y.ndim == 1 else y
    stop = len(y) if train_stop is None else train_stop
    res = reservoir if reservoir is not None else build(config, y.shape[1])
    inputs = y[: stop - horizon]
    states = concat_states(run_states(res, inputs, config.washout))
    targets = y[config.washout + horizon: stop]
    w = fit_readout(states, targets, config.ridge_lambda)
    resid = apply_readout(w, states) - targets
    return TrainedEsn(res, w, float(np.sqrt(np.mean(resid**2))), horizon)


def predict(trained: TrainedEsn, series) -> np.ndarray:
    """Teacher-forced predictions: row ``t`` estimates ``series[t + horizon]``.

    The reservoir starts from rest, so the first ``washout`` rows are
    transients; they are returned but callers usually skip them.
    """
    states = concat_states(run_states(trained.reservoir, series, washout=0))
    return apply_readout(trained.readout, states)


@dataclass
class SplitEvaluation:
    trained: TrainedEsn
    predictions: np.ndarray      # aligned with series index (NaN where undefined)
    validation: MetricReport
    test: MetricReport
    train: MetricReport


def evaluate_split(config: DeepEsnConfig, series, split: ChronoSplit, horizon: int = 1,
                   reservoir: Reservoir | None = None) -> SplitEvaluation:
    """Train on the train range and score one-step predictions on the rest.

    The reservoir is driven once over the full series, so validation and
    test predictions start from a warm state; the readout only ever sees
    training targets.
    """
    y = np.asarray(series, dtype=float)
    y = y[:, None] if y.ndim == 1 else y
    res = reservoir if reservoir is not None else build(config, y.shape[1])
    states = concat_states(run_states(res, y[:-horizon], washout=0))
    w0 = config.washout
    tr_stop = split.train.stop
    # state row t predicts y[t + horizon]
    x_tr = states[w0: tr_stop - horizon]
    y_tr = y[w0 + horizon: tr_stop]
    w = fit_readout(x_tr, y_tr, config.ridge_lambda)
    pred = np.full_like(y, np.nan)
    pred[horizon:] = apply_readout(w, states)
    train_m = metrics(pred[w0 + horizon: tr_stop], y[w0 + horizon: tr_stop])
    val = slice(split.validation.start, split.validation.stop)
    test = slice(split.test.start, split.test.stop)
    trained = TrainedEsn(res, w, train_m.rmse, horizon)
    return SplitEvaluation(trained, pred, metrics(pred[val], y[val]), metrics(pred[test], y[test]),
                           train_m)


@dataclass(frozen=True)
class AnomalyFlag:
    time_index: int
    predicted: float
    observed: float
    error: float
    threshold: float


def _errors(predictions, observations) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=float)
    o = np.asarray(observations, dtype=float)
    if p.shape != o.shape:
        raise ValueError("predictions and observations differ in shape")
    if p.ndim == 1:
        return p, o, np.abs(p - o)
    return p, o, np.linalg.norm(p - o, axis=1)


def flag_anomalies(predictions, observations, threshold: float) -> list[AnomalyFlag]:
    """Time indices whose prediction error exceeds ``threshold``.

    For multivariate rows the error is the Euclidean norm over variables and
    the reported values are the first variable.
    """
    p, o, err = _errors(predictions, observations)
    flags = []
    for t in np.flatnonzero(err > threshold):
        pv = p[t] if p.ndim == 1 else p[t, 0]
        ov = o[t] if o.ndim == 1 else o[t, 0]
        flags.append(AnomalyFlag(int(t), float(pv), float(ov), float(err[t]), float(threshold)))
    return flags


def default_anomaly_threshold(validation_rmse: float) -> float:
    return 3.0 * validation_rmse


def predictions_csv(predictions, observations, threshold: float, offset: int = 0) -> str:
    """CSV with columns time_index, observed, predicted, error, flagged."""
    p, o, err = _errors(predictions, observations)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_index", "observed", "predicted", "error", "flagged"])
    for t in range(len(err)):
        pv = p[t] if p.ndim == 1 else p[t, 0]
        ov = o[t] if o.ndim == 1 else o[t, 0]
        w.writerow([t + offset, repr(float(ov)), repr(float(pv)), repr(float(err[t])),
                    int(err[t] > threshold)])
    return buf.getvalue()


def esp_divergence(config: DeepEsnConfig, series, seed: int = 0, scale: float = 1.0) -> np.ndarray:
    """Distance between two runs that differ only in their random initial states.

    Returns the Euclidean distance of the concatenated layer states at every
    step. Builds the reservoir without the spectral-radius < 1 check so that
    unstable settings can be probed.
    """
    res = build(config, np.asarray(series).reshape(len(series), -1).shape[1], check_esp=False)
    rng = np.random.default_rng(seed)
    starts = [[scale * rng.uniform(-1, 1, n) for n in config.sizes] for _ in range(2)]
    runs = [concat_states(run_states(res, series, washout=0, initial_states=s)) for s in starts]
    return np.linalg.norm(runs[0] - runs[1], axis=1)


def with_updates(config: DeepEsnConfig, **changes) -> DeepEsnConfig:
    return replace(config, **changes)
