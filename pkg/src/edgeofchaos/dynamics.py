"""Forward dynamics of layered networks, Lyapunov criticality, recurrence plots."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .activations import ActivationFn, eval_activation, eval_deriv

STABLE = "Stable"
EDGE = "EdgeOfChaos"
CHAOTIC = "Chaotic"
DEFAULT_EDGE_TOLERANCE = 1e-2
DEFAULT_EPSILON_FRACTION = 0.1


class DimensionError(ValueError):
    pass


@dataclass
class LayeredNet:
    """Weights ``W_l`` (``N_l x N_{l-1}``) and biases ``b_l`` sharing one activation."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: ActivationFn

    def __post_init__(self):
        self.weights = [np.atleast_2d(np.asarray(w, dtype=float)) for w in self.weights]
        self.biases = [np.atleast_1d(np.asarray(b, dtype=float)) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias per weight matrix and at least one layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0]:
                raise DimensionError(f"layer {l}: weight rows {w.shape[0]} != bias length {b.shape[0]}")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise DimensionError(f"layer {l}: input width {w.shape[1]} does not chain "
                                     f"with previous output {self.weights[l - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise DimensionError(f"layer {l}: non-finite parameters")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @classmethod
    def repeated(cls, w, b, depth: int, activation: ActivationFn) -> "LayeredNet":
        """``depth`` copies of the same layer, the tied-weight setting of the analysis."""
        return cls([w] * depth, [b] * depth, activation)

    @classmethod
    def random_gaussian(cls, width: int, depth: int, activation: ActivationFn,
                        gain: float = 1.0, seed: int = 0) -> "LayeredNet":
        rng = np.random.default_rng(seed)
        ws = [rng.normal(0.0, gain / math.sqrt(width), (width, width)) for _ in range(depth)]
        return cls(ws, [np.zeros(width)] * depth, activation)

    def to_dict(self) -> dict:
        return {"activation": self.activation.spec_string(),
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, data: dict) -> "LayeredNet":
        from .activations import parse_activation

        return cls(data["weights"], data["biases"], parse_activation(data["activation"]))


def forward(net: LayeredNet, x0) -> list[np.ndarray]:
    """States ``x_0..x_L`` with ``x_l = act(W_l x_{l-1} + b_l)``."""
    x = np.asarray(x0, dtype=float)
    if x.shape != (net.weights[0].shape[1],):
        raise DimensionError(f"input has shape {x.shape}, expected ({net.weights[0].shape[1]},)")
    states = [x]
    for w, b in zip(net.weights, net.biases):
        x = np.asarray(eval_activation(net.activation, w @ x + b), dtype=float).reshape(-1)
        states.append(x)
    return states


def jacobian(net: LayeredNet, x, layer: int) -> np.ndarray:
    """``diag(act'(W_l x + b_l)) W_l`` for layer index ``layer`` (0-based)."""
    w, b = net.weights[layer], net.biases[layer]
    x = np.asarray(x, dtype=float)
    if x.shape != (w.shape[1],):
        raise DimensionError(f"state has shape {x.shape}, layer {layer} expects ({w.shape[1]},)")
    slope = np.asarray(eval_deriv(net.activation, w @ x + b), dtype=float).reshape(-1)
    return slope[:, None] * w


@dataclass
class CriticalityReport:
    lyapunov: float
    per_layer_log_spectra: list[list[float]]
    regime: str
    edge_tolerance: float = DEFAULT_EDGE_TOLERANCE

    def to_dict(self) -> dict:
        def clean(v):
            return v if math.isfinite(v) else ("-inf" if v < 0 else "inf")

        return {"lambda": clean(self.lyapunov), "regime": self.regime,
                "edge_tolerance": self.edge_tolerance,
                "per_layer": [[clean(v) for v in row] for row in self.per_layer_log_spectra]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def classify(lam: float, edge_tolerance: float = DEFAULT_EDGE_TOLERANCE) -> str:
    if lam < -edge_tolerance:
        return STABLE
    if lam > edge_tolerance:
        return CHAOTIC
    return EDGE


def _layer_magnitudes(jac: np.ndarray, singular_fallback: bool) -> np.ndarray:
    if jac.shape[0] == jac.shape[1]:
        mags = np.abs(np.linalg.eigvals(jac))
    elif singular_fallback:
        mags = np.linalg.svd(jac, compute_uv=False)
    else:
        raise DimensionError(f"Jacobian of shape {jac.shape} has no eigenvalues; "
                             "enable singular_fallback for rectangular layers")
    return np.sort(mags)[::-1]


def lyapunov(net: LayeredNet, trajectory: Sequence, edge_tolerance: float = DEFAULT_EDGE_TOLERANCE,
             singular_fallback: bool = False) -> CriticalityReport:
    """Largest time-averaged log eigenvalue magnitude over layers.

    ``trajectory`` is a list of time steps. Each step is either a single
    input vector to the first layer (it is pushed through :func:`forward`)
    or a list of per-layer input states ``[x_0, ..., x_{L-1}]``.

    Eigenvalue magnitudes are sorted at every step and averaged per rank.
    """
    if len(trajectory) == 0:
        raise ValueError("trajectory is empty")
    per_layer_logs = [[] for _ in range(net.depth)]
    with np.errstate(divide="ignore"):
        for step in trajectory:
            if isinstance(step, (list, tuple)) and len(step) >= net.depth and np.ndim(step[0]) == 1:
                inputs = step
            else:
                inputs = forward(net, step)
            for l in range(net.depth):
                mags = _layer_magnitudes(jacobian(net, inputs[l], l), singular_fallback)
                per_layer_logs[l].append(np.log(mags))
    spectra = [np.mean(np.array(logs), axis=0) for logs in per_layer_logs]
    lam = max(float(np.max(s)) for s in spectra)
    return CriticalityReport(lam, [s.tolist() for s in spectra], classify(lam, edge_tolerance),
                             edge_tolerance)


@dataclass
class RecurrencePlot:
    matrix: np.ndarray
    threshold: float
    recurrence_rate: float = field(init=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.uint8)
        self.recurrence_rate = float(self.matrix.mean())

    def to_pgm(self) -> bytes:
        """Binary PGM (P5), recurrences black (0) on white (255)."""
        n, m = self.matrix.shape
        pixels = np.where(self.matrix == 1, 0, 255).astype(np.uint8)
        return f"P5\n{m} {n}\n255\n".encode("ascii") + pixels.tobytes()

    def to_csv(self) -> str:
        return "\n".join(",".join(str(int(v)) for v in row) for row in self.matrix) + "\n"

    def save(self, path) -> None:
        path = Path(path)
        if path.suffix == ".pgm":
            path.write_bytes(self.to_pgm())
        else:
            path.write_text(self.to_csv())


def _as_state_matrix(states) -> np.ndarray:
    arr = np.asarray(states, dtype=float)
    if arr.size == 0 or len(arr) == 0:
        raise ValueError("no states given")
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionError("states must be a list of equal-length vectors")
    return arr


def pairwise_distances(states) -> np.ndarray:
    arr = _as_state_matrix(states)
    return squareform(pdist(arr))


def epsilon_from_fraction(states, fraction: float = DEFAULT_EPSILON_FRACTION) -> float:
    """``fraction`` times the largest pairwise distance among ``states``."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    arr = _as_state_matrix(states)
    if len(arr) < 2:
        raise ValueError("need at least two states")
    eps = fraction * float(pairwise_distances(arr).max())
    return eps if eps > 0.0 else float(np.nextafter(0.0, 1.0))


def recurrence_plot(states, epsilon: float | None = None) -> RecurrencePlot:
    """``R_ij = 1`` iff ``|x_i - x_j| < epsilon`` (Euclidean).

    ``epsilon`` defaults to 10% of the largest pairwise distance.
    """
    arr = _as_state_matrix(states)
    if epsilon is None:
        epsilon = epsilon_from_fraction(arr) if len(arr) > 1 else 1.0
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    dist = pairwise_distances(arr)
    return RecurrencePlot((dist < epsilon).astype(np.uint8), float(epsilon))
