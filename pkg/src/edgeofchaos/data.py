"""Datasets: Mackey-Glass, CSV series, MNIST IDX files, synthetic classification.

Also holds chronological splitting and the MAE / RMSE / MAPE metric suite.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_MISSING = {"", "nan", "na", "n/a", "null", "none"}


class DataError(ValueError):
    pass


class EmptyFileError(DataError):
    pass


class WidthMismatchError(DataError):
    pass


class UnparseableCellError(DataError):
    pass


class IdxError(DataError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedIdxError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


class SplitError(DataError):
    pass


# --------------------------------------------------------------------------
# Mackey-Glass


def mackey_glass(length: int, tau: float = 17.0, beta: float = 0.2, gamma: float = 0.1,
                 n: float = 10.0, dt: float = 0.1, seed: int = 0, sample_every: int = 10,
                 history: float | None = None, transient: int = 0) -> np.ndarray:
    """Integrate ``x' = beta x(t-tau) / (1 + x(t-tau)^n) - gamma x(t)`` with RK4.

    The delayed term at half steps is linearly interpolated between grid
    values. Returns ``length`` samples taken every ``sample_every``
    integration steps, after dropping ``transient`` samples.

    The initial history on ``[-tau, 0]`` is the constant ``history`` when
    given, otherwise ``1.2`` plus seeded uniform noise of width 0.2.
    """
    if length < 1 or sample_every < 1 or transient < 0:
        raise DataError("length and sample_every must be positive, transient non-negative")
    if not (tau > 0 and dt > 0 and gamma >= 0 and beta >= 0):
        raise DataError("tau and dt must be positive; beta and gamma non-negative")
    lag = int(round(tau / dt))
    if lag < 1 or abs(lag * dt - tau) > 1e-9 * max(1.0, tau):
        raise DataError("tau must be a positive multiple of dt")
    total = (length + transient) * sample_every
    if history is None:
        rng = np.random.default_rng(seed)
        hist = 1.2 + 0.2 * (rng.random(lag + 1) - 0.5)
    else:
        hist = np.full(lag + 1, float(history))
    x = np.empty(lag + total + 1)
    x[: lag + 1] = hist

    def rhs(xt, xd):
        return beta * xd / (1.0 + xd**n) - gamma * xt

    for i in range(lag, lag + total):
        d0 = x[i - lag]
        d1 = x[i - lag + 1]
        dh = 0.5 * (d0 + d1)
        xi = x[i]
        k1 = rhs(xi, d0)
        k2 = rhs(xi + 0.5 * dt * k1, dh)
        k3 = rhs(xi + 0.5 * dt * k2, dh)
        k4 = rhs(xi + dt * k3, d1)
        x[i + 1] = xi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    out = x[lag + sample_every:: sample_every]
    return out[transient: transient + length].copy()


# --------------------------------------------------------------------------
# CSV series


@dataclass
class MultivariateSeries:
    values: np.ndarray
    columns: list[str]
    period: str | None = None
    units: str | None = None
    rejected_rows: list[int] = field(default_factory=list)

    @property
    def shape(self):
        return self.values.shape

    def __len__(self):
        return len(self.values)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv_series(path, has_header: bool | None = None, period: str | None = None,
                    units: str | None = None) -> MultivariateSeries:
    """Read one timestep per row, one variable per column.

    Rows with blank or missing cells are dropped and their 0-based data row
    indices reported in ``rejected_rows``. A header is detected automatically
    when ``has_header`` is None (first row not all numeric).
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyFileError(f"{path}: no rows")
    if has_header is None:
        has_header = not all(_is_number(c) or c.strip().lower() in _MISSING for c in rows[0])
    if has_header:
        columns = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            raise EmptyFileError(f"{path}: header but no data")
    else:
        columns = [f"x{j}" for j in range(len(rows[0]))]
    width = len(columns)
    kept, rejected = [], []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise WidthMismatchError(f"{path}: data row {i} has {len(row)} cells, expected {width}")
        cells = [c.strip() for c in row]
        if any(c.lower() in _MISSING for c in cells):
            rejected.append(i)
            continue
        try:
            vals = [float(c) for c in cells]
        except ValueError as exc:
            raise UnparseableCellError(f"{path}: data row {i}: {exc}") from exc
        if not all(math.isfinite(v) for v in vals):
            rejected.append(i)
            continue
        kept.append(vals)
    values = np.array(kept, dtype=float).reshape(len(kept), width)
    return MultivariateSeries(values, columns, period, units, rejected)


def write_csv_series(path, values, columns=None) -> None:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    columns = columns or [f"x{j}" for j in range(values.shape[1])]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


@dataclass
class Standardizer:
    """Column-wise zero-mean, unit-variance scaling fitted on one slice."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, values) -> "Standardizer":
        values = np.asarray(values, dtype=float)
        scale = values.std(axis=0)
        return cls(values.mean(axis=0), np.where(scale > 0, scale, 1.0))

    def transform(self, values):
        return (np.asarray(values, dtype=float) - self.mean) / self.scale

    def inverse(self, values):
        return np.asarray(values, dtype=float) * self.scale + self.mean


# --------------------------------------------------------------------------
# IDX


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    image_shape: tuple[int, int] | None = None

    def __len__(self):
        return len(self.labels)


def write_idx_images(path, images) -> None:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def read_idx_images(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise TruncatedIdxError(f"{path}: header truncated")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise BadMagicError(f"{path}: magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")
    need = count * rows * cols
    if len(raw) - 16 < need:
        raise TruncatedIdxError(f"{path}: payload has {len(raw) - 16} bytes, expected {need}")
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=16).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise TruncatedIdxError(f"{path}: header truncated")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise BadMagicError(f"{path}: magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")
    if len(raw) - 8 < count:
        raise TruncatedIdxError(f"{path}: payload has {len(raw) - 8} bytes, expected {count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).copy()


def downsample_images(images: np.ndarray, factor: int) -> np.ndarray:
    """Mean-pool ``(count, h, w)`` images by ``factor``; trailing pixels are cropped."""
    if factor < 1:
        raise DataError("downsample factor must be >= 1")
    count, h, w = images.shape
    hh, ww = h // factor, w // factor
    crop = images[:, : hh * factor, : ww * factor].astype(float)
    return crop.reshape(count, hh, factor, ww, factor).mean(axis=(2, 4))


def load_idx(images_path, labels_path, downsample: int = 1) -> LabeledDataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images but {len(labels)} labels")
    scaled = images.astype(float) / 255.0
    if downsample > 1:
        scaled = downsample_images(scaled, downsample)
    shape = scaled.shape[1:]
    return LabeledDataset(scaled.reshape(len(scaled), -1), labels.astype(int), tuple(shape))


def idx_fixture(count: int = 10, seed: int = 0, size: int = 28):
    """Synthetic digit-like images and labels for tests and smoke runs."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, count).astype(np.uint8)
    images = np.zeros((count, size, size), dtype=np.uint8)
    for i, lab in enumerate(labels):
        # One bright bar whose row encodes the label, plus noise.
        row = 2 + int(lab) * (size - 4) // 10
        images[i, row: row + 2, 3: size - 3] = 230
        images[i] |= rng.integers(0, 20, (size, size)).astype(np.uint8)
    return images, labels


# --------------------------------------------------------------------------
# Synthetic classification


def make_blobs(n: int = 400, centers: int = 2, dim: int = 2, spread: float = 0.6,
               separation: float = 3.0, seed: int = 0) -> LabeledDataset:
    """Gaussian clusters with centres spaced ``separation`` apart on a circle."""
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(centers) / centers
    mu = np.zeros((centers, dim))
    mu[:, 0] = separation / 2 * np.cos(angles)
    if dim > 1:
        mu[:, 1] = separation / 2 * np.sin(angles)
    labels = np.arange(n) % centers
    rng.shuffle(labels)
    x = mu[labels] + spread * rng.normal(size=(n, dim))
    return LabeledDataset(x, labels)


def make_moons(n: int = 400, noise: float = 0.1, seed: int = 0) -> LabeledDataset:
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    t = np.pi * rng.random(n)
    x = np.where(labels[:, None] == 0,
                 np.c_[np.cos(t), np.sin(t)],
                 np.c_[1 - np.cos(t), 0.5 - np.sin(t)])
    x = x + noise * rng.normal(size=x.shape)
    return LabeledDataset(x - x.mean(axis=0), labels)


# --------------------------------------------------------------------------
# Splits and metrics


@dataclass(frozen=True)
class ChronoSplit:
    train: range
    validation: range
    test: range
    ratios: tuple[float, float, float]

    def apply(self, values):
        values = np.asarray(values)
        return (values[self.train.start: self.train.stop],
                values[self.validation.start: self.validation.stop],
                values[self.test.start: self.test.stop])


def parse_ratios(text: str) -> tuple[float, float, float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise SplitError(f"split must look like 0.7:0.1:0.2, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise SplitError(f"bad split {text!r}") from exc


def chrono_split(length: int, train_ratio: float = 0.7, val_ratio: float = 0.1,
                 test_ratio: float = 0.2) -> ChronoSplit:
    """Contiguous train / validation / test index ranges, in time order."""
    ratios = (float(train_ratio), float(val_ratio), float(test_ratio))
    if any(r <= 0 for r in ratios):
        raise SplitError("split ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"split ratios sum to {sum(ratios)}, not 1")
    # Round before flooring so 100 * (0.7 + 0.1) lands on 80, not 79.
    a = math.floor(round(length * ratios[0], 9))
    b = math.floor(round(length * (ratios[0] + ratios[1]), 9))
    return ChronoSplit(range(0, a), range(a, b), range(b, length), ratios)


@dataclass
class MetricReport:
    mae: float
    rmse: float
    mape: float
    mape_excluded: int = 0

    def to_dict(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "mape": self.mape,
                "mape_excluded": self.mape_excluded}


def metrics(predicted, observed) -> MetricReport:
    """MAE, RMSE and MAPE; MAPE skips observations within 1e-8 * max|obs| of zero."""
    pred = np.asarray(predicted, dtype=float).ravel()
    obs = np.asarray(observed, dtype=float).ravel()
    if pred.shape != obs.shape or pred.size == 0:
        raise DataError("predicted and observed need equal, non-zero length")
    err = pred - obs
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    delta = 1e-8 * float(np.max(np.abs(obs)))
    keep = np.abs(obs) > delta
    mape = float(np.mean(np.abs(err[keep]) / np.abs(obs[keep]))) if keep.any() else math.nan
    return MetricReport(mae, rmse, mape, int((~keep).sum()))
