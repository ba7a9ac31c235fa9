"""Activation functions, their Hermite spectra, and HP activation synthesis.

An ``HP`` activation is a truncated Hermite series whose coefficients come
from a design profile: an arithmetic descent from ``max_coeff`` by
``spacing``, floored at ``min_coeff``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import hermite
from .hermite import HermiteSpectrum

KINDS = ("identity", "sigmoid", "tanh", "relu", "step", "rbf", "swish", "hp")
# Kinds whose spectra need quadrature split at x = 0.
_KINKED = {"relu": (0.0,), "step": (0.0,)}
# Kinds with a stated closed-form spectrum (possibly partial).
CLOSED_FORM_KINDS = ("rbf", "step", "relu", "sigmoid", "swish")


class ActivationError(ValueError):
    pass


@dataclass(frozen=True)
class HpDesignProfile:
    """Target coefficient profile for an HP activation.

    ``layout`` picks which Hermite orders receive the coefficients:
    ``"consecutive"`` uses 0..num_terms-1, ``"odd"`` uses 1, 3, 5, ... and
    ``"even"`` uses 0, 2, 4, ...
    """

    max_coeff: float = 0.62
    min_coeff: float = 0.40
    spacing: float = 0.13
    num_terms: int = 3
    layout: str = "consecutive"

    def validate(self) -> None:
        if not 0.0 < self.min_coeff <= self.max_coeff < 1.0:
            raise ActivationError(
                f"need 0 < min_coeff <= max_coeff < 1, got min={self.min_coeff} max={self.max_coeff}")
        if not self.spacing > 0.0:
            raise ActivationError("spacing must be positive")
        if int(self.num_terms) != self.num_terms or self.num_terms < 1:
            raise ActivationError("num_terms must be a positive integer")
        if self.layout not in ("consecutive", "odd", "even"):
            raise ActivationError(f"unknown layout {self.layout!r}")

    def coefficients(self) -> list[float]:
        """The designed coefficient values in descending order."""
        self.validate()
        # Round away float noise from repeated subtraction (0.62 - 0.13 etc).
        return [round(max(self.max_coeff - k * self.spacing, self.min_coeff), 12)
                for k in range(self.num_terms)]

    def orders(self) -> list[int]:
        if self.layout == "odd":
            return [2 * k + 1 for k in range(self.num_terms)]
        if self.layout == "even":
            return [2 * k for k in range(self.num_terms)]
        return list(range(self.num_terms))


DEFAULT_PROFILE = HpDesignProfile()


@dataclass(frozen=True)
class ActivationFn:
    """An evaluatable nonlinearity with its derivative.

    Parameters live in ``params``: ``c`` and ``s`` for RBF. HP activations
    carry their ``spectrum``.
    """

    kind: str
    params: tuple[tuple[str, float], ...] = ()
    spectrum: HermiteSpectrum | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ActivationError(f"unknown activation kind {self.kind!r}")
        if self.kind == "hp" and self.spectrum is None:
            raise ActivationError("HP activation needs a spectrum")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    @property
    def p(self) -> dict:
        return dict(self.params)

    def __call__(self, x):
        return eval_activation(self, x)

    def deriv(self, x):
        return eval_deriv(self, x)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return _KINKED.get(self.kind, ())

    def spec_string(self) -> str:
        """String form accepted by :func:`parse_activation`."""
        if self.kind == "rbf":
            p = self.p
            return f"rbf:c={p['c']:g},s={p['s']:g}"
        if self.kind == "hp":
            meta = self.spectrum.meta
            if "profile" in meta:
                pr = meta["profile"]
                out = f"hp:max={pr.max_coeff:g},min={pr.min_coeff:g},gap={pr.spacing:g},n={pr.num_terms}"
                if pr.layout != "consecutive":
                    out += f",layout={pr.layout}"
                return out
            return "hp:coeffs=" + "/".join(repr(c) for c in self.spectrum.coefficients)
        return self.kind


def identity() -> ActivationFn:
    return ActivationFn("identity")


def sigmoid() -> ActivationFn:
    return ActivationFn("sigmoid")


def tanh() -> ActivationFn:
    return ActivationFn("tanh")


def relu() -> ActivationFn:
    return ActivationFn("relu")


def step() -> ActivationFn:
    return ActivationFn("step")


def swish() -> ActivationFn:
    return ActivationFn("swish")


def rbf(c: float = 1.0, s: float = 1.0) -> ActivationFn:
    if not s > 0:
        raise ActivationError("RBF scale must be positive")
    return ActivationFn("rbf", (("c", float(c)), ("s", float(s))), name=f"rbf(c={c:g},s={s:g})")


def hp_from_spectrum(spectrum: HermiteSpectrum | list[float], name: str = "hp") -> ActivationFn:
    if not isinstance(spectrum, HermiteSpectrum):
        spectrum = HermiteSpectrum(tuple(spectrum), provenance="design")
    if not np.all(np.isfinite(spectrum.as_array())):
        raise ActivationError("HP spectrum must be finite")
    return ActivationFn("hp", spectrum=spectrum, name=name)


def eval_activation(a: ActivationFn, x):
    """Activation value, elementwise over arrays."""
    x = np.asarray(x, dtype=float)
    kind = a.kind
    if kind == "identity":
        out = x.copy()
    elif kind == "sigmoid":
        out = expit(x)
    elif kind == "tanh":
        out = np.tanh(x)
    elif kind == "relu":
        out = np.maximum(x, 0.0)
    elif kind == "step":
        out = (x > 0).astype(float)
    elif kind == "rbf":
        p = a.p
        out = np.exp(-((x - p["c"]) ** 2) / (2.0 * p["s"] ** 2))
    elif kind == "swish":
        out = x * expit(x)
    else:
        out = hermite.reconstruct(a.spectrum, x)
    return float(out) if np.ndim(out) == 0 else out


def eval_deriv(a: ActivationFn, x):
    """First derivative; ReLU'(0) = 0 and Step' = 0 everywhere."""
    x = np.asarray(x, dtype=float)
    kind = a.kind
    if kind == "identity":
        out = np.ones_like(x)
    elif kind == "sigmoid":
        s = expit(x)
        out = s * (1.0 - s)
    elif kind == "tanh":
        out = 1.0 - np.tanh(x) ** 2
    elif kind == "relu":
        out = (x > 0).astype(float)
    elif kind == "step":
        out = np.zeros_like(x)
    elif kind == "rbf":
        p = a.p
        out = -(x - p["c"]) / p["s"] ** 2 * np.exp(-((x - p["c"]) ** 2) / (2.0 * p["s"] ** 2))
    elif kind == "swish":
        s = expit(x)
        out = s + x * s * (1.0 - s)
    else:
        out = hermite.reconstruct_deriv(a.spectrum, x)
    return float(out) if np.ndim(out) == 0 else out


def synthesize_hp(profile: HpDesignProfile = DEFAULT_PROFILE) -> ActivationFn:
    """HP activation whose spectrum follows ``profile``.

    >>> synthesize_hp(HpDesignProfile(0.62, 0.40, 0.13, 3)).spectrum.coefficients
    (0.62, 0.49, 0.4)
    """
    values = profile.coefficients()
    orders = profile.orders()
    coeffs = [0.0] * (max(orders) + 1)
    for n, v in zip(orders, values):
        coeffs[n] = v
    spectrum = HermiteSpectrum(tuple(coeffs), provenance="design", meta={"profile": profile})
    name = f"hp:max={profile.max_coeff:g},min={profile.min_coeff:g},gap={profile.spacing:g},n={profile.num_terms}"
    return ActivationFn("hp", spectrum=spectrum, name=name)


def oracle_spectrum(a: ActivationFn, max_order: int = hermite.DEFAULT_ORDER) -> HermiteSpectrum:
    """Quadrature spectrum of ``a``; exact for HP activations."""
    if a.kind == "hp":
        coeffs = list(a.spectrum.coefficients[: max_order + 1])
        coeffs += [0.0] * (max_order + 1 - len(coeffs))
        return HermiteSpectrum(tuple(coeffs))
    return hermite.project(lambda x: eval_activation(a, x), max_order, breakpoints=a.breakpoints or None)


def published_spectrum(a: ActivationFn | str, max_order: int) -> HermiteSpectrum:
    """Closed-form spectrum exactly as published for RBF, Step, ReLU, Sigmoid, Swish.

    Orders the published material does not state are NaN. Nothing here is
    corrected; compare against :func:`verified_spectrum` for the quadrature
    values.
    """
    if isinstance(a, str):
        a = parse_activation(a)
    if max_order < 0:
        raise ValueError("max_order must be non-negative")
    kind = a.kind
    if kind not in CLOSED_FORM_KINDS:
        raise ActivationError(f"no published closed form for {a.name}")
    coeffs = []
    for n in range(max_order + 1):
        if kind == "rbf":
            coeffs.append(_rbf_closed_form(n, a.p["c"], a.p["s"]))
        elif kind == "step":
            if n == 0:
                coeffs.append(1.0 / math.sqrt(2.0))
            elif n % 2:
                coeffs.append(hermite.double_factorial(n - 2) / math.sqrt(2.0 * math.pi * math.factorial(n)))
            else:
                coeffs.append(0.0)
        elif kind == "relu":
            if n == 1:
                coeffs.append(1.0 / math.sqrt(2.0))
            elif n % 2 == 0:
                coeffs.append(hermite.double_factorial(n - 3) / math.sqrt(math.pi * math.factorial(n)))
            else:
                coeffs.append(0.0)
        elif kind == "sigmoid":
            stated = {0: 0.5, 1: 0.206621}
            coeffs.append(stated.get(n, 0.0 if n % 2 == 0 else math.nan))
        else:  # swish
            stated = {0: 0.292206, 1: 1.0 / math.sqrt(2.0), 2: 0.350845}
            coeffs.append(stated.get(n, math.nan))
    return HermiteSpectrum(tuple(coeffs), provenance="published-closed-form")


def _rbf_closed_form(n: int, c: float, s: float) -> float:
    front = math.sqrt(2.0 * math.pi) * c * math.exp(-c * c / (2.0 * s * s + 2.0))
    if n == 0:
        return front * s / math.sqrt(s * s + 1.0)
    return front / (s * (s * s + 1.0) ** (n + 0.5))


@dataclass
class SpectrumReport:
    """Quadrature spectrum with per-order differences from a closed form."""

    activation: str
    spectrum: HermiteSpectrum
    closed_form: HermiteSpectrum | None = None
    differences: list[float] = field(default_factory=list)

    @property
    def max_discrepancy(self) -> float:
        finite = [abs(d) for d in self.differences if not math.isnan(d)]
        return max(finite) if finite else math.nan

    def to_dict(self) -> dict:
        out = {"activation": self.activation, "spectrum": self.spectrum.to_dict()}
        if self.closed_form is not None:
            out["closed_form"] = self.closed_form.to_dict()
            out["abs_difference"] = [None if math.isnan(d) else d for d in self.differences]
            md = self.max_discrepancy
            out["max_abs_difference"] = None if math.isnan(md) else md
        return out


def verified_spectrum(a: ActivationFn | str, max_order: int = hermite.DEFAULT_ORDER) -> SpectrumReport:
    """Quadrature spectrum, reconciled against the closed form where one exists."""
    if isinstance(a, str):
        a = parse_activation(a)
    spec = oracle_spectrum(a, max_order)
    if a.kind not in CLOSED_FORM_KINDS:
        return SpectrumReport(a.name, spec)
    closed = published_spectrum(a, max_order)
    diffs = [abs(q - p) if not math.isnan(p) else math.nan
             for q, p in zip(spec.coefficients, closed.coefficients)]
    return SpectrumReport(a.name, spec, closed, diffs)


def _parse_kv(body: str) -> dict[str, str]:
    out = {}
    for item in filter(None, body.split(",")):
        if "=" not in item:
            raise ActivationError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_activation(text: str) -> ActivationFn:
    """Build an activation from its CLI name.

    Accepted forms: ``sigmoid``, ``tanh``, ``relu``, ``step``, ``swish``,
    ``identity``, ``rbf:c=1,s=1``, ``hp`` (default profile),
    ``hp:max=0.62,min=0.40,gap=0.13,n=3[,layout=odd]``,
    ``hp:coeffs=0.6/0.5/0.4`` and ``hp:file=spectrum.json``.
    """
    text = text.strip()
    head, _, body = text.partition(":")
    head = head.lower()
    try:
        if head in ("identity", "linear"):
            return identity()
        if head in ("sigmoid", "tanh", "relu", "step", "swish") and not body:
            return ActivationFn(head)
        if head == "rbf":
            kv = _parse_kv(body)
            return rbf(float(kv.get("c", 1.0)), float(kv.get("s", 1.0)))
        if head == "hp":
            kv = _parse_kv(body)
            if "file" in kv:
                return load_hp(kv["file"])
            if "coeffs" in kv:
                return hp_from_spectrum([float(v) for v in kv["coeffs"].split("/")])
            d = DEFAULT_PROFILE
            profile = HpDesignProfile(
                float(kv.get("max", d.max_coeff)), float(kv.get("min", d.min_coeff)),
                float(kv.get("gap", d.spacing)), int(kv.get("n", d.num_terms)),
                kv.get("layout", d.layout))
            return synthesize_hp(profile)
    except (KeyError, TypeError) as exc:
        raise ActivationError(f"cannot parse activation {text!r}: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ActivationError):
            raise
        raise ActivationError(f"cannot parse activation {text!r}: {exc}") from exc
    raise ActivationError(f"unknown activation {text!r}")


def save_hp(a: ActivationFn, path) -> None:
    if a.kind != "hp":
        raise ActivationError("only HP activations serialize to a spectrum file")
    data = a.spectrum.to_dict()
    profile = a.spectrum.meta.get("profile")
    if profile is not None:
        data["profile"] = {"max": profile.max_coeff, "min": profile.min_coeff,
                           "gap": profile.spacing, "n": profile.num_terms,
                           "layout": profile.layout}
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def load_hp(path) -> ActivationFn:
    data = json.loads(Path(path).read_text())
    spectrum = HermiteSpectrum.from_dict(data)
    if "profile" in data:
        p = data["profile"]
        profile = HpDesignProfile(p["max"], p["min"], p["gap"], p["n"], p.get("layout", "consecutive"))
        act = synthesize_hp(profile)
        if act.spectrum.coefficients != spectrum.coefficients:
            raise ActivationError("spectrum file disagrees with its own profile")
        return act
    return hp_from_spectrum(spectrum)
