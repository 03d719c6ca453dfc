"""Core types shared by every part of the package.

Conventions (fixed globally):

* quadratures ``X = (a + a†)/√2`` and ``P = -i(a - a†)/√2``, so the vacuum
  variance is exactly 1/2 (ħ = 1);
* covariances are symmetrized, ``<A,B> = <AB + BA>/2 - <A><B>``;
* output modes are ordered ``(m, a, c)`` = (mirror, cavity output temporal
  mode, atomic ensemble), with X and P interleaved:
  ``(X_m, P_m, X_a, P_a, X_c, P_c)``.
"""
from __future__ import annotations

import contextlib
import enum
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import mpmath
import numpy as np

MODES = ("m", "a", "c")
QUADRATURES = ("X", "P")
VACUUM_VARIANCE = 0.5


class TristeerError(Exception):
    """Base class for errors raised by this package."""


class ParameterError(TristeerError, ValueError):
    """Invalid physical or numerical parameters."""


class UnequalNoiseError(ParameterError):
    """An equal-noise formula was asked to evaluate a point with n0 != n1."""


def index(mode: str, quad: str) -> int:
    """Row of ``(mode, quad)`` in a 6x6 output covariance."""
    try:
        return 2 * MODES.index(mode) + QUADRATURES.index(quad)
    except ValueError:
        raise ParameterError(f"unknown quadrature label {mode!r}/{quad!r}") from None


def other_modes(mode: str) -> tuple[str, str]:
    if mode not in MODES:
        raise ParameterError(f"unknown mode {mode!r}")
    return tuple(m for m in MODES if m != mode)  # type: ignore[return-value]


def _check_rate(name, value):
    if not math.isfinite(value):
        raise ParameterError(f"{name} must be finite, got {value!r}")
    if value < 0:
        raise ParameterError(f"{name} must be non-negative, got {value!r}")


@dataclass(frozen=True)
class ModelParams:
    """Effective interaction rates of the adiabatically eliminated system.

    ``G = g²/κ`` is the parametric (mirror/cavity) rate and ``G_a = g_a²/κ``
    the beamsplitter (cavity/atoms) rate. ``kappa`` only matters to the
    dynamical oracle.
    """

    G: float
    G_a: float
    kappa: float
    tau: float

    def __post_init__(self):
        for name in ("G", "G_a", "kappa", "tau"):
            _check_rate(name, getattr(self, name))
        if self.kappa == 0:
            raise ParameterError("kappa must be positive")
        if not self.G > self.G_a:
            raise ParameterError(
                f"temporal modes require G > G_a (got G={self.G!r}, G_a={self.G_a!r})"
            )

    @classmethod
    def from_alpha(cls, alpha: float, *, r: float | None = None,
                   r_alpha: float | None = None, G: float = 1.0,
                   kappa: float | None = None) -> "ModelParams":
        """Build parameters from ``alpha`` and either ``r = Gτ`` or ``r_alpha``.

        ``kappa`` defaults to ``1e4 * G`` (``κ/g = 100``).
        """
        if not (math.isfinite(alpha) and alpha >= 1.0):
            raise ParameterError(f"alpha must be >= 1, got {alpha!r}")
        if (r is None) == (r_alpha is None):
            raise ParameterError("give exactly one of r or r_alpha")
        alpha2 = alpha * alpha
        if r is None:
            r = r_alpha * alpha2
        if kappa is None:
            kappa = 1e4 * G
        return make_params(G, G * (1.0 - 1.0 / alpha2), kappa, r / G)

    @property
    def alpha2(self) -> float:
        return self.G / (self.G - self.G_a)

    @property
    def beta2(self) -> float:
        return self.G_a / (self.G - self.G_a)

    @property
    def alpha(self) -> float:
        return math.sqrt(self.alpha2)

    @property
    def beta(self) -> float:
        return math.sqrt(self.beta2)

    @property
    def r(self) -> float:
        return self.G * self.tau

    @property
    def r_alpha(self) -> float:
        return (self.G - self.G_a) * self.tau


def make_params(G: float, G_a: float, kappa: float, tau: float) -> ModelParams:
    """Validated constructor; raises :class:`ParameterError` for ``G <= G_a``."""
    return ModelParams(float(G), float(G_a), float(kappa), float(tau))


@dataclass(frozen=True)
class NoiseConfig:
    """Thermal occupations: ``n0`` for the mirror, ``n1`` for cavity and atoms."""

    n0: float = 0.0
    n1: float = 0.0

    def __post_init__(self):
        _check_rate("n0", self.n0)
        _check_rate("n1", self.n1)

    @classmethod
    def uniform(cls, n: float) -> "NoiseConfig":
        return cls(n, n)

    @property
    def nbar(self) -> float:
        return 0.5 * (self.n0 + self.n1)

    @property
    def equal(self) -> bool:
        return self.n0 == self.n1


def _is_object_array(a: np.ndarray) -> bool:
    return a.dtype == object


@dataclass(frozen=True)
class QuadCovariance:
    """Symmetric 6x6 covariance of the output quadratures.

    ``entries`` is normally float64. An object array of ``mpmath.mpf`` values is
    also accepted so that ill-conditioned inference can be done in extended
    precision; everything downstream only uses ``+ - * /`` and works at
    ``precision`` decimal digits.
    """

    entries: np.ndarray
    precision: int | None = None

    def __post_init__(self):
        a = np.array(self.entries, dtype=object if _is_object_array(np.asarray(self.entries)) else float)
        if a.shape != (6, 6):
            raise ParameterError(f"covariance must be 6x6, got shape {a.shape}")
        if _is_object_array(a):
            if any(a[i, j] != a[j, i] for i in range(6) for j in range(i)):
                raise ParameterError("covariance is not symmetric")
        else:
            if not np.all(np.isfinite(a)):
                raise ParameterError("covariance has non-finite entries")
            scale = max(1.0, float(np.abs(a).max()))
            if np.abs(a - a.T).max() > 1e-12 * scale:
                raise ParameterError("covariance is not symmetric")
            a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        if _is_object_array(a) and self.precision is None:
            object.__setattr__(self, "precision", mpmath.mp.dps)

    @property
    def is_extended_precision(self) -> bool:
        return _is_object_array(self.entries)

    def cov(self, mode1: str, quad1: str, mode2: str, quad2: str):
        return self.entries[index(mode1, quad1), index(mode2, quad2)]

    def var(self, mode: str, quad: str):
        i = index(mode, quad)
        return self.entries[i, i]

    def working_precision(self):
        """Context manager that sets mpmath to this covariance's precision."""
        if self.precision is None:
            return contextlib.nullcontext()
        return mpmath.workdps(self.precision)

    def to_float(self) -> "QuadCovariance":
        if not self.is_extended_precision:
            return self
        return QuadCovariance(np.array([[float(x) for x in row] for row in self.entries]))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.to_float().entries).min())

    def is_psd(self, tol: float = 1e-9) -> bool:
        e = self.to_float().entries
        return self.min_eigenvalue() >= -tol * max(1.0, float(np.abs(e).max()))


def vacuum_input_covariance(noise: NoiseConfig) -> QuadCovariance:
    """Thermal input state: ``n0 + 1/2`` on the mirror, ``n1 + 1/2`` elsewhere."""
    h0, h1 = noise.n0 + 0.5, noise.n1 + 0.5
    return QuadCovariance(np.diag([h0, h0, h1, h1, h1, h1]))


@dataclass(frozen=True)
class GainSet(Mapping):
    """Immutable map from steering-mode label to its linear-inference weight."""

    gains: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.gains.items():
            if not math.isfinite(float(v)):
                raise ParameterError(f"gain {k!r} is not finite: {v!r}")
        object.__setattr__(self, "gains", MappingProxyType(dict(self.gains)))

    def __getitem__(self, key):
        return self.gains[key]

    def __iter__(self):
        return iter(self.gains)

    def __len__(self):
        return len(self.gains)

    def __hash__(self):
        return hash(tuple(sorted(self.gains.items())))

    def __repr__(self):
        return f"GainSet({dict(self.gains)!r})"


class SteeringClass(str, enum.Enum):
    NOT_STEERED = "NotSteered"
    ORDINARY = "OrdinaryTripartite"
    COLLECTIVE = "CollectiveTripartite"


# E values within this distance of 1/2 are treated as "no steering".
BOUNDARY_TOL = 1e-12


def steers(E: float) -> bool:
    """Steering criterion ``E < 1/2`` with the boundary counted as no steering."""
    return E < 0.5 - BOUNDARY_TOL


def classify(tripartite: float, bipartite_j: float, bipartite_k: float) -> SteeringClass:
    if not steers(tripartite):
        return SteeringClass.NOT_STEERED
    if steers(bipartite_j) or steers(bipartite_k):
        return SteeringClass.ORDINARY
    return SteeringClass.COLLECTIVE


# Column order used by reports and CSV output.
BIPARTITE_PAIRS = (("m", "a"), ("m", "c"), ("a", "m"), ("a", "c"), ("c", "a"), ("c", "m"))
TRIPARTITE_TARGETS = ("m", "a", "c")


def tripartite_label(target: str) -> str:
    """``'m' -> 'm|ac'``, ``'a' -> 'a|mc'``, ``'c' -> 'c|am'``."""
    return {"m": "m|ac", "a": "a|mc", "c": "c|am"}[target]


@dataclass(frozen=True)
class SteeringReport:
    """All nine steering parameters plus a per-mode classification.

    ``bipartite`` is keyed by ``(target, steerer)``; ``tripartite`` by target.
    """

    bipartite: Mapping[tuple[str, str], float]
    tripartite: Mapping[str, float]
    classification: Mapping[str, SteeringClass] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        bi = {k: float(self.bipartite[k]) for k in BIPARTITE_PAIRS}
        tri = {k: float(self.tripartite[k]) for k in TRIPARTITE_TARGETS}
        for label, E in list(bi.items()) + list(tri.items()):
            if not E >= 0:
                raise ParameterError(f"steering parameter {label} is negative or NaN: {E!r}")
        cls = {}
        for t in TRIPARTITE_TARGETS:
            j, k = other_modes(t)
            cls[t] = classify(tri[t], bi[(t, j)], bi[(t, k)])
        if self.classification is not None and dict(self.classification) != cls:
            raise ParameterError("classification is inconsistent with the steering values")
        object.__setattr__(self, "bipartite", MappingProxyType(bi))
        object.__setattr__(self, "tripartite", MappingProxyType(tri))
        object.__setattr__(self, "classification", MappingProxyType(cls))

    def E(self, target: str, steerers: str) -> float:
        """Look up ``E_{target|steerers}``; ``steerers`` is one or two mode letters."""
        if len(steerers) == 1:
            return self.bipartite[(target, steerers)]
        if sorted(steerers) != sorted(other_modes(target)):
            raise ParameterError(f"no tripartite parameter E_{target}|{steerers}")
        return self.tripartite[target]

    def as_row(self) -> dict[str, object]:
        row: dict[str, object] = {}
        for t, s in BIPARTITE_PAIRS:
            row[f"E_{t}_{s}"] = self.bipartite[(t, s)]
        for t in TRIPARTITE_TARGETS:
            row["E_" + tripartite_label(t).replace("|", "_")] = self.tripartite[t]
        for t in TRIPARTITE_TARGETS:
            row[f"class_{t}"] = self.classification[t].value
        return row
