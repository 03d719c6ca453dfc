"""Closed-form output moments, steering parameters and thresholds.

Everything here is written in terms of ``u = exp(r_alpha) - 1`` and the two
interaction weights

    A = (n0 + n1 + 1) * alpha^2 * u * (u + 2)       # = K alpha^2 (e^{2 r_alpha} - 1)
    C = (n0 + n1 + 1) * alpha^2 * beta^2 * u^2      # = K alpha^2 beta^2 (e^{r_alpha} - 1)^2

in which the output variances are ``ΔX_a² = h1 + A``, ``ΔX_c² = h1 + C`` and
``ΔX_m² = h0 + A + C`` (``h_i = n_i + 1/2``). Each steering parameter then
reduces to a ratio of sums of positive terms, e.g.

    E_{a|m}  = h1 (h0 + C) / (h0 + A + C)
    E_{m|ac} = h0 h1 / (h1 + A + C)

which is algebraically identical to the usual ``1 - correlation²/variance``
expressions but free of cancellation, so it stays accurate deep into the
large-squeezing regime. Past ``r_alpha = LARGE_R_ALPHA`` all terms are
rescaled by ``u^-2`` so nothing overflows.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple

import mpmath
import numpy as np

from .model import (
    BIPARTITE_PAIRS,
    MODES,
    ModelParams,
    NoiseConfig,
    ParameterError,
    QuadCovariance,
    SteeringReport,
    TristeerError,
    UnequalNoiseError,
    other_modes,
)

class RangeError(TristeerError, OverflowError):
    """Values would overflow float64; use extended precision instead."""


# Beyond this the u^2 terms (times alpha^4 K) get too close to float overflow.
LARGE_R_ALPHA = 300.0


@dataclass(frozen=True)
class OutputMoments:
    """Independent second moments of the output fields.

    The remaining entries follow from ``ΔP_i² = ΔX_i²``,
    ``<P_m,X_a> = <X_m,P_a>``, ``<P_m,P_c> = -<X_m,X_c>``,
    ``<X_a,P_c> = -<P_a,X_c>``; all other cross terms vanish.
    """

    var_X_a: float
    var_X_c: float
    var_X_m: float
    c_XmPa: float
    c_XmXc: float
    c_PaXc: float
    precision: int | None = None   # decimal digits when the fields are mpf

    def covariance(self) -> QuadCovariance:
        return to_covariance(self)


def output_moments(p: ModelParams, n: NoiseConfig, precision: int | None = None) -> OutputMoments:
    """Output variances and correlations for a pulse of squeezing ``p.r_alpha``.

    With ``precision`` (decimal digits) the moments are evaluated with mpmath
    and returned as ``mpf`` values; the corresponding covariance can then be
    fed to the steering engine without losing the small inferred variances to
    float64 rounding.
    """
    if precision is None:
        if p.r_alpha > LARGE_R_ALPHA:
            raise RangeError(
                f"r_alpha={p.r_alpha} overflows float64 moments; pass precision=..."
            )
        return _moments(p.alpha2, p.beta2, math.expm1(p.r_alpha), n.n0, n.n1, math.sqrt)
    with mpmath.workdps(precision):
        mpf = mpmath.mpf
        G, G_a, tau = mpf(p.G), mpf(p.G_a), mpf(p.tau)
        a2 = G / (G - G_a)
        b2 = G_a / (G - G_a)
        u = mpmath.expm1((G - G_a) * tau)
        m = _moments(a2, b2, u, mpf(n.n0), mpf(n.n1), mpmath.sqrt)
    return dataclasses.replace(m, precision=precision)


def _moments(a2, b2, u, n0, n1, sqrt) -> OutputMoments:
    half = 0.5 if isinstance(u, float) else mpmath.mpf(1) / 2
    K = n0 + n1 + 1
    A = K * a2 * u * (u + 2)
    C = K * a2 * b2 * u * u
    alpha, beta = sqrt(a2), sqrt(b2)
    root = sqrt(u * (u + 2))      # sqrt(e^{2r} - 1)
    Q = 1 + a2 * u                # alpha^2 e^r - beta^2
    return OutputMoments(
        var_X_a=n1 + half + A,
        var_X_c=n1 + half + C,
        var_X_m=n0 + half + A + C,
        c_XmPa=-K * alpha * root * Q,
        c_XmXc=-K * alpha * beta * u * Q,
        c_PaXc=K * a2 * beta * root * u,
    )


def to_covariance(m: OutputMoments, n: NoiseConfig | None = None) -> QuadCovariance:
    """Assemble the 6x6 ``(X_m, P_m, X_a, P_a, X_c, P_c)`` covariance.

    ``n`` is accepted for call-site symmetry only; the noise is already
    folded into the moments.
    """
    if m.precision is None:
        return _assemble(m)
    with mpmath.workdps(m.precision):   # negation rounds to the context precision
        return _assemble(m)


def _assemble(m: OutputMoments) -> QuadCovariance:
    extended = m.precision is not None
    V = np.zeros((6, 6), dtype=object if extended else float)
    if extended:
        V[:] = mpmath.mpf(0)
    V[0, 0] = V[1, 1] = m.var_X_m
    V[2, 2] = V[3, 3] = m.var_X_a
    V[4, 4] = V[5, 5] = m.var_X_c

    def put(i, j, value):
        V[i, j] = V[j, i] = value

    put(0, 3, m.c_XmPa)      # <X_m, P_a>
    put(1, 2, m.c_XmPa)      # <P_m, X_a>
    put(0, 4, m.c_XmXc)      # <X_m, X_c>
    put(1, 5, -m.c_XmXc)     # <P_m, P_c>
    put(3, 4, m.c_PaXc)      # <P_a, X_c>
    put(2, 5, -m.c_PaXc)     # <X_a, P_c>
    return QuadCovariance(V, m.precision)


class _Terms(NamedTuple):
    scale: float   # common factor S multiplying every term below (1, or u^-2)
    a: float       # S * alpha^2 u (u + 2)
    c: float       # S * alpha^2 beta^2 u^2


def _terms(p: ModelParams) -> _Terms:
    a2, b2, r = p.alpha2, p.beta2, p.r_alpha
    if r <= LARGE_R_ALPHA:
        u = math.expm1(r)
        return _Terms(1.0, a2 * u * (u + 2.0), a2 * b2 * u * u)
    w = math.exp(-r) / -math.expm1(-r)     # 1/u, underflows gracefully
    return _Terms(w * w, a2 * (1.0 + 2.0 * w), a2 * b2)


def _ratio(num: float, den: float) -> float:
    if den == 0.0:
        return math.inf if num > 0 else 0.0
    return num / den


def _weights(p: ModelParams, n: NoiseConfig):
    t = _terms(p)
    K = n.n0 + n.n1 + 1.0
    h0, h1 = n.n0 + 0.5, n.n1 + 0.5
    return h0, h1, h0 * t.scale, h1 * t.scale, K * t.a, K * t.c


def _check_mode(mode):
    if mode not in MODES:
        raise ParameterError(f"unknown mode {mode!r}; expected one of {MODES}")


def tripartite_E(p: ModelParams, n: NoiseConfig, target: str) -> float:
    """``E_{target|jk}`` for general ``n0``, ``n1``.

    ``E_{m|ac} = (n0+½){1 - KX/[(n1+½) + KX]}`` with ``X = (α²e^r - β²)² - 1``,
    and the analogous forms for the cavity and atomic modes.
    """
    _check_mode(target)
    h0, h1, h0s, h1s, A, C = _weights(p, n)
    if target == "m":
        return _ratio(h0 * h1s, h1s + A + C)
    if target == "a":
        return _ratio(h1 * h0s, h0s + A)
    if C == 0.0:
        return h1      # no beamsplitter coupling: the atoms stay thermal
    return _ratio(h1 * h0s, h0s + C)


def bipartite_E(p: ModelParams, n: NoiseConfig, target: str, steerer: str) -> float:
    """``E_{target|steerer}`` for the six ordered mode pairs."""
    _check_mode(target)
    _check_mode(steerer)
    if target == steerer:
        raise ParameterError("a mode cannot steer itself")
    h0, h1, h0s, h1s, A, C = _weights(p, n)
    pair = (target, steerer)
    if pair == ("a", "m"):
        return _ratio(h1 * (h0s + C), h0s + A + C)
    if pair == ("c", "m"):
        return _ratio(h1 * (h0s + A), h0s + A + C)
    if pair == ("m", "a"):
        return _ratio(h1 * (h0s + C), h1s + A)
    if pair == ("m", "c"):
        return _ratio(h1 * (h0s + A), h1s + C)
    if pair == ("a", "c"):
        return _ratio(h1 * (h1s + A + C), h1s + C)
    return _ratio(h1 * (h1s + A + C), h1s + A)          # (c, a)


def report(p: ModelParams, n: NoiseConfig) -> SteeringReport:
    """All nine closed-form parameters with their classification."""
    return SteeringReport(
        bipartite={(t, s): bipartite_E(p, n, t, s) for t, s in BIPARTITE_PAIRS},
        tripartite={t: tripartite_E(p, n, t) for t in MODES},
    )


def _require_equal(n: NoiseConfig):
    if not n.equal:
        raise UnequalNoiseError(
            f"formula assumes n0 == n1, got n0={n.n0!r}, n1={n.n1!r}"
        )


def tripartite_threshold_n(p: ModelParams, target: str) -> float:
    """Occupation ``n`` (with ``n0 = n1 = n``) at which ``E_{target|jk} = 1/2``.

    Grows like ``e^{2 r_alpha}``; returns ``inf`` once that overflows.
    """
    _check_mode(target)
    t = _terms(p)
    if t.scale != 1.0:
        return math.inf
    if target == "m":
        return t.a + t.c
    return t.a if target == "a" else t.c


def tripartite_E_equal_noise(p: ModelParams, n: NoiseConfig, target: str) -> float:
    """Equal-noise form ``E = 1/2 + (n - n_th)/(2 n_th + 1)``."""
    _require_equal(n)
    n_th = tripartite_threshold_n(p, target)
    if math.isinf(n_th):
        return tripartite_E(p, n, target)
    return 0.5 + (n.n0 - n_th) / (2.0 * n_th + 1.0)


class Threshold(NamedTuple):
    """A bipartite threshold. ``value`` is clamped at 0; ``raw`` is not."""

    value: float
    raw: float
    clamped: bool


def bipartite_threshold_n(p: ModelParams, target: str, steerer: str) -> Threshold | None:
    """Equal-noise occupation above which ``E_{target|steerer} >= 1/2``.

    Returns ``None`` for the cavity/atom pairs, which never steer. A negative
    raw value means steering is already absent at ``n = 0``; it is reported
    as 0 with ``clamped=True``.
    """
    pair = (target, steerer)
    if pair in (("a", "c"), ("c", "a")):
        return None
    S, a, c = _terms(p)
    if pair == ("a", "m"):
        raw = _ratio(a, S + 2.0 * c)
    elif pair == ("m", "a"):
        raw = (a - c) / (S + 2.0 * c)
    elif pair == ("m", "c"):
        raw = (c - a) / (S + 2.0 * a)
    elif pair == ("c", "m"):
        raw = c / (S + 2.0 * a)
    else:
        raise ParameterError(f"no bipartite threshold for pair {pair}")
    if raw < 0:
        return Threshold(0.0, raw, True)
    return Threshold(raw, raw, False)


def steering_onset_r_alpha(alpha: float, n: float) -> float:
    """``r_alpha`` at which ``E_{m|ac}`` first drops below 1/2 (``n0 = n1 = n``)."""
    if n < 0 or alpha < 1:
        raise ParameterError("need n >= 0 and alpha >= 1")
    return math.log1p((math.sqrt(n + 1.0) - 1.0) / (alpha * alpha))


def asymptotic_E(p: ModelParams, n: NoiseConfig, target: str, regime: str) -> float:
    """Leading-order tripartite parameters.

    ``regime="large_r"``: ``r_alpha >> 1``, e.g. ``E_{m|ac} ≈ (n+½)/(2α⁴e^{2r_α})``.
    ``regime="large_alpha"``: ``alpha² >> r``, e.g. ``E_{a|mc} ≈ (n+½)/(4r+1)``.
    """
    _require_equal(n)
    _check_mode(target)
    h = n.n0 + 0.5
    a2, b2 = p.alpha2, p.beta2
    if regime == "large_r":
        s = math.exp(-2.0 * p.r_alpha)
        den = {"m": 2.0 * a2 * a2, "c": 2.0 * a2 * b2, "a": 2.0 * a2}[target]
        return _ratio(h * s, den)
    if regime == "large_alpha":
        r = p.r
        if target == "m":
            return h / (2.0 * (r + 1.0) ** 2 - 1.0)
        if target == "c":
            return h / (2.0 * b2 * r * r / a2 + 1.0)
        return h / (4.0 * r + 1.0)
    raise ParameterError(f"unknown regime {regime!r}; use 'large_r' or 'large_alpha'")


def ratio_Ecam_over_Emac(p: ModelParams) -> float:
    """``E_{c|am}/E_{m|ac} = 1 + 2α²(e^{2r}-1)/(2α²β²(e^r-1)² + 1)``, noise-free."""
    S, a, c = _terms(p)
    return 1.0 + _ratio(2.0 * a, S + 2.0 * c)


def large_n0_bipartite_limits(p: ModelParams, n1: float, target: str) -> float:
    """``n0 → ∞`` limits of ``E_{a|m}`` and ``E_{c|m}`` (independent of n0)."""
    S, a, c = _terms(p)
    h1 = n1 + 0.5
    if target == "a":
        return h1 * (S + c) / (S + a + c)
    if target == "c":
        return h1 * (S + a) / (S + a + c)
    raise ParameterError("large-n0 limits exist only for targets 'a' and 'c' (steered by m)")


def tripartite_thresholds(p: ModelParams) -> dict[str, float]:
    return {t: tripartite_threshold_n(p, t) for t in MODES}


def bipartite_thresholds(p: ModelParams) -> dict[tuple[str, str], Threshold]:
    out = {}
    for t in MODES:
        for s in other_modes(t):
            th = bipartite_threshold_n(p, t, s)
            if th is not None:
                out[(t, s)] = th
    return out
