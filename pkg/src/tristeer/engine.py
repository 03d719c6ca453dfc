"""Inferred variances, optimal linear-inference gains and steering parameters.

The engine works on any :class:`QuadCovariance`. Steering of mode ``i`` is
tested by estimating ``X_i`` and ``P_i`` from linear combinations of the other
modes' quadratures,

    X_i + Σ_s u_s σ_s O_s ,    P_i + Σ_s v_s σ'_s O'_s ,

and ``E = Δ_inf X_i · Δ_inf P_i`` with each factor minimized over its gains
(ordinary least squares). Steering holds when ``E < 1/2``.

Only ``+ - * /`` and a square root are applied to covariance entries, so an
``mpmath`` covariance is processed in extended precision.
"""
from __future__ import annotations

import functools
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import mpmath
import numpy as np
from scipy.optimize import minimize

from .model import (
    BIPARTITE_PAIRS,
    MODES,
    GainSet,
    ParameterError,
    QuadCovariance,
    SteeringReport,
    TristeerError,
    index,
    other_modes,
)

# Above this 2x2 Gram condition number the two steerer quadratures are
# treated as collinear.
GRAM_CONDITION_LIMIT = 1e12


class DegenerateRegressionError(TristeerError, ArithmeticError):
    """A steerer quadrature has zero variance, so no regression gain exists."""


class GainFallbackWarning(RuntimeWarning):
    """The two-steerer solve fell back to the dominant single steerer."""


class Term(NamedTuple):
    """``sign * O`` where ``O`` is quadrature ``quad`` of mode ``mode``."""

    mode: str
    quad: str
    sign: int = 1


def _term(spec) -> Term:
    t = Term(*spec)
    index(t.mode, t.quad)
    if t.sign not in (1, -1):
        raise ParameterError(f"term sign must be +1 or -1, got {t.sign!r}")
    return t


@dataclass(frozen=True)
class PairingSpec:
    """Which steerer quadratures enter the X and P estimates of ``target``.

    With ``shared_gains`` one gain per steerer multiplies its term in both
    factors; otherwise each factor has its own gains.
    """

    target: str
    factor_X: tuple[Term, ...]
    factor_P: tuple[Term, ...]
    shared_gains: bool = False

    def __post_init__(self):
        if self.target not in MODES:
            raise ParameterError(f"unknown target mode {self.target!r}")
        fx = tuple(_term(t) for t in self.factor_X)
        fp = tuple(_term(t) for t in self.factor_P)
        for terms in (fx, fp):
            modes = [t.mode for t in terms]
            if self.target in modes:
                raise ParameterError("a mode cannot appear in its own estimate")
            if len(set(modes)) != len(modes):
                raise ParameterError("each steerer may contribute one term per factor")
        if [t.mode for t in fx] != [t.mode for t in fp]:
            raise ParameterError("X and P factors must use the same steerers in the same order")
        if len(fx) > 2:
            raise ParameterError("at most two steering modes are supported")
        object.__setattr__(self, "factor_X", fx)
        object.__setattr__(self, "factor_P", fp)

    @property
    def steerers(self) -> tuple[str, ...]:
        return tuple(t.mode for t in self.factor_X)

    def with_shared_gains(self, shared: bool = True) -> "PairingSpec":
        return PairingSpec(self.target, self.factor_X, self.factor_P, shared)

    def label(self) -> str:
        return f"{self.target}|{''.join(self.steerers)}"


@dataclass(frozen=True)
class SteeringResult:
    E: float
    gains_X: GainSet
    gains_P: GainSet
    pairing: PairingSpec
    flags: tuple[str, ...] = field(default=())

    @property
    def steers(self) -> bool:
        return self.E < 0.5


def _sqrt(x):
    if isinstance(x, mpmath.mpf):
        return mpmath.sqrt(max(x, 0))
    return math.sqrt(max(x, 0.0))


def _at_cov_precision(fn):
    """Run ``fn(cov, ...)`` at the working precision of ``cov``."""
    @functools.wraps(fn)
    def wrapper(cov, *args, **kwargs):
        with cov.working_precision():
            return fn(cov, *args, **kwargs)
    return wrapper


def _c(cov: QuadCovariance, a: tuple[str, str], b: tuple[str, str]):
    return cov.entries[index(*a), index(*b)]


@_at_cov_precision
def inferred_variance(cov: QuadCovariance, target: tuple[str, str],
                      terms: Sequence, gains) -> float:
    """``Var(Q_target + Σ u_s σ_s O_s)`` from the covariance bilinear form.

    Args:
        cov: output covariance.
        target: ``(mode, quad)`` of the estimated quadrature.
        terms: ``Term`` objects (or ``(mode, quad, sign)`` tuples).
        gains: mapping from steerer mode to gain; missing modes count as 0.
    """
    terms = [_term(t) for t in terms]
    coeffs = [(target, 1)] + [((t.mode, t.quad), t.sign * gains.get(t.mode, 0)) for t in terms]
    total = 0
    for (q1, w1), (q2, w2) in itertools.product(coeffs, repeat=2):
        total = total + w1 * w2 * _c(cov, q1, q2)
    return total


@_at_cov_precision
def optimal_gain_single(cov: QuadCovariance, target: tuple[str, str], term) -> float:
    """Regression gain ``u = -σ <Q_t, O> / Var(O)`` for a single steerer term."""
    t = _term(term)
    var = _c(cov, (t.mode, t.quad), (t.mode, t.quad))
    if not var > 0:
        raise DegenerateRegressionError(
            f"steerer quadrature {t.quad}_{t.mode} has variance {var!r}"
        )
    return -t.sign * _c(cov, target, (t.mode, t.quad)) / var


def _condition_limit(x) -> float:
    """``GRAM_CONDITION_LIMIT``, relaxed in proportion to extra working digits."""
    if isinstance(x, mpmath.mpf):
        return GRAM_CONDITION_LIMIT * 10.0 ** max(mpmath.mp.dps - 16, 0)
    return GRAM_CONDITION_LIMIT


def _solve_pair(cov, target, t1: Term, t2: Term):
    """Least-squares gains for two steerers; returns ``(u1, u2, fallback)``."""
    o1, o2 = (t1.mode, t1.quad), (t2.mode, t2.quad)
    V11, V22 = _c(cov, o1, o1), _c(cov, o2, o2)
    V12 = t1.sign * t2.sign * _c(cov, o1, o2)
    c1 = t1.sign * _c(cov, target, o1)
    c2 = t2.sign * _c(cov, target, o2)
    if not (V11 > 0 and V22 > 0):
        raise DegenerateRegressionError("a steerer quadrature has zero variance")
    det = V12 * V12 - V11 * V22
    # condition number of the 2x2 Gram matrix, in the entries' own precision
    tr = V11 + V22
    disc = _sqrt((V11 - V22) ** 2 + 4 * V12 * V12)
    lo = -2 * det / (tr + disc)
    if not lo > 0 or (tr + disc) / (2 * lo) > _condition_limit(V11):
        # Collinear steerers: keep the one that explains more of the target.
        if c1 * c1 / V11 >= c2 * c2 / V22:
            return -c1 / V11, 0 * c1, True
        return 0 * c2, -c2 / V22, True
    u1 = (V22 * c1 - V12 * c2) / det
    u2 = (V11 * c2 - V12 * c1) / det
    return u1, u2, False


@_at_cov_precision
def optimal_gains_pair(cov: QuadCovariance, target: tuple[str, str], terms) -> tuple[float, float]:
    """Gains minimizing ``Var(Q_t + u1 σ1 O1 + u2 σ2 O2)``.

    Solves the 2x2 normal equations in closed form. If the steerer Gram
    matrix is numerically singular only the dominant steerer is used and a
    :class:`GainFallbackWarning` is issued.
    """
    t1, t2 = (_term(t) for t in terms)
    u1, u2, fallback = _solve_pair(cov, target, t1, t2)
    if fallback:
        warnings.warn("collinear steerer quadratures; using the dominant steerer only",
                      GainFallbackWarning, stacklevel=2)
    return u1, u2


def _optimal_factor(cov, target, terms):
    """Minimized inferred variance for one factor: ``(variance, gains, flags)``."""
    if not terms:
        return _c(cov, target, target), {}, ()
    if len(terms) == 1:
        u = optimal_gain_single(cov, target, terms[0])
        gains = {terms[0].mode: u}
        flags = ()
    else:
        u1, u2, fallback = _solve_pair(cov, target, terms[0], terms[1])
        gains = {terms[0].mode: u1, terms[1].mode: u2}
        flags = ("gram_fallback",) if fallback else ()
    return inferred_variance(cov, target, terms, gains), gains, flags


def _to_gainset(gains) -> GainSet:
    return GainSet({k: float(v) for k, v in gains.items()})


@_at_cov_precision
def _steering(cov: QuadCovariance, pairing: PairingSpec) -> SteeringResult:
    t = pairing.target
    vx, gx, fx = _optimal_factor(cov, (t, "X"), pairing.factor_X)
    vp, gp, fp = _optimal_factor(cov, (t, "P"), pairing.factor_P)
    flags = tuple(sorted(set(fx + fp)))
    if pairing.shared_gains and pairing.steerers and not _gains_coincide(gx, gp):
        return _shared_steering(cov, pairing, gx, gp, flags)
    E = _sqrt(vx * vp)
    if not math.isfinite(float(E)):
        E = _sqrt(vx) * _sqrt(vp)
    return SteeringResult(float(E), _to_gainset(gx), _to_gainset(gp), pairing, flags)


def _gains_coincide(gx, gp) -> bool:
    for k in gx:
        a, b = float(gx[k]), float(gp[k])
        if abs(a - b) > 1e-12 * max(1.0, abs(a), abs(b)):
            return False
    return True


def _shared_steering(cov, pairing, gx, gp, flags) -> SteeringResult:
    """Minimize ``Var_X(u) Var_P(u)`` with one gain per steerer."""
    fcov = cov.to_float()
    t = pairing.target
    modes = pairing.steerers

    def product(u):
        g = dict(zip(modes, u))
        return (inferred_variance(fcov, (t, "X"), pairing.factor_X, g)
                * inferred_variance(fcov, (t, "P"), pairing.factor_P, g))

    if len(modes) == 1:
        # product of two quadratics: stationary points are roots of a cubic
        m = modes[0]
        samples = np.array([-1.0, 0.0, 1.0, 2.0, 3.0])
        qx = np.polyfit(samples, [inferred_variance(fcov, (t, "X"), pairing.factor_X, {m: s})
                                  for s in samples], 2)
        qp = np.polyfit(samples, [inferred_variance(fcov, (t, "P"), pairing.factor_P, {m: s})
                                  for s in samples], 2)
        roots = np.roots(np.polyder(np.polymul(qx, qp)))
        candidates = [float(r.real) for r in roots if abs(r.imag) < 1e-9 * (1 + abs(r))]
        best = min(candidates, key=lambda u: product([u]))
        u = np.array([best])
    else:
        starts = [np.array([float(gx[k]) for k in modes]),
                  np.array([float(gp[k]) for k in modes])]
        starts.append(0.5 * (starts[0] + starts[1]))
        fits = [minimize(lambda v: product(v), s, method="BFGS", options={"gtol": 1e-12})
                for s in starts]
        u = min(fits, key=lambda f: f.fun).x
    g = dict(zip(modes, (float(x) for x in u)))
    E = math.sqrt(max(product(u), 0.0))
    return SteeringResult(E, GainSet(g), GainSet(g), pairing, flags + ("shared_numeric",))


def bipartite_steering(cov: QuadCovariance, pairing: PairingSpec) -> SteeringResult:
    """``E_{i|j}`` for a one-steerer pairing."""
    if len(pairing.steerers) != 1:
        raise ParameterError(f"bipartite pairing needs exactly one steerer, got {pairing.steerers}")
    return _steering(cov, pairing)


def tripartite_steering(cov: QuadCovariance, pairing: PairingSpec) -> SteeringResult:
    """``E_{i|jk}`` for a two-steerer pairing."""
    if len(pairing.steerers) != 2:
        raise ParameterError(f"tripartite pairing needs exactly two steerers, got {pairing.steerers}")
    return _steering(cov, pairing)


def _pairing(target, fx, fp) -> PairingSpec:
    return PairingSpec(target, tuple(Term(*t) for t in fx), tuple(Term(*t) for t in fp))


# Quadrature combinations that are optimal for the pulsed three-mode outputs.
PAPER_PAIRINGS: dict[tuple[str, str], PairingSpec] = {
    ("m", "a"): _pairing("m", [("a", "P", 1)], [("a", "X", 1)]),
    ("m", "c"): _pairing("m", [("c", "X", 1)], [("c", "P", -1)]),
    ("a", "m"): _pairing("a", [("m", "P", 1)], [("m", "X", 1)]),
    ("a", "c"): _pairing("a", [("c", "P", 1)], [("c", "X", -1)]),
    ("c", "a"): _pairing("c", [("a", "P", 1)], [("a", "X", -1)]),
    ("c", "m"): _pairing("c", [("m", "X", 1)], [("m", "P", -1)]),
    ("m", "ac"): _pairing("m", [("a", "P", 1), ("c", "X", 1)], [("a", "X", 1), ("c", "P", -1)]),
    ("a", "mc"): _pairing("a", [("m", "P", 1), ("c", "P", 1)], [("m", "X", 1), ("c", "X", -1)]),
    ("c", "am"): _pairing("c", [("a", "P", 1), ("m", "X", 1)], [("a", "X", -1), ("m", "P", -1)]),
}


def canonical_pairing(target: str, steerers: str, shared_gains: bool = False) -> PairingSpec:
    """Standard pairing for ``E_{target|steerers}`` (steerer order is free)."""
    for (t, s), spec in PAPER_PAIRINGS.items():
        if t == target and sorted(s) == sorted(steerers):
            return spec.with_shared_gains(shared_gains)
    raise ParameterError(f"no pairing for {target}|{steerers}")


def full_report(cov: QuadCovariance, shared_gains: bool = False) -> SteeringReport:
    """All nine steering parameters of ``cov`` using the standard pairings."""
    bi = {(t, s): bipartite_steering(cov, canonical_pairing(t, s, shared_gains)).E
          for t, s in BIPARTITE_PAIRS}
    tri = {t: tripartite_steering(cov, canonical_pairing(t, "".join(other_modes(t)), shared_gains)).E
           for t in MODES}
    return SteeringReport(bi, tri)


def pairing_search(cov: QuadCovariance, target: str, steerers: Sequence[str],
                   shared_gains: bool = False) -> SteeringResult:
    """Exhaustive search over quadrature and sign choices for each steerer.

    In each factor every steerer contributes either its X or its P
    quadrature with either sign. Ties (within 1e-12 relative) are resolved
    in favour of the standard pairing.
    """
    steerers = tuple(steerers)
    if not 1 <= len(steerers) <= 2 or target in steerers:
        raise ParameterError(f"invalid steerers {steerers!r} for target {target!r}")
    best = None
    try:
        best = _steering(cov, canonical_pairing(target, "".join(steerers), shared_gains))
    except ParameterError:
        pass
    k = len(steerers)
    for quads_x in itertools.product("XP", repeat=k):
        for quads_p in itertools.product("XP", repeat=k):
            for signs in itertools.product((1, -1), repeat=k):
                fx = tuple(Term(m, q, 1) for m, q in zip(steerers, quads_x))
                fp = tuple(Term(m, q, s) for m, q, s in zip(steerers, quads_p, signs))
                res = _steering(cov, PairingSpec(target, fx, fp, shared_gains))
                if best is None or res.E < best.E - 1e-12 * max(best.E, 1e-300):
                    best = res
    return best
