"""Second-moment propagation of the full (non-adiabatic) linearized dynamics.

State vector (quadratures, X before P):

    (a_m, a_c, c_a, A)      A = ∫ w(t) a_out(t) dt,  a_out = a_in + √(2κ) a_c

with the blue-sideband / beamsplitter Langevin equations

    ȧ_m = -γ_m a_m - i g a_c†                      + √(2γ_m) ξ_m
    ȧ_c = -κ a_c  - i g a_m† - i g_a c_a           - √(2κ) a_in
    ċ_a = -γ_a c_a - i g_a a_c                     + √(2γ_a) ξ_a

The accumulator weight ``w(t) = N e^{λt}`` (``λ = G - G_a``) is normalized so
``∫_0^τ w² dt = 1``, which makes ``A(τ)`` a bosonic temporal mode. The output
covariance of ``(a_m(τ), A(τ), c_a(τ))`` converges to the adiabatic closed
form as ``κ/g → ∞``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .model import (
    ModelParams,
    NoiseConfig,
    ParameterError,
    QuadCovariance,
    TristeerError,
)

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

# Extended-state slices.
MIRROR, CAVITY, ATOMS, ACC = slice(0, 2), slice(2, 4), slice(4, 6), slice(6, 8)
# Output ordering (m, a, c) = (mirror, accumulator, atoms).
OUTPUT_INDEX = [0, 1, 6, 7, 4, 5]

MAX_STEPS = 200_000_000
MAX_R_ALPHA = 300.0


class OracleError(TristeerError, ArithmeticError):
    """Numerical failure during propagation."""


@dataclass(frozen=True)
class OracleConfig:
    """Settings of the dynamical model.

    Args:
        kappa_over_g: bad-cavity ratio ``κ/g``; ``κ = (κ/g)² G`` and
            ``g = (κ/g) G``. ``None`` uses ``p.kappa`` as given.
        gamma_m, gamma_a: mirror and atomic damping rates.
        n_m, n_cav, n_at: bath occupations; ``None`` means ``n0``, ``n1``, ``n1``.
        steps_per_kappa: RK4 steps per cavity lifetime ``1/κ``.
        coupling_scale: multiplies ``g`` and ``g_a`` (0 switches them off).
    """

    kappa_over_g: float | None = None
    gamma_m: float = 0.0
    gamma_a: float = 0.0
    n_m: float | None = None
    n_cav: float | None = None
    n_at: float | None = None
    steps_per_kappa: int = 50
    coupling_scale: float = 1.0

    def __post_init__(self):
        if self.kappa_over_g is not None and not self.kappa_over_g > 0:
            raise ParameterError(f"kappa_over_g must be positive, got {self.kappa_over_g!r}")
        if int(self.steps_per_kappa) != self.steps_per_kappa or self.steps_per_kappa < 10:
            raise ParameterError("steps_per_kappa must be an integer >= 10")
        for name in ("gamma_m", "gamma_a", "coupling_scale"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ParameterError(f"{name} must be finite and >= 0, got {v!r}")
        for name in ("n_m", "n_cav", "n_at"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise ParameterError(f"{name} must be >= 0, got {v!r}")

    def occupations(self, n: NoiseConfig) -> tuple[float, float, float]:
        pick = lambda v, d: d if v is None else v   # noqa: E731
        return pick(self.n_m, n.n0), pick(self.n_cav, n.n1), pick(self.n_at, n.n1)


@dataclass(frozen=True)
class ExtendedState:
    """8x8 covariance of ``(a_m, a_c, c_a, A)`` quadratures at time ``t``."""

    cov: np.ndarray
    t: float


@dataclass(frozen=True)
class _Rates:
    kappa: float
    g: float
    g_a: float
    lam: float
    tau: float
    norm: float        # w(t) = norm * exp(lam * (t - tau))


def _rates(p: ModelParams, cfg: OracleConfig) -> _Rates:
    if cfg.kappa_over_g is None:
        kappa = p.kappa
        g = math.sqrt(p.G * kappa)
    else:
        kappa = cfg.kappa_over_g ** 2 * p.G
        g = cfg.kappa_over_g * p.G
    g_a = math.sqrt(p.G_a * kappa)
    lam = p.G - p.G_a
    tau = p.tau
    if not tau > 0:
        raise ParameterError("the oracle needs a positive pulse duration")
    x = 2.0 * lam * tau
    # N e^{λτ} = sqrt(2λ / (1 - e^{-2λτ})), with the λ → 0 limit 1/sqrt(τ)
    norm = math.sqrt(2.0 * lam / -math.expm1(-x)) if x > 0 else 1.0 / math.sqrt(tau)
    s = cfg.coupling_scale
    return _Rates(kappa, s * g, s * g_a, lam, tau, norm)


def _weight(r: _Rates, t: float) -> float:
    return r.norm * math.exp(r.lam * (t - r.tau))


def _quad_map(c1: complex, c2: complex) -> np.ndarray:
    """Real 2x2 block for ``y = c1 x + c2 x†`` acting on ``(X, P)``."""
    s, d = c1 + c2, c1 - c2
    return np.array([[s.real, -d.imag], [s.imag, d.real]])


def _drift_parts(r: _Rates, cfg: OracleConfig):
    """Constant part and accumulator-weight part of the drift matrix."""
    M0 = np.zeros((8, 8))
    M0[MIRROR, MIRROR] = _quad_map(-cfg.gamma_m, 0)
    M0[MIRROR, CAVITY] = _quad_map(0, -1j * r.g)
    M0[CAVITY, CAVITY] = _quad_map(-r.kappa, 0)
    M0[CAVITY, MIRROR] = _quad_map(0, -1j * r.g)
    M0[CAVITY, ATOMS] = _quad_map(-1j * r.g_a, 0)
    M0[ATOMS, ATOMS] = _quad_map(-cfg.gamma_a, 0)
    M0[ATOMS, CAVITY] = _quad_map(-1j * r.g_a, 0)
    M1 = np.zeros((8, 8))
    M1[ACC, CAVITY] = math.sqrt(2.0 * r.kappa) * np.eye(2)
    return M0, M1


def _diffusion_parts(r: _Rates, cfg: OracleConfig, n: NoiseConfig):
    """``D(t) = D0 + w D1 + w² D2`` (cavity noise feeds both a_c and A)."""
    n_m, n_cav, n_at = cfg.occupations(n)
    h_cav = n_cav + 0.5
    I2 = np.eye(2)
    D0 = np.zeros((8, 8))
    D0[MIRROR, MIRROR] = 2.0 * cfg.gamma_m * (n_m + 0.5) * I2
    D0[CAVITY, CAVITY] = 2.0 * r.kappa * h_cav * I2
    D0[ATOMS, ATOMS] = 2.0 * cfg.gamma_a * (n_at + 0.5) * I2
    D1 = np.zeros((8, 8))
    D1[CAVITY, ACC] = D1[ACC, CAVITY] = -math.sqrt(2.0 * r.kappa) * h_cav * I2
    D2 = np.zeros((8, 8))
    D2[ACC, ACC] = h_cav * I2
    return D0, D1, D2


def drift_matrix(p: ModelParams, cfg: OracleConfig, t: float) -> np.ndarray:
    """Drift ``M(t)`` of the 8-dim quadrature vector."""
    r = _rates(p, cfg)
    M0, M1 = _drift_parts(r, cfg)
    return M0 + _weight(r, t) * M1


def diffusion_matrix(p: ModelParams, cfg: OracleConfig, t: float,
                     n: NoiseConfig | None = None) -> np.ndarray:
    """Diffusion ``D(t)`` for bath occupations from ``cfg`` (falling back to ``n``)."""
    r = _rates(p, cfg)
    D0, D1, D2 = _diffusion_parts(r, cfg, n or NoiseConfig())
    w = _weight(r, t)
    return D0 + w * D1 + w * w * D2


def initial_state(n: NoiseConfig, cfg: OracleConfig | None = None) -> ExtendedState:
    """Thermal system modes, empty accumulator."""
    n_m, n_cav, n_at = (cfg or OracleConfig()).occupations(n)
    V = np.diag([n_m + 0.5] * 2 + [n_cav + 0.5] * 2 + [n_at + 0.5] * 2 + [0.0, 0.0])
    return ExtendedState(V, 0.0)


def _rk4_python(V, M0, M1, D0, D1, D2, norm, lam, tau, t0, h, nsteps):
    for k in range(nsteps):
        t = t0 + k * h
        ws = [norm * math.exp(lam * (s - tau)) for s in (t, t + 0.5 * h, t + h)]

        def f(W, w):
            MW = (M0 + w * M1) @ W
            return MW + MW.T + D0 + w * D1 + w * w * D2

        k1 = f(V, ws[0])
        k2 = f(V + 0.5 * h * k1, ws[1])
        k3 = f(V + 0.5 * h * k2, ws[1])
        k4 = f(V + h * k3, ws[2])
        V = V + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return V


if numba is not None:
    @numba.njit(cache=True)
    def _rk4_numba(V, M0, M1, D0, D1, D2, norm, lam, tau, t0, h, nsteps):  # pragma: no cover
        for k in range(nsteps):
            t = t0 + k * h
            wa = norm * math.exp(lam * (t - tau))
            wb = norm * math.exp(lam * (t + 0.5 * h - tau))
            wc = norm * math.exp(lam * (t + h - tau))
            Ma = M0 + wa * M1
            Mb = M0 + wb * M1
            Mc = M0 + wc * M1
            Da = D0 + wa * D1 + wa * wa * D2
            Db = D0 + wb * D1 + wb * wb * D2
            Dc = D0 + wc * D1 + wc * wc * D2
            X = Ma @ V
            k1 = X + X.T + Da
            W = V + 0.5 * h * k1
            X = Mb @ W
            k2 = X + X.T + Db
            W = V + 0.5 * h * k2
            X = Mb @ W
            k3 = X + X.T + Db
            W = V + h * k3
            X = Mc @ W
            k4 = X + X.T + Dc
            V = V + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return V
    _rk4 = _rk4_numba
else:  # pragma: no cover
    _rk4 = _rk4_python

# PSD monitoring interval (steps).
_CHUNK = 100_000


def _check_psd(V: np.ndarray, t: float, h: float):
    if not np.all(np.isfinite(V)):
        raise OracleError(f"non-finite covariance at t={t:.6g} (step h={h:.3g})")
    ev = np.linalg.eigvalsh(0.5 * (V + V.T))
    scale = max(1.0, float(np.abs(V).max()))
    if ev[0] < -1e-8 * scale:
        raise OracleError(
            f"covariance lost positivity at t={t:.6g} (min eigenvalue {ev[0]:.3g}); "
            f"step h={h:.3g} is too large, raise steps_per_kappa"
        )


def propagate_state(p: ModelParams, n: NoiseConfig, cfg: OracleConfig | None = None) -> ExtendedState:
    """Integrate ``dV/dt = M V + V Mᵀ + D`` over the pulse with fixed-step RK4."""
    cfg = cfg or OracleConfig()
    if p.r_alpha > MAX_R_ALPHA:
        raise OracleError(f"r_alpha={p.r_alpha} is out of range for float64 propagation")
    r = _rates(p, cfg)
    nsteps = math.ceil(r.tau * r.kappa * cfg.steps_per_kappa)
    if nsteps > MAX_STEPS:
        raise ParameterError(
            f"{nsteps} integration steps needed; lower kappa_over_g or the pulse length"
        )
    h = r.tau / nsteps
    M0, M1 = _drift_parts(r, cfg)
    D0, D1, D2 = _diffusion_parts(r, cfg, n)
    V = initial_state(n, cfg).cov.copy()
    done = 0
    while done < nsteps:
        k = min(_CHUNK, nsteps - done)
        V = _rk4(V, M0, M1, D0, D1, D2, r.norm, r.lam, r.tau, done * h, h, k)
        done += k
        _check_psd(V, done * h, h)
    return ExtendedState(0.5 * (V + V.T), r.tau)


def propagate(p: ModelParams, n: NoiseConfig, cfg: OracleConfig | None = None) -> QuadCovariance:
    """Output covariance of ``(B_out, A_out, C_out)`` in ``(m, a, c)`` order."""
    V = propagate_state(p, n, cfg).cov
    return QuadCovariance(V[np.ix_(OUTPUT_INDEX, OUTPUT_INDEX)])


@dataclass(frozen=True)
class MonteCarloResult:
    cov: QuadCovariance
    stderr: np.ndarray
    samples: int

    def z_scores(self, reference: QuadCovariance) -> np.ndarray:
        """Entrywise ``|sample - reference| / stderr`` (0 where stderr is 0)."""
        diff = np.abs(self.cov.entries - reference.entries)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(self.stderr > 0, diff / self.stderr, np.where(diff > 1e-12, np.inf, 0.0))
        return z


def _comoving_system(r: _Rates, cfg: OracleConfig, n: NoiseConfig):
    """Time-invariant form of the dynamics.

    With ``Ã = A / w(t)`` the accumulator obeys ``dÃ = -λ Ã dt + a_out dt``,
    so drift and diffusion are constant and ``A(τ) = w(τ) Ã(τ)``.
    """
    M0, M1 = _drift_parts(r, cfg)
    M = M0 + M1
    M[ACC, ACC] = -r.lam * np.eye(2)
    D0, D1, D2 = _diffusion_parts(r, cfg, n)
    return M, D0 + D1 + D2


def _van_loan(M: np.ndarray, D: np.ndarray, h: float):
    """Exact one-step transition ``Φ`` and noise covariance ``Q`` over ``h``."""
    d = M.shape[0]
    C = np.zeros((2 * d, 2 * d))
    C[:d, :d] = -M
    C[:d, d:] = D
    C[d:, d:] = M.T
    E = expm(C * h)
    Phi = E[d:, d:].T
    Q = Phi @ E[:d, d:]
    return Phi, 0.5 * (Q + Q.T)


def _psd_sqrt(Q: np.ndarray) -> np.ndarray:
    ev, U = np.linalg.eigh(Q)
    return U * np.sqrt(np.clip(ev, 0.0, None))


_BATCH = 10_000


def _run_batch(args):
    seed_seq, count, Phi, L, L0, steps = args
    rng = np.random.default_rng(seed_seq)
    y = L0 @ rng.standard_normal((8, count))
    for _ in range(steps):
        y = Phi @ y + L @ rng.standard_normal((8, count))
    return y


def monte_carlo_check(p: ModelParams, n: NoiseConfig, cfg: OracleConfig | None = None,
                      samples: int = 10_000, seed: int = 0, steps: int = 64,
                      workers: int | None = None) -> MonteCarloResult:
    """Sample trajectories of the same linear SDE and estimate the output covariance.

    Trajectories are stepped with the exact Gaussian transition of the
    co-moving system, so the only error is statistical. Batches of 10⁴
    trajectories draw from independent substreams of ``seed``; results do not
    depend on ``workers``.

    Args:
        samples: number of trajectories (>= 1000).
        seed: non-negative integer seed.
        steps: time steps per trajectory.
        workers: thread count for batch evaluation (None = serial).
    """
    if samples < 1000:
        raise ParameterError("monte_carlo_check needs at least 1000 samples")
    cfg = cfg or OracleConfig()
    r = _rates(p, cfg)
    M, D = _comoving_system(r, cfg, n)
    Phi, Q = _van_loan(M, D, r.tau / steps)
    L = _psd_sqrt(Q)
    L0 = _psd_sqrt(initial_state(n, cfg).cov)
    counts = [_BATCH] * (samples // _BATCH)
    if samples % _BATCH:
        counts.append(samples % _BATCH)
    seqs = np.random.SeedSequence(seed).spawn(len(counts))
    jobs = [(s, c, Phi, L, L0, steps) for s, c in zip(seqs, counts)]
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(_run_batch, jobs))
    else:
        parts = [_run_batch(j) for j in jobs]
    y = np.concatenate(parts, axis=1)[OUTPUT_INDEX]
    y[2:4] *= r.norm               # A(τ) = w(τ) Ã(τ)
    y -= y.mean(axis=1, keepdims=True)
    prods = y[:, None, :] * y[None, :, :]
    cov = prods.mean(axis=2) * samples / (samples - 1)
    stderr = prods.std(axis=2, ddof=1) / math.sqrt(samples)
    return MonteCarloResult(QuadCovariance(0.5 * (cov + cov.T)), stderr, samples)
