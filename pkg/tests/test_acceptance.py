"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""
import math
import time
import warnings

import numpy as np
import pytest

from tristeer import analytic as an
from tristeer import engine as en
from tristeer import sweep as sw
from tristeer.model import (
    MODES,
    ModelParams,
    NoiseConfig,
    QuadCovariance,
    SteeringClass,
    other_modes,
)
from tristeer.oracle import OracleConfig, propagate

THRESHOLD_PAIRS = (("a", "m"), ("m", "a"), ("m", "c"), ("c", "m"))


@pytest.fixture
def verdict(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return emit


def test_criterion_01_threshold_identity(verdict):
    t0 = time.perf_counter()
    worst_tri = worst_bi = 0.0
    clamped_ok = True
    for alpha in np.linspace(1.01, 5.0, 50):
        for ra in np.linspace(0.0, 10.0, 50):
            p = ModelParams.from_alpha(float(alpha), r_alpha=float(ra))
            for t in MODES:
                n = an.tripartite_threshold_n(p, t)
                worst_tri = max(worst_tri, abs(an.tripartite_E(p, NoiseConfig.uniform(n), t) - 0.5))
            for t, s in THRESHOLD_PAIRS:
                th = an.bipartite_threshold_n(p, t, s)
                if th.clamped:
                    # no threshold exists: the pair does not steer even at n = 0
                    clamped_ok &= an.bipartite_E(p, NoiseConfig(), t, s) >= 0.5
                else:
                    E = an.bipartite_E(p, NoiseConfig.uniform(th.value), t, s)
                    worst_bi = max(worst_bi, abs(E - 0.5))
    dt = time.perf_counter() - t0
    ok = worst_tri <= 1e-12 and worst_bi <= 1e-12 and clamped_ok and dt < 1.0
    verdict(1, ok, f"max|E-1/2| tripartite {worst_tri:.2e}, bipartite {worst_bi:.2e}, "
                   f"clamped pairs consistent {clamped_ok}, {dt:.2f}s")


def test_criterion_02_monogamy(verdict):
    t0 = time.perf_counter()
    worst, lowest = 0.0, math.inf
    for alpha in (1.2, 2.0):
        p = ModelParams.from_alpha(alpha, r_alpha=12.0)
        for n in (0.0, 1.0, 2.0):
            noise = NoiseConfig.uniform(n)
            h2 = (n + 0.5) ** 2
            prod_a = an.bipartite_E(p, noise, "a", "m") * an.bipartite_E(p, noise, "a", "c")
            prod_c = an.bipartite_E(p, noise, "c", "a") * an.bipartite_E(p, noise, "c", "m")
            worst = max(worst, abs(prod_a - h2) / h2)
            lowest = min(lowest, prod_a, prod_c)
    dt = time.perf_counter() - t0
    # at n = 0 the product equals 1/4 identically, so allow float rounding only
    ok = worst <= 1e-3 and lowest >= 0.25 * (1 - 4 * np.finfo(float).eps) and dt < 1.0
    verdict(2, ok, f"max rel deviation {worst:.2e}, min product {lowest!r}, {dt:.2f}s")


def test_criterion_03_engine_matches_closed_forms(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for ra in np.linspace(0.0, 8.0, 20):
        for alpha in np.linspace(1.05, 4.0, 20):
            p = ModelParams.from_alpha(float(alpha), r_alpha=float(ra))
            for n in (0, 1, 2, 4, 8):
                noise = NoiseConfig.uniform(float(n))
                cov = an.to_covariance(an.output_moments(p, noise, precision=30))
                got = en.full_report(cov)
                want = an.report(p, noise)
                for k, v in want.bipartite.items():
                    worst = max(worst, abs(got.bipartite[k] - v) / max(1.0, abs(v)))
                for k, v in want.tripartite.items():
                    worst = max(worst, abs(got.tripartite[k] - v) / max(1.0, abs(v)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 5.0
    verdict(3, ok, f"max deviation {worst:.2e} over 2000 points, {dt:.2f}s")


def _grid_r():
    return np.concatenate([[1e-6, 1e-3, 1e-2], np.linspace(0.0, 30.0, 601)[1:]])


def test_criterion_04_no_noise_regime(verdict):
    below = [("a", "m"), ("m", "a"), ("c", "m")]
    above = [("a", "c"), ("c", "a"), ("m", "c")]
    bad = []
    for r in _grid_r():
        rep = an.report(ModelParams.from_alpha(1.2, r=float(r)), NoiseConfig())
        if not all(rep.bipartite[k] < 0.5 for k in below):
            bad.append(("bipartite below", r))
        if not all(rep.bipartite[k] >= 0.5 for k in above):
            bad.append(("bipartite above", r))
        if not all(v < 0.5 for v in rep.tripartite.values()):
            bad.append(("tripartite", r))
    regions = [sw.find_regions(m, alpha=1.2) for m in MODES]
    ok = not bad and not any(regions)
    verdict(4, ok, f"{len(bad)} violations on {len(_grid_r())} r values, "
                   f"collective intervals {[res.intervals for res in regions]}")


def test_criterion_05_thermal_regime(verdict):
    noise = NoiseConfig.uniform(2.0)
    regions = [sw.find_regions(m, alpha=1.2, n0=2.0, n1=2.0) for m in MODES]
    nonempty = all(regions)
    resid = [x for res in regions for pair in res.residuals for x in pair if x is not None]
    r_star = max(res.intervals[0][0] for res in regions) if nonempty else math.inf
    bad = 0
    for r in np.linspace(r_star, 30.0, 400) if r_star <= 30 else []:
        rep = an.report(ModelParams.from_alpha(1.2, r=float(r)), noise)
        if not (all(v >= 0.5 for v in rep.bipartite.values())
                and all(v < 0.5 for v in rep.tripartite.values())
                and all(c is SteeringClass.COLLECTIVE for c in rep.classification.values())):
            bad += 1
    ok = nonempty and r_star <= 30 and bad == 0 and max(resid) <= 1e-10
    verdict(5, ok, f"r* = {r_star:.6f}, {bad} violations above r*, "
                   f"max boundary residual {max(resid):.2e}")


def test_criterion_06_other_noise_regimes(verdict):
    notes = []
    # mirror noise only, alpha = 1.2: nothing collective on the region grid
    a = [sw.find_regions(m, alpha=1.2, n0=4.0, n1=0.0) for m in MODES]
    ok_a = not any(a)
    fine = sw.find_regions("m", alpha=1.2, n0=4.0, n1=0.0, points=60001)
    if fine:
        lo, hi = fine.intervals[0]
        notes.append(f"6a grid-empty, but a {hi - lo:.3f}-wide window at r={lo:.4f}..{hi:.4f} "
                     "exists below the grid spacing")
    # mirror noise only, alpha = 4: one finite interval for m
    b = sw.find_regions("m", alpha=4.0, n0=4.0, n1=0.0)
    ok_b = len(b.intervals) == 1 and b.intervals[0][1] < 30.0
    notes.append(f"6b m intervals {[(round(x, 5), round(y, 5)) for x, y in b.intervals]}")
    # cavity/atom noise only, alpha = 1.2
    ok_c = True
    for m in MODES:
        coll = sw.find_regions(m, alpha=1.2, n0=0.0, n1=4.0)
        tri = sw.find_regions(m, "tripartite", alpha=1.2, n0=0.0, n1=4.0)
        if not coll or len(tri.intervals) != 1:
            ok_c = False
            continue
        (c_lo, c_hi), (t_lo, t_hi) = coll.intervals[0], tri.intervals[0]
        if m == "m":
            ordn = sw.find_regions(m, "ordinary", alpha=1.2, n0=0.0, n1=4.0)
            ok_c &= (t_lo < c_lo - 0.05 and c_hi <= t_hi and bool(ordn)
                     and abs(ordn.intervals[0][1] - c_lo) < 1e-10)
        else:
            ok_c &= abs(c_lo - t_lo) <= 0.05 and abs(c_hi - t_hi) <= 0.05
    ok = ok_a and ok_b and ok_c
    verdict(6, ok, f"6a {'pass' if ok_a else 'fail'}, 6b {'pass' if ok_b else 'fail'}, "
                   f"6c {'pass' if ok_c else 'fail'}; " + "; ".join(notes))


def test_criterion_07_onset(verdict):
    worst = 0.0
    for n in (1.0, 3.0, 8.0):
        for alpha in (1.0, 1.2, 2.0):
            ra = an.steering_onset_r_alpha(alpha, n)
            p = ModelParams.from_alpha(alpha, r_alpha=ra)
            worst = max(worst, abs(an.tripartite_E(p, NoiseConfig.uniform(n), "m") - 0.5))
    verdict(7, worst <= 1e-12, f"max|E-1/2| {worst:.2e}")


@pytest.mark.slow
def test_criterion_08_oracle_convergence(verdict):
    t0 = time.perf_counter()
    problems, worst_rel = [], 0.0
    for alpha in (1.2, 2.0):
        for r in (1.0, 3.0):
            for n in (0.0, 2.0):
                p, noise = ModelParams.from_alpha(alpha, r=r), NoiseConfig.uniform(n)
                ref = an.to_covariance(an.output_moments(p, noise))
                devs = []
                for ratio in (10, 30, 100):
                    cov = propagate(p, noise, OracleConfig(kappa_over_g=ratio))
                    devs.append(np.abs(cov.entries - ref.entries).max())
                rel = (np.abs(np.diag(cov.entries - ref.entries)) / np.diag(ref.entries)).max()
                worst_rel = max(worst_rel, rel)
                ocls = en.full_report(cov).classification
                acls = an.report(p, noise).classification
                if not devs[0] > devs[1] > devs[2]:
                    problems.append(f"non-monotone at {alpha},{r},{n}")
                if rel > 0.02:
                    problems.append(f"variance {rel:.3%} at {alpha},{r},{n}")
                if ocls != acls:
                    problems.append(f"classes differ at {alpha},{r},{n}")
    dt = time.perf_counter() - t0
    ok = not problems and dt < 120
    verdict(8, ok, f"max relative variance deviation at kappa/g=100 {worst_rel:.3%}, "
                   f"{dt:.1f}s" + ("; " + "; ".join(problems) if problems else ""))


def _random_cov(rng):
    A = rng.normal(size=(6, 6)) * rng.uniform(0.1, 2.0)
    return QuadCovariance(A @ A.T + 0.5 * np.eye(6))


def test_criterion_09_gain_optimality(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240601)
    bad_gain = bad_order = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", en.GainFallbackWarning)
        for _ in range(1000):
            V = _random_cov(rng)
            for t in MODES:
                j, k = other_modes(t)
                specs = [en.canonical_pairing(t, j), en.canonical_pairing(t, k), en.canonical_pairing(t, j + k)]
                Es = []
                for spec in specs:
                    res = en._steering(V, spec)
                    Es.append(res.E)
                    for q, terms, gains in (("X", spec.factor_X, res.gains_X),
                                            ("P", spec.factor_P, res.gains_P)):
                        g = dict(gains)
                        best = en.inferred_variance(V, (t, q), terms, g)
                        for mode, u in g.items():
                            for sgn in (1, -1):
                                moved = dict(g, **{mode: u + sgn * 1e-4 * (1 + abs(u))})
                                if en.inferred_variance(V, (t, q), terms, moved) < best:
                                    bad_gain += 1
                if Es[2] > min(Es[0], Es[1]) * (1 + 1e-12):
                    bad_order += 1
    dt = time.perf_counter() - t0
    ok = bad_gain == 0 and bad_order == 0 and dt < 5.0
    verdict(9, ok, f"1000 covariances, {bad_gain} gain violations, "
                   f"{bad_order} ordering violations, {dt:.2f}s")


def test_criterion_10_asymptotics(verdict):
    worst = {8.0: 0.0, 12.0: 0.0}
    for ra in worst:
        for alpha in (1.2, 2.0, 4.0):
            p = ModelParams.from_alpha(alpha, r_alpha=ra)
            for n in (0.0, 2.0):
                noise = NoiseConfig.uniform(n)
                for t in MODES:
                    dev = abs(an.asymptotic_E(p, noise, t, "large_r") / an.tripartite_E(p, noise, t) - 1)
                    worst[ra] = max(worst[ra], dev)
    worst_alpha = 0.0
    for r in (0.5, 1.0):
        p = ModelParams.from_alpha(math.sqrt(100 * r), r=r)
        for n in (0.0, 2.0):
            noise = NoiseConfig.uniform(n)
            for t in MODES:
                dev = abs(an.asymptotic_E(p, noise, t, "large_alpha") / an.tripartite_E(p, noise, t) - 1)
                worst_alpha = max(worst_alpha, dev)
    ok = worst[8.0] <= 1e-2 and worst[12.0] <= 1e-4 and worst_alpha <= 2e-2
    verdict(10, ok, f"large r: {worst[8.0]:.2e} at r_alpha=8, {worst[12.0]:.2e} at r_alpha=12; "
                    f"large alpha: {worst_alpha:.2e}")
