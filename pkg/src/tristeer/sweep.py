"""Parameter sweeps, steering-region finding, threshold curves and presets.

All tabular output is CSV text (UTF-8, header row, floats with 9 significant
digits). Writers also emit a ``<name>.manifest`` of ``key=value`` lines that
records every parameter needed to regenerate the file.
"""
from __future__ import annotations

import io
import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from . import analytic
from .engine import full_report
from .model import (
    MODES,
    ModelParams,
    NoiseConfig,
    ParameterError,
    SteeringClass,
    TristeerError,
    other_modes,
    steers,
    tripartite_label,
)
from .oracle import OracleConfig, propagate

SWEEP_VARIABLES = ("r", "r_alpha", "alpha", "alpha2", "n", "n0", "n1")
POINT_KEYS = SWEEP_VARIABLES + ("G",)

REPORT_COLUMNS = (
    "r", "r_alpha", "alpha", "n0", "n1",
    "E_m_a", "E_m_c", "E_a_m", "E_a_c", "E_c_a", "E_c_m",
    "E_m_ac", "E_a_mc", "E_c_am",
    "class_m", "class_a", "class_c",
)

# Default axis ranges (the figures do not state them numerically).
R_RANGE = (0.0, 30.0, 601)
N_RANGE = (0.0, 10.0, 201)
ALPHA2_RANGE = (1.05, 20.0, 200)


def fmt(x) -> str:
    """CSV cell text: 9 significant digits for floats."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".9g")
    if x is None:
        return ""
    return str(x)


def to_csv(columns: Sequence[str], rows: Iterable[Mapping[str, object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def manifest_text(entries: Mapping[str, object]) -> str:
    """``key=value`` lines; floats use ``repr`` so they round-trip exactly."""
    lines = [f"artifact_version={__version__}"]
    for k, v in entries.items():
        if v is None:
            continue
        if isinstance(v, (list, tuple)):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def manifest_path(out: str | Path) -> Path:
    return Path(out).with_suffix(".manifest")


def write_output(out: str | Path, text: str, manifest: Mapping[str, object]) -> Path:
    """Write CSV text and its manifest next to it; returns the CSV path."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    manifest_path(out).write_text(manifest_text(manifest), encoding="utf-8")
    return out


def resolve_point(values: Mapping[str, float], kappa_over_g: float | None = None
                  ) -> tuple[ModelParams, NoiseConfig]:
    """Turn a ``{alpha|alpha2, r|r_alpha, n|n0|n1, G}`` map into model objects."""
    unknown = set(values) - set(POINT_KEYS)
    if unknown:
        raise ParameterError(f"unknown parameter(s): {', '.join(sorted(unknown))}")

    def one_of(a, b):
        given = [k for k in (a, b) if values.get(k) is not None]
        if len(given) != 1:
            raise ParameterError(f"give exactly one of {a} or {b}")
        return given[0]

    alpha = (values["alpha"] if one_of("alpha", "alpha2") == "alpha"
             else math.sqrt(values["alpha2"]))
    G = float(values.get("G") or 1.0)
    kappa = None if kappa_over_g is None else kappa_over_g ** 2 * G
    if one_of("r", "r_alpha") == "r":
        p = ModelParams.from_alpha(alpha, r=values["r"], G=G, kappa=kappa)
    else:
        p = ModelParams.from_alpha(alpha, r_alpha=values["r_alpha"], G=G, kappa=kappa)
    if values.get("n") is not None and (values.get("n0") is not None or values.get("n1") is not None):
        raise ParameterError("give either n or n0/n1, not both")
    n_all = values.get("n")
    n0 = values.get("n0") if n_all is None else n_all
    n1 = values.get("n1") if n_all is None else n_all
    return p, NoiseConfig(float(n0 or 0.0), float(n1 or 0.0))


@dataclass(frozen=True)
class SweepSpec:
    """A 1-D grid over ``variable`` with every other parameter in ``fixed``."""

    variable: str
    start: float
    stop: float
    points: int
    fixed: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ParameterError(
                f"sweep variable must be one of {', '.join(SWEEP_VARIABLES)}, got {self.variable!r}"
            )
        if not self.start <= self.stop:
            raise ParameterError(f"sweep needs from <= to (got {self.start} > {self.stop})")
        if int(self.points) != self.points or self.points < 2:
            raise ParameterError(f"sweep needs points >= 2 (got {self.points})")
        if self.variable in self.fixed:
            raise ParameterError(f"{self.variable} is both swept and fixed")
        for x in (self.start, self.stop):    # validate both ends eagerly
            resolve_point({**self.fixed, self.variable: x})

    def grid(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, int(self.points))

    def manifest(self) -> dict[str, object]:
        return {"subcommand": "sweep", "var": self.variable, "from": float(self.start),
                "to": float(self.stop), "points": int(self.points),
                **{k: float(v) for k, v in sorted(self.fixed.items())}}


def report_row(p: ModelParams, n: NoiseConfig, alpha: float | None = None) -> dict[str, object]:
    row: dict[str, object] = {"r": p.r, "r_alpha": p.r_alpha,
                              "alpha": p.alpha if alpha is None else alpha,
                              "n0": n.n0, "n1": n.n1}
    row.update(analytic.report(p, n).as_row())
    return row


def _ordered_map(fn: Callable, items: Sequence, workers: int | None):
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))   # map keeps input order
    return [fn(x) for x in items]


def sweep_rows(spec: SweepSpec, workers: int | None = None) -> list[dict[str, object]]:
    def row(x):
        p, n = resolve_point({**spec.fixed, spec.variable: float(x)})
        return report_row(p, n)
    return _ordered_map(row, list(spec.grid()), workers)


def run_sweep(spec: SweepSpec, workers: int | None = None) -> str:
    """CSV with one report row per grid point, in grid order."""
    return to_csv(REPORT_COLUMNS, sweep_rows(spec, workers))


# --- steering regions -------------------------------------------------------

REGION_KINDS = {
    "collective": SteeringClass.COLLECTIVE,
    "ordinary": SteeringClass.ORDINARY,
    "tripartite": None,        # any E_{i|jk} < 1/2
}


@dataclass(frozen=True)
class RegionResult:
    """Disjoint, sorted r-intervals on which ``mode`` has the requested class.

    ``residuals`` holds ``|E - 1/2|`` at each endpoint for the parameter that
    crosses there (``None`` when the interval is cut by the search range);
    ``crossings`` names that parameter.
    """

    mode: str
    kind: str
    intervals: tuple[tuple[float, float], ...]
    residuals: tuple[tuple[float | None, float | None], ...]
    crossings: tuple[tuple[str | None, str | None], ...]

    def __bool__(self):
        return bool(self.intervals)


def _mode_values(p: ModelParams, n: NoiseConfig, mode: str) -> dict[str, float]:
    j, k = other_modes(mode)
    return {
        "E_" + tripartite_label(mode).replace("|", "_"): analytic.tripartite_E(p, n, mode),
        f"E_{mode}_{j}": analytic.bipartite_E(p, n, mode, j),
        f"E_{mode}_{k}": analytic.bipartite_E(p, n, mode, k),
    }


def _in_class(values: Mapping[str, float], kind: str) -> bool:
    tri, bj, bk = values.values()
    if not steers(tri):
        return False
    wanted = REGION_KINDS[kind]
    if wanted is None:
        return True
    collective = not steers(bj) and not steers(bk)
    return collective == (wanted is SteeringClass.COLLECTIVE)


def find_regions(mode: str, kind: str = "collective", *, alpha: float, n0: float = 0.0,
                 n1: float = 0.0, r_range: tuple[float, float] = R_RANGE[:2],
                 points: int = R_RANGE[2], r_tol: float = 1e-12) -> RegionResult:
    """Locate r-intervals where ``mode`` is steered in the requested way.

    Sign changes of the class indicator are bracketed on a uniform grid of
    ``points`` values and refined by bisection to ``r_tol``; a structure
    narrower than the grid spacing can therefore be missed. Each interval is
    re-checked at its midpoint.
    """
    if mode not in MODES:
        raise ParameterError(f"unknown mode {mode!r}")
    if kind not in REGION_KINDS:
        raise ParameterError(f"kind must be one of {', '.join(REGION_KINDS)}")
    lo_r, hi_r = r_range
    if not 0 <= lo_r <= hi_r or points < 2:
        raise ParameterError("need 0 <= r_from <= r_to and points >= 2")
    noise = NoiseConfig(n0, n1)

    def values(r):
        return _mode_values(ModelParams.from_alpha(alpha, r=r), noise, mode)

    def inside(r):
        return _in_class(values(r), kind)

    def refine(a, b):
        """Bisect between a (inside state ia) and b (opposite state)."""
        ia = inside(a)
        while b - a > r_tol:
            mid = 0.5 * (a + b)
            if mid <= a or mid >= b:
                break
            if inside(mid) == ia:
                a = mid
            else:
                b = mid
        return a, b

    def crossing(r):
        vals = values(r)
        name = min(vals, key=lambda k: abs(vals[k] - 0.5))
        return name, abs(vals[name] - 0.5)

    grid = np.linspace(lo_r, hi_r, int(points))
    flags = [inside(float(r)) for r in grid]
    intervals, residuals, crossings = [], [], []
    i = 0
    while i < len(grid):
        if not flags[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(grid) and flags[j + 1]:
            j += 1
        if i == 0:
            start, res_lo, name_lo = float(grid[0]), None, None
        else:
            _, start = refine(float(grid[i - 1]), float(grid[i]))
            name_lo, res_lo = crossing(start)
        if j == len(grid) - 1:
            end, res_hi, name_hi = float(grid[-1]), None, None
        else:
            end, _ = refine(float(grid[j]), float(grid[j + 1]))
            name_hi, res_hi = crossing(end)
        if inside(0.5 * (start + end)):
            intervals.append((start, end))
            residuals.append((res_lo, res_hi))
            crossings.append((name_lo, name_hi))
        i = j + 1
    return RegionResult(mode, kind, tuple(intervals), tuple(residuals), tuple(crossings))


REGION_COLUMNS = ("mode", "kind", "r_lo", "r_hi", "residual_lo", "residual_hi",
                  "crossing_lo", "crossing_hi")


def region_rows(results: Iterable[RegionResult]) -> list[dict[str, object]]:
    rows = []
    for res in results:
        for (lo, hi), (rl, rh), (cl, ch) in zip(res.intervals, res.residuals, res.crossings):
            rows.append({"mode": res.mode, "kind": res.kind, "r_lo": lo, "r_hi": hi,
                         "residual_lo": rl, "residual_hi": rh,
                         "crossing_lo": cl, "crossing_hi": ch})
    return rows


# --- threshold curves -------------------------------------------------------

def bipartite_curve_pairs(alpha: float) -> tuple[tuple[str, str], ...]:
    """Pairs shown for a given alpha: m|a when beta² <= 1, otherwise m|c."""
    beta2 = alpha * alpha - 1.0
    third = ("m", "a") if beta2 <= 1.0 else ("m", "c")
    return (("a", "m"), ("c", "m"), third)


def threshold_rows(alpha: float, r_from: float, r_to: float, points: int,
                   which: str) -> tuple[list[str], list[dict[str, object]]]:
    if which not in ("tripartite", "bipartite"):
        raise ParameterError("which must be 'tripartite' or 'bipartite'")
    if not 0 <= r_from <= r_to or points < 2:
        raise ParameterError("need 0 <= r_from <= r_to and points >= 2")
    rows = []
    if which == "tripartite":
        cols = ["r", "r_alpha"] + [f"n_th_{tripartite_label(t).replace('|', '_')}" for t in MODES]
    else:
        pairs = bipartite_curve_pairs(alpha)
        cols = ["r", "r_alpha"] + [f"n_th_{t}_{s}" for t, s in pairs] + ["clamped"]
    for r in np.linspace(r_from, r_to, int(points)):
        p = ModelParams.from_alpha(alpha, r=float(r))
        row: dict[str, object] = {"r": p.r, "r_alpha": p.r_alpha}
        if which == "tripartite":
            for t in MODES:
                row[cols[2 + MODES.index(t)]] = analytic.tripartite_threshold_n(p, t)
        else:
            clamped = []
            for t, s in pairs:
                th = analytic.bipartite_threshold_n(p, t, s)
                row[f"n_th_{t}_{s}"] = th.value
                if th.clamped:
                    clamped.append(f"{t}|{s}")
            row["clamped"] = ";".join(clamped)
        rows.append(row)
    return cols, rows


def threshold_curves(alpha: float, r_from: float = R_RANGE[0], r_to: float = R_RANGE[1],
                     points: int = R_RANGE[2], which: str = "tripartite") -> str:
    """CSV of equal-noise threshold occupations versus r."""
    cols, rows = threshold_rows(alpha, r_from, r_to, points, which)
    return to_csv(cols, rows)


# --- oracle comparison ------------------------------------------------------

ORACLE_COLUMNS = ("kappa_over_g", "max_abs_dev", "max_rel_var_dev",
                  "class_m", "class_a", "class_c", "oracle_class_m",
                  "oracle_class_a", "oracle_class_c", "classes_agree", "error")


def oracle_compare(p: ModelParams, n: NoiseConfig, ratios: Sequence[float],
                   base: OracleConfig | None = None) -> list[dict[str, object]]:
    """Oracle-versus-closed-form deviation at each ``κ/g``.

    The closed form is the adiabatic limit, so the deviation columns should
    decrease with the ratio. A failed propagation becomes a row with only the
    ``error`` column filled.
    """
    base = base or OracleConfig()
    ref = analytic.to_covariance(analytic.output_moments(p, n))
    ref_cls = analytic.report(p, n).classification
    rows = []
    for ratio in ratios:
        row: dict[str, object] = {"kappa_over_g": float(ratio)}
        row.update({f"class_{m}": ref_cls[m].value for m in MODES})
        try:
            cfg = OracleConfig(float(ratio), base.gamma_m, base.gamma_a, base.n_m, base.n_cav,
                               base.n_at, base.steps_per_kappa, base.coupling_scale)
            cov = propagate(p, n, cfg)
        except (TristeerError, ArithmeticError) as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            continue
        diff = np.abs(cov.entries - ref.entries)
        d_ref = np.diag(ref.entries)
        row["max_abs_dev"] = float(diff.max())
        row["max_rel_var_dev"] = float((np.diag(diff) / d_ref).max())
        ocls = full_report(cov).classification
        row.update({f"oracle_class_{m}": ocls[m].value for m in MODES})
        row["classes_agree"] = all(ocls[m] == ref_cls[m] for m in MODES)
        rows.append(row)
    return rows


# --- figure presets ---------------------------------------------------------

@dataclass(frozen=True)
class _Figure:
    alpha: float | None
    n0: float | None
    n1: float | None
    kind: str


FIGURES: dict[str, _Figure] = {
    "fig2": _Figure(1.2, None, None, "surface_r_n"),
    "fig3": _Figure(None, None, None, "surface_alpha2_n"),
    "fig4": _Figure(1.2, 0.0, 0.0, "report"),
    "fig5": _Figure(None, None, None, "thresholds"),
    "fig6": _Figure(1.2, 2.0, 2.0, "per_mode"),
    "fig7": _Figure(1.2, 4.0, 0.0, "per_mode"),
    "fig8": _Figure(4.0, 4.0, 0.0, "report"),
    "fig9": _Figure(1.2, 0.0, 4.0, "per_mode"),
}
FIG3_R = 15.0
FIG5_ALPHAS = {"a": 1.2, "b": 2.0}


def _report_rows(alpha, n0, n1, grid):
    noise = NoiseConfig(n0, n1)
    return [report_row(ModelParams.from_alpha(alpha, r=float(r)), noise, alpha) for r in grid]


def figure_preset(fig_id: str, out_dir: str | Path) -> list[Path]:
    """Write the CSV files (plus manifests) that regenerate one figure."""
    if fig_id not in FIGURES:
        raise ParameterError(f"unknown figure {fig_id!r}; choose from {', '.join(FIGURES)}")
    fig = FIGURES[fig_id]
    out_dir = Path(out_dir)
    r_grid = np.linspace(*R_RANGE[:2], R_RANGE[2])
    n_grid = np.linspace(*N_RANGE[:2], N_RANGE[2])
    base = {"subcommand": "figure", "figure": fig_id,
            "r_from": R_RANGE[0], "r_to": R_RANGE[1], "r_points": R_RANGE[2],
            "axis_ranges": "default"}
    written = []

    def emit(name, cols, rows, **extra):
        text = to_csv(cols, rows)
        written.append(write_output(out_dir / f"{name}.csv", text, {**base, **extra}))

    if fig.kind == "surface_r_n":
        rows = []
        for n in n_grid:
            noise = NoiseConfig.uniform(float(n))
            for r in r_grid:
                p = ModelParams.from_alpha(fig.alpha, r=float(r))
                rows.append({"r": p.r, "n": float(n), "E_m_ac": analytic.tripartite_E(p, noise, "m")})
        emit(fig_id, ("r", "n", "E_m_ac"), rows, alpha=fig.alpha,
             n_from=N_RANGE[0], n_to=N_RANGE[1], n_points=N_RANGE[2])
    elif fig.kind == "surface_alpha2_n":
        rows = []
        for a2 in np.linspace(*ALPHA2_RANGE[:2], ALPHA2_RANGE[2]):
            for n in n_grid:
                p = ModelParams.from_alpha(math.sqrt(a2), r=FIG3_R)
                rows.append({"alpha2": float(a2), "n": float(n),
                             "E_m_ac": analytic.tripartite_E(p, NoiseConfig.uniform(float(n)), "m")})
        emit(fig_id, ("alpha2", "n", "E_m_ac"), rows, r=FIG3_R,
             alpha2_from=ALPHA2_RANGE[0], alpha2_to=ALPHA2_RANGE[1], alpha2_points=ALPHA2_RANGE[2],
             n_from=N_RANGE[0], n_to=N_RANGE[1], n_points=N_RANGE[2])
    elif fig.kind == "thresholds":
        for panel, alpha in FIG5_ALPHAS.items():
            for which in ("tripartite", "bipartite"):
                cols, rows = threshold_rows(alpha, *R_RANGE[:2], R_RANGE[2], which)
                emit(f"{fig_id}{panel}_{which}", cols, rows, alpha=alpha, which=which)
    else:
        rows = _report_rows(fig.alpha, fig.n0, fig.n1, r_grid)
        params = {"alpha": fig.alpha, "n0": fig.n0, "n1": fig.n1}
        if fig.kind == "report":
            emit(fig_id, REPORT_COLUMNS, rows, **params)
        else:
            shared = REPORT_COLUMNS[:14]
            for mode in MODES:
                emit(f"{fig_id}_{mode}", shared + (f"class_{mode}",), rows, mode=mode, **params)
        regions = [find_regions(m, "collective", alpha=fig.alpha, n0=fig.n0, n1=fig.n1)
                   for m in MODES]
        emit(f"{fig_id}_regions", REGION_COLUMNS, region_rows(regions), **params)
    return written
