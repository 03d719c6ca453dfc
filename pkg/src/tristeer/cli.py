"""Command-line interface: ``tristeer <subcommand> [options]``.

Every run that writes ``--out FILE`` also writes ``FILE.manifest`` whose
``key=value`` lines can be passed back with ``--config`` to reproduce the
output byte for byte. Flags given on the command line override the config.

Exit codes: 0 success, 2 usage/validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import __version__, analytic
from .engine import DegenerateRegressionError, full_report
from .model import MODES, ParameterError, TristeerError
from .oracle import OracleConfig, OracleError, monte_carlo_check, propagate
from . import sweep as sw

EXIT_USAGE = 2
EXIT_NUMERIC = 3

# Manifest keys that describe a run but are not options.
META_KEYS = {"artifact_version", "subcommand"}

DEFAULTS = {
    "from": sw.R_RANGE[0],
    "to": sw.R_RANGE[1],
    "points": sw.R_RANGE[2],
    "which": "tripartite",
    "kind": "collective",
    "mode": "all",
    "kappa_ratio": [10.0, 30.0, 100.0],
    "steps_per_kappa": 50,
    "seed": 0,
}


class UsageError(Exception):
    pass


def _add_point_args(p: argparse.ArgumentParser, with_r: bool = True):
    g = p.add_argument_group("model point")
    g.add_argument("--alpha", type=float, help="alpha = sqrt(G/(G-G_a)) >= 1")
    g.add_argument("--alpha2", type=float, help="alpha squared (alternative to --alpha)")
    if with_r:
        g.add_argument("--r", type=float, help="squeezing r = G tau")
        g.add_argument("--r-alpha", type=float, help="r_alpha = (G-G_a) tau (alternative to --r)")
    g.add_argument("--n", type=float, help="thermal occupation for all inputs (sets n0 and n1)")
    g.add_argument("--n0", type=float, help="mirror thermal occupation")
    g.add_argument("--n1", type=float, help="cavity and atomic thermal occupation")


def _add_io_args(p: argparse.ArgumentParser):
    p.add_argument("--out", help="output CSV path (stdout when omitted)")
    p.add_argument("--config", help="key=value file supplying defaults for any option")


def _add_range_args(p: argparse.ArgumentParser, what: str):
    p.add_argument("--from", dest="start", type=float, help=f"first {what} value")
    p.add_argument("--to", dest="stop", type=float, help=f"last {what} value")
    p.add_argument("--points", type=int, help="number of grid points (>= 2)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tristeer",
        description="Steering parameters of the pulsed mirror/cavity/atom system.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("moments", help="closed-form output variances and correlations")
    _add_point_args(p)
    p.add_argument("--precision", type=int, help="evaluate with this many decimal digits")
    _add_io_args(p)

    p = sub.add_parser("report", help="all nine steering parameters at one point")
    _add_point_args(p)
    p.add_argument("--source", choices=("analytic", "engine"),
                   help="closed forms (default) or generic inference on the covariance")
    _add_io_args(p)

    p = sub.add_parser("sweep", help="report rows over a 1-D parameter grid")
    _add_point_args(p)
    p.add_argument("--var", choices=sw.SWEEP_VARIABLES, required=False, help="swept parameter")
    _add_range_args(p, "swept")
    p.add_argument("--workers", type=int, help="evaluate grid points on this many threads")
    _add_io_args(p)

    p = sub.add_parser("thresholds", help="equal-noise threshold occupations versus r")
    _add_point_args(p, with_r=False)
    p.add_argument("--which", choices=("tripartite", "bipartite"))
    _add_range_args(p, "r")
    _add_io_args(p)

    p = sub.add_parser("regions", help="r-intervals of collective/ordinary steering")
    _add_point_args(p, with_r=False)
    p.add_argument("--mode", choices=MODES + ("all",))
    p.add_argument("--kind", choices=tuple(sw.REGION_KINDS))
    _add_range_args(p, "r")
    _add_io_args(p)

    p = sub.add_parser("figure", help="write the data files behind a figure")
    p.add_argument("figure", choices=tuple(sw.FIGURES))
    p.add_argument("--out", help="output directory (default: current directory)")

    p = sub.add_parser("oracle", help="compare full dynamics against the closed form")
    _add_point_args(p)
    p.add_argument("--kappa-ratio", type=float, nargs="+", help="kappa/g values (default 10 30 100)")
    p.add_argument("--steps-per-kappa", type=int, help="RK4 steps per 1/kappa (default 50)")
    p.add_argument("--samples", type=int, help="also run a Monte Carlo check with this many trajectories")
    p.add_argument("--seed", type=int, help="Monte Carlo seed (default 0)")
    _add_io_args(p)
    return parser


def _option_keys(parser: argparse.ArgumentParser) -> dict[str, argparse.Action]:
    keys = {}
    for action in parser._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                keys[opt[2:].replace("-", "_")] = action
    return keys


def _subparser(parser, name) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def read_config(path: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _convert(action: argparse.Action, text: str):
    conv = action.type or str
    if action.nargs in ("+", "*"):
        return [conv(x) for x in text.split(",") if x]
    value = conv(text)
    if action.choices is not None and value not in action.choices:
        raise UsageError(f"invalid value {text!r} for {action.dest}")
    return value


def apply_config(args, sub: argparse.ArgumentParser) -> None:
    """Fill options left unset on the command line from ``--config``."""
    if not getattr(args, "config", None):
        return
    keys = _option_keys(sub)
    for k, v in read_config(args.config).items():
        if k in META_KEYS:
            if k == "subcommand" and v != args.command:
                raise UsageError(f"config is for '{v}', not '{args.command}'")
            continue
        if k not in keys or k in ("config", "out", "help"):
            raise UsageError(f"unknown config key {k!r}")
        action = keys[k]
        try:
            value = _convert(action, v)    # validated even when a flag overrides it
        except ValueError:
            raise UsageError(f"bad value for {k!r}: {v!r}") from None
        if getattr(args, action.dest) is None:
            setattr(args, action.dest, value)


def _get(args, key, dest=None):
    v = getattr(args, dest or key)
    return DEFAULTS.get(key) if v is None else v


def _point_values(args) -> dict[str, float]:
    return {k: getattr(args, k) for k in ("alpha", "alpha2", "r", "r_alpha", "n", "n0", "n1")
            if getattr(args, k, None) is not None}


def _alpha(args) -> float:
    if (args.alpha is None) == (args.alpha2 is None):
        raise ParameterError("give exactly one of --alpha or --alpha2")
    return args.alpha if args.alpha is not None else math.sqrt(args.alpha2)


def _noise(args) -> tuple[float, float]:
    if args.n is not None:
        if args.n0 is not None or args.n1 is not None:
            raise ParameterError("give either --n or --n0/--n1, not both")
        return args.n, args.n
    return args.n0 or 0.0, args.n1 or 0.0


def _manifest(args, sub: argparse.ArgumentParser) -> dict[str, object]:
    entries: dict[str, object] = {"subcommand": args.command}
    for k, action in _option_keys(sub).items():
        if k in ("config", "out", "help", "version"):
            continue
        v = getattr(args, action.dest, None)
        if v is None and k in DEFAULTS:
            v = DEFAULTS[k]
        if v is not None:
            entries[k] = v
    return entries


def _emit(args, sub, text: str) -> None:
    if args.out:
        sw.write_output(args.out, text, _manifest(args, sub))
    else:
        sys.stdout.write(text)


def cmd_moments(args, sub):
    p, n = sw.resolve_point(_point_values(args))
    m = analytic.output_moments(p, n, precision=args.precision)
    row = {"r": p.r, "r_alpha": p.r_alpha, "alpha": p.alpha, "n0": n.n0, "n1": n.n1}
    fields = ("var_X_a", "var_X_c", "var_X_m", "c_XmPa", "c_XmXc", "c_PaXc")
    row.update({f: float(getattr(m, f)) for f in fields})
    _emit(args, sub, sw.to_csv(("r", "r_alpha", "alpha", "n0", "n1") + fields, [row]))


def cmd_report(args, sub):
    p, n = sw.resolve_point(_point_values(args))
    row = sw.report_row(p, n)
    if args.source == "engine":
        cov = analytic.to_covariance(analytic.output_moments(p, n, precision=30))
        row.update(full_report(cov).as_row())
    _emit(args, sub, sw.to_csv(sw.REPORT_COLUMNS, [row]))


def cmd_sweep(args, sub):
    if args.var is None:
        raise ParameterError("--var is required")
    fixed = _point_values(args)
    spec = sw.SweepSpec(args.var, _get(args, "from", "start"), _get(args, "to", "stop"),
                        _get(args, "points"), fixed)
    _emit(args, sub, sw.run_sweep(spec, workers=args.workers))


def cmd_thresholds(args, sub):
    text = sw.threshold_curves(_alpha(args), _get(args, "from", "start"), _get(args, "to", "stop"),
                               _get(args, "points"), _get(args, "which"))
    _emit(args, sub, text)


def cmd_regions(args, sub):
    alpha = _alpha(args)
    n0, n1 = _noise(args)
    mode = _get(args, "mode")
    modes = MODES if mode == "all" else (mode,)
    results = [sw.find_regions(m, _get(args, "kind"), alpha=alpha, n0=n0, n1=n1,
                               r_range=(_get(args, "from", "start"), _get(args, "to", "stop")),
                               points=_get(args, "points"))
               for m in modes]
    _emit(args, sub, sw.to_csv(sw.REGION_COLUMNS, sw.region_rows(results)))


def cmd_figure(args, sub):
    for path in sw.figure_preset(args.figure, args.out or "."):
        print(path)


def cmd_oracle(args, sub):
    p, n = sw.resolve_point(_point_values(args))
    base = OracleConfig(steps_per_kappa=_get(args, "steps_per_kappa"))
    ratios = _get(args, "kappa_ratio")
    rows = sw.oracle_compare(p, n, ratios, base)
    cols = sw.ORACLE_COLUMNS
    if args.samples is not None:
        cols = cols + ("mc_samples", "mc_max_z")
        for row, ratio in zip(rows, ratios):
            if row.get("error"):
                continue
            cfg = OracleConfig(kappa_over_g=ratio, steps_per_kappa=base.steps_per_kappa)
            mc = monte_carlo_check(p, n, cfg, samples=args.samples, seed=_get(args, "seed"))
            row["mc_samples"] = args.samples
            row["mc_max_z"] = float(mc.z_scores(propagate(p, n, cfg)).max())
    _emit(args, sub, sw.to_csv(cols, rows))
    failed = [row["error"] for row in rows if row.get("error")]
    if failed:
        raise OracleError("; ".join(failed))


COMMANDS = {
    "moments": cmd_moments,
    "report": cmd_report,
    "sweep": cmd_sweep,
    "thresholds": cmd_thresholds,
    "regions": cmd_regions,
    "figure": cmd_figure,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = _subparser(parser, args.command)
    try:
        apply_config(args, sub)
        COMMANDS[args.command](args, sub)
    except (UsageError, ParameterError, OSError) as exc:
        print(f"tristeer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OracleError, DegenerateRegressionError, ArithmeticError, TristeerError) as exc:
        print(f"tristeer: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
