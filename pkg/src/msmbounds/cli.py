"""Command-line interface: ``msmbounds {analyze,calibrate,simulate,interpret}``.

Exit status is 0 on success, 1 on data or runtime errors and 2 on usage
errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import interpret_sensitivity_value, leave_out_calibration
from .data import AnalysisConfig, load_csv
from .errors import MSMError
from .l2 import evaluate_psi0
from .pipeline import SensitivityAnalysis, explain_away
from .simulation import StudyConfig, run_all_studies

EXPORT_FIELDS = (
    "framework",
    "target",
    "bound",
    "param",
    "sensitivity_value",
    "estimate",
    "se",
    "ci_lo",
    "ci_hi",
    "band_lo",
    "band_hi",
    "critical_value",
    "n",
    "K",
    "alpha",
    "seed",
)


class UsageError(Exception):
    pass


def parse_grid(text: str) -> tuple[float, ...]:
    """``lo:hi:step`` (hi included when it lies on the lattice) or a comma list."""
    text = text.strip()
    try:
        if ":" in text:
            lo, hi, step = (float(v) for v in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            count = int(math.floor((hi - lo) / step + 1e-9)) + 1
            return tuple(round(lo + i * step, 12) for i in range(count))
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; use lo:hi:step or a,b,c") from None


def _gamma_grid(grid):
    out = []
    for g in grid:
        if g <= 1:
            if g == 1:
                warnings.warn("Gamma = 1 replaced by 1 + 1e-6", stacklevel=2)
                g = 1 + 1e-6
            else:
                raise UsageError(f"Gamma values must be at least 1, got {g}")
        out.append(g)
    return tuple(out)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def curve_rows(curve, config: AnalysisConfig, n: int):
    rows = []
    for j, p in enumerate(curve.estimates):
        lo, hi = p.ci(config.alpha)
        band = curve.band
        rows.append(
            {
                "framework": curve.framework,
                "target": curve.target,
                "bound": curve.bound,
                "param": float(curve.grid[j]),
                "sensitivity_value": curve.sensitivity[j].value if curve.sensitivity else None,
                "estimate": p.value,
                "se": p.se,
                "ci_lo": lo,
                "ci_hi": hi,
                "band_lo": band.band_lo[j] if band else None,
                "band_hi": band.band_hi[j] if band else None,
                "critical_value": band.critical_value if band else None,
                "n": n,
                "K": config.K,
                "alpha": config.alpha,
                "seed": config.seed,
            }
        )
    return rows


def write_export(rows, path: Path | None, summary: dict):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=EXPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r[k]) for k in EXPORT_FIELDS})
    if path is None:
        sys.stdout.write(buf.getvalue())
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.with_suffix(".csv").write_text(buf.getvalue())
    payload = {"rows": [{k: r[k] for k in EXPORT_FIELDS} for r in rows], "summary": summary}
    path.with_suffix(".json").write_text(json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _config(args, **over) -> AnalysisConfig:
    kw = dict(
        alpha=args.alpha,
        bootstrap_reps=args.reps,
        K=args.folds,
        seed=args.seed,
        bandwidth_scale=tuple(args.bandwidth_scale),
        mean_shift=False if args.mean_shift == "none" else args.mean_shift,
    )
    kw.update(over)
    return AnalysisConfig(**kw)


def cmd_analyze(args, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    data = load_csv(args.data, args.treatment_col, args.outcome_col)
    frameworks = ["linf", "l2"] if args.framework == "ate" else [args.framework]
    gamma = _gamma_grid(args.gamma_grid) if "linf" in frameworks else (2.0,)
    lam = args.lambda_grid if "l2" in frameworks else (1.0,)
    config = _config(args, gamma_grid=gamma, lambda_grid=lam, theta=args.theta or 0.0)
    analysis = SensitivityAnalysis(data, config)
    bounds = {"lower": ["lower"], "upper": ["upper"], "both": ["lower", "upper"]}
    rows, summary = [], {"n": data.n, "n_treated": data.n_treated, "target": args.target, "curves": []}
    report = out if args.out else err
    print(f"n = {data.n} ({data.n_treated} treated), target = {args.target}", file=report)
    for fw in frameworks:
        chosen = args.bound or ("both" if fw == "linf" else "lower")
        for bound in bounds[chosen]:
            if fw == "linf":
                curve = analysis.linf_curve(args.target, bound, band=args.band)
                label = "Gamma"
            else:
                curve = analysis.l2_curve(args.target, bound, band=args.band)
                label = "average sensitivity value"
            rows.extend(curve_rows(curve, config, data.n))
            point = explain_away(curve, use_band=args.band)
            summary["curves"].append(
                {"framework": fw, "bound": bound, "explain_away": point, "basis": "band" if args.band else "estimate"}
            )
            where = "not reached on this grid" if point is None else f"{point:.4g}"
            basis = "band" if args.band else "point estimate"
            print(f"[{fw}] {bound} bound ({basis}) crosses 0 at {label}: {where}", file=report)
            if curve.band is not None:
                print(f"[{fw}] {bound} critical value q = {curve.band.critical_value:.4f}", file=report)
    if args.theta is not None and args.theta > 0:
        cf = analysis.crossfit("treated")
        p0 = evaluate_psi0(cf.law, cf.propensity, data.treatment, data.outcome, args.theta, analysis.folds)
        summary["psi0"] = {"theta": args.theta, "estimate": p0.value, "se": p0.se}
        print(f"sensitivity value for a drop of {args.theta:g} in E[Y(1)]: {p0.value:.4f} (se {p0.se:.4f})", file=report)
    write_export(rows, Path(args.out) if args.out else None, summary)
    return 0


def cmd_calibrate(args, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    data = load_csv(args.data, args.treatment_col, args.outcome_col)
    sets = [tuple(c.strip() for c in s.split(",") if c.strip()) for s in (args.leave_out or [""])]
    rows = leave_out_calibration(data, sets)
    print(f"{'left out':<40} {'max odds ratio':>15} {'second moment':>14}", file=out)
    for r in rows:
        name = ",".join(r.left_out) or "(none)"
        print(f"{name:<40} {r.max_odds_ratio:>15.4f} {r.second_moment:>14.4f}", file=out)
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.with_suffix(".csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["left_out", "max_odds_ratio", "second_moment"])
            for r in rows:
                w.writerow([";".join(r.left_out), repr(r.max_odds_ratio), repr(r.second_moment)])
        path.with_suffix(".json").write_text(
            json.dumps(
                [{"left_out": list(r.left_out), "max_odds_ratio": r.max_odds_ratio, "second_moment": r.second_moment} for r in rows],
                indent=2,
            )
            + "\n"
        )
    return 0


PRESETS = {
    # RMSE of direct and one-step estimators, misspecified nuisances
    "table1": dict(ns=(100, 200, 300), reps=500, gamma_grid=(4.0,), lambda_grid=(2.0,), misspecify=True, swaps=True),
    # pointwise coverage
    "table2": dict(ns=(100, 200, 300), reps=500, gamma_grid=(2.0, 4.0, 6.0), lambda_grid=(1.0, 2.0, 3.0)),
    # uniform coverage with multiplier-bootstrap bands
    "table3": dict(
        ns=(100, 200, 300),
        reps=500,
        gamma_grid=tuple(float(g) for g in range(2, 11)),
        lambda_grid=tuple(0.5 * k for k in range(1, 11)),
        bands=True,
    ),
    # reduced-size RMSE and coverage run
    "desk": dict(ns=(300,), reps=200, gamma_grid=(2.0, 4.0, 6.0), lambda_grid=(1.0, 2.0, 3.0), misspecify=True, swaps=True),
}
PRESET_METRICS = {"table1": ("rmse",), "table2": ("coverage",), "table3": ("uniform_coverage",), "desk": ("rmse", "coverage")}


def cmd_simulate(args, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    preset = dict(PRESETS[args.preset])
    if args.n:
        preset["ns"] = tuple(args.n)
    if args.reps_sim:
        preset["reps"] = args.reps_sim
    analysis = AnalysisConfig(
        gamma_grid=preset["gamma_grid"],
        lambda_grid=preset["lambda_grid"],
        bootstrap_reps=args.reps,
        seed=args.seed,
    )
    cfg = StudyConfig(
        seed=args.seed,
        convention=args.convention,
        analysis=analysis,
        workers=args.workers,
        oracle_draws=args.oracle_draws,
        **preset,
    )
    reports = run_all_studies(cfg)
    outdir = Path(args.out or f"sim_{args.preset}")
    outdir.mkdir(parents=True, exist_ok=True)
    for metric in PRESET_METRICS[args.preset]:
        rep = reports[metric]
        rep.to_csv(outdir / f"{args.preset}_{metric}.csv")
        rep.to_json(outdir / f"{args.preset}_{metric}.json")
        print(f"{metric}:", file=out)
        for r in rep.rows:
            print(
                f"  {r['estimator']:<22} {r['nuisance_config']:<14} n={r['n']:<4} {r['param']:<10} {r['metric']:<17} {r['value']:.4f}",
                file=out,
            )
    return 0


def cmd_interpret(args, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    lo, hi = interpret_sensitivity_value(args.psi1, args.alpha)
    print(
        f"average sensitivity value {args.psi1:g}: h lies in [{lo:.4f}, {hi:.4f}] "
        f"with probability {1 - args.alpha:g} under a Gamma(mean 1, variance {args.psi1 - 1:g}) model",
        file=out,
    )
    return 0


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msmbounds", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def data_flags(p):
        p.add_argument("--data", required=True, help="CSV file with a header row")
        p.add_argument("--treatment-col", default="treatment")
        p.add_argument("--outcome-col", default="outcome")
        p.add_argument("--out", help="output path prefix; .csv and .json are written")

    a = sub.add_parser("analyze", help="sensitivity curves for the ATE or an arm mean")
    data_flags(a)
    a.add_argument("--framework", choices=("linf", "l2", "ate"), default="ate",
                   help="linf, l2, or ate (both frameworks)")
    a.add_argument("--target", choices=("ate", "treated", "control"), default="ate")
    a.add_argument("--bound", choices=("lower", "upper", "both"))
    a.add_argument("--gamma-grid", type=parse_grid, default=parse_grid("1.5:7:0.5"))
    a.add_argument("--lambda-grid", type=parse_grid, default=parse_grid("0:1:0.1"))
    a.add_argument("--theta", type=float)
    a.add_argument("--folds", type=int, default=10)
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--band", action="store_true", help="multiplier-bootstrap simultaneous band")
    a.add_argument("--reps", type=int, default=2500, help="bootstrap replicates")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--bandwidth-scale", type=float, nargs=2, default=(1.0, 1.0), metavar=("X", "Y"))
    a.add_argument("--mean-shift", choices=("none", "linear", "local_linear"), default="local_linear")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("calibrate", help="leave-out covariate benchmarks")
    data_flags(c)
    c.add_argument("--leave-out", action="append",
                   help="comma-separated covariate set; repeat for several sets")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("simulate", help="Monte Carlo studies on the synthetic design")
    s.add_argument("--preset", choices=sorted(PRESETS), required=True)
    s.add_argument("--n", type=_positive_int, nargs="+")
    s.add_argument("--sim-reps", dest="reps_sim", type=int, help="number of simulated data sets")
    s.add_argument("--reps", type=int, default=2500, help="bootstrap replicates")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--convention", choices=("variance", "sd"), default="variance")
    s.add_argument("--workers", type=_positive_int)
    s.add_argument("--oracle-draws", type=_positive_int, default=1_000_000)
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_simulate)

    i = sub.add_parser("interpret", help="probable range of h for an average sensitivity value")
    i.add_argument("--psi1", type=float, required=True)
    i.add_argument("--alpha", type=float, default=0.05)
    i.set_defaults(func=cmd_interpret)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"msmbounds: error: {exc}", file=sys.stderr)
        return 2
    except (MSMError, OSError) as exc:
        print(f"msmbounds: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
