"""Command-line entry points.

Subcommands: `estimate` (effect curve from a dataset CSV), `simulate`
(Monte Carlo benchmark runs), `variance-curves` (design-variance factor
grid), `check-rates` (bandwidth admissibility report), `kernel-moments`
(diagnostic table).  Every data-producing command writes CSVs plus a PNG
report into the output directory: `--out`, else the config's run.out_dir,
else $DRCATE_OUT, else the working directory.

Exit codes: 0 on success (for simulate this additionally requires a
replication failure rate of at most 1%), 1 for a degraded simulate run,
2 for configuration, parsing, or estimation errors.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import vd
from .config import (
    CheckRatesConfig,
    ConfigError,
    RunConfig,
    SimulateConfig,
    VarianceCurvesConfig,
    build_mc_config,
    build_nuisance,
    config_hash,
    load_config,
)
from .dataio import (
    read_dataset,
    write_curve,
    write_manifest,
    write_nuisance,
    write_replications,
    write_summary,
    write_vd_grid,
)
from .estimator import estimate_cate
from .asymptotics import fill_plugin_variance
from .figures import curve_figure, simulation_figure, vd_figure
from .kernels import (
    BandwidthRule,
    BandwidthSchedule,
    KernelSpec,
    check_rate_conditions,
    kernel_moment,
    roughness,
)
from .nuisance import EstimationError, assemble_nuisance
from .simulation import default_schedule, run_mc

__all__ = ["main"]

DEFAULT_OUT_ENV = "DRCATE_OUT"
FULL_REPLICATIONS = 2500


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def _out_dir(args, config: RunConfig) -> Path:
    if args.out is not None:
        out = Path(args.out)
    elif config.run.out_dir is not None:
        out = Path(config.run.out_dir)
    elif os.environ.get(DEFAULT_OUT_ENV):
        out = Path(os.environ[DEFAULT_OUT_ENV])
    else:
        out = Path.cwd()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args) -> RunConfig:
    if args.config is None:
        return RunConfig()
    return load_config(args.config)


def _apply_run_overrides(config: RunConfig, args) -> RunConfig:
    run = config.run
    if getattr(args, "seed", None) is not None:
        run = replace(run, seed=args.seed)
    if getattr(args, "threads", None) is not None:
        run = replace(run, threads=args.threads)
    return replace(config, run=run)


def cmd_estimate(args) -> int:
    config = _apply_run_overrides(_load(args), args)
    if config.estimate is None:
        raise ConfigError("estimate needs a config file with an estimate section")
    est = config.estimate
    out = _out_dir(args, config)
    start = time.perf_counter()

    for name, comp in (
        ("propensity", est.propensity),
        ("outcome1", est.outcome1),
        ("outcome0", est.outcome0),
    ):
        if comp.method == "oracle":
            raise ConfigError(
                f"estimate.{name}: oracle nuisances need simulated truth and are not "
                "available for file data"
            )

    data = read_dataset(est.data, x1_columns=est.x1_columns)
    nuis = build_nuisance(est, data.n, data.d)
    fit = assemble_nuisance(data, nuis)

    if est.grid is not None:
        grid = np.asarray(est.grid, dtype=float)
    else:
        if data.k != 1:
            raise ConfigError("estimate.grid: required when conditioning on more than one column")
        x1 = data.X1[:, 0]
        lo, hi = np.quantile(x1, [0.05, 0.95])
        grid = np.linspace(lo, hi, 25)

    K1 = KernelSpec.parse(est.kernel1, dim=data.k)
    h1 = est.h1.resolve(data.n)
    curve = estimate_cate(data, fit, grid, K1, h1)
    curve = fill_plugin_variance(curve, data, fit)

    curve_path = out / "curve.csv"
    nuisance_path = out / "nuisance.csv"
    figure_path = out / "curve.png"
    write_curve(curve_path, curve)
    write_nuisance(nuisance_path, fit)
    curve_figure(curve, figure_path)
    write_manifest(
        out / "manifest.json",
        {
            "command": "estimate",
            "version": __version__,
            "config_hash": config_hash(config),
            "seed": config.run.seed,
            "n": data.n,
            "d": data.d,
            "k": data.k,
            "h1": h1,
            "kernel1": est.kernel1,
            "labels": fit.labels,
            "missing_grid_points": int(curve.missing.sum()),
            "diagnostics": dict(fit.diagnostics),
            "runtime_s": time.perf_counter() - start,
        },
    )
    # normal bands with no bias correction: valid under undersmoothing,
    # where the smoothing bias vanishes faster than the sampling noise
    print(f"wrote {curve_path}")
    print(f"wrote {nuisance_path}")
    print(f"wrote {figure_path}")
    missing = int(curve.missing.sum())
    if missing:
        print(f"note: {missing} grid point(s) had no usable neighborhood")
    return 0


def cmd_simulate(args) -> int:
    config = _apply_run_overrides(_load(args), args)
    if config.simulate is None:
        config = replace(config, simulate=SimulateConfig())
    if args.full and args.reps is not None:
        raise ConfigError("--full and --reps are mutually exclusive")
    if args.full:
        config = replace(config, simulate=replace(config.simulate, replications=FULL_REPLICATIONS))
    if args.reps is not None:
        config = replace(config, simulate=replace(config.simulate, replications=args.reps))
    out = _out_dir(args, config)

    mc = build_mc_config(config)
    result = run_mc(mc)
    report = result.report

    reps_path = out / "replications.csv"
    summary_path = out / "summary.csv"
    figure_path = out / "simulation.png"
    write_replications(reps_path, report.x1, result.tau_hat, result.t_stat)
    write_summary(summary_path, report)
    simulation_figure(report.x1, result.t_stat, report, figure_path)
    write_manifest(
        out / "manifest.json",
        {
            "command": "simulate",
            "version": __version__,
            "config_hash": config_hash(config),
            "seed": report.seed,
            "model": report.model,
            "combination": report.combination,
            "n": report.n,
            "replications": report.replications,
            "failures": report.failures,
            "n_used": report.n_used.tolist(),
            "valid": report.valid,
            "h1": report.h1,
            "diagnostics": dict(report.diagnostics),
            "first_error": report.first_error,
            "runtime_s": report.runtime_s,
        },
    )

    print(f"{report.model} {report.combination} n={report.n} R={report.replications} seed={report.seed}")
    for g in range(report.x1.size):
        print(
            f"  x1={report.x1[g]:+.2f}  bias={report.bias[g]:+.4f}  "
            f"sam-SD={report.sam_sd[g]:.4f}  MSE={report.mse[g]:.4f}  "
            f"P0.05={report.p05[g]:.4f}  P0.95={report.p95[g]:.4f}"
        )
    print(f"wrote {reps_path}")
    print(f"wrote {summary_path}")
    print(f"wrote {figure_path}")
    if not report.valid:
        frac = report.failures / report.replications
        print(
            f"warning: run degraded (failure rate {frac:.1%} or missing estimates above 1%)",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_variance_curves(args) -> int:
    config = _apply_run_overrides(_load(args), args)
    if config.variance_curves is None:
        config = replace(config, variance_curves=VarianceCurvesConfig())
    vc = config.variance_curves
    out = _out_dir(args, config)
    start = time.perf_counter()

    p2 = vc.p2_grid()
    p1_col = np.repeat(np.asarray(vc.p1), p2.size)
    p2_col = np.tile(p2, len(vc.p1))
    vd_col = vd(p1_col, p2_col)
    gap_col = vc.xi_sq * vd_col

    grid_path = out / "vd_grid.csv"
    gap_path = out / "variance_gap.csv"
    figure_path = out / "vd_curves.png"
    write_vd_grid(grid_path, p1_col, p2_col, vd_col)
    write_vd_grid(gap_path, p1_col, p2_col, vd_col, gap_col)
    vd_matrix = vd_col.reshape(len(vc.p1), p2.size)
    vd_figure(vc.p1, p2, vd_matrix, figure_path)
    write_manifest(
        out / "manifest.json",
        {
            "command": "variance-curves",
            "version": __version__,
            "config_hash": config_hash(config),
            "seed": config.run.seed,
            "rows": int(vd_col.size),
            "xi_sq": vc.xi_sq,
            "runtime_s": time.perf_counter() - start,
        },
    )
    print(f"wrote {grid_path}")
    print(f"wrote {gap_path}")
    print(f"wrote {figure_path}")
    return 0


def _rates_inputs(cr: CheckRatesConfig):
    if cr.model is not None:
        defaults = default_schedule(cr.model)
        rules = dict(defaults.schedule.rules)
        orders = dict(defaults.orders)
        d = defaults.d if cr.d is None else cr.d
    else:
        rules = {}
        orders = {}
        d = cr.d
    for role, value in cr.orders:
        orders[role] = value
    for role, bw in cr.bandwidths:
        rules[role] = BandwidthRule(bw.a, bw.eta)
    if not rules:
        raise ConfigError("check_rates: no bandwidth rules; give a model or explicit bandwidths")
    return BandwidthSchedule(rules), orders, d


def cmd_check_rates(args) -> int:
    config = _apply_run_overrides(_load(args), args)
    if config.check_rates is None:
        raise ConfigError("check-rates needs a config file with a check_rates section")
    cr = config.check_rates
    out = _out_dir(args, config)
    schedule, orders, d = _rates_inputs(cr)
    violations = check_rate_conditions(schedule, orders, d=d, k=cr.k, scenario=cr.scenario)

    lines = [f"scenario: {cr.scenario}  d={d}  k={cr.k}"]
    for role in sorted(schedule.rules):
        rule = schedule.rules[role]
        lines.append(f"  {role}: a={rule.a:g} eta={rule.eta:g}")
    if violations:
        lines.append(f"{len(violations)} violation(s):")
        lines.extend(f"  {v}" for v in violations)
    else:
        lines.append("all conditions satisfied")
    text = "\n".join(lines)
    print(text)
    report_path = out / "check_rates.txt"
    report_path.write_text(text + "\n", encoding="utf-8")
    print(f"wrote {report_path}")
    return 0


def cmd_kernel_moments(args) -> int:
    print(f"{'kernel':>16s} {'j':>3s} {'moment':>22s}")
    for family in ("gaussian", "epanechnikov"):
        for order in (2, 4, 6):
            spec = KernelSpec(family, order, 1)
            for j in range(order + 1):
                m = kernel_moment(spec, j)
                print(f"{spec.tag():>16s} {j:>3d} {m:>22.15g}")
            print(f"{spec.tag():>16s}   R {roughness(spec):>22.15g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drcate",
        description="Doubly robust conditional effect estimation, simulation, and diagnostics.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML config file")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, metavar="U64", help="override run.seed")
    common.add_argument("--threads", type=int, metavar="N", help="override run.threads")

    p_est = sub.add_parser("estimate", parents=[common], help="effect curve from a dataset CSV")
    p_est.set_defaults(func=cmd_estimate)

    p_sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo benchmark run")
    p_sim.add_argument("--reps", type=int, metavar="N", help="override replication count")
    p_sim.add_argument(
        "--full", action="store_true", help=f"full-scale run (R={FULL_REPLICATIONS})"
    )
    p_sim.set_defaults(func=cmd_simulate)

    p_vd = sub.add_parser(
        "variance-curves", parents=[common], help="design-variance factor over a probability grid"
    )
    p_vd.set_defaults(func=cmd_variance_curves)

    p_rates = sub.add_parser(
        "check-rates", parents=[common], help="bandwidth admissibility report"
    )
    p_rates.set_defaults(func=cmd_check_rates)

    p_km = sub.add_parser("kernel-moments", help="print the kernel moment table")
    p_km.set_defaults(func=cmd_kernel_moments)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, EstimationError, OSError) as exc:
        # ConfigError, ParseError, and SchemaError are ValueError subclasses;
        # the bare case covers kernel-spec strings and similar input parsing
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
