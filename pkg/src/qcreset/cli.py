"""Command-line driver for batch simulation and analysis runs."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .calibrate import (
    fit_ef_trace,
    fit_exponential,
    fit_f0g1_trace,
    read_trace_csv,
    write_fit_json,
)
from .experiment import (
    build_generator,
    load_experiment,
    run_readout_pipeline,
    run_sweep,
    run_trajectory,
)
from .liouvillian import (
    DegenerateSteadyStateError,
    SpectrumError,
    spectrum,
    write_spectrum_csv,
    write_spectrum_json,
)
from .params import ConfigError, load_system_params, table1_params
from .readout import CovarianceCollapseError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", required=True, help="experiment TOML file")
    parser.add_argument("-o", "--outdir", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qcreset",
        description="Two-tone transmon reset: simulation and analysis runs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trajectory", help="master-equation trajectory run")
    _add_common(p)

    p = sub.add_parser("sweep", help="steady-state sweep over Rabi frequencies")
    _add_common(p)
    p.add_argument("--workers", type=int, default=1, help="parallel workers")

    p = sub.add_parser("readout", help="synthetic single-shot readout pipeline")
    _add_common(p)

    p = sub.add_parser("spectrum", help="Liouvillian spectrum for one configuration")
    _add_common(p)

    p = sub.add_parser("calibrate", help="fit a readout trace")
    p.add_argument("--trace", required=True, help="trace CSV (t,value[,sigma])")
    p.add_argument("--kind", required=True, choices=["f0g1", "ef", "exponential"])
    p.add_argument("--qcr", default="off", choices=["off", "on"])
    p.add_argument("--params", default=None, help="optional system parameter TOML")
    p.add_argument("-o", "--output", default="fit.json", help="fit report path")
    return parser


def _with_seed(config, seed):
    if seed is None:
        return config
    from dataclasses import replace

    return replace(config, seed=seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "trajectory":
            config = _with_seed(load_experiment(args.config), args.seed)
            paths = run_trajectory(config, args.outdir)
        elif args.command == "sweep":
            config = _with_seed(load_experiment(args.config), args.seed)
            paths = run_sweep(config, args.outdir, workers=args.workers)
        elif args.command == "readout":
            config = _with_seed(load_experiment(args.config), args.seed)
            paths = run_readout_pipeline(config, args.outdir)
        elif args.command == "spectrum":
            config = _with_seed(load_experiment(args.config), args.seed)
            ladder, sup = build_generator(config)
            spec = spectrum(
                sup, rate_scale=config.params.kappa.select(config.qcr_state))
            outdir = Path(args.outdir)
            outdir.mkdir(parents=True, exist_ok=True)
            write_spectrum_json(outdir / "spectrum.json", spec, ladder)
            write_spectrum_csv(outdir / "spectrum.csv", spec)
            paths = {"spectrum": outdir / "spectrum.json",
                     "eigenvalues": outdir / "spectrum.csv"}
        elif args.command == "calibrate":
            params = (load_system_params(args.params) if args.params
                      else table1_params())
            trace = read_trace_csv(args.trace)
            if args.kind == "f0g1":
                result = fit_f0g1_trace(trace, params, args.qcr)
            elif args.kind == "ef":
                result = fit_ef_trace(trace, params)
            else:
                result = fit_exponential(trace)
            write_fit_json(args.output, result)
            paths = {"fit": Path(args.output)}
        else:  # pragma: no cover - argparse enforces choices
            return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SpectrumError, DegenerateSteadyStateError, CovarianceCollapseError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
