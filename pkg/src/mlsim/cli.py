"""Command-line entry point: ``mlsim simulate | sweep | fd-table | analyze-conversion``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from mlsim.analysis import ConversionScenario, annualize, dkcr_dnA, dd_dn, marginal_benefit
from mlsim.fd import FdParams, fd_table
from mlsim.harness import SWEEP_AXES, SweepSpec, report_csv, run_monte_carlo, run_once, run_sweep, sweep_csv, write_traces
from mlsim.scenario import ScenarioConfig, load_config_file

log = logging.getLogger("mlsim")


def _config(args) -> ScenarioConfig:
    cfg = load_config_file(args.config) if args.config else ScenarioConfig()
    changes = {}
    if getattr(args, "policy", None):
        changes["policy"] = args.policy
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        changes["n_iterations"] = args.iterations
    return cfg.replace(**changes) if changes else cfg.validate()


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mc = run_monte_carlo(cfg, workers=args.workers)
    (out / "summary.csv").write_text(report_csv(mc))
    if args.traces:
        write_traces(run_once(cfg, 0, traces=True), cfg, out)
    log.info("wrote %s", out / "summary.csv")
    return 0


def _parse_values(axis: str, text: str) -> list:
    items = [v.strip() for v in text.split(",") if v.strip()]
    if not items:
        raise ValueError("--values is empty")
    return items if axis == "policy" else [float(v) for v in items]


def cmd_sweep(args) -> int:
    cfg = _config(args)
    values = _parse_values(args.axis, args.values)
    results = run_sweep(SweepSpec(args.axis, values, cfg), workers=args.workers)
    text = sweep_csv(args.axis, results)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_fd_table(args) -> int:
    fractions = np.linspace(0.0, 1.0, args.fractions)
    densities = np.arange(args.k_step, args.k_max + 1e-9, args.k_step)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["cav_fraction", "k", "q", "v"])
    for row in fd_table(FdParams(), fractions, densities):
        w.writerow([repr(x) for x in row])
    return 0


def cmd_analyze(args) -> int:
    kw = dict(ml_cav_fraction=args.cav_fraction, ml_density_ratio=args.ml_ratio, gpl_density=args.gpl_density)
    if args.vot is not None:
        kw["mean_vot"] = args.vot
    sc = ConversionScenario(**kw)
    mb = marginal_benefit(sc)
    doc = {
        "scenario": {**kw, "mean_vot": sc.mean_vot, "cell_length": sc.cell_length},
        "dkcr_dnA": dkcr_dnA(sc.ml_mix(), sc.params),
        "dd_dn": dd_dn(sc.gpl_density, sc.params),
        **mb.as_dict(),
    }
    if args.per_trip is not None:
        doc["annual"] = annualize(args.per_trip)
    print(json.dumps(doc, indent=2))
    return 0


def _error_line(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _error_line("UsageError", message)
        self.exit(2)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mlsim", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML scenario file; defaults apply to omitted keys")
        p.add_argument("--policy")
        p.add_argument("--seed", type=int)
        p.add_argument("--iterations", type=int)
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("simulate", help="Monte Carlo run of one scenario")
    common(p)
    p.add_argument("--out", default="out")
    p.add_argument("--traces", action="store_true", help="also write density/trajectory/toll/lane-change CSVs of iteration 0")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="Monte Carlo summary per value of one parameter")
    common(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fd-table", help="fundamental diagram grid as CSV")
    p.add_argument("--fractions", type=int, default=11, help="number of CAV fractions in [0, 1]")
    p.add_argument("--k-max", type=float, default=80.0)
    p.add_argument("--k-step", type=float, default=1.0)
    p.set_defaults(func=cmd_fd_table)

    p = sub.add_parser("analyze-conversion", help="marginal value of one HOV-to-CAV conversion, as JSON")
    p.add_argument("--cav-fraction", type=float, default=0.4)
    p.add_argument("--ml-ratio", type=float, default=0.85)
    p.add_argument("--gpl-density", type=float, default=63.0)
    p.add_argument("--vot", type=float)
    p.add_argument("--per-trip", type=float, help="per-trip saving to annualize (2 trips/day, 250 days)")
    p.set_defaults(func=cmd_analyze)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # report every failure as one parseable line
        _error_line(type(exc).__name__, str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
