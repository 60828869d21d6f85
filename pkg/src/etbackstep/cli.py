"""Command-line entry point.

    etbackstep run --scenario sec5 --controller etcs --out runs/etcs1
    etbackstep verify lemma2 --scenario sec5
    etbackstep compare --a runs/ccs --b runs/etcs1
    etbackstep sweep --threshold-scale 1,0.5,0.25,0.125

Output directories default to ``$ETBACKSTEP_OUT`` (or ``./out``) when
``--out`` is not given. The exit status is 0 only if every check passed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import analysis
from .errors import ContractError, NumericError, SpecificationError
from .gains import gain_table_for, lemma2_bounds
from .scenario import SCENARIOS, get_scenario, load_config
from .sim import run

OUT_ENV = "ETBACKSTEP_OUT"


def _out_dir(arg, *parts) -> Path:
    base = Path(arg) if arg else Path(os.environ.get(OUT_ENV, "out"))
    return base.joinpath(*parts)


def _load(args):
    spec, config = get_scenario(args.scenario)
    if getattr(args, "config", None):
        config = load_config(args.config, base=config)
    return spec, config


def cmd_run(args) -> int:
    spec, config = _load(args)
    result = run(spec, config, args.controller)
    out = Path(args.out) if args.out else _out_dir(None, f"{config.name}_{args.controller}")
    for path in analysis.write_run(result, out, config):
        print(path)
    if args.plot:
        analysis.plot_run(result, out / "trajectory.png")
        print(out / "trajectory.png")
    if result.truncated:
        print(f"divergence guard tripped at t={result.truncated_at}", file=sys.stderr)
        return 1
    return 0


def cmd_verify(args) -> int:
    spec, config = _load(args)
    table = gain_table_for(config)
    if args.what == "gains":
        sys.stdout.write(analysis.gain_table_report(table, lemma2_bounds(table, config.dx)))
        return 0
    if args.what == "lemma1":
        sys.stdout.write(analysis.lemma1_report(table))
        return 0
    result = run(spec, config, "etcs")
    if args.what == "lemma2":
        report = analysis.check_lemma2(result, lemma2_bounds(table, config.dx), table)
    else:
        report = analysis.zeno_report(result)
    sys.stdout.write(report.to_csv())
    print(report.summary(), file=sys.stderr)
    return 0 if report.passed and not result.truncated else 1


def cmd_compare(args) -> int:
    dist = analysis.compare_trajectory_files(Path(args.a) / "trajectory.csv", Path(args.b) / "trajectory.csv")
    sys.stdout.write(analysis._csv_text(["signal", "sup_distance"], [[k, repr(v)] for k, v in dist.items()]))
    if args.tol is not None:
        worst = max(dist.values(), default=0.0)
        return 0 if worst <= args.tol else 1
    return 0


def cmd_sweep(args) -> int:
    spec, config = _load(args)
    scales = [float(s) for s in args.threshold_scale.split(",") if s.strip()]
    rows = analysis.threshold_sweep(spec, config, scales, tail_start=args.tail_start)
    text = analysis.sweep_csv(rows)
    sys.stdout.write(text)
    if args.out or os.environ.get(OUT_ENV):
        out = _out_dir(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(text)
    ok = analysis.is_nonincreasing([r.distance_to_ccs for r in rows]) and not any(r.truncated for r in rows)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="etbackstep", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        sp.add_argument("--scenario", default="sec5", choices=sorted(SCENARIOS))
        sp.add_argument("--config", help="JSON file overriding numeric fields of the scenario")

    sp = sub.add_parser("run", help="simulate one closed loop and write CSV files")
    scenario_args(sp)
    sp.add_argument("--controller", choices=("ccs", "etcs"), default="etcs")
    sp.add_argument("--out")
    sp.add_argument("--plot", action="store_true", help="also write a PNG of states, inputs and estimates")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("verify", help="print gain tables or run a verification suite")
    sp.add_argument("what", choices=("gains", "lemma1", "lemma2", "zeno"))
    scenario_args(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("compare", help="sup-norm distance between two run directories")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--tol", type=float, help="fail if any distance exceeds this value")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("sweep", help="event-triggered runs over scaled thresholds")
    scenario_args(sp)
    sp.add_argument("--threshold-scale", default="1,0.5,0.25,0.125")
    sp.add_argument("--tail-start", type=float, default=20.0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SpecificationError, ContractError, NumericError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
