"""Command-line driver.

    rodshape generate --scenario S1 --trials 60 --seed 0 --out truths/
    rodshape estimate --scenario S1 --trials 60 --jobs 4 --out runs/S1
    rodshape estimate --scenario S1 --truth-dir truths/ --out runs/S1
    rodshape query --run runs/S1 --trial 0 --n 400 --out pose.csv
    rodshape report runs/S1 runs/S2 runs/S3
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .metrics import TABLE_HEADER, aggregate, table_row, write_json
from .scenario import load_scenario


def _scenario(args):
    sc = load_scenario(args.scenario)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.trials is not None:
        changes["trials"] = args.trials
    return sc.replace(**changes) if changes else sc


def cmd_generate(args) -> int:
    sc = _scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = {}
    for i in range(sc.trials):
        try:
            truth = pipeline.make_truth(sc, i)
        except RuntimeError as exc:
            failures[str(i)] = str(exc)
            logging.error("draw %d: %s", i, exc)
            continue
        truth.save(out / f"truth_{i:03d}.txt")
        write_json(pipeline._jsonable(truth.provenance), out / f"truth_{i:03d}.json")
    write_json(
        {
            "config_hash": sc.config_hash(),
            "seed": sc.seed,
            "trials": sc.trials,
            "versions": pipeline.versions(),
            "failures": failures,
        },
        out / "manifest.json",
    )
    sc.save(out / "scenario.yaml")
    return 0 if not failures else 1


def cmd_estimate(args) -> int:
    sc = _scenario(args)
    truth_files = None
    if args.truth_dir:
        truth_files = sorted(Path(args.truth_dir).glob("truth_*.txt"))
        if not truth_files:
            print(f"no truth_*.txt files in {args.truth_dir}", file=sys.stderr)
            return 2
        if args.trials is not None:
            truth_files = truth_files[: args.trials]
        manifest = Path(args.truth_dir) / "manifest.json"
        if args.seed is None and manifest.exists():
            # measurement noise follows the seed the truths were drawn with
            sc = sc.replace(seed=json.loads(manifest.read_text())["seed"])
    status = pipeline.run_scenario(sc, args.out, jobs=args.jobs, truth_files=truth_files)
    summary = json.loads((Path(args.out) / "summary.json").read_text())
    timing = json.loads((Path(args.out) / "timing.json").read_text())
    if "position_error_mm" in summary:
        print(TABLE_HEADER)
        print(table_row(sc.name, {**summary, "timing": timing}))
    return status


def cmd_query(args) -> int:
    cfg, _ = pipeline.load_estimate(args.run, args.trial)
    if args.s:
        s = np.asarray(args.s, dtype=float)
    else:
        s = np.linspace(0.0, cfg.length, args.n)
    try:
        poses = pipeline.query(args.run, args.trial, s)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    target = args.out or sys.stdout
    pipeline.write_pose_table(target, s, poses)
    return 0


def cmd_report(args) -> int:
    print(TABLE_HEADER)
    rows = {}
    for run in args.runs:
        reports = pipeline.load_trial_reports(run)
        if not reports:
            print(f"{run}: no trials found", file=sys.stderr)
            return 2
        name = json.loads((Path(run) / "summary.json").read_text()).get("scenario", Path(run).name)
        stats = aggregate(reports)
        rows[str(run)] = stats
        print(table_row(name, stats))
    if args.out:
        write_json(rows, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rodshape", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--scenario", default="S1", help="preset name (S1, S2, S3) or YAML file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--trials", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--out", required=out_required)

    g = sub.add_parser("generate", help="write a batch of ground-truth tables")
    common(g)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("estimate", help="run a scenario end to end")
    common(e)
    e.add_argument("--truth-dir", help="read truth_*.txt tables instead of generating")
    e.set_defaults(func=cmd_estimate)

    q = sub.add_parser("query", help="dense poses from a stored estimate")
    q.add_argument("--run", required=True)
    q.add_argument("--trial", type=int, default=0)
    q.add_argument("--s", type=float, nargs="+", help="arclengths in m")
    q.add_argument("--n", type=int, default=400, help="uniform samples when --s is absent")
    q.add_argument("--out", help="CSV path (stdout if omitted)")
    q.set_defaults(func=cmd_query)

    r = sub.add_parser("report", help="aggregate existing run directories")
    r.add_argument("runs", nargs="+")
    r.add_argument("--out", help="JSON path for the aggregated statistics")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
