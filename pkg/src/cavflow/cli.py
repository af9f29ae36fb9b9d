"""Command-line entry point: ``cavflow run``, ``cavflow batch`` and helpers."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import List, Optional

from .config import dump_config, load_config, resolve_jobs
from .harness import (ALL_CASES, ControlCase, InvariantViolation, delay_ratio, run_batch, run_case,
                      write_records, write_summary, write_trace)
from .scenario import dump_scenario, generate, load_scenario

log = logging.getLogger("cavflow")


def _sibling(path: str, suffix: str, ext: Optional[str] = None) -> str:
    stem, old_ext = os.path.splitext(path)
    return f"{stem}{suffix}{ext if ext is not None else old_ext or '.csv'}"


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    params = cfg.road
    if args.scenario:
        with open(args.scenario) as fh:
            scenario = load_scenario(fh)
    else:
        seed = cfg.scenario.seed if args.seed is None else args.seed
        scenario = generate(replace(cfg.scenario, seed=seed), params)
    cases = list(ALL_CASES) if args.case == "all" else [ControlCase.parse(args.case)]
    if ControlCase.NO_CONTROL not in cases:
        cases.insert(0, ControlCase.NO_CONTROL)
    keep = args.trace is not None
    records = [run_case(scenario, c, params, delta=cfg.batch.delta, keep_trace=keep) for c in cases]
    unc = records[0].tts
    out = []
    for rec in records:
        ratio = None
        if unc - rec.tts_min >= cfg.batch.min_delay:
            ratio = delay_ratio(rec.tts, unc, rec.tts_min)
        out.append(replace(rec, tts_unc=unc, delay_ratio=ratio))
    if args.case != "all" and args.case not in (ControlCase.NO_CONTROL.value, ControlCase.NO_CONTROL.name):
        out = out[1:]
    write_records(out, sys.stdout)
    if keep:
        from .plotting import plot_run, plot_runs
        os.makedirs(os.path.dirname(os.path.abspath(args.trace)), exist_ok=True)
        for rec in out:
            tag = "" if len(out) == 1 else f"_{rec.case.value}"
            path = _sibling(args.trace, tag)
            with open(path, "w") as fh:
                write_trace(rec.rho_trace, fh)
            if rec.case in (ControlCase.PREDEFINED, ControlCase.ADAPTIVE, ControlCase.ALL_CAVS):
                with open(_sibling(args.trace, tag + "_hat"), "w") as fh:
                    write_trace(rec.rho_hat_trace, fh)
            plot_run(rec, _sibling(args.trace, tag, ".png"), params)
        if len(out) > 1:
            plot_runs(out, _sibling(args.trace, "_cases", ".png"), params)
    return 0


def cmd_batch(args) -> int:
    cfg = load_config(args.config)
    spec = cfg.batch if args.runs is None else replace(cfg.batch, runs=args.runs)
    jobs = resolve_jobs(args.jobs, cfg)
    os.makedirs(args.out, exist_ok=True)
    log.info("batch: %d grid points x %d runs, %d job(s)",
             len(spec.G_values) * len(spec.p_p_values), spec.runs, jobs)
    result = run_batch(spec, cfg.road, jobs=jobs)
    with open(os.path.join(args.out, "runs.csv"), "w") as fh:
        write_records(result.records, fh)
    with open(os.path.join(args.out, "summary.csv"), "w") as fh:
        write_summary(result.summary, fh)
    from .plotting import plot_batch
    plot_batch(result, os.path.join(args.out, "delay_ratio.png"))
    write_summary(result.summary, sys.stdout)
    return 0


def cmd_example_config(args) -> int:
    from .config import Config
    if args.path:
        with open(args.path, "w") as fh:
            dump_config(Config(), fh)
    else:
        dump_config(Config(), sys.stdout)
    return 0


def cmd_scenario(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.scenario.seed if args.seed is None else args.seed
    scenario = generate(replace(cfg.scenario, seed=seed), cfg.road)
    if args.out:
        with open(args.out, "w") as fh:
            dump_scenario(scenario, fh)
    else:
        dump_scenario(scenario, sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cavflow", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario and print its run records as CSV")
    r.add_argument("--config", help="key = value config file")
    r.add_argument("--seed", type=int)
    r.add_argument("--case", default="all", help="control case name, or 'all' (default)")
    r.add_argument("--trace", help="write density traces (CSV) and heatmaps (PNG) next to this path")
    r.add_argument("--scenario", help="replay a serialized scenario instead of generating one")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("batch", help="run the (G, p_p) grid and write runs.csv, summary.csv, figures")
    b.add_argument("--config")
    b.add_argument("--runs", type=int)
    b.add_argument("--out", default="results")
    b.add_argument("--jobs", type=int)
    b.set_defaults(func=cmd_batch)

    e = sub.add_parser("example-config", help="print every setting with its default value")
    e.add_argument("path", nargs="?")
    e.set_defaults(func=cmd_example_config)

    s = sub.add_parser("scenario", help="write a generated scenario in the text replay format")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_scenario)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"cavflow: invariant violation at {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"cavflow: {exc}", file=sys.stderr)
        return 1
