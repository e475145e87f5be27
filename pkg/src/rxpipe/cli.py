"""Command line entry point: ``rxpipe synth | run | resume | report``.

Exit codes: 0 success, 1 fatal configuration or I/O error, 2 the run
finished but at least one job failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import ehr, pipeline, synth

EXIT_OK, EXIT_FATAL, EXIT_FAILED_JOBS = 0, 1, 2


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rxpipe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic, de-identified EHR population")
    p.add_argument("--patients", type=int, default=2000)
    p.add_argument("--generics", type=int, default=10)
    p.add_argument("--prodrome-days", type=int, default=30)
    p.add_argument("--signal", type=float, default=0.9)
    p.add_argument("--background-rate", type=float, default=2.0)
    p.add_argument("--case-fraction", type=float, default=0.05)
    p.add_argument("--years", type=int, default=30)
    p.add_argument("--dx-codes", type=int, default=400)
    p.add_argument("--lab-codes", type=int, default=120)
    p.add_argument("--no-deidentify", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="build and evaluate every (generic, window) model")
    p.add_argument("--patients", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--windows", type=_int_list, default=pipeline.DEFAULT_WINDOWS)
    p.add_argument("--min-cases", type=int, default=500)
    p.add_argument("--min-dx", type=int, default=4)
    p.add_argument("--min-visits", type=int, default=2)
    p.add_argument("--dob-tol", type=int, default=30)
    p.add_argument("--prevalence", type=float, default=0.01)
    p.add_argument("--per-group-prevalence", action="store_true")
    p.add_argument("--trees", type=int, default=500)
    p.add_argument("--mtry", type=float, default=0.10)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-cohorts")
    p.add_argument("--emit-tables")
    p.add_argument("--max-jobs", type=int, help=argparse.SUPPRESS)

    p = sub.add_parser("resume", help="finish an interrupted run")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--max-jobs", type=int, help=argparse.SUPPRESS)

    p = sub.add_parser("report", help="write CSV and SVG reports for a run")
    p.add_argument("--out", required=True)
    return parser


def cmd_synth(args) -> int:
    config = synth.SynthConfig(
        n_patients=args.patients, n_generics=args.generics, n_diagnosis_codes=args.dx_codes,
        n_lab_codes=args.lab_codes, years_span=args.years, prodrome_days=args.prodrome_days,
        signal_strength=args.signal, background_rate=args.background_rate,
        case_fraction=args.case_fraction,
    )
    patients, store, truth = synth.generate(config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not args.no_deidentify:
        patients, store, codemap = synth.deidentify(patients, store, args.seed + 1)
        truth = truth.remap(codemap)
        (out / "codemap.json").write_text(codemap.to_json() + "\n")
    ehr.save(store, out / "patients.csv", out / "events.csv")
    (out / "groundtruth.json").write_text(truth.to_json() + "\n")
    print(f"wrote {len(patients)} patients, {len(store)} events to {out}")
    return EXIT_OK


def _finish(manifest: pipeline.Manifest) -> int:
    counts = {s: sum(j.status == s for j in manifest.jobs) for s in pipeline.Status}
    print(" ".join(f"{s.value}={n}" for s, n in counts.items()))
    return EXIT_FAILED_JOBS if counts[pipeline.Status.FAILED] else EXIT_OK


def cmd_run(args) -> int:
    config = pipeline.RunConfig(
        patients_path=args.patients, events_path=args.events, out_dir=args.out,
        windows=args.windows, min_cases=args.min_cases, min_dx=args.min_dx,
        min_visit_dates=args.min_visits, dob_tolerance=args.dob_tol, prevalence=args.prevalence,
        per_group_prevalence=args.per_group_prevalence, n_trees=args.trees,
        mtry_fraction=args.mtry, folds=args.folds, workers=args.workers, seed=args.seed,
        emit_cohorts=args.emit_cohorts, emit_tables=args.emit_tables,
    )
    return _finish(pipeline.start(config, max_jobs=args.max_jobs))


def cmd_resume(args) -> int:
    return _finish(pipeline.resume(args.out, workers=args.workers, max_jobs=args.max_jobs))


def cmd_report(args) -> int:
    for path in pipeline.report(pipeline.Manifest.read(args.out), args.out):
        print(path)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    handler = {"synth": cmd_synth, "run": cmd_run, "resume": cmd_resume, "report": cmd_report}
    try:
        return handler[args.command](args)
    except (OSError, ValueError, pipeline.ResumeError) as exc:
        print(f"rxpipe {args.command}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
