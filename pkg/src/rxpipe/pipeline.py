"""Batch orchestration: job planning, a checkpointed worker pool, and reports.

One job is one (generic, truncation window). Jobs share only the immutable
store, so they run in any order on any number of worker processes; each job
seeds itself from (master seed, generic, window). The manifest is rewritten
atomically after every finished job, which is what makes ``resume`` safe.
"""

from __future__ import annotations

import concurrent.futures as cf
import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ehr
from .cohort import check_cohort, clean_patients, eligible_generics, match_controls
from .evaluate import (ModelResult, TooFewPairs, cross_validate, flag_separable, kde_curve,
                       make_folds, window_summary)
from .forest import ForestParams
from .seeds import mix_seed
from .tabulate import build_table, leakage_scan, prevalence_filter

log = logging.getLogger(__name__)

MANIFEST = "manifest.jsonl"
DEFAULT_WINDOWS = (ehr.MONTH, ehr.SIX_MONTHS, ehr.TWO_YEARS, ehr.FIVE_YEARS)


class Status(str, Enum):
    PENDING = "pending"
    DONE = "done"
    SKIPPED = "skipped"
    FAILED = "failed"


class ResumeError(RuntimeError):
    pass


@dataclass
class RunConfig:
    patients_path: str
    events_path: str
    out_dir: str
    windows: tuple[int, ...] = DEFAULT_WINDOWS
    min_cases: int = 500
    min_dx: int = 4
    min_visit_dates: int = 2
    dob_tolerance: int = 30
    prevalence: float = 0.01
    per_group_prevalence: bool = False
    n_trees: int = 500
    mtry_fraction: float = 0.10
    folds: int = 10
    workers: int = 1
    seed: int = 0
    leakage_sample: float = 0.01
    emit_cohorts: str | None = None
    emit_tables: str | None = None

    def __post_init__(self):
        self.windows = tuple(int(w) for w in self.windows)
        if not self.windows:
            raise ValueError("windows must be non-empty")
        if any(w < 0 for w in self.windows) or any(
                b <= a for a, b in zip(self.windows, self.windows[1:])):
            raise ValueError("windows must be non-negative and strictly increasing")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        ForestParams(self.n_trees, self.mtry_fraction)  # validates

    def forest_params(self, seed: int) -> ForestParams:
        return ForestParams(n_trees=self.n_trees, mtry_fraction=self.mtry_fraction, seed=seed)

    def modelling_fields(self) -> dict:
        """Everything that can change a result; excludes paths, pool size and audit outputs."""
        d = asdict(self)
        for k in ("patients_path", "events_path", "out_dir", "workers", "emit_cohorts", "emit_tables"):
            d.pop(k)
        d["windows"] = list(self.windows)
        return d

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.modelling_fields(), sort_keys=True).encode())
        for path in (self.patients_path, self.events_path):
            with open(path, "rb") as fh:
                h.update(hashlib.sha256(fh.read()).digest())
        return h.hexdigest()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["windows"] = list(self.windows)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**d)


@dataclass
class Job:
    generic: int
    window_days: int
    status: Status = Status.PENDING
    reason: str | None = None
    result: ModelResult | None = None
    elapsed_s: float | None = field(default=None, compare=False)

    @property
    def key(self) -> tuple[int, int]:
        return self.generic, self.window_days

    def to_dict(self) -> dict:
        return {
            "generic": self.generic,
            "window_days": self.window_days,
            "status": self.status.value,
            "reason": self.reason,
            "result": None if self.result is None else self.result.to_dict(),
            "elapsed_s": self.elapsed_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Job":
        return cls(
            int(d["generic"]), int(d["window_days"]), Status(d["status"]), d.get("reason"),
            None if d.get("result") is None else ModelResult.from_dict(d["result"]),
            d.get("elapsed_s"),
        )


@dataclass
class Manifest:
    fingerprint: str
    config: RunConfig
    jobs: list[Job]

    def summaries(self) -> dict[str, dict]:
        out = {}
        for w in self.config.windows:
            done = [j.result for j in self.jobs if j.window_days == w and j.status == Status.DONE]
            skipped = sum(1 for j in self.jobs if j.window_days == w and j.status == Status.SKIPPED)
            entry = {"n_models": len(done), "n_skipped": skipped, "mean_auc": None, "std_auc": None}
            if done:
                entry["mean_auc"], entry["std_auc"], _ = window_summary(done)
            out[str(w)] = entry
        return out

    def dumps(self) -> str:
        header = {"fingerprint": self.fingerprint, "config": self.config.to_dict(),
                  "summaries": self.summaries()}
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(j.to_dict(), sort_keys=True) for j in self.jobs]
        return "\n".join(lines) + "\n"

    def canonical(self) -> str:
        """Serialisation without wall-clock times, output location or pool size,
        for comparing runs that should agree."""
        config = replace(self.config, out_dir="", workers=1)
        jobs = [replace(j, elapsed_s=None) for j in self.jobs]
        return Manifest(self.fingerprint, config, jobs).dumps()

    def write(self, out_dir) -> None:
        _atomic_write(Path(out_dir) / MANIFEST, self.dumps())

    @classmethod
    def read(cls, out_dir) -> "Manifest":
        with open(Path(out_dir) / MANIFEST, encoding="utf-8") as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        header = lines[0]
        return cls(header["fingerprint"], RunConfig.from_dict(header["config"]),
                   [Job.from_dict(d) for d in lines[1:]])


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_inputs(config: RunConfig) -> ehr.EventStore:
    store = ehr.load(config.patients_path, config.events_path)
    _, cleaned = clean_patients(store.patients, store, config.min_dx, config.min_visit_dates)
    return cleaned


def plan_jobs(store: ehr.EventStore, patients: ehr.PatientTable, config: RunConfig) -> list[Job]:
    generics = eligible_generics(store, config.min_cases)
    if not generics:
        raise ValueError("empty plan")
    return [Job(g, w) for g in generics for w in config.windows]


def job_seed(master: int, generic: int, window_days: int) -> int:
    return mix_seed(master, generic, window_days)


def run_job(job: Job, store: ehr.EventStore, config: RunConfig) -> Job:
    """Execute one job; every failure is folded into the returned job's status."""
    started = time.perf_counter()
    g, w = job.key
    seed = job_seed(config.seed, g, w)
    try:
        patients = store.patients
        cohort = match_controls(store, patients, g, config.dob_tolerance)
        check_cohort(cohort, store, patients, config.dob_tolerance)
        if config.emit_cohorts:
            _atomic_write(Path(config.emit_cohorts) / f"cohort_{g}.csv", cohort.to_csv())
        if len(cohort) < config.folds:
            raise TooFewPairs("too few pairs")
        table = build_table(cohort, store, w)
        leaks = leakage_scan(table, cohort, store, w, config.leakage_sample, seed)
        if leaks:
            raise AssertionError(f"leakage guard: {leaks} feature bits from the censored window")
        table = prevalence_filter(table, config.prevalence, config.per_group_prevalence)
        if config.emit_tables:
            _atomic_write(Path(config.emit_tables) / f"table_{g}_{w}.csv", table.to_csv())
        plan = make_folds(len(cohort), config.folds, seed)
        result = cross_validate(table, table.labels, plan, config.forest_params(seed),
                                generic=g, window_days=w)
        out = Job(g, w, Status.DONE, None, result)
    except TooFewPairs as exc:
        out = Job(g, w, Status.SKIPPED, str(exc))
    except Exception as exc:  # job isolation: never abort the run
        log.warning("job %s/%s failed: %s", g, w, exc)
        out = Job(g, w, Status.FAILED, f"{type(exc).__name__}: {exc}")
    out.elapsed_s = round(time.perf_counter() - started, 3)
    return out


_WORKER_STATE: dict = {}


def _init_worker(store, config):
    _WORKER_STATE["store"] = store
    _WORKER_STATE["config"] = config


def _run_in_worker(job: Job) -> Job:
    return run_job(job, _WORKER_STATE["store"], _WORKER_STATE["config"])


def _prepare_out(config: RunConfig) -> None:
    try:
        for d in (config.out_dir, config.emit_cohorts, config.emit_tables):
            if d:
                Path(d).mkdir(parents=True, exist_ok=True)
        probe = Path(config.out_dir) / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory not writable: {exc}") from exc


def run(plan: Sequence[Job], config: RunConfig, store: ehr.EventStore | None = None,
        max_jobs: int | None = None) -> Manifest:
    """Run every pending or failed job in ``plan``, checkpointing after each.

    ``max_jobs`` stops after that many jobs finish (used to simulate an
    interrupted run).
    """
    _prepare_out(config)
    if store is None:
        store = load_inputs(config)
    manifest = Manifest(config.fingerprint(), config, [replace(j) for j in plan])
    todo = [i for i, j in enumerate(manifest.jobs) if j.status in (Status.PENDING, Status.FAILED)]
    if max_jobs is not None:
        todo = todo[:max_jobs]
    manifest.write(config.out_dir)
    position = {manifest.jobs[i].key: i for i in todo}

    def record(job: Job):
        manifest.jobs[position[job.key]] = job
        manifest.write(config.out_dir)
        log.info("%s generic=%s window=%s", job.status.value, job.generic, job.window_days)

    if config.workers == 1 or len(todo) <= 1:
        for i in todo:
            record(run_job(manifest.jobs[i], store, config))
    else:
        with cf.ProcessPoolExecutor(config.workers, initializer=_init_worker,
                                    initargs=(store, config)) as pool:
            futures = [pool.submit(_run_in_worker, manifest.jobs[i]) for i in todo]
            for fut in cf.as_completed(futures):
                record(fut.result())
    return manifest


def resume(out_dir, config: RunConfig | None = None, workers: int | None = None,
           max_jobs: int | None = None) -> Manifest:
    """Re-run pending and failed jobs of the manifest in ``out_dir``.

    When ``config`` is given it must fingerprint identically to the stored one.
    """
    manifest = Manifest.read(out_dir)
    stored = manifest.config
    if config is not None and config.fingerprint() != manifest.fingerprint:
        raise ResumeError("config changed; refusing to resume")
    if stored.fingerprint() != manifest.fingerprint:
        raise ResumeError("config changed; refusing to resume")
    stored.out_dir = str(out_dir)
    if workers is not None:
        stored.workers = workers
    if all(j.status in (Status.DONE, Status.SKIPPED) for j in manifest.jobs):
        return manifest
    return run(manifest.jobs, stored, max_jobs=max_jobs)


def start(config: RunConfig, max_jobs: int | None = None) -> Manifest:
    """Fresh run, or continuation when ``out_dir`` already holds a manifest
    with the same fingerprint."""
    if (Path(config.out_dir) / MANIFEST).exists():
        return resume(config.out_dir, config, config.workers, max_jobs)
    _prepare_out(config)
    store = load_inputs(config)
    return run(plan_jobs(store, store.patients, config), config, store, max_jobs)


# --- reporting -----------------------------------------------------------

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2")


def report(manifest: Manifest, out_dir) -> list[Path]:
    """Write results.csv, summary.csv, kde.csv, flags.csv and kde.svg."""
    out = Path(out_dir)
    done = [j.result for j in manifest.jobs if j.status == Status.DONE]
    if not done:
        raise ValueError("no completed jobs to report")
    done.sort(key=lambda r: (r.generic, r.window_days))
    k = max(len(r.fold_aucs) for r in done)

    lines = ["generic,window_days,n_pairs,n_features," + ",".join(f"auc_fold{i}" for i in range(k))
             + ",mean_auc,std_auc"]
    for r in done:
        folds = [repr(a) for a in r.fold_aucs] + [""] * (k - len(r.fold_aucs))
        lines.append(f"{r.generic},{r.window_days},{r.n_pairs},{r.n_features_postfilter},"
                     + ",".join(folds) + f",{r.mean_auc!r},{r.std_auc!r}")
    files = {"results.csv": "\n".join(lines) + "\n"}

    lines = ["window_days,mean_auc,std_auc,n_models,n_skipped"]
    curves = {}
    for w, s in manifest.summaries().items():
        fmt = (lambda v: "" if v is None else repr(v))
        lines.append(f"{w},{fmt(s['mean_auc'])},{fmt(s['std_auc'])},{s['n_models']},{s['n_skipped']}")
        values = [r.mean_auc for r in done if r.window_days == int(w)]
        if len(values) >= 2 and np.ptp(values) > 0:
            curves[int(w)] = kde_curve(values)
    files["summary.csv"] = "\n".join(lines) + "\n"

    lines = ["window_days,auc,density"]
    for w, c in curves.items():
        lines += [f"{w},{x!r},{d!r}" for x, d in zip(c.grid.tolist(), c.density.tolist())]
    files["kde.csv"] = "\n".join(lines) + "\n"

    smallest = min(manifest.config.windows)
    at_smallest = [r for r in done if r.window_days == smallest]
    by_generic = {r.generic: r for r in at_smallest}
    lines = ["generic,window_days,mean_auc"]
    lines += [f"{g},{smallest},{by_generic[g].mean_auc!r}" for g in flag_separable(at_smallest)]
    files["flags.csv"] = "\n".join(lines) + "\n"
    files["kde.svg"] = kde_svg(curves)

    written = []
    for name, text in files.items():
        _atomic_write(out / name, text)
        written.append(out / name)
    return written


def kde_svg(curves: dict, width: int = 640, height: int = 400) -> str:
    """Overlay one KDE polyline per window, x axis AUC in [0, 1]."""
    pad = 50
    top = max((float(c.density.max()) for c in curves.values()), default=1.0) * 1.05

    def sx(x):
        return pad + (x * (width - 2 * pad))

    def sy(d):
        return height - pad - d / top * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
    ]
    for tick in np.linspace(0, 1, 11):
        x = sx(tick)
        parts.append(f'<line x1="{x:.1f}" y1="{height - pad}" x2="{x:.1f}" y2="{height - pad + 5}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{height - pad + 18}" text-anchor="middle">{tick:.1f}</text>')
    parts.append(f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">AUC</text>')
    parts.append(f'<text x="15" y="{height / 2}" transform="rotate(-90 15 {height / 2})" '
                 f'text-anchor="middle">density</text>')
    for i, (w, c) in enumerate(sorted(curves.items())):
        colour = _PALETTE[i % len(_PALETTE)]
        keep = (c.grid >= 0) & (c.grid <= 1)
        pts = " ".join(f"{sx(x):.2f},{sy(d):.2f}" for x, d in zip(c.grid[keep], c.density[keep]))
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="2" points="{pts}"/>')
        ly = pad + 18 * i
        parts.append(f'<line x1="{width - pad - 110}" y1="{ly}" x2="{width - pad - 90}" y2="{ly}" '
                     f'stroke="{colour}" stroke-width="2"/>')
        parts.append(f'<text x="{width - pad - 85}" y="{ly + 4}">{w} days</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
