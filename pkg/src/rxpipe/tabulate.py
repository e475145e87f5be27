"""Censoring of pair histories and construction of the per-patient summary table."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import sparse

from .cohort import Cohort
from .ehr import NA, Event, EventStore, Kind


class Feature(NamedTuple):
    kind: str  # event-kind token, or "AGE"
    code: int
    band: int | None = None

    def label(self) -> str:
        if self.kind == "AGE":
            return "AGE"
        if self.band is None:
            return f"{self.kind}:{self.code}"
        return f"{self.kind}:{self.code}:{self.band:+d}"


AGE = Feature("AGE", 0, None)
_TOKENS = [k.token for k in Kind]
_BANDED = (int(Kind.LAB), int(Kind.VITAL))


@dataclass(frozen=True)
class FeatureMatrix:
    """One row per cohort member (case row then control row for each pair).

    ``values`` is a CSR matrix; column 0 is always AGE (whole years), every
    other column a 0/1 presence flag described by ``columns``.
    """

    rows: tuple[tuple[int, str], ...]
    columns: tuple[Feature, ...]
    values: sparse.csr_matrix
    labels: np.ndarray
    pair_index: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_pairs(self) -> int:
        return int(self.pair_index.max()) + 1 if len(self.pair_index) else 0

    def dense(self) -> np.ndarray:
        return self.values.toarray()

    def take_columns(self, keep: Sequence[int]) -> "FeatureMatrix":
        keep = np.asarray(keep, dtype=np.int64)
        return FeatureMatrix(
            self.rows, tuple(self.columns[i] for i in keep.tolist()),
            self.values[:, keep].tocsr(), self.labels, self.pair_index,
        )

    def to_csv(self) -> str:
        dense = self.dense()
        out = ["patient_id," + ",".join(c.label() for c in self.columns) + ",label"]
        for (pid, _), row, y in zip(self.rows, dense.tolist(), self.labels.tolist()):
            out.append(f"{pid}," + ",".join(map(str, row)) + f",{y}")
        return "\n".join(out) + "\n"


def truncate_pair(events: Sequence[Event], index_date: int, window_days: int) -> list[Event]:
    """Events strictly before ``index_date - window_days``.

    The boundary day itself is censored.
    """
    cutoff = index_date - window_days
    return [e for e in events if e.date < cutoff]


def _member_rows(cohort: Cohort):
    for i, pair in enumerate(cohort.pairs):
        yield i, pair.case_id, "case", 1, pair.index_date
        yield i, pair.control_id, "control", 0, pair.index_date


def build_table(cohort: Cohort, store: EventStore, window_days: int) -> FeatureMatrix:
    if not cohort.pairs:
        raise ValueError("no pairs")
    members = list(_member_rows(cohort))
    n_rows = len(members)

    chunks, owners = [], []
    for r, (_, pid, _, _, index_date) in enumerate(members):
        lo, hi = store.span(pid)
        # per-patient rows are date-sorted, so the censoring cut is a prefix
        cut = lo + int(np.searchsorted(store.date[lo:hi], index_date - window_days, side="left"))
        chunks.append(np.arange(lo, cut))
        owners.append(np.full(cut - lo, r))
    ev = np.concatenate(chunks)
    owner = np.concatenate(owners)

    kind = store.kind[ev].astype(np.int64)
    code = store.code[ev]
    band = np.where(np.isin(kind, _BANDED), store.band[ev], NA)
    target = (kind == Kind.PRESCRIPTION) & (code == cohort.generic)
    kind, code, band, owner = kind[~target], code[~target], band[~target], owner[~target]

    keys, col = np.unique(np.stack([kind, code, band], axis=1), axis=0, return_inverse=True)
    col = col.reshape(-1)
    columns = (AGE,) + tuple(
        Feature(_TOKENS[k], c, None if b == NA else b) for k, c, b in keys.tolist()
    )

    cells = np.unique(owner * (len(keys) + 1) + col + 1)
    r_idx, c_idx = np.divmod(cells, len(keys) + 1)
    binary = sparse.csr_matrix(
        (np.ones(cells.size, dtype=np.int32), (r_idx, c_idx)), shape=(n_rows, len(columns))
    )
    dob = store.patients.dob[np.searchsorted(store.patients.ids, [m[1] for m in members])]
    index = np.array([m[4] for m in members])
    age = np.floor((index - dob) / 365.25).astype(np.int32)
    age_col = sparse.csr_matrix(
        (age, (np.arange(n_rows), np.zeros(n_rows, dtype=np.int64))), shape=(n_rows, len(columns))
    )
    values = (binary + age_col).tocsr()
    values.eliminate_zeros()
    return FeatureMatrix(
        rows=tuple((m[1], m[2]) for m in members),
        columns=columns,
        values=values,
        labels=np.array([m[3] for m in members], dtype=np.int8),
        pair_index=np.array([m[0] for m in members], dtype=np.int64),
    )


def prevalence_filter(matrix: FeatureMatrix, threshold: float = 0.01,
                      per_group: bool = False) -> FeatureMatrix:
    """Keep AGE plus every binary column present in more than ``threshold`` of rows.

    By default prevalence is pooled over all rows and labels are never read.
    ``per_group=True`` instead requires the prevalence to exceed the threshold
    among cases and among controls separately.
    """
    present = (matrix.values != 0).astype(np.int64)
    if per_group:
        ok = np.ones(matrix.shape[1], dtype=bool)
        for y in (0, 1):
            sel = matrix.labels == y
            frac = np.asarray(present[sel].sum(axis=0)).ravel() / max(int(sel.sum()), 1)
            ok &= frac > threshold
    else:
        frac = np.asarray(present.sum(axis=0)).ravel() / matrix.shape[0]
        ok = frac > threshold
    ok[0] = True
    return matrix.take_columns(np.flatnonzero(ok))


def event_feature(event: Event) -> Feature:
    band = int(event.band) if event.kind in (Kind.LAB, Kind.VITAL) else None
    return Feature(event.kind.token, event.code, band)


def leakage_scan(matrix: FeatureMatrix, cohort: Cohort, store: EventStore, window_days: int,
                 sample_fraction: float = 0.01, seed: int = 0) -> int:
    """Re-derive sampled rows from raw events and count set bits that no
    pre-cutoff event supports (i.e. bits leaked from the censored span).

    At least one row is always scanned.
    """
    n = matrix.shape[0]
    k = min(n, max(1, int(np.ceil(sample_fraction * n))))
    rows = np.sort(np.random.default_rng(seed).choice(n, size=k, replace=False))
    index_of = {p.case_id: p.index_date for p in cohort.pairs}
    index_of.update({p.control_id: p.index_date for p in cohort.pairs})
    leaks = 0
    for r in rows.tolist():
        pid = matrix.rows[r][0]
        cutoff = index_of[pid] - window_days
        supported = {event_feature(e) for e in store.events(pid) if e.date < cutoff}
        row = matrix.values.getrow(r)
        for j in row.indices.tolist():
            feat = matrix.columns[j]
            if feat != AGE and feat not in supported:
                leaks += 1
    return leaks
