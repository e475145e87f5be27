"""Data cleaning, drug eligibility and greedy case-control matching."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ehr import EventStore, Kind, PatientTable, first_prescriptions


class MatchingError(AssertionError):
    """A cohort violates one of the case-control invariants."""


@dataclass(frozen=True)
class CasePair:
    generic: int
    case_id: int
    control_id: int
    index_date: int


@dataclass(frozen=True)
class Cohort:
    generic: int
    pairs: tuple[CasePair, ...]
    unmatched: tuple[int, ...] = field(default=())

    @property
    def n_unmatched(self) -> int:
        return len(self.unmatched)

    def __len__(self) -> int:
        return len(self.pairs)

    def to_csv(self) -> str:
        lines = ["case_id,control_id,index_date"]
        lines += [f"{p.case_id},{p.control_id},{p.index_date}" for p in self.pairs]
        return "\n".join(lines) + "\n"


def clean_patients(patients: PatientTable, store: EventStore, min_dx: int = 4,
                   min_visit_dates: int = 2) -> tuple[PatientTable, EventStore]:
    """Keep patients with at least ``min_dx`` diagnosis events and at least
    ``min_visit_dates`` distinct event dates (any event kind counts as a visit)."""
    pid = store.patient_id
    n_dx = dict(zip(*np.unique(pid[store.kind == Kind.DIAGNOSIS], return_counts=True)))
    # rows are sorted by (patient, date): a new distinct date starts wherever either changes
    new_day = np.ones(len(pid), dtype=bool)
    new_day[1:] = (pid[1:] != pid[:-1]) | (store.date[1:] != store.date[:-1])
    n_days = dict(zip(*np.unique(pid[new_day], return_counts=True)))
    keep = [p for p in patients
            if n_dx.get(p, 0) >= min_dx and n_days.get(p, 0) >= min_visit_dates]
    cleaned = store.restrict(keep)
    return cleaned.patients, cleaned


def eligible_generics(store: EventStore, min_cases: int = 500) -> list[int]:
    return [g for g in store.generics if len(store.prescribers(g)) >= min_cases]


def match_controls(store: EventStore, patients: PatientTable, generic: int,
                   dob_tolerance_days: int = 30) -> Cohort:
    """Greedy nearest-dob matching of one control per case.

    Cases are visited by (index_date, patient_id). A candidate control never
    received ``generic``, has the case's sex, a dob within the tolerance, a
    last contact on or after the index date, and has not been used yet. The
    closest dob wins; ties go to the lower patient id.
    """
    cases = [(p, d) for p, d in first_prescriptions(store, generic) if p in patients]
    prescribed = store.prescribers(generic)

    ids = patients.ids
    pool_ok = ~np.isin(ids, np.fromiter(prescribed, dtype=np.int64, count=len(prescribed)))
    # per-sex candidate arrays sorted by (dob, id) for window lookups
    by_sex = {}
    for male in (True, False):
        sel = np.flatnonzero((patients.is_male == male) & pool_ok)
        order = np.lexsort((ids[sel], patients.dob[sel]))
        sel = sel[order]
        by_sex[male] = (ids[sel], patients.dob[sel], patients.last_contact[sel],
                        np.zeros(sel.size, dtype=bool))

    pairs, unmatched = [], []
    for case_id, index_date in cases:
        case = patients[case_id]
        c_ids, c_dob, c_last, used = by_sex[case.sex.value == "M"]
        lo = np.searchsorted(c_dob, case.dob - dob_tolerance_days, side="left")
        hi = np.searchsorted(c_dob, case.dob + dob_tolerance_days, side="right")
        window = np.arange(lo, hi)
        window = window[~used[window] & (c_last[window] >= index_date)]
        if window.size == 0:
            unmatched.append(case_id)
            continue
        diff = np.abs(c_dob[window] - case.dob)
        best = window[np.lexsort((c_ids[window], diff))[0]]
        used[best] = True
        pairs.append(CasePair(generic, case_id, int(c_ids[best]), index_date))
    return Cohort(generic, tuple(pairs), tuple(unmatched))


def check_cohort(cohort: Cohort, store: EventStore, patients: PatientTable,
                 dob_tolerance_days: int = 30) -> None:
    """Raise :class:`MatchingError` unless every pair satisfies the matching rules."""
    prescribed = store.prescribers(cohort.generic)
    first = dict(first_prescriptions(store, cohort.generic))
    seen: set[int] = set()
    for pair in cohort.pairs:
        case, control = patients[pair.case_id], patients[pair.control_id]
        problems = []
        if pair.case_id == pair.control_id:
            problems.append("case is its own control")
        if pair.control_id in prescribed:
            problems.append("control was prescribed the drug")
        if case.sex != control.sex:
            problems.append("sex differs")
        if abs(case.dob - control.dob) > dob_tolerance_days:
            problems.append("dob outside tolerance")
        if control.last_contact < pair.index_date:
            problems.append("control lost to follow-up before index date")
        if first.get(pair.case_id) != pair.index_date:
            problems.append("index date is not the case's first prescription")
        if pair.case_id in seen or pair.control_id in seen:
            problems.append("patient reused")
        seen.update((pair.case_id, pair.control_id))
        if problems:
            raise MatchingError(f"generic {cohort.generic} pair {pair}: {'; '.join(problems)}")
