"""EHR data model: patients, events, and a columnar per-patient event store.

Dates are integer day offsets from an arbitrary (de-identified) epoch.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

import numpy as np

# calendar windows expressed in days
MONTH = 30
SIX_MONTHS = 182
TWO_YEARS = 730
FIVE_YEARS = 1825

PATIENT_HEADER = ["patient_id", "sex", "dob"]
EVENT_HEADER = ["patient_id", "date", "kind", "code", "brand_code", "class_code", "band"]

# sentinel used in the columnar arrays for "field not applicable"
NA = -(2**31)


class EHRParseError(ValueError):
    pass


class Sex(str, Enum):
    M = "M"
    F = "F"


class Kind(IntEnum):
    DIAGNOSIS = 0
    PRESCRIPTION = 1
    LAB = 2
    VITAL = 3
    VISIT = 4

    @property
    def token(self) -> str:
        return _KIND_TOKENS[self]

    @classmethod
    def from_token(cls, token: str) -> "Kind":
        return _TOKEN_KINDS[token]


_KIND_TOKENS = {
    Kind.DIAGNOSIS: "D",
    Kind.PRESCRIPTION: "P",
    Kind.LAB: "L",
    Kind.VITAL: "V",
    Kind.VISIT: "S",
}
_TOKEN_KINDS = {v: k for k, v in _KIND_TOKENS.items()}


class Band(IntEnum):
    BELOW = -1
    WITHIN = 0
    ABOVE = 1


@dataclass(frozen=True)
class Patient:
    patient_id: int
    sex: Sex
    dob: int
    last_contact: int


@dataclass(frozen=True)
class Event:
    patient_id: int
    date: int
    kind: Kind
    code: int
    brand_code: int | None = None
    class_code: int | None = None
    band: Band | None = None

    def __post_init__(self):
        if self.kind == Kind.PRESCRIPTION:
            if self.brand_code is None or self.class_code is None:
                raise ValueError("prescription event needs brand_code and class_code")
        elif self.brand_code is not None or self.class_code is not None:
            raise ValueError(f"{self.kind.name} event cannot carry brand/class codes")
        if self.kind in (Kind.LAB, Kind.VITAL):
            if self.band is None:
                raise ValueError(f"{self.kind.name} event needs a band")
        elif self.band is not None:
            raise ValueError(f"{self.kind.name} event cannot carry a band")


class PatientTable(Mapping[int, Patient]):
    """Immutable patient table keyed by patient id.

    Besides the mapping interface, exposes aligned numpy columns (sorted by
    patient id) for vectorised cohort work.
    """

    def __init__(self, patients: Iterable[Patient] = ()):
        by_id: dict[int, Patient] = {}
        for p in patients:
            if p.patient_id in by_id:
                raise ValueError(f"duplicate patient_id {p.patient_id}")
            by_id[p.patient_id] = p
        ids = sorted(by_id)
        self._by_id = {i: by_id[i] for i in ids}
        self.ids = np.array(ids, dtype=np.int64)
        self.is_male = np.array([by_id[i].sex == Sex.M for i in ids], dtype=bool)
        self.dob = np.array([by_id[i].dob for i in ids], dtype=np.int64)
        self.last_contact = np.array([by_id[i].last_contact for i in ids], dtype=np.int64)
        for arr in (self.ids, self.is_male, self.dob, self.last_contact):
            arr.flags.writeable = False

    def __getitem__(self, pid: int) -> Patient:
        return self._by_id[pid]

    def __iter__(self) -> Iterator[int]:
        return iter(self._by_id)

    def __len__(self) -> int:
        return len(self._by_id)

    def __eq__(self, other):
        if not isinstance(other, PatientTable):
            return NotImplemented
        return self._by_id == other._by_id

    def __repr__(self):
        return f"PatientTable(n={len(self)})"

    def subset(self, keep: Iterable[int]) -> "PatientTable":
        return PatientTable(self._by_id[i] for i in keep)

    def with_last_contact(self, last_contact: Mapping[int, int]) -> "PatientTable":
        """Return a copy whose last_contact is recomputed from ``last_contact``.

        Patients missing from the mapping fall back to their dob.
        """
        return PatientTable(
            Patient(p.patient_id, p.sex, p.dob, int(last_contact.get(pid, p.dob)))
            for pid, p in self._by_id.items()
        )


class EventStore:
    """Per-patient event sequences held as sorted numpy columns.

    Rows are ordered by (patient_id, date) with ties kept in input order.
    ``patients`` is the companion table with last_contact finalised.
    """

    def __init__(self, patients: PatientTable, patient_id, date, kind, code,
                 brand_code=None, class_code=None, band=None, *, validate=True):
        n = len(patient_id)
        cols = {
            "patient_id": np.asarray(patient_id, dtype=np.int64),
            "date": np.asarray(date, dtype=np.int64),
            "kind": np.asarray(kind, dtype=np.int8),
            "code": np.asarray(code, dtype=np.int64),
            "brand_code": _na_column(brand_code, n),
            "class_code": _na_column(class_code, n),
            "band": _na_column(band, n),
        }
        if validate:
            _validate_columns(cols, patients)
        order = np.lexsort((cols["date"], cols["patient_id"]))
        for name, col in cols.items():
            col = col[order]
            col.flags.writeable = False
            setattr(self, name, col)

        pids, starts, counts = np.unique(self.patient_id, return_index=True, return_counts=True)
        self._span = {int(p): (int(s), int(s + c)) for p, s, c in zip(pids, starts, counts)}
        last = {int(p): int(self.date[s + c - 1]) for p, s, c in zip(pids, starts, counts)}
        self.patients = patients.with_last_contact(last)

        rx = self.kind == Kind.PRESCRIPTION
        index: dict[int, set[int]] = {}
        for g, p in zip(self.code[rx].tolist(), self.patient_id[rx].tolist()):
            index.setdefault(g, set()).add(p)
        self._prescribers = {g: frozenset(s) for g, s in index.items()}

    @classmethod
    def from_events(cls, patients: PatientTable, events: Sequence[Event]) -> "EventStore":
        def opt(v):
            return NA if v is None else int(v)

        return cls(
            patients,
            [e.patient_id for e in events],
            [e.date for e in events],
            [int(e.kind) for e in events],
            [e.code for e in events],
            [opt(e.brand_code) for e in events],
            [opt(e.class_code) for e in events],
            [opt(e.band) for e in events],
        )

    def __len__(self) -> int:
        return len(self.date)

    def __eq__(self, other):
        if not isinstance(other, EventStore):
            return NotImplemented
        return self.patients == other.patients and all(
            np.array_equal(getattr(self, c), getattr(other, c)) for c in EVENT_HEADER
        )

    def __repr__(self):
        return f"EventStore(n_events={len(self)}, n_patients={len(self.patients)})"

    def span(self, pid: int) -> tuple[int, int]:
        """Row slice bounds of ``pid``'s events (empty if none)."""
        return self._span.get(pid, (0, 0))

    def events(self, pid: int) -> list[Event]:
        lo, hi = self.span(pid)
        return [self._event_at(i) for i in range(lo, hi)]

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self._event_at(i)

    def _event_at(self, i: int) -> Event:
        def opt(v, wrap=int):
            return None if v == NA else wrap(v)

        return Event(
            int(self.patient_id[i]),
            int(self.date[i]),
            Kind(int(self.kind[i])),
            int(self.code[i]),
            opt(self.brand_code[i]),
            opt(self.class_code[i]),
            opt(self.band[i], Band),
        )

    def prescribers(self, generic: int) -> frozenset[int]:
        return self._prescribers.get(generic, frozenset())

    @property
    def generics(self) -> list[int]:
        return sorted(self._prescribers)

    def restrict(self, keep_ids) -> "EventStore":
        """Store holding only the events and patients in ``keep_ids``."""
        keep_ids = np.asarray(sorted(keep_ids), dtype=np.int64)
        mask = np.isin(self.patient_id, keep_ids)
        return EventStore(
            self.patients.subset(keep_ids.tolist()),
            *(getattr(self, c)[mask] for c in EVENT_HEADER),
            validate=False,
        )


def _na_column(values, n):
    if values is None:
        return np.full(n, NA, dtype=np.int64)
    return np.asarray(values, dtype=np.int64)


def _validate_columns(cols, patients: PatientTable):
    pid = cols["patient_id"]
    known = np.isin(pid, patients.ids)
    if not known.all():
        raise ValueError(f"unknown patient_id {int(pid[~known][0])}")
    dob = patients.dob[np.searchsorted(patients.ids, pid)]
    early = cols["date"] < dob
    if early.any():
        i = int(np.flatnonzero(early)[0])
        raise ValueError(f"event date {int(cols['date'][i])} precedes dob of patient {int(pid[i])}")
    kind = cols["kind"]
    rx = kind == Kind.PRESCRIPTION
    has_rx_codes = (cols["brand_code"] != NA) & (cols["class_code"] != NA)
    if (rx & ~has_rx_codes).any():
        raise ValueError("prescription event missing brand/class code")
    if (~rx & ((cols["brand_code"] != NA) | (cols["class_code"] != NA))).any():
        raise ValueError("brand/class code on a non-prescription event")
    banded = (kind == Kind.LAB) | (kind == Kind.VITAL)
    band = cols["band"]
    if (banded & ~np.isin(band, [-1, 0, 1])).any():
        raise ValueError("lab/vital event missing band")
    if (~banded & (band != NA)).any():
        raise ValueError("band on a non-lab/vital event")


# --- file formats --------------------------------------------------------


def _rows(stream: TextIO, header: list[str]):
    reader = csv.reader(stream)
    first = next(reader, None)
    if first is None or [h.strip() for h in first] != header:
        raise EHRParseError(f"line 1: expected header {','.join(header)}")
    for row in reader:
        if not row:
            continue
        yield reader.line_num, row


def parse_patients(stream: TextIO) -> PatientTable:
    """Read a ``patient_id,sex,dob`` file.

    last_contact starts at dob; it is finalised once events are attached.
    """
    patients = []
    seen = set()
    for line, row in _rows(stream, PATIENT_HEADER):
        if len(row) != 3:
            raise EHRParseError(f"wrong column count at line {line}")
        try:
            pid, dob = int(row[0]), int(row[2])
        except ValueError:
            raise EHRParseError(f"non-integer field at line {line}") from None
        if pid <= 0:
            raise EHRParseError(f"non-positive patient_id at line {line}")
        try:
            sex = Sex(row[1])
        except ValueError:
            raise EHRParseError(f"unknown sex at line {line}") from None
        if pid in seen:
            raise EHRParseError(f"duplicate patient_id {pid} at line {line}")
        seen.add(pid)
        patients.append(Patient(pid, sex, dob, dob))
    return PatientTable(patients)


def parse_events(stream: TextIO, patients: PatientTable) -> EventStore:
    cols = {name: [] for name in EVENT_HEADER}
    known = set(patients)
    for line, row in _rows(stream, EVENT_HEADER):
        if len(row) != 7:
            raise EHRParseError(f"wrong column count at line {line}")
        try:
            pid, date, code = int(row[0]), int(row[1]), int(row[3])
            brand = int(row[4]) if row[4] else NA
            klass = int(row[5]) if row[5] else NA
            band = int(row[6]) if row[6] else NA
        except ValueError:
            raise EHRParseError(f"non-integer field at line {line}") from None
        try:
            kind = Kind.from_token(row[2])
        except KeyError:
            raise EHRParseError(f"unknown event kind at line {line}") from None
        if pid not in known:
            raise EHRParseError(f"unknown patient_id {pid} at line {line}")
        if date < patients[pid].dob:
            raise EHRParseError(f"event before date of birth at line {line}")
        if kind == Kind.PRESCRIPTION and (brand == NA or klass == NA):
            raise EHRParseError(f"prescription missing brand/class code at line {line}")
        if kind in (Kind.LAB, Kind.VITAL) and band not in (-1, 0, 1):
            raise EHRParseError(f"{kind.name.lower()} missing band at line {line}")
        for name, v in zip(EVENT_HEADER, (pid, date, int(kind), code, brand, klass, band)):
            cols[name].append(v)
    try:
        return EventStore(patients, *(cols[c] for c in EVENT_HEADER))
    except ValueError as exc:
        raise EHRParseError(str(exc)) from None


def write_patients(patients: PatientTable, stream: TextIO) -> None:
    stream.write(",".join(PATIENT_HEADER) + "\n")
    for p in patients.values():
        stream.write(f"{p.patient_id},{p.sex.value},{p.dob}\n")


def write_events(store: EventStore, stream: TextIO) -> None:
    stream.write(",".join(EVENT_HEADER) + "\n")
    tokens = [_KIND_TOKENS[k] for k in Kind]

    def fmt(v):
        return "" if v == NA else str(v)

    buf = io.StringIO()
    for pid, date, kind, code, brand, klass, band in zip(
        *(getattr(store, c).tolist() for c in EVENT_HEADER)
    ):
        buf.write(f"{pid},{date},{tokens[kind]},{code},{fmt(brand)},{fmt(klass)},{fmt(band)}\n")
    stream.write(buf.getvalue())


def load(patients_path, events_path) -> EventStore:
    """Parse both files; the returned store carries the finalised patient table."""
    with open(patients_path, newline="", encoding="utf-8") as fh:
        patients = parse_patients(fh)
    with open(events_path, newline="", encoding="utf-8") as fh:
        return parse_events(fh, patients)


def save(store: EventStore, patients_path, events_path) -> None:
    with open(patients_path, "w", newline="\n", encoding="utf-8") as fh:
        write_patients(store.patients, fh)
    with open(events_path, "w", newline="\n", encoding="utf-8") as fh:
        write_events(store, fh)


def first_prescriptions(store: EventStore, generic: int) -> list[tuple[int, int]]:
    """(patient_id, first prescription date) for every prescriber of ``generic``.

    Sorted by (index_date, patient_id).
    """
    mask = (store.kind == Kind.PRESCRIPTION) & (store.code == generic)
    if not mask.any():
        return []
    pids = store.patient_id[mask]
    dates = store.date[mask]
    # rows are sorted by (patient, date), so the first row per patient is the minimum
    uniq, first = np.unique(pids, return_index=True)
    out = sorted(zip(dates[first].tolist(), uniq.tolist()))
    return [(p, d) for d, p in out]
