"""Seeded synthetic EHR populations with planted, time-localised signal.

Each generic drug gets a small set of reserved "signal" diagnosis and lab
codes. A case patient for that drug shows each signal code (with probability
``signal_strength``) at a uniform date within ``prodrome_days`` before the
first prescription, never on the prescription day itself. Background events
never use reserved codes, so a truncation window wider than the prodrome
removes the signal completely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ehr import NA, Band, EventStore, Kind, Patient, PatientTable, Sex

# share of background events by kind
_BACKGROUND_MIX = {Kind.DIAGNOSIS: 0.4, Kind.LAB: 0.2, Kind.VITAL: 0.15, Kind.VISIT: 0.25}
_BAND_PROBS = (0.15, 0.70, 0.15)  # below, within, above
_GENERIC_BASE = 1000
_BRAND_BASE = 5000
_CLASS_BASE = 300


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 2000
    n_generics: int = 10
    n_diagnosis_codes: int = 400
    n_lab_codes: int = 120
    years_span: int = 30
    prodrome_days: int = 30
    signal_strength: float = 0.9
    background_rate: float = 2.0
    # knobs below have no counterpart in the published setup
    case_fraction: float = 0.05
    n_signal_dx: int = 2
    n_signal_lab: int = 1
    n_vital_codes: int = 6
    n_visit_codes: int = 3
    n_drug_classes: int = 12
    followup_years: int = 10

    def __post_init__(self):
        for name in ("n_patients", "n_generics", "n_diagnosis_codes", "n_lab_codes",
                     "years_span", "prodrome_days", "n_signal_dx", "n_vital_codes",
                     "n_visit_codes", "n_drug_classes", "followup_years"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_signal_lab < 0:
            raise ValueError("n_signal_lab must be >= 0")
        for name in ("signal_strength", "case_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.background_rate < 0:
            raise ValueError("background_rate must be >= 0")
        if self.n_diagnosis_codes <= self.n_generics * self.n_signal_dx:
            raise ValueError("n_diagnosis_codes too small to reserve signal codes")
        if self.n_lab_codes <= self.n_generics * self.n_signal_lab:
            raise ValueError("n_lab_codes too small to reserve signal codes")
        if self.followup_years * 365 <= max(self.prodrome_days, 365) + 30:
            raise ValueError("followup_years too short for the prodrome")


@dataclass
class GroundTruth:
    """Planted signal per generic: diagnosis codes, (lab code, band) pairs and the
    placement window (days before the index date)."""

    signal_dx: dict[int, list[int]] = field(default_factory=dict)
    signal_lab: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    window: tuple[int, int] = (1, 30)
    cases: dict[int, dict[int, int]] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "window_days_before_index": list(self.window),
            "generics": {
                str(g): {
                    "diagnosis_codes": self.signal_dx[g],
                    "lab_codes": [list(x) for x in self.signal_lab[g]],
                    "n_cases": len(self.cases.get(g, {})),
                }
                for g in sorted(self.signal_dx)
            },
        }, indent=1, sort_keys=True)

    def remap(self, codemap: "CodeMap") -> "GroundTruth":
        g_map = codemap.forward[Kind.PRESCRIPTION.token]
        d_map = codemap.forward[Kind.DIAGNOSIS.token]
        l_map = codemap.forward[Kind.LAB.token]
        return GroundTruth(
            signal_dx={g_map[g]: [d_map[c] for c in v] for g, v in self.signal_dx.items()},
            signal_lab={g_map[g]: [(l_map[c], b) for c, b in v] for g, v in self.signal_lab.items()},
            window=self.window,
            cases={g_map[g]: {p: idx + codemap.date_shift[p] for p, idx in v.items()}
                   for g, v in self.cases.items()},
        )


def generate(config: SynthConfig, seed: int):
    """Build ``(PatientTable, EventStore, GroundTruth)``; deterministic in (config, seed)."""
    rng = np.random.default_rng(seed)
    n = config.n_patients
    span = config.years_span * 365
    horizon = span + config.followup_years * 365

    pids = np.arange(1, n + 1)
    male = rng.random(n) < 0.5
    dob = rng.integers(0, span, size=n)

    dx_codes = rng.permutation(np.arange(1, config.n_diagnosis_codes + 1))
    lab_codes = rng.permutation(np.arange(1, config.n_lab_codes + 1))
    n_sig_dx = config.n_generics * config.n_signal_dx
    n_sig_lab = config.n_generics * config.n_signal_lab
    background_dx = np.sort(dx_codes[n_sig_dx:])
    background_lab = np.sort(lab_codes[n_sig_lab:])

    cols = {k: [] for k in ("patient_id", "date", "kind", "code", "brand_code", "class_code", "band")}

    def emit(pid, date, kind, code, brand=NA, klass=NA, band=NA):
        size = len(pid)
        cols["patient_id"].append(np.asarray(pid, dtype=np.int64))
        cols["date"].append(np.asarray(date, dtype=np.int64))
        cols["kind"].append(np.full(size, int(kind), dtype=np.int64))
        cols["code"].append(np.asarray(code, dtype=np.int64))
        for name, v in (("brand_code", brand), ("class_code", klass), ("band", band)):
            cols[name].append(np.broadcast_to(np.asarray(v, dtype=np.int64), (size,)).copy())

    # background: Poisson count over each lifespan, uniform dates, Zipf-ish code popularity
    life_years = (horizon - dob) / 365.0
    counts = rng.poisson(config.background_rate * life_years)
    owner = np.repeat(pids, counts)
    owner_dob = np.repeat(dob, counts)
    dates = owner_dob + np.floor(rng.random(owner.size) * (horizon - owner_dob + 1)).astype(np.int64)
    kinds = rng.choice(list(_BACKGROUND_MIX), size=owner.size, p=list(_BACKGROUND_MIX.values()))
    bands = rng.choice([-1, 0, 1], size=owner.size, p=_BAND_PROBS)
    universes = {
        Kind.DIAGNOSIS: background_dx,
        Kind.LAB: background_lab,
        Kind.VITAL: np.arange(1, config.n_vital_codes + 1),
        Kind.VISIT: np.arange(1, config.n_visit_codes + 1),
    }
    for kind, universe in universes.items():
        sel = kinds == kind
        weights = 1.0 / (np.arange(universe.size) + 10.0)
        code = rng.choice(universe, size=int(sel.sum()), p=weights / weights.sum())
        band = bands[sel] if kind in (Kind.LAB, Kind.VITAL) else NA
        emit(owner[sel], dates[sel], kind, code, band=band)

    truth = GroundTruth(window=(1, config.prodrome_days))
    min_history = max(config.prodrome_days, 365)
    for i in range(config.n_generics):
        generic = _GENERIC_BASE + i + 1
        klass = _CLASS_BASE + (i % config.n_drug_classes) + 1
        brands = np.array([_BRAND_BASE + 2 * i + 1, _BRAND_BASE + 2 * i + 2])
        sig_dx = np.sort(dx_codes[i * config.n_signal_dx:(i + 1) * config.n_signal_dx])
        sig_lab = np.sort(lab_codes[i * config.n_signal_lab:(i + 1) * config.n_signal_lab])
        truth.signal_dx[generic] = sig_dx.tolist()
        truth.signal_lab[generic] = [(int(c), int(Band.ABOVE)) for c in sig_lab]

        is_case = rng.random(n) < config.case_fraction
        case_ids = pids[is_case]
        case_dob = dob[is_case]
        lo = case_dob + min_history
        hi = horizon - 30
        index = lo + np.floor(rng.random(case_ids.size) * (hi - lo + 1)).astype(np.int64)
        truth.cases[generic] = dict(zip(case_ids.tolist(), index.tolist()))

        emit(case_ids, index, Kind.PRESCRIPTION, np.full(case_ids.size, generic),
             brand=rng.choice(brands, size=case_ids.size), klass=klass)
        # refills after the first prescription
        n_refill = rng.integers(0, 3, size=case_ids.size)
        r_owner = np.repeat(case_ids, n_refill)
        r_date = np.minimum(np.repeat(index, n_refill) + rng.integers(1, 366, size=r_owner.size), horizon)
        emit(r_owner, r_date, Kind.PRESCRIPTION, np.full(r_owner.size, generic),
             brand=rng.choice(brands, size=r_owner.size), klass=klass)

        for kind, codes, band in ((Kind.DIAGNOSIS, sig_dx, NA), (Kind.LAB, sig_lab, int(Band.ABOVE))):
            for code in codes:
                hit = rng.random(case_ids.size) < config.signal_strength
                offset = rng.integers(1, config.prodrome_days + 1, size=case_ids.size)
                emit(case_ids[hit], (index - offset)[hit], kind, np.full(int(hit.sum()), code), band=band)

    patients = PatientTable(
        Patient(int(p), Sex.M if m else Sex.F, int(d), int(d)) for p, m, d in zip(pids, male, dob)
    )
    store = EventStore(patients, *(np.concatenate(cols[c]) for c in cols))
    return store.patients, store, truth


@dataclass
class CodeMap:
    """Recorded de-identification: per-namespace code bijections and per-patient
    date shifts."""

    forward: dict[str, dict[int, int]]
    date_shift: dict[int, int]

    def inverse(self) -> dict[str, dict[int, int]]:
        return {ns: {v: k for k, v in m.items()} for ns, m in self.forward.items()}

    def to_json(self) -> str:
        return json.dumps({
            "codes": {ns: {str(k): v for k, v in sorted(m.items())} for ns, m in self.forward.items()},
            "date_shift": {str(k): v for k, v in sorted(self.date_shift.items())},
        }, indent=1, sort_keys=True)


# namespaces: event-kind tokens, plus brand ("B") and drug class ("C")
_BRAND_NS = "B"
_CLASS_NS = "C"
_CODE_BASE = 100_001


def deidentify(patients: PatientTable, store: EventStore, seed: int):
    """Replace every code through a seeded random bijection and shift each
    patient's dates by a uniform offset in [-365, 365].

    Returns ``(PatientTable, EventStore, CodeMap)``.
    """
    rng = np.random.default_rng(seed)
    forward: dict[str, dict[int, int]] = {}

    def bijection(values):
        distinct = np.unique(values)
        fresh = _CODE_BASE + rng.permutation(distinct.size)
        return dict(zip(distinct.tolist(), fresh.tolist()))

    new_code = store.code.copy()
    for kind in Kind:
        sel = store.kind == kind
        forward[kind.token] = m = bijection(store.code[sel])
        if m:
            new_code[sel] = _apply(m, store.code[sel])
    rx = store.kind == Kind.PRESCRIPTION
    new_brand = store.brand_code.copy()
    new_class = store.class_code.copy()
    forward[_BRAND_NS] = mb = bijection(store.brand_code[rx])
    forward[_CLASS_NS] = mc = bijection(store.class_code[rx])
    if rx.any():
        new_brand[rx] = _apply(mb, store.brand_code[rx])
        new_class[rx] = _apply(mc, store.class_code[rx])

    shifts = rng.integers(-365, 366, size=len(patients))
    date_shift = dict(zip(patients.ids.tolist(), shifts.tolist()))
    new_patients = PatientTable(
        Patient(p.patient_id, p.sex, p.dob + date_shift[pid], p.dob + date_shift[pid])
        for pid, p in patients.items()
    )
    row_shift = shifts[np.searchsorted(patients.ids, store.patient_id)]
    new_store = EventStore(
        new_patients, store.patient_id, store.date + row_shift, store.kind, new_code,
        new_brand, new_class, store.band,
    )
    return new_store.patients, new_store, CodeMap(forward, date_shift)


def _apply(mapping: dict[int, int], values: np.ndarray) -> np.ndarray:
    keys = np.array(sorted(mapping), dtype=np.int64)
    vals = np.array([mapping[k] for k in keys.tolist()], dtype=np.int64)
    return vals[np.searchsorted(keys, values)]


def band_continuous(value: float, ref_low: float, ref_high: float) -> Band:
    """Map a continuous measurement onto its reference range; bounds count as Within."""
    if not ref_low < ref_high:
        raise ValueError("ref_low must be below ref_high")
    if value < ref_low:
        return Band.BELOW
    if value > ref_high:
        return Band.ABOVE
    return Band.WITHIN

