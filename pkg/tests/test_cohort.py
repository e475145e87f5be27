import random

import pytest

from rxpipe import ehr
from rxpipe.cohort import (CasePair, Cohort, MatchingError, check_cohort, clean_patients,
                           eligible_generics, match_controls)
from rxpipe.ehr import Event, Kind, first_prescriptions

from .conftest import dx, make_store, rx
from .oracles import greedy_match


def test_patient_without_events_removed():
    store = make_store([(1, "M", 0), (2, "F", 0)], [dx(2, 1), dx(2, 1), dx(2, 2), dx(2, 2)])
    patients, cleaned = clean_patients(store.patients, store)
    assert list(patients) == [2]
    assert set(cleaned.patient_id.tolist()) == {2}


def test_boundary_is_inclusive():
    events = [dx(1, 10), dx(1, 10), dx(1, 20), dx(1, 20)]
    store = make_store([(1, "M", 0)], events)
    assert list(clean_patients(store.patients, store)[0]) == [1]


def test_single_visit_date_removed():
    store = make_store([(1, "M", 0)], [dx(1, 10, c) for c in range(10)])
    assert len(clean_patients(store.patients, store)[0]) == 0


def test_cleaning_matches_rule_by_brute_force():
    rng = random.Random(3)
    patients = [(i, rng.choice("MF"), 0) for i in range(1, 21)]
    events = []
    for pid, _, _ in patients:
        for _ in range(rng.randint(0, 8)):
            kind = rng.choice([Kind.DIAGNOSIS, Kind.VISIT, Kind.DIAGNOSIS])
            events.append(Event(pid, rng.randint(0, 3), kind, rng.randint(1, 3)))
    store = make_store(patients, events)
    kept, cleaned = clean_patients(store.patients, store)
    expected = set()
    for pid, _, _ in patients:
        own = [e for e in events if e.patient_id == pid]
        n_dx = sum(e.kind == Kind.DIAGNOSIS for e in own)
        if n_dx >= 4 and len({e.date for e in own}) >= 2:
            expected.add(pid)
    assert set(kept) == expected
    assert 0 < len(expected) < 20
    assert len(cleaned) == sum(e.patient_id in expected for e in events)


def test_eligible_generics_threshold():
    patients = [(i, "M", 0) for i in range(1, 16)]
    events = [rx(i, 5, 1) for i in range(1, 13)] + [rx(i, 5, 2) for i in range(1, 4)]
    events += [rx(1, 9, 1)]  # repeat prescription does not count twice
    store = make_store(patients, events)
    assert eligible_generics(store, 10) == [1]
    assert eligible_generics(store, 12) == [1]
    assert eligible_generics(store, 13) == []
    assert eligible_generics(store, 1) == [1, 2]


def _match_store(candidates, index=100, case_dob=1000):
    """One male case of generic 7 plus candidates given as (id, sex, dob, last_contact)."""
    patients = [(1, "M", case_dob)] + [(pid, sex, dob) for pid, sex, dob, _ in candidates]
    events = [rx(1, case_dob + index, 7)]
    events += [dx(pid, last) for pid, _, _, last in candidates]
    return make_store(patients, events)


def test_closest_dob_wins():
    store = _match_store([(2, "M", 1017, 5000), (3, "M", 997, 5000)])
    cohort = match_controls(store, store.patients, 7)
    assert cohort.pairs == (CasePair(7, 1, 3, 1100),)


def test_tie_goes_to_lower_id():
    store = _match_store([(5, "M", 1010, 5000), (4, "M", 990, 5000)])
    assert match_controls(store, store.patients, 7).pairs[0].control_id == 4


def test_last_contact_must_reach_index_date():
    store = _match_store([(2, "M", 1000, 1099)])
    cohort = match_controls(store, store.patients, 7)
    assert cohort.pairs == () and cohort.unmatched == (1,)
    store = _match_store([(2, "M", 1000, 1100)])
    assert len(match_controls(store, store.patients, 7)) == 1


@pytest.mark.parametrize("candidate", [(2, "F", 1000, 5000), (2, "M", 1031, 5000), (2, "M", 969, 5000)])
def test_sex_and_dob_criteria(candidate):
    store = _match_store([candidate])
    assert len(match_controls(store, store.patients, 7)) == 0


def random_matching_store(rng, n_patients=6, generic=7):
    patients = {i: (rng.choice("MF"), rng.randint(0, 80)) for i in range(1, n_patients + 1)}
    events = []
    for pid, (_, dob) in patients.items():
        for _ in range(rng.randint(1, 3)):
            events.append(dx(pid, dob + rng.randint(0, 120)))
        if rng.random() < 0.35:
            for _ in range(rng.randint(1, 2)):
                events.append(rx(pid, dob + rng.randint(0, 120), generic))
        if rng.random() < 0.2:
            events.append(rx(pid, dob + rng.randint(0, 120), generic + 1))
    store = make_store([(p, s, d) for p, (s, d) in patients.items()], events)
    return patients, events, store


def test_six_patient_store_matches_oracle():
    rng = random.Random(6)
    checked = 0
    while checked < 25:
        patients, events, store = random_matching_store(rng)
        if not store.prescribers(7):
            continue
        cohort = match_controls(store, store.patients, 7)
        pairs, unmatched = greedy_match(patients, events, 7)
        assert [(p.case_id, p.control_id, p.index_date) for p in cohort.pairs] == pairs
        assert list(cohort.unmatched) == unmatched
        check_cohort(cohort, store, store.patients)
        checked += 1


def test_matching_ignores_storage_order():
    rng = random.Random(8)
    patients, events, store = random_matching_store(rng, n_patients=40)
    shuffled = events[:]
    rng.shuffle(shuffled)
    order = list(patients.items())
    rng.shuffle(order)
    other = make_store([(p, s, d) for p, (s, d) in order], shuffled)
    assert match_controls(store, store.patients, 7) == match_controls(other, other.patients, 7)


def test_cohort_invariants_on_synthetic_population(small_population):
    store, _ = small_population
    generics = store.generics
    for g in generics:
        cohort = match_controls(store, store.patients, g)
        check_cohort(cohort, store, store.patients)
        assert len(cohort) + cohort.n_unmatched == len(first_prescriptions(store, g))
    # one-use rule is per drug: some case of one drug controls for another
    cases = {g: {p.case_id for p in match_controls(store, store.patients, g).pairs} for g in generics}
    controls = {g: {p.control_id for p in match_controls(store, store.patients, g).pairs}
                for g in generics}
    assert any(cases[g] & controls[h] for g in generics for h in generics if g != h)


def test_checker_rejects_bad_pairs():
    store = _match_store([(2, "M", 1000, 5000), (3, "F", 1000, 5000)])
    bad = Cohort(7, (CasePair(7, 1, 3, 1100),))
    with pytest.raises(MatchingError, match="sex differs"):
        check_cohort(bad, store, store.patients)
    reused = Cohort(7, (CasePair(7, 1, 2, 1100), CasePair(7, 1, 2, 1100)))
    with pytest.raises(MatchingError, match="reused"):
        check_cohort(reused, store, store.patients)


def test_cohort_csv():
    cohort = Cohort(7, (CasePair(7, 1, 2, 100),))
    assert cohort.to_csv() == "case_id,control_id,index_date\n1,2,100\n"
