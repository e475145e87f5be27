import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from rxpipe.cohort import CasePair, Cohort, match_controls
from rxpipe.ehr import Band, Event, Kind
from rxpipe.tabulate import (AGE, Feature, FeatureMatrix, build_table, event_feature,
                             leakage_scan, prevalence_filter, truncate_pair)

from .conftest import dx, make_store, rx


def lab(pid, date, code, band=Band.ABOVE):
    return Event(pid, date, Kind.LAB, code, band=band)


def test_truncate_example():
    events = [dx(1, d) for d in (50, 69, 70, 71, 100)]
    assert [e.date for e in truncate_pair(events, 100, 30)] == [50, 69]
    assert [e.date for e in truncate_pair(events, 100, 0)] == [50, 69, 70, 71]


@given(st.lists(st.integers(-500, 500), max_size=30), st.integers(-200, 200), st.integers(0, 400))
def test_truncate_brute_force(dates, index, window):
    events = [dx(1, d) for d in dates]
    kept = truncate_pair(events, index, window)
    assert kept == [e for e in events if e.date < index - window]


def test_target_generic_never_a_column():
    store = make_store([(1, "M", 0), (2, "M", 0)],
                       [rx(1, 10, 7), rx(1, 500, 7), rx(1, 5, 8), dx(1, 3), dx(2, 4), rx(2, 8, 8)])
    cohort = Cohort(7, (CasePair(7, 1, 2, 500),))
    table = build_table(cohort, store, 0)
    assert Feature("P", 7) not in table.columns
    assert Feature("P", 8) in table.columns
    assert table.columns[0] == AGE


def test_age_column_whole_years():
    store = make_store([(1, "M", 0), (2, "M", 10)], [dx(1, 1), dx(2, 20)])
    cohort = Cohort(7, (CasePair(7, 1, 2, 730),))
    table = build_table(cohort, store, 0)
    assert table.dense()[:, 0].tolist() == [math.floor(730 / 365.25), math.floor(720 / 365.25)]
    assert table.labels.tolist() == [1, 0]
    assert table.rows == ((1, "case"), (2, "control"))


def test_lab_band_is_part_of_key():
    store = make_store([(1, "M", 0), (2, "M", 0)],
                       [lab(1, 1, 5, Band.ABOVE), lab(2, 1, 5, Band.BELOW)])
    table = build_table(Cohort(7, (CasePair(7, 1, 2, 100),)), store, 0)
    assert set(table.columns[1:]) == {Feature("L", 5, 1), Feature("L", 5, -1)}


def test_empty_histories_give_age_only():
    store = make_store([(1, "M", 0), (2, "M", 0)], [dx(1, 900), dx(2, 900)])
    table = build_table(Cohort(7, (CasePair(7, 1, 2, 800),)), store, 30)
    assert table.columns == (AGE,)
    assert table.shape == (2, 1)


def test_no_pairs_is_an_error():
    store = make_store([(1, "M", 0)], [dx(1, 1)])
    with pytest.raises(ValueError, match="no pairs"):
        build_table(Cohort(7, ()), store, 0)


def random_cohort_store(rng, n_pairs=5):
    patients, events, pairs = [], [], []
    pid = 1
    kinds = [Kind.DIAGNOSIS, Kind.LAB, Kind.VITAL, Kind.VISIT, Kind.PRESCRIPTION]
    for _ in range(n_pairs):
        index = rng.randint(400, 900)
        for member in (pid, pid + 1):
            dob = rng.randint(0, 300)
            patients.append((member, "F", dob))
            for _ in range(rng.randint(0, 12)):
                kind = rng.choice(kinds)
                date = rng.randint(dob, 1000)
                code = rng.randint(1, 4)
                if kind == Kind.PRESCRIPTION:
                    events.append(rx(member, date, rng.choice([7, 8])))
                elif kind in (Kind.LAB, Kind.VITAL):
                    events.append(Event(member, date, kind, code, band=rng.choice(list(Band))))
                else:
                    events.append(Event(member, date, kind, code))
        pairs.append(CasePair(7, pid, pid + 1, index))
        pid += 2
    return make_store(patients, events), Cohort(7, tuple(pairs)), events


def brute_force_table(store, cohort, events, window):
    """Dictionary-of-sets version of the summary table."""
    rows = []
    for p in cohort.pairs:
        for member in (p.case_id, p.control_id):
            feats = {event_feature(e) for e in events
                     if e.patient_id == member and e.date < p.index_date - window
                     and not (e.kind == Kind.PRESCRIPTION and e.code == 7)}
            age = math.floor((p.index_date - store.patients[member].dob) / 365.25)
            rows.append((member, age, feats))
    return rows


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("window", [0, 30, 182])
def test_table_matches_brute_force(seed, window):
    rng = random.Random(seed)
    store, cohort, events = random_cohort_store(rng)
    table = build_table(cohort, store, window)
    expected = brute_force_table(store, cohort, events, window)
    dense = table.dense()
    assert set(table.columns[1:]) == set().union(*(f for _, _, f in expected))
    assert len(set(table.columns)) == len(table.columns)
    for r, (member, age, feats) in enumerate(expected):
        assert table.rows[r][0] == member
        assert dense[r, 0] == age
        got = {c for c, v in zip(table.columns[1:], dense[r, 1:]) if v}
        assert got == feats
        assert set(dense[r, 1:].tolist()) <= {0, 1}


def _matrix(dense, labels):
    dense = np.asarray(dense)
    n, p = dense.shape
    cols = (AGE,) + tuple(Feature("D", j) for j in range(1, p))
    return FeatureMatrix(tuple((i, "x") for i in range(n)), cols, sparse.csr_matrix(dense),
                         np.asarray(labels, dtype=np.int8), np.arange(n) // 2)


def test_prevalence_exact_threshold_is_dropped():
    n = 200
    col_two = np.zeros(n, dtype=int)
    col_two[:2] = 1  # exactly 1%
    col_three = np.zeros(n, dtype=int)
    col_three[:3] = 1  # 1.5%
    dense = np.column_stack([np.full(n, 40), col_two, col_three, np.zeros(n, dtype=int)])
    kept = prevalence_filter(_matrix(dense, np.arange(n) % 2 == 0), 0.01)
    assert kept.columns == (AGE, Feature("D", 2))


def test_age_survives_any_threshold():
    dense = np.zeros((10, 3), dtype=int)
    kept = prevalence_filter(_matrix(dense, [1, 0] * 5), 0.5)
    assert kept.columns == (AGE,)


@settings(max_examples=40)
@given(st.integers(0, 2**31), st.floats(0.0, 0.3))
def test_pooled_filter_is_label_blind(seed, threshold):
    rng = np.random.default_rng(seed)
    dense = (rng.random((30, 12)) < 0.08).astype(int)
    labels = [1, 0] * 15
    a = prevalence_filter(_matrix(dense, labels), threshold)
    b = prevalence_filter(_matrix(dense, rng.permutation(labels)), threshold)
    assert a.columns == b.columns


@settings(max_examples=40)
@given(st.integers(0, 2**31), st.floats(0.0, 0.2), st.floats(0.0, 0.2))
def test_filter_monotone_in_threshold(seed, t1, t2):
    lo, hi = sorted((t1, t2))
    dense = (np.random.default_rng(seed).random((40, 15)) < 0.1).astype(int)
    m = _matrix(dense, [1, 0] * 20)
    assert set(prevalence_filter(m, hi).columns) <= set(prevalence_filter(m, lo).columns)


def test_per_group_needs_both_labels():
    dense = np.zeros((20, 2), dtype=int)
    dense[0:10:2, 1] = 1  # present only in cases
    m = _matrix(dense, [1, 0] * 10)
    assert prevalence_filter(m, 0.1).columns == m.columns
    assert prevalence_filter(m, 0.1, per_group=True).columns == (AGE,)


def test_leakage_scan_clean_on_real_tables(small_population):
    store, _ = small_population
    for generic in store.generics[:3]:
        cohort = match_controls(store, store.patients, generic)
        for window in (0, 30):
            table = build_table(cohort, store, window)
            assert leakage_scan(table, cohort, store, window, sample_fraction=1.0) == 0


def test_leakage_scan_finds_planted_leak(small_population):
    store, _ = small_population
    generic = store.generics[0]
    cohort = match_controls(store, store.patients, generic)
    honest = build_table(cohort, store, 30)
    # a table built with a shorter window contains post-cutoff events
    leaky = build_table(cohort, store, 0)
    assert leakage_scan(leaky, cohort, store, 30, sample_fraction=1.0) > 0
    values = honest.values.tolil()
    values[0, honest.shape[1] - 1] = 1 - values[0, honest.shape[1] - 1]
    tampered = FeatureMatrix(honest.rows, honest.columns, values.tocsr(), honest.labels,
                             honest.pair_index)
    flipped_on = honest.values[0, honest.shape[1] - 1] == 0
    assert leakage_scan(tampered, cohort, store, 30, sample_fraction=1.0) == int(flipped_on)


def test_table_csv_header():
    store = make_store([(1, "M", 0), (2, "M", 0)], [dx(1, 1, 3), dx(2, 1, 3)])
    csv = build_table(Cohort(7, (CasePair(7, 1, 2, 400),)), store, 0).to_csv()
    assert csv.splitlines() == ["patient_id,AGE,D:3,label", "1,1,1,1", "2,1,1,0"]
