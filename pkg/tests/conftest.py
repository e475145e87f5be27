import io

import pytest

from rxpipe import ehr, synth
from rxpipe.cohort import clean_patients


def make_store(patients, events):
    """Build a store from ``(id, sex, dob)`` tuples and ``Event`` objects."""
    table = ehr.PatientTable(ehr.Patient(p, ehr.Sex(s), d, d) for p, s, d in patients)
    return ehr.EventStore.from_events(table, events)


def dx(pid, date, code=1):
    return ehr.Event(pid, date, ehr.Kind.DIAGNOSIS, code)


def rx(pid, date, generic, brand=9001, klass=301):
    return ehr.Event(pid, date, ehr.Kind.PRESCRIPTION, generic, brand, klass)


def parse(patients_csv, events_csv=None):
    table = ehr.parse_patients(io.StringIO(patients_csv))
    if events_csv is None:
        return table
    return ehr.parse_events(io.StringIO(events_csv), table)


@pytest.fixture(scope="session")
def small_population():
    config = synth.SynthConfig(n_patients=1500, n_generics=6, case_fraction=0.08)
    patients, store, truth = synth.generate(config, 11)
    patients, store = clean_patients(patients, store)
    return store, truth


_CRITERIA = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    failed_setup = report.when == "setup" and not report.passed
    if report.when == "call" or failed_setup:
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        _CRITERIA.append((marker.args[0], marker.args[1], report.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_CRITERIA):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
