from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from resset.codespace import CodeSpace, CodeVocab
from resset.data import Dataset, Patient, Visit

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_patients(n: int, n_dx: int, n_tx: int, seed: int = 0, min_visits: int = 2,
                    max_visits: int = 4, max_codes: int = 3) -> list[Patient]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        visits = []
        for _ in range(int(rng.integers(min_visits, max_visits + 1))):
            dx = sorted({f"D{j}" for j in rng.integers(0, n_dx, size=int(rng.integers(1, max_codes + 1)))})
            tx = sorted({f"T{j}" for j in rng.integers(0, n_tx, size=int(rng.integers(0, max_codes + 1)))})
            visits.append(Visit(tuple(dx), tuple(tx)))
        out.append(Patient(f"P{i}", visits, i % 2))
    return out


def space_of(n_dx: int, n_tx: int) -> CodeSpace:
    return CodeSpace(CodeVocab("disease", [f"D{j}" for j in range(n_dx)]),
                     CodeVocab("treatment", [f"T{j}" for j in range(n_tx)]))


def random_dataset(n: int = 6, n_dx: int = 5, n_tx: int = 4, seed: int = 0, **kw) -> Dataset:
    return Dataset(random_patients(n, n_dx, n_tx, seed, **kw), space_of(n_dx, n_tx))


@pytest.fixture
def toy_dataset() -> Dataset:
    return random_dataset()


# ------------------------------------------------- acceptance summary lines

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    n, title = marker
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[n] = (title, "PASS" if report.outcome == "passed" else "FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is not None:
        outcome.get_result().criterion = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, status = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}: {title}")
