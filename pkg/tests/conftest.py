"""Shared fixtures and the acceptance-report plumbing."""

from __future__ import annotations

import time

import numpy as np
import pytest

from nucspin.spinmath import ElectronSubspace, FieldConfig, NuclearSpin
from nucspin.sequences import SpinSystem

SESSION = {"start": None}
ACCEPTANCE_LINES: list[str] = []


def pytest_sessionstart(session):
    SESSION["start"] = time.perf_counter()


def pytest_collection_modifyitems(session, config, items):
    # the wall-clock criterion has to observe the whole session, so run it last
    last = [it for it in items if it.get_closest_marker("session_end")]
    rest = [it for it in items if not it.get_closest_marker("session_end")]
    items[:] = rest + last


def pytest_configure(config):
    config.addinivalue_line("markers", "session_end: run after every other test")
    config.addinivalue_line("markers", "acceptance: numbered acceptance criterion")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion and echo it."""

    def _report(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {title}"
        if detail:
            line += f" | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _report


@pytest.fixture
def session_elapsed():
    return lambda: time.perf_counter() - SESSION["start"]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def subspace():
    return ElectronSubspace(0.5, 1.5)


@pytest.fixture(scope="session")
def n1():
    return NuclearSpin.from_values("29Si", -23.5, 12.0)


@pytest.fixture(scope="session")
def n2():
    return NuclearSpin.from_values("29Si", 0.2, 8.5)


@pytest.fixture(scope="session")
def two_spin(n1, n2, subspace):
    return SpinSystem(FieldConfig(81.0), subspace, (n1, n2))


def random_spin(rng: np.random.Generator, species: str | None = None) -> NuclearSpin:
    """A 29Si or 13C nucleus with |A_par|, A_perp drawn from [0.5, 60] kHz."""
    name = species or ("29Si" if rng.random() < 0.5 else "13C")
    a_par = rng.uniform(0.5, 60.0) * rng.choice((-1.0, 1.0))
    return NuclearSpin.from_values(name, a_par, rng.uniform(0.5, 60.0))


def random_subspace(rng: np.random.Generator) -> ElectronSubspace:
    s0, s1 = rng.choice([-1.5, -0.5, 0.5, 1.5], size=2, replace=False)
    return ElectronSubspace(float(s0), float(s1))
