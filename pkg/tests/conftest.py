"""Shared potentials and the acceptance summary printed at the end of the run."""

from __future__ import annotations

import numpy as np
import pytest

from starkladder import compute_edges, free_potential, make_potential

A = np.pi

#: criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def V_free():
    return free_potential(A)


@pytest.fixture(scope="session")
def V_even():
    """2 v cos(2x) with v = 0.3."""
    return make_potential(A, [(1, 0.3)])


@pytest.fixture(scope="session")
def V_weak():
    """2 v cos(2x) with v = 0.05."""
    return make_potential(A, [(1, 0.05)])


@pytest.fixture(scope="session")
def V_asym():
    """The v = 0.3 cosine plus a complex second harmonic, so V(-x) != V(x)."""
    return make_potential(A, [(1, 0.3), (2, 0.1 + 0.05j)])


@pytest.fixture(scope="session")
def B_free(V_free):
    return compute_edges(V_free, 6)


@pytest.fixture(scope="session")
def B_even(V_even):
    return compute_edges(V_even, 8)


@pytest.fixture(scope="session")
def B_weak(V_weak):
    return compute_edges(V_weak, 8)


@pytest.fixture(scope="session")
def B_asym(V_asym):
    return compute_edges(V_asym, 8)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
