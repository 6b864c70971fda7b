"""Coupling coefficients C_j(p) of the position operator."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from starkladder import build_coupling_table, coupling_C
from starkladder.cmr import X_intraband, fit_decay, sheet_momentum

B2 = 2.0


def _interior(p):
    # keep clear of the cut points m b/2, where one-sided limits differ
    return p + 0.37


def test_free_couplings_vanish(V_free, B_free):
    for j in (-2, -1, 0, 1, 2):
        assert abs(coupling_C(V_free, B_free, j, _interior(0.5 * j))) < 1e-12


@pytest.mark.parametrize("p", [-0.63, 0.12, 1.37, 2.9, -4.1])
def test_even_potential_has_no_diagonal_term(V_even, B_even, p):
    assert abs(coupling_C(V_even, B_even, 0, p)) < 1e-8


@pytest.mark.parametrize("name", ["even", "asym"])
@pytest.mark.parametrize("j", [1, 2, -1, 3])
def test_hermitian_symmetry(request, name, j):
    V = request.getfixturevalue(f"V_{name}")
    B = request.getfixturevalue(f"B_{name}")
    for p in (0.37, -1.21, 2.6):
        lhs = coupling_C(V, B, j, p)
        rhs = np.conj(coupling_C(V, B, -j, p - j * V.b))
        assert abs(lhs - rhs) < 1e-7


def test_diagonal_coupling_is_real(V_asym, B_asym):
    for p in (0.2, -0.7, 1.6):
        assert abs(coupling_C(V_asym, B_asym, 0, p).imag) < 1e-9


def test_intraband_matches_diagonal(V_even, B_even):
    k = 0.3
    assert X_intraband(V_even, B_even, 1, 1, k) == pytest.approx(coupling_C(V_even, B_even, 0, k), abs=1e-12)


def test_sheet_momentum_ranges(B_even):
    for n in range(1, 6):
        for k in (-0.9, -0.2, 0.3, 0.95):
            p = sheet_momentum(B_even, n, k)
            assert (n - 1) * B2 / 2 - 1e-12 <= abs(p) <= n * B2 / 2 + 1e-12
            assert (p - k) / B2 == pytest.approx(round((p - k) / B2), abs=1e-12)


@pytest.mark.parametrize("name", ["even", "asym"])
def test_exponential_decay_in_j(request, name):
    V = request.getfixturevalue(f"V_{name}")
    B = request.getfixturevalue(f"B_{name}")
    ps = np.arange(-24, 25) * (V.b / 8) + V.b / 16
    T = build_coupling_table(V, B, ps, 4)
    assert T.R_effective > 0
    assert np.isfinite(T.tail_bound)
    mags = [np.nanmax(np.abs(T.column(j))) for j in range(1, 5)]
    assert fit_decay(np.array(mags)) > 0


@pytest.mark.slow
@pytest.mark.parametrize("name", ["even", "asym"])
def test_power_decay_in_p(request, name):
    V = request.getfixturevalue(f"V_{name}")
    B = request.getfixturevalue(f"B_{name}")
    b = V.b
    ps = np.array([10.0, 30.0, 100.0]) * b + 0.37
    for j in (1, -1):
        vals = [abs(coupling_C(V, B, j, p + j * b)) for p in ps]
        exponent = -np.polyfit(np.log(ps), np.log(vals), 1)[0]
        assert exponent >= 1.8


def test_table_matches_pointwise(V_asym, B_asym):
    ps = np.arange(-8, 9) * (V_asym.b / 4) + V_asym.b / 8
    T = build_coupling_table(V_asym, B_asym, ps, 2)
    for i in (1, 7, 12):
        for j in (-1, 0, 2):
            c = T.column(j)[i]
            if np.isfinite(c):
                assert c == pytest.approx(coupling_C(V_asym, B_asym, j, ps[i]), abs=1e-8)
    rows = T.rows()
    assert [r[0] for r in rows] == sorted(r[0] for r in rows)


def test_table_rejects_zero_j_max(V_even, B_even):
    with pytest.raises(ValueError):
        build_coupling_table(V_even, B_even, np.array([0.1, 0.3]), 0)


@settings(max_examples=15, deadline=None)
@given(p=st.floats(-3.0, 3.0).filter(lambda p: abs(p - round(p)) > 0.05))
def test_symmetry_hypothesis(V_even, B_even, p):
    lhs = coupling_C(V_even, B_even, 1, p)
    rhs = np.conj(coupling_C(V_even, B_even, -1, p - V_even.b))
    assert abs(lhs - rhs) < 1e-7
