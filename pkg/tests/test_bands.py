import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starkladder import (band_edges, band_function, band_table, branch_table, compute_edges, discriminant,
                         kohn_branch_point, make_potential, multisheeted_E, oracle)
from starkladder.bands import dE_dp


def test_free_edges_and_gaps(B_free):
    a = B_free.a
    for n in range(1, 6):
        assert B_free.gaps[n - 1][2] < 1e-8
        bot, top = B_free.edges[n - 1]
        assert abs(top - (n * np.pi / a) ** 2) < 1e-8
        assert abs(bot - ((n - 1) * np.pi / a) ** 2) < 1e-8
        assert kohn_branch_point(B_free, n)[1] == 0


def test_free_dispersion(B_free):
    b = B_free.b
    for k in np.linspace(-b / 2, b / 2, 21):
        assert abs(band_function(B_free, 1, k) - k * k) < 1e-8
    for p in np.linspace(-3.7 * b / 2, 3.7 * b / 2, 37):
        assert abs(multisheeted_E(B_free, p) - p * p) < 1e-8


def test_edges_are_discriminant_roots(B_even):
    V = B_even.potential
    for n in range(1, 5):
        bot, top = B_even.edges[n - 1]
        assert abs(abs(discriminant(V, bot)[0].real) - 1) < 1e-10
        assert abs(abs(discriminant(V, top)[0].real) - 1) < 1e-10


@pytest.mark.parametrize("name", ["V_even", "V_weak", "V_asym"])
def test_plane_wave_equivalence(name, request):
    V = request.getfixturevalue(name)
    B = compute_edges(V, 5)
    ks = np.linspace(-V.b / 2, V.b / 2, 50)
    for n in range(1, 5):
        for k in ks:
            ref = oracle.pw_band(V, k, n)
            assert abs(band_function(B, n, k) - ref) <= 1e-6 * max(1.0, abs(ref))


def test_weak_first_gap(B_weak):
    assert abs(B_weak.gaps[0][2] - 0.1) < 0.02


def test_kohn_point_inside_gap(B_weak):
    E_star, kappa = kohn_branch_point(B_weak, 1)
    assert kappa > 0
    assert B_weak.edges[0][1] < E_star < B_weak.edges[1][0]
    # cos(pa) = mu at p = b/2 + i kappa
    mu = discriminant(B_weak.potential, E_star)[0].real
    a = B_weak.a
    assert abs(np.cos((B_weak.b / 2 + 1j * kappa) * a) - mu) < 1e-9


def test_kohn_point_by_continuation(B_even):
    """E(p) along p = b/2 + i t stays real and reaches E* where dE/dp diverges."""
    E_star, kappa = kohn_branch_point(B_even, 1)
    V, a = B_even.potential, B_even.a
    mu = discriminant(V, E_star)[0].real
    # below kappa the equation cos(pa) = mu(E) has a real root inside the gap
    t = 0.5 * kappa
    target = np.cos((B_even.b / 2 + 1j * t) * a).real
    lo, hi = B_even.edges[0][1], E_star
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if (discriminant(V, mid)[0].real - target) * (discriminant(V, lo)[0].real - target) > 0:
            lo = mid
        else:
            hi = mid
    assert B_even.edges[0][1] < lo < E_star
    assert abs(mu) > abs(target)


def test_tables(B_even):
    t = band_table(B_even, 11)
    assert t.shape == (B_even.n_max * 11, 3)
    bt = branch_table(B_even)
    assert bt.shape == (B_even.n_max, 3)
    assert np.all(np.diff(bt[:, 1]) > 0)


def test_high_band_on_demand(B_even):
    bot, top = band_edges(B_even, 15)
    assert abs(top - 15 ** 2) < 1e-2
    assert bot < top


def test_group_velocity(B_even):
    p, h = 0.7, 1e-5
    fd = (multisheeted_E(B_even, p + h) - multisheeted_E(B_even, p - h)) / (2 * h)
    assert abs(dE_dp(B_even, p) - fd) < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.999))
def test_band_symmetric_and_monotone(B_asym, s):
    b = B_asym.b
    k = s * b / 2
    for n in (1, 2, 3):
        assert abs(band_function(B_asym, n, k) - band_function(B_asym, n, -k)) < 1e-9
    # band 1 rises and band 2 falls on the half zone
    dk = 1e-3 * b
    if k + dk < b / 2:
        assert band_function(B_asym, 1, k + dk) > band_function(B_asym, 1, k)
        assert band_function(B_asym, 2, k + dk) < band_function(B_asym, 2, k)
