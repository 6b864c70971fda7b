import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starkladder import (BlochError, bloch_at, eval_Q, identification_phase, periodic_part_on_grid,
                         u_and_derivatives)
from starkladder.bloch import phase_convention

XS = [0.3 - 0.2j, 1.0 - 0.5j, 1.7 - 0.1j, 2.5 - 0.8j, 3.0 - 0.3j]


def _norm(V, B, p, M=128):
    u, _ = periodic_part_on_grid(V, B, p, M)
    return np.sum(np.abs(u) ** 2) * V.period / M


def test_free_particle(V_free, B_free):
    a = V_free.period
    for p in (0.2, 1.7, -2.9):
        ev = bloch_at(V_free, B_free, p, 0.8 - 0.3j)
        assert abs(ev.u - 1 / np.sqrt(a)) < 1e-10
        assert abs(ev.phi - np.exp(1j * p * (0.8 - 0.3j)) / np.sqrt(a)) < 1e-10
        u, du_dE, du_dp = u_and_derivatives(V_free, B_free, p, 1.1)
        assert abs(du_dE) < 1e-10 and abs(du_dp) < 1e-10


@pytest.mark.parametrize("name", ["V_even", "V_asym"])
def test_normalization_random_points(name, request):
    V = request.getfixturevalue(name)
    B = request.getfixturevalue("B_even" if name == "V_even" else "B_asym")
    rng = np.random.default_rng(7)
    for band in range(1, 5):
        for _ in range(5):
            k = rng.uniform(0.02, 0.98) * V.b / 2 * rng.choice([-1, 1])
            p = np.sign(k) * ((band - 1) * V.b / 2 + abs(k)) if band > 1 else k
            assert abs(_norm(V, B, p) - 1) < 1e-8


@pytest.mark.parametrize("x", [0.4, 1.3 - 0.5j, 2.9 - 0.2j])
def test_quasi_periodicity(V_asym, B_asym, x):
    p = 1.37
    a = V_asym.period
    e0 = bloch_at(V_asym, B_asym, p, x)
    e1 = bloch_at(V_asym, B_asym, p, x + a)
    assert abs(e1.phi - np.exp(1j * p * a) * e0.phi) < 1e-8
    assert abs(e1.u - e0.u) < 1e-8


@pytest.mark.parametrize("p", [0.3, 0.99, 1.6, 2.4, 3.3])
def test_closed_forms_agree_for_even_V(V_even, B_even, p):
    ref = bloch_at(V_even, B_even, p, 1.2 - 0.3j, form="symmetric")
    for form in ("row1", "row2"):
        ev = bloch_at(V_even, B_even, p, 1.2 - 0.3j, form=form)
        assert abs(ev.phi - ref.phi) < 1e-9
        assert abs(ev.du_dp - ref.du_dp) < 1e-7 * max(1, abs(ref.du_dp))


@pytest.mark.parametrize("name", ["V_even", "V_asym"])
def test_conjugation_symmetry(name, request):
    V = request.getfixturevalue(name)
    B = request.getfixturevalue("B_even" if name == "V_even" else "B_asym")
    for p in (0.35, 1.4, 2.6):
        for x in (0.2, 1.9):
            assert abs(bloch_at(V, B, -p, x).phi - np.conj(bloch_at(V, B, p, x).phi)) < 1e-9


def test_schwarz_symmetry_even(V_even, B_even):
    M = 64
    u, _ = periodic_part_on_grid(V_even, B_even, 0.8, M)
    mirrored = u[(-np.arange(M)) % M]
    assert np.max(np.abs(np.conj(u) - mirrored)) < 1e-10


def test_orthonormal_across_sheets(V_asym, B_asym):
    M = 128
    x = np.arange(M) * V_asym.period / M
    rng = np.random.default_rng(3)
    for p in rng.uniform(-0.95, 0.95, 4) * V_asym.b / 2:
        phis = {}
        for j in range(-3, 4):
            q = p - j * V_asym.b
            u, _ = periodic_part_on_grid(V_asym, B_asym, q, M)
            phis[j] = np.exp(1j * q * x) * u
        for j in phis:
            for l in phis:
                ov = np.sum(np.conj(phis[j]) * phis[l]) * V_asym.period / M
                assert abs(ov - (j == l)) < 1e-7


def test_du_dp_matches_difference_quotient(V_asym, B_asym):
    p, h, x = 1.3, 1e-5, 0.9 - 0.2j
    up = bloch_at(V_asym, B_asym, p + h, x).u
    um = bloch_at(V_asym, B_asym, p - h, x).u
    assert abs(bloch_at(V_asym, B_asym, p, x).du_dp - (up - um) / (2 * h)) < 1e-7


def test_open_cut_is_refused(V_even, B_even):
    with pytest.raises(BlochError):
        u_and_derivatives(V_even, B_even, V_even.b / 2, 0.5)


@pytest.mark.parametrize("convention", ["origin", "mean"])
@pytest.mark.parametrize("name", ["V_even", "V_asym"])
def test_high_energy_asymptotics(name, convention, request):
    V = request.getfixturevalue(name)
    B = request.getfixturevalue("B_even" if name == "V_even" else "B_asym")
    a = V.period
    Q = eval_Q(V, np.array(XS))
    if convention == "mean":
        # the expansion pins u(0) real; the mean convention pins the cell average,
        # which moves Q by its own average
        xg = np.arange(256) * a / 256
        Q = Q - eval_Q(V, xg).mean()
    err_u, err_du, d2 = [], [], []
    for E in (1e3, 1e4, 1e5):
        p = np.sqrt(E) + 0.123
        with phase_convention(convention):
            u, du_dE, _, d2u = u_and_derivatives(V, B, p, np.array(XS), second=True)
            Ep = bloch_at(V, B, p, 0.0).E
        err_u.append(np.max(np.abs(u - (1 - 1j * Q / (2 * np.sqrt(Ep))) / np.sqrt(a))))
        err_du.append(np.max(np.abs(du_dE - 1j * Q / (4 * Ep ** 1.5 * np.sqrt(a)))))
        d2.append(np.max(np.abs(d2u)))
    order_u = np.log10(err_u[0] / err_u[-1]) / 2  # in units of 1/E
    order_du = np.log10(err_du[0] / err_du[-1]) / 2 * 2  # in units of 1/sqrt(E)
    order_d2 = np.log10(d2[0] / d2[-1]) / 2  # in units of 1/E
    assert order_u >= 0.9
    assert order_du >= 1.4
    # remainder of du/dE is O(E^-2): 4 in 1/sqrt(E) units, within 30 %
    assert abs(order_du - 4) <= 0.3 * 4
    assert abs(order_d2 - 2.5) <= 0.3 * 2.5


def test_identification_phase(V_even, B_even, V_asym, B_asym):
    # even V: the lower edge of gap 1 is the odd standing wave
    assert identification_phase(V_even, B_even, 1, upper=False) == -1
    assert identification_phase(V_even, B_even, 1, upper=True) == 1
    r = identification_phase(V_asym, B_asym, 1, upper=False)
    assert abs(abs(r) - 1) < 1e-12


def test_conventions_differ_by_sign_for_even_V(V_even, B_even):
    for p in (0.5, 1.5, 2.5):
        with phase_convention("origin"):
            u0 = bloch_at(V_even, B_even, p, 0.7).u
        u1 = bloch_at(V_even, B_even, p, 0.7).u
        assert abs(abs(u0 / u1) - 1) < 1e-10
        assert abs((u0 / u1).imag) < 1e-10


def test_mean_convention_average_is_positive(V_asym, B_asym):
    for p in (0.2, 0.99, 1.01, 2.7):
        u, _ = periodic_part_on_grid(V_asym, B_asym, p, 64)
        m = u.mean()
        assert m.real > 0 and abs(m.imag) < 1e-12


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 0.95), st.integers(1, 3))
def test_normalization_property(V_asym, B_asym, s, band):
    p = (band - 1) * V_asym.b / 2 + s * V_asym.b / 2
    assert abs(_norm(V_asym, B_asym, p) - 1) < 1e-8
