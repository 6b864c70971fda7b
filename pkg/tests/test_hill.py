import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starkladder import discriminant, fundamental_system, monodromy, monodromy_eigenvalue
from starkladder.hill import integrate_path


def test_free_particle_fundamental_system(V_free):
    a = V_free.period
    for E in (0.3, 10.0, 123.4):
        k = np.sqrt(E)
        p1, p1p, p2, p2p = fundamental_system(V_free, E)
        assert abs(p1 - np.cos(k * a)) < 1e-10
        assert abs(p2 - np.sin(k * a) / k) < 1e-10
        assert abs(p1p + k * np.sin(k * a)) < 1e-10
        assert abs(p2p - np.cos(k * a)) < 1e-10


def test_free_discriminant_special_values(V_free):
    a = V_free.period
    assert abs(discriminant(V_free, 0.0)[0] - 1) < 1e-12
    assert abs(discriminant(V_free, (np.pi / a) ** 2)[0] + 1) < 1e-10


@pytest.mark.parametrize("E", [-0.5, 0.4, 3.0, 50.0, 2.0 + 0.5j])
def test_wronskian_is_one(V_asym, E):
    assert abs(monodromy(V_asym, E).wronskian - 1) < 1e-10


def test_dmu_dE_matches_difference_quotient(V_even):
    E, h = 2.7, 1e-5
    mu_p = discriminant(V_even, E + h)[0]
    mu_m = discriminant(V_even, E - h)[0]
    assert abs(discriminant(V_even, E)[1] - (mu_p - mu_m) / (2 * h)) < 1e-8


def test_step_halving_reference(V_even):
    """Values agree with a Richardson-extrapolated run at half the step."""
    E = 10.0
    coarse = integrate_path(V_even, E, [0, V_even.period], K=0, resolution=0.12)[-1]
    fine = integrate_path(V_even, E, [0, V_even.period], K=0, resolution=0.06)[-1]
    ref = fine + (fine - coarse) / (2 ** 8 - 1)
    assert np.max(np.abs(fine - ref)) < 1e-9


def test_path_independence(V_even):
    """The fundamental system is entire in x, so a detour gives the same values."""
    x = 2.0 - 0.4j
    direct = fundamental_system(V_even, 3.0, path=[0, x])
    detour = fundamental_system(V_even, 3.0, path=[0, 1.0 - 0.8j, x])
    assert np.allclose(direct, detour, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False))
def test_monodromy_eigenvalue_roots(mu):
    lam_in = monodromy_eigenvalue(mu, "inner")
    lam_out = monodromy_eigenvalue(mu, "outer")
    assert abs(lam_in * lam_out - 1) < 1e-9
    assert abs(lam_in) <= 1 + 1e-9
    assert abs(lam_in ** 2 - 2 * mu * lam_in + 1) < 1e-8 * max(1, abs(mu)) ** 2
