import numpy as np
import pytest

from starkladder import oracle


def test_free_plane_waves(V_free):
    b = V_free.b
    k = 0.3
    expect = np.sort([(k + m * b) ** 2 for m in range(-4, 5)])
    for n in range(1, 5):
        assert abs(oracle.pw_band(V_free, k, n) - expect[n - 1]) < 1e-12
    assert oracle.pw_band(V_free, 0.0, 1) == 0.0


def test_model_is_hermitian(V_asym):
    H = oracle.plane_wave_model(V_asym, 0.7, 10).h_matrix
    assert np.allclose(H, H.conj().T)


def test_gap_from_degenerate_perturbation_theory(V_weak):
    gap = oracle.pw_band(V_weak, 1.0, 2) - oracle.pw_band(V_weak, 1.0, 1)
    assert abs(gap - 2 * 0.05) < 0.2 * 2 * 0.05


@pytest.mark.parametrize("n", [1, 2, 3])
def test_synthesized_eigenvector_solves_hill(V_asym, n):
    assert oracle.pw_hill_residual(V_asym, 0.4, n) < 1e-6


def test_cutoff_too_small(V_even):
    with pytest.raises(ValueError):
        oracle.plane_wave_model(V_even, 0.0, 4)
