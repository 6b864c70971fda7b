"""Brute-force references for tests.

Nothing here uses the Hill solver or the band code; only the potential type
is shared. Bands come from plane-wave diagonalization, and the Stark ladder
from a finite-difference box in x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .potential import PeriodicPotential


class OracleError(RuntimeError):
    """A reference value did not converge."""


@dataclass(frozen=True)
class PlaneWaveModel:
    """H_B in the basis exp(i(k + mb)x), |m| <= M."""

    k: float
    M: int
    h_matrix: np.ndarray

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    def eig(self) -> tuple[np.ndarray, np.ndarray]:
        return scipy.linalg.eigh(self.h_matrix)


def plane_wave_model(V: PeriodicPotential, k: float, M: int) -> PlaneWaveModel:
    """Hermitian plane-wave matrix: (k+mb)^2 on the diagonal, v_{m-m'} off it.

    The coefficients are taken Hermitian-symmetrized, which is exact for
    real V and makes the matrix Hermitian in any case.
    """
    if M < 8:
        raise ValueError("plane-wave cutoff M must be >= 8")
    b = V.b
    m = np.arange(-M, M + 1)
    d = m[:, None] - m[None, :]
    H = np.zeros((m.size, m.size), dtype=complex)
    for n in V.harmonics:
        H[d == n] += V.coeff(int(n))
    H = 0.5 * (H + H.conj().T)
    H[np.diag_indices_from(H)] += (k + m * b) ** 2
    return PlaneWaveModel(float(k), int(M), H)


def pw_band(V: PeriodicPotential, k: float, n: int, M: int = 16, M_max: int = 1024,
            tol: float = 1e-8) -> float:
    """n-th ascending Bloch eigenvalue at quasimomentum k.

    The cutoff doubles until the value moves by less than ``tol``.
    """
    if n < 1:
        raise ValueError("band index starts at 1")
    M = max(M, 8, n)
    prev = scipy.linalg.eigvalsh(plane_wave_model(V, k, M).h_matrix)[n - 1]
    while 2 * M <= M_max:
        M *= 2
        cur = scipy.linalg.eigvalsh(plane_wave_model(V, k, M).h_matrix)[n - 1]
        if abs(cur - prev) < tol:
            return float(cur)
        prev = cur
    raise OracleError(f"band {n} at k = {k} not converged with M = {M_max}")


def pw_bands(V: PeriodicPotential, ks, n_max: int, M: int = 32) -> np.ndarray:
    """E_n(k) for n = 1..n_max at every k, shape (len(ks), n_max); fixed cutoff M."""
    out = np.empty((len(ks), n_max))
    for i, k in enumerate(ks):
        out[i] = scipy.linalg.eigvalsh(plane_wave_model(V, k, M).h_matrix)[:n_max]
    return out


def pw_hill_residual(V: PeriodicPotential, k: float, n: int, M: int = 32, samples: int = 257) -> float:
    """Relative residual of -psi'' + V psi - E psi for the synthesized plane-wave eigenvector."""
    model = plane_wave_model(V, k, M)
    w, vec = model.eig()
    E, c = w[n - 1], vec[:, n - 1]
    q = k + model.modes * V.b
    x = np.linspace(0.0, V.period, samples)
    waves = np.exp(1j * np.outer(x, q))
    psi = waves @ c
    d2 = waves @ (-(q ** 2) * c)
    Vx = sum(V.coeff(int(h)) * np.exp(1j * h * V.b * x) for h in V.harmonics)
    res = -d2 + Vx * psi - E * psi
    return float(np.max(np.abs(res)) / (np.max(np.abs(psi)) * max(1.0, abs(E))))


def fd_stark_levels(V: PeriodicPotential, F: float, target: float, cells: int = 60,
                    h: float = 0.01, count: int = 40) -> np.ndarray:
    """Eigenvalues of -d^2 + V + Fx on a hard-wall box of 2*cells periods.

    Fourth-order finite differences; only states whose centroid lies in the
    inner half of the box are returned, so the walls do not matter for the
    bound part of a narrow ladder. The values lie on E + j F a, up to the
    Landau-Zener leakage that the box turns into real levels.
    """
    L = cells * V.period
    n = int(round(2 * L / h))
    x = np.linspace(-L, L, n)
    h = x[1] - x[0]
    Vx = np.real(sum(V.coeff(int(m)) * np.exp(1j * m * V.b * x) for m in V.harmonics))
    main = np.full(n, 30 / 12 / h ** 2) + Vx + F * x
    o1 = np.full(n - 1, -16 / 12 / h ** 2)
    o2 = np.full(n - 2, 1 / 12 / h ** 2)
    H = scipy.sparse.diags([o2, o1, main, o1, o2], [-2, -1, 0, 1, 2]).tocsc()
    vals, vecs = scipy.sparse.linalg.eigsh(H, k=count, sigma=target, which="LM")
    xc = np.sum(x[:, None] * vecs ** 2, axis=0)
    return np.sort(vals[np.abs(xc) < L / 2])
