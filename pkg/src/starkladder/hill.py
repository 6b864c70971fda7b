"""Fundamental system and discriminant of the Hill equation -phi'' + V phi = E phi.

The two solutions phi1 (phi1(0)=1, phi1'(0)=0) and phi2 (phi2(0)=0,
phi2'(0)=1) are integrated together with their E-derivatives up to a chosen
order (the variational hierarchy phi_k'' = (V - E) phi_k - k phi_{k-1}), so
dmu/dE and higher derivatives never come from differencing.

The stepper is the explicit 8th-order Dormand-Prince tableau applied with a
fixed step along each straight path segment. The step is scaled with
sqrt(|E|), which keeps the number of steps per oscillation constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dop

from .potential import PeriodicPotential

_NS = _dop.N_STAGES
_A = np.ascontiguousarray(_dop.A[:_NS, :_NS])
_B = np.ascontiguousarray(_dop.B[:_NS])
_C = np.ascontiguousarray(_dop.C[:_NS])

#: product h * omega per step; 0.06 keeps the global error near 1e-13 relative
STEP_RESOLUTION = 0.06
#: refuse to integrate when a path needs more steps than this
MAX_STEPS = 20_000_000


class HillSolverError(RuntimeError):
    """Integration could not be carried out (reported with the energy)."""


@njit(cache=True)
def _rhs(ns, vs, b, E, x, y, K, out):
    V = 0.0j
    for i in range(ns.size):
        V += vs[i] * np.exp(1j * b * ns[i] * x)
    W = V - E
    for s in range(2):
        for k in range(K + 1):
            idx = (s * (K + 1) + k) * 2
            out[idx] = y[idx + 1]
            acc = W * y[idx]
            if k > 0:
                acc -= k * y[idx - 2]
            out[idx + 1] = acc


@njit(cache=True)
def _propagate(ns, vs, b, E, x0, dx, n_out, steps_per_out, K, y0, A, B, C):
    dim = y0.size
    out = np.empty((n_out + 1, dim), dtype=np.complex128)
    out[0] = y0
    y = y0.copy()
    h = dx / (n_out * steps_per_out)
    ks = np.empty((A.shape[0], dim), dtype=np.complex128)
    tmp = np.empty(dim, dtype=np.complex128)
    x = x0
    for m in range(n_out):
        for _ in range(steps_per_out):
            for s in range(A.shape[0]):
                for d in range(dim):
                    acc = y[d]
                    for r in range(s):
                        acc += h * A[s, r] * ks[r, d]
                    tmp[d] = acc
                _rhs(ns, vs, b, E, x + C[s] * h, tmp, K, ks[s])
            for d in range(dim):
                acc = 0.0j
                for s in range(A.shape[0]):
                    acc += B[s] * ks[s, d]
                y[d] += h * acc
            x += h
        # re-anchor x to avoid drift in long runs
        x = x0 + dx * (m + 1) / n_out
        out[m + 1] = y
    return out


def _initial_state(K: int) -> np.ndarray:
    y = np.zeros(2 * (K + 1) * 2, dtype=complex)
    y[0] = 1.0                 # phi1
    y[(K + 1) * 2 + 1] = 1.0   # phi2'
    return y


def _omega(V: PeriodicPotential, E: complex) -> float:
    return float(np.sqrt(abs(E) + V.sup_norm()) + V.max_harmonic * V.b + 1.0)


def integrate_path(
    V: PeriodicPotential,
    E: complex,
    vertices: Sequence[complex],
    K: int = 1,
    n_out: int = 1,
    resolution: float = STEP_RESOLUTION,
) -> np.ndarray:
    """Integrate the fundamental system along a piecewise-linear path.

    Parameters
    ----------
    vertices : sequence of complex
        Path vertices; must start at 0. At most 9 vertices (8 segments).
    K : int
        Highest E-derivative carried.
    n_out : int
        Number of equal sub-intervals recorded on the *last* segment.

    Returns
    -------
    ndarray, shape (n_out + 1, 2, K + 1, 2)
        ``[m, s, k, c]`` = c-th x-derivative of the k-th E-derivative of
        solution ``s`` (0: phi1, 1: phi2) at the m-th recorded point.
    """
    vertices = [complex(v) for v in vertices]
    if abs(vertices[0]) != 0:
        raise ValueError("path must start at x = 0")
    if len(vertices) > 9:
        raise ValueError("paths are limited to 8 linear segments")
    if len(vertices) < 2:
        raise ValueError("path needs at least one segment")
    E = complex(E)
    omega = _omega(V, E)
    y = _initial_state(K)
    ns = V.harmonics.astype(np.int64)
    vs = V.amplitudes.astype(np.complex128)
    for i in range(len(vertices) - 1):
        x0, dx = vertices[i], vertices[i + 1] - vertices[i]
        last = i == len(vertices) - 2
        m = n_out if last else 1
        total = max(int(np.ceil(abs(dx) * omega / resolution)), 8)
        if total > MAX_STEPS:
            raise HillSolverError(f"step budget exceeded at E = {E!r} ({total} steps needed)")
        per = max(int(np.ceil(total / m)), 1)
        if abs(dx) == 0:
            rec = np.repeat(y[None, :], m + 1, axis=0)
        else:
            rec = _propagate(ns, vs, V.b, E, x0, dx, m, per, K, y, _A, _B, _C)
        if not np.all(np.isfinite(rec[-1])):
            raise HillSolverError(f"non-finite solution at E = {E!r}")
        y = rec[-1].copy()
    return rec.reshape(m + 1, 2, K + 1, 2)


def straight_path(x_end: complex) -> list[complex]:
    """Straight segment 0 -> x_end. Im x is monotone along it, as the box L requires."""
    return [0.0j, complex(x_end)]


@dataclass(frozen=True)
class FundamentalPair:
    """Monodromy data at x = a for one energy.

    ``dmu_dE`` comes from the variational system. ``mu_derivs`` holds
    mu and its first three E-derivatives, and ``mono_derivs`` the full
    array ``[s, k, c]`` used by the Bloch normalization.
    """

    E: complex
    phi1_at_a: complex
    phi1p_at_a: complex
    phi2_at_a: complex
    phi2p_at_a: complex
    mu: complex
    dmu_dE: complex
    mu_derivs: np.ndarray
    mono_derivs: np.ndarray

    @property
    def wronskian(self) -> complex:
        return self.phi1_at_a * self.phi2p_at_a - self.phi1p_at_a * self.phi2_at_a

    def lam(self, branch: str = "inner") -> complex:
        return monodromy_eigenvalue(self.mu, branch)


@lru_cache(maxsize=65536)
def _monodromy_cached(V: PeriodicPotential, E: complex, K: int) -> np.ndarray:
    arr = integrate_path(V, E, straight_path(V.period), K=K)[-1]
    arr.setflags(write=False)
    return arr


def monodromy(V: PeriodicPotential, E: complex, K: int = 3) -> FundamentalPair:
    """Fundamental system at x = a with E-derivatives up to order ``K``."""
    arr = _monodromy_cached(V, complex(E), int(K))
    mu_d = 0.5 * (arr[0, :, 0] + arr[1, :, 1])
    return FundamentalPair(
        E=complex(E),
        phi1_at_a=arr[0, 0, 0], phi1p_at_a=arr[0, 0, 1],
        phi2_at_a=arr[1, 0, 0], phi2p_at_a=arr[1, 0, 1],
        mu=mu_d[0], dmu_dE=mu_d[1] if K >= 1 else np.nan,
        mu_derivs=mu_d, mono_derivs=arr,
    )


def fundamental_system(
    V: PeriodicPotential,
    E: complex,
    x_end: complex | None = None,
    path: Sequence[complex] | None = None,
) -> tuple[complex, complex, complex, complex]:
    """(phi1, phi1', phi2, phi2') at the end of ``path`` (default: straight to ``x_end``)."""
    if path is None:
        if x_end is None:
            x_end = V.period
        path = straight_path(x_end)
    elif x_end is not None and abs(complex(path[-1]) - complex(x_end)) > 1e-14:
        raise ValueError("path does not end at x_end")
    arr = integrate_path(V, E, path, K=0)[-1]
    return arr[0, 0, 0], arr[0, 0, 1], arr[1, 0, 0], arr[1, 0, 1]


def discriminant(V: PeriodicPotential, E: complex) -> tuple[complex, complex]:
    """Half-trace mu(E) of the monodromy matrix and dmu/dE (variational)."""
    fp = monodromy(V, E, K=1)
    mu, dmu = fp.mu, fp.dmu_dE
    if np.isreal(E):
        mu, dmu = complex(mu.real), complex(dmu.real)
    return mu, dmu


def monodromy_eigenvalue(mu: complex, branch: str = "inner") -> complex:
    """Root of lambda^2 - 2 mu lambda + 1 = 0.

    ``branch="inner"`` returns the root with |lambda| <= 1, ``"outer"`` the
    reciprocal. On the unit circle the inner root is the one with
    Im lambda >= 0.
    """
    if branch not in ("inner", "outer"):
        raise ValueError("branch must be 'inner' or 'outer'")
    mu = complex(mu)
    s = np.sqrt(mu * mu - 1.0)
    big = mu + s if abs(mu + s) >= abs(mu - s) else mu - s
    small = 1.0 / big
    if abs(abs(big) - 1.0) < 1e-14:
        # unit circle: order by the sign of the imaginary part
        inner = big if big.imag >= 0 else small
        outer = 1.0 / inner
    else:
        inner, outer = small, big
    return inner if branch == "inner" else outer
