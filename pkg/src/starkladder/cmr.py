"""Coupling coefficients of the Stark term in the crystal-momentum representation.

alpha_j(p, q) is the j-th Fourier coefficient of conj(u(x, p)) du(x, q)/dq
over one cell. The periodic parts are taken with unit mean square,
(1/a) int |u|^2 = 1, so the cell average (1/a) int is the right inner product
for a Bloch transform with kernel exp(ipx) u. Relative to the unit-norm
Bloch functions of `bloch` this is a factor a, applied here once.

C_j(p) = i alpha_j(p, p - jb), so that the position operator acts as
(X psi)(p) = sum_j C_j(p) psi(p - jb).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bands import BandStructure
from .bloch import periodic_part_on_grid
from .potential import PeriodicPotential

#: quadrature stops doubling once successive values agree to this
QUAD_TOL = 1e-9
M_START = 32
M_MAX = 4096


def _alpha_on_nodes(V, B, j, p, q, M, side_p="below", side_q="below"):
    a, b = V.period, V.b
    up, _ = periodic_part_on_grid(V, B, p, M, side_p)
    _, duq = periodic_part_on_grid(V, B, q, M, side_q)
    x = np.arange(M) * (a / M)
    # unit mean-square normalization: u -> sqrt(a) u, then (1/a) * sum * (a/M)
    return complex(np.sum(np.conj(up) * duq * np.exp(-1j * j * b * x)) * (a / M))


def alpha(
    V: PeriodicPotential,
    B: BandStructure,
    j: int,
    p: float,
    q: float,
    side_p: str = "below",
    side_q: str = "below",
    tol: float = QUAD_TOL,
) -> complex:
    """alpha_j(p, q) by periodic trapezoid quadrature with node doubling.

    Raises
    ------
    RuntimeError
        If ``M_MAX`` nodes do not reach the tolerance.
    """
    M = max(M_START, 4 * abs(j) + 8)
    M = 1 << int(np.ceil(np.log2(M)))
    prev = _alpha_on_nodes(V, B, j, p, q, M, side_p, side_q)
    while M < M_MAX:
        M *= 2
        cur = _alpha_on_nodes(V, B, j, p, q, M, side_p, side_q)
        if abs(cur - prev) < tol:
            return cur
        prev = cur
    raise RuntimeError(f"alpha_{j}({p}, {q}) did not converge with {M_MAX} nodes")


def coupling_C(V: PeriodicPotential, B: BandStructure, j: int, p: float, side: str = "below") -> complex:
    """C_j(p) = i alpha_j(p, p - jb)."""
    return 1j * alpha(V, B, j, p, p - j * V.b, side, side)


def sheet_momentum(B: BandStructure, n: int, k: float) -> float:
    """Point p of the cut line carrying the band-n Bloch function at quasimomentum k.

    Odd n = 2l+1 sit at p = k + l b sign(k), even n = 2l at p = k - l b sign(k),
    so that p = k mod b and |p| lies in [(n-1)b/2, nb/2].
    """
    b = B.b
    sgn = 1.0 if k >= 0 else -1.0
    l = (n - 1) // 2 if n % 2 else n // 2
    return k + l * b * sgn if n % 2 else k - l * b * sgn


def X_intraband(V: PeriodicPotential, B: BandStructure, m: int, n: int, k: float) -> complex:
    """X_{m,n}(k) = i <u_m, du_n/dk> in the periodic gauge u_n(x, k) = exp(i(p_n - k)x) u(x, p_n)."""
    pm, pn = sheet_momentum(B, m, k), sheet_momentum(B, n, k)
    j = int(round((pm - pn) / V.b))
    return 1j * alpha(V, B, j, pm, pn)


@dataclass(frozen=True, eq=False)
class CouplingTable:
    """C_j(p) = i alpha_j(p, p - jb) on a grid closed under shifts by b.

    ``C[i, j + j_max]`` is C_j(p_grid[i]); entries whose partner p - jb falls
    outside the grid are NaN. ``X11`` samples X_{1,1} at the grid points of
    the first Brillouin zone, ``k_index`` gives their positions.
    """

    p_grid: np.ndarray
    j_max: int
    C: np.ndarray
    partner: np.ndarray
    nodes: int
    R_effective: float
    tail_bound: float
    k_index: np.ndarray = field(repr=False)

    @property
    def alpha(self) -> np.ndarray:
        return -1j * self.C

    @property
    def j_range(self) -> np.ndarray:
        return np.arange(-self.j_max, self.j_max + 1)

    @property
    def X11(self) -> np.ndarray:
        return self.C[self.k_index, self.j_max].real

    def column(self, j: int) -> np.ndarray:
        return self.C[:, j + self.j_max]

    def rows(self):
        """(j, p, Re C_j, Im C_j) for every defined entry, ordered by j then p."""
        out = []
        for j in self.j_range:
            col = self.column(j)
            for p, c in zip(self.p_grid, col):
                if np.isfinite(c):
                    out.append((int(j), float(p), float(c.real), float(c.imag)))
        return out


def pick_nodes(V, B, ps, j_max, tol=QUAD_TOL):
    """Smallest power-of-two node count that resolves the extreme grid points."""
    # near a cut the Bloch data carry round-off that no node count removes;
    # probe points well inside the half-cells instead
    half = V.b / 2
    dist = np.abs(ps / half - np.round(ps / half)) * half
    inner = ps[dist >= half / 8]
    if inner.size == 0:
        inner = ps
    probes = [inner[np.argmax(np.abs(inner))], inner[np.argmin(np.abs(inner))], inner[len(inner) // 2]]
    M = 1 << int(np.ceil(np.log2(max(M_START, 4 * j_max + 8))))
    while M < M_MAX:
        ok = True
        for p in probes:
            for j in (0, j_max):
                if abs(_alpha_on_nodes(V, B, j, p, p, M) - _alpha_on_nodes(V, B, j, p, p, 2 * M)) > tol:
                    ok = False
        if ok:
            return M
        M *= 2
    raise RuntimeError("coupling quadrature did not converge")


def fit_decay(values: np.ndarray, floor: float = 1e-13) -> float:
    """Exponential rate s with max_p |alpha_j| ~ exp(-s |j|), from a log-linear fit."""
    js = np.arange(1, values.size + 1)
    ok = np.isfinite(values) & (values > floor)
    if ok.sum() < 2:
        return np.inf
    slope = np.polyfit(js[ok], np.log(values[ok]), 1)[0]
    return float(-slope)


def build_coupling_table(
    V: PeriodicPotential,
    B: BandStructure,
    p_grid: np.ndarray,
    j_max: int,
    nodes: int | None = None,
) -> CouplingTable:
    """Evaluate C_j(p) for all grid points and |j| <= j_max.

    The grid must be invariant under p -> p - b where both ends are inside,
    and should avoid the cut points m b/2 (double points are represented by
    their one-sided neighbours). ``R_effective`` comes from the decay fit of
    max_p |alpha_j(p, p - jb)| in j, and ``tail_bound`` bounds the dropped
    sum over |j| > j_max with the fitted geometric rate.
    """
    if j_max < 1:
        raise ValueError("j_max must be >= 1")
    ps = np.asarray(p_grid, dtype=float)
    b, a = V.b, V.period
    M = nodes or pick_nodes(V, B, ps, j_max)
    lookup = {round(p / b * 2 ** 20): i for i, p in enumerate(ps)}
    u = np.empty((ps.size, M), dtype=complex)
    du = np.empty((ps.size, M), dtype=complex)
    errors = []
    for i, p in enumerate(ps):
        try:
            u[i], du[i] = periodic_part_on_grid(V, B, p, M)
        except Exception as exc:  # collected and re-raised with locations
            errors.append(f"p[{i}] = {p!r}: {exc}")
    if errors:
        raise RuntimeError("coupling table failed at:\n  " + "\n  ".join(errors))
    x = np.arange(M) * (a / M)
    nj = 2 * j_max + 1
    C = np.full((ps.size, nj), np.nan + 0j)
    partner = np.full((ps.size, nj), -1, dtype=np.int64)
    for jj, j in enumerate(range(-j_max, j_max + 1)):
        phase = np.exp(-1j * j * b * x)
        for i, p in enumerate(ps):
            i2 = lookup.get(round((p - j * b) / b * 2 ** 20))
            if i2 is None:
                continue
            partner[i, jj] = i2
            C[i, jj] = 1j * np.sum(np.conj(u[i]) * du[i2] * phase) * (a / M)
    # columns without any partner inside the grid carry no information
    mags = np.array([np.nanmax(np.abs(C[:, j_max + j])) if np.any(np.isfinite(C[:, j_max + j])) else np.nan
                     for j in range(1, j_max + 1)])
    rate = fit_decay(mags)
    R_eff = rate / b
    finite = np.nonzero(np.isfinite(mags))[0]
    if finite.size == 0:
        tail = np.inf
    elif np.isfinite(rate) and rate > 0:
        r = np.exp(-rate)
        last = finite[-1]
        tail = 2 * mags[last] * r ** (j_max - 1 - last) * r / (1 - r)
    else:
        tail = 0.0 if np.all(mags[finite] == 0) else np.inf
    k_index = np.nonzero(np.abs(ps) < b / 2)[0]
    return CouplingTable(ps, j_max, C, partner, M, R_eff, float(tail), k_index)


def suggest_j_max(V: PeriodicPotential, B: BandStructure, p_grid: np.ndarray, tol: float = 1e-8,
                  probe: int = 6) -> int:
    """Smallest j_max whose fitted tail sum falls below ``tol``."""
    T = build_coupling_table(V, B, p_grid, probe)
    mags = np.array([np.nanmax(np.abs(T.column(j))) if np.any(np.isfinite(T.column(j))) else np.nan
                     for j in range(1, probe + 1)])
    rate = fit_decay(mags)
    if not np.isfinite(rate):
        return 1
    r = np.exp(-rate)
    for jm in range(1, 200):
        ref = mags[min(jm, probe) - 1] * r ** max(jm - probe, 0)
        if 2 * ref * r / (1 - r) < tol:
            return jm
    return 200
