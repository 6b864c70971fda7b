"""Wannier-Stark ladders and resonances in the crystal-momentum representation.

Discretization
--------------
The cut real line is split into half-cells [m b/2, (m+1) b/2]. Each is an
element carrying Gauss-Legendre nodes (optionally split into several equal
sub-elements). Cut points are element boundaries and never nodes, so the two
one-sided limits at a cut are the traces of the neighbouring elements. The
pattern repeats from cell to cell, so p - jb of a node is again a node and
the coupling terms are exact matrix entries.

d/dp is discretized elementwise with a central numerical flux. In the
quadrature-weighted inner product this is exactly skew-adjoint, so the
undistorted operator becomes a Hermitian matrix after the similarity
W^{1/2} . W^{-1/2}: its eigenvalues are real up to rounding and up to the
accuracy of the symmetry C_j(p) = conj(C_{-j}(p - jb)).

Topology
--------
Gamma_1 = (-b/2, b/2) is closed into a ring. On Gamma_c each band is a ring
of its own: at every open cut 2 <= m <= j_max the band is glued to itself
across the zone (m b/2 - 0 ~ -m b/2 + 0 and its mirror), which is adiabatic
following, and the neighbouring band is reached only through the coupling
spike C_{+-m} that sits at that cut. Closed gaps, and cuts beyond j_max whose
spikes are not kept, are passed along p instead. Bands above the last
resolved cut share one ring closed at +-p_max, behind an optional absorbing
ramp -i Gamma(p). Without coupling (eta = 0) all of Gamma_c is one such line.

Half-cells with the same parity share one node template, graded towards the
cuts (sinh clustering) and split so that no element is longer than
h_max b. The operator is stored sparse; eigenvalues near a target come from
shift-invert Arnoldi unless the matrix is small enough for a dense solve.
"""

from __future__ import annotations

import logging
import warnings
from functools import lru_cache
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from numpy.polynomial import chebyshev as cheb

from .bands import GAP_CLOSED_RTOL, BandStructure, band_edges, band_function, multisheeted_E
from .bloch import current_phase_convention, identification_phase, periodic_part_on_grid
from .cmr import CouplingTable, pick_nodes
from .potential import PeriodicPotential

log = logging.getLogger(__name__)


class StarkError(RuntimeError):
    """Raised for invalid Stark-problem input or failed eigenvalue selection."""


# ---------------------------------------------------------------------------
# band-1 profile: E_1(k) and X_11(k) as Chebyshev series on the zone

@dataclass(frozen=True)
class Band1Profile:
    """Chebyshev interpolants of E_1(k) and X_11(k) on [-b/2, b/2].

    X_11 is taken in the gauge that is periodic over the zone (see
    ``zak_shift``), so its mean carries the Berry phase of band 1.
    """

    b: float
    E1: np.ndarray   # Chebyshev coefficients
    X11: np.ndarray

    def _x(self, k):
        return np.asarray(k, dtype=float) / (self.b / 2)

    def energy(self, k):
        return cheb.chebval(self._x(k), self.E1)

    def berry(self, k):
        return cheb.chebval(self._x(k), self.X11)

    def mean(self, coeffs) -> float:
        # (1/b) int over the zone = (1/2) int_{-1}^{1} in the scaled variable
        integ = cheb.chebint(coeffs, lbnd=-1)
        return float(0.5 * cheb.chebval(1.0, integ))


_PROFILE_CACHE: dict = {}


def _x11_at(V, B, k, M):
    u, du = periodic_part_on_grid(V, B, float(k), M)
    return float((1j * np.sum(np.conj(u) * du) * V.period / M).real)


def band1_profile(V: PeriodicPotential, B: BandStructure, M: int = 64, tol: float = 1e-11) -> Band1Profile:
    """Interpolate E_1 and X_11 at Chebyshev points, doubling the degree until the tail is below ``tol``."""
    key = (id(V), id(B), M, current_phase_convention())
    hit = _PROFILE_CACHE.get(key)
    if hit is not None:
        return hit
    b = V.b
    deg = 32
    while True:
        xs = cheb.chebpts2(deg + 1)
        ks = xs * b / 2
        e = np.array([band_function(B, 1, k) for k in ks])
        # the zone ends carry the double point; evaluate just inside
        kin = np.clip(ks, -b / 2 * (1 - 1e-9), b / 2 * (1 - 1e-9))
        x = np.array([_x11_at(V, B, k, M) for k in kin])
        ce = cheb.chebfit(xs, e, deg)
        cx = cheb.chebfit(xs, x, deg)
        scale = max(1.0, np.max(np.abs(ce)))
        if (np.max(np.abs(ce[-4:])) < tol * scale and np.max(np.abs(cx[-4:])) < tol * max(1.0, np.max(np.abs(cx)))) \
                or deg >= 512:
            break
        deg *= 2
    cx = cx.copy()
    cx[0] += zak_shift(V, B)
    prof = Band1Profile(b, ce, cx)
    _PROFILE_CACHE[key] = prof
    return prof


# ---------------------------------------------------------------------------
# decoupled band-1 problem

@dataclass(frozen=True)
class LadderSpectrum:
    """Eigenvalues E_{1,j} = mean(E_1) + F mean(X_11) + j F a of the decoupled band-1 operator."""

    F: float
    a: float
    mean_band_energy: float
    mean_X11: float
    j_window: tuple[int, int]

    @property
    def E10(self) -> float:
        return self.mean_band_energy + self.F * self.mean_X11

    @property
    def spacing(self) -> float:
        return self.F * self.a

    def level(self, j: int) -> float:
        return self.E10 + j * self.F * self.a

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.j_window[0], self.j_window[1] + 1)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.E10 + self.indices * (self.F * self.a)


def _table_nodes(table: CouplingTable | None) -> int:
    return table.nodes if table is not None else 64


def ladder(V: PeriodicPotential, B: BandStructure, table: CouplingTable | None, F: float,
           j_window: tuple[int, int] = (-3, 3)) -> LadderSpectrum:
    """Ladder of the decoupled first band at field ``F``."""
    if not F > 0:
        raise StarkError("F must be positive")
    if not B.gap_open(1):
        raise StarkError("the first gap is closed; band 1 has no ladder of its own")
    prof = band1_profile(V, B, _table_nodes(table))
    return LadderSpectrum(float(F), V.period, prof.mean(prof.E1), prof.mean(prof.X11), tuple(j_window))


def _phase_series(prof: Band1Profile, F: float, shift: float) -> np.ndarray:
    """Chebyshev series (scaled variable) of int_{-b/2}^k [E_1 + F X_11 - shift] dq."""
    c = prof.E1 + F * prof.X11
    c = c.copy()
    c[0] -= shift
    return cheb.chebint(c, lbnd=-1) * (prof.b / 2)


def ladder_eigenvector(V: PeriodicPotential, B: BandStructure, table: CouplingTable | None, F: float,
                       j: int, k) -> np.ndarray:
    """psi_{1,j}(k) = b^{-1/2} exp((i/F) int_{-b/2}^k [E_1 + F X_11 - E_{1,j}] dq).

    The sign of the exponent is the one that solves
    (iF d/dk + E_1 + F X_11 - E_{1,j}) psi = 0, the operator that
    ``resolvent_H1`` inverts.
    """
    prof = band1_profile(V, B, _table_nodes(table))
    L = ladder(V, B, table, F, (j, j))
    phase = _phase_series(prof, F, L.level(j))
    x = np.asarray(k, dtype=float) / (V.b / 2)
    return np.exp(1j / F * cheb.chebval(x, phase)) / np.sqrt(V.b)


def _cheb_adapt(f, tol=1e-13, deg0=64, deg_max=8192):
    deg = deg0
    while True:
        xs = cheb.chebpts2(deg + 1)
        c = cheb.chebfit(xs, f(xs), deg)
        if np.max(np.abs(c[-6:])) <= tol * max(1.0, np.max(np.abs(c))) or deg >= deg_max:
            return c
        deg *= 2


def resolvent_H1(V: PeriodicPotential, B: BandStructure, table: CouplingTable | None, F: float, z: complex,
                 rhs, k=None):
    """Apply (iF d/dk + E_1 + F X_11 - z)^{-1} to ``rhs`` with periodic conditions on the zone.

    Parameters
    ----------
    rhs : callable
        Vectorized function of k on [-b/2, b/2].
    k : array_like, optional
        Where to return the result. Without it a callable is returned.

    Raises
    ------
    StarkError
        When z is (numerically) a ladder eigenvalue.
    """
    prof = band1_profile(V, B, _table_nodes(table))
    b = V.b
    L = ladder(V, B, table, F, (0, 0))
    denom = 1.0 - np.exp(1j * b * (complex(z) - L.E10) / F)
    if abs(denom) < 1e-12:
        raise StarkError(f"z = {z} is a ladder eigenvalue (denominator {abs(denom):.1e})")
    phi_c = _phase_series(prof, F, 0.0).astype(complex)
    phi_c[:2] += -complex(z) * (b / 2) * np.array([1.0, 1.0])  # -z (k + b/2) in the scaled variable
    Phi = lambda x: cheb.chebval(x, phi_c)  # noqa: E731
    g = _cheb_adapt(lambda x: np.exp(-1j / F * Phi(x)) * rhs(x * b / 2))
    G = cheb.chebint(g, lbnd=-1) * (b / 2)
    GB = cheb.chebval(1.0, G)

    def result(kk):
        x = np.asarray(kk, dtype=float) / (b / 2)
        return -1j / F * np.exp(1j / F * Phi(x)) * (cheb.chebval(x, G) - GB / denom)

    return result if k is None else result(k)


# ---------------------------------------------------------------------------
# grid on the cut line

@dataclass(frozen=True)
class GridParams:
    """Discretization of Gamma_1 + Gamma_c.

    Attributes
    ----------
    p_max : float or None
        Truncation of Gamma_c; ``None`` means 4b. Must be a multiple of b/2.
    nodes : int
        Gauss nodes per element.
    sigma_step : float
        Length of clustered sub-elements in the stretched variable.
    h_max : float or None
        Longest element in p, in units of b; ``None`` means 1/20, or
        min(1/20, F/2) once a field is fixed by ``for_field``. Weak
        couplings between distant bands oscillate like exp(i dE p / F), so
        the element length has to shrink with F.
    j_max : int
        Largest |j| coupling kept.
    absorber : float
        Peak of the absorbing ramp, in units of F.
    absorber_fraction : float
        Part of each half of Gamma_c covered by the ramp.
    cluster : bool
        Grade the mesh toward open-gap cuts.
    """

    p_max: float | None = None
    nodes: int = 12
    sigma_step: float = 1.5
    h_max: float | None = None
    j_max: int = 3
    absorber: float = 40.0
    absorber_fraction: float = 0.1
    cluster: bool = True

    def for_field(self, F: float) -> "GridParams":
        """Copy with the default h_max resolved for field F."""
        if self.h_max is not None:
            return self
        return replace(self, h_max=min(0.05, 0.5 * float(F)))

    def resolved_h_max(self) -> float:
        return 0.05 if self.h_max is None else float(self.h_max)

    def resolved_p_max(self, b: float) -> float:
        return 4 * b if self.p_max is None else float(self.p_max)

    def to_dict(self, b: float) -> dict:
        return {"p_max": self.resolved_p_max(b), "nodes": self.nodes, "sigma_step": self.sigma_step,
                "h_max": self.resolved_h_max(),
                "j_max": self.j_max, "absorber": self.absorber, "absorber_fraction": self.absorber_fraction,
                "cluster": self.cluster}


@lru_cache(maxsize=64)
def _gauss(n: int):
    t, w = np.polynomial.legendre.leggauss(n)
    lam = np.array([1.0 / np.prod(t[i] - np.delete(t, i)) for i in range(n)])
    D = np.zeros((n, n))
    for i in range(n):
        for k in range(n):
            if i != k:
                D[i, k] = lam[k] / lam[i] / (t[i] - t[k])
        D[i, i] = -np.sum(D[i])
    Vm = np.polynomial.legendre.legvander(t, n - 1)
    # running integrals int_{-1}^{t_i} of the Lagrange basis
    Vi = np.empty_like(Vm)
    for k in range(n):
        c = np.zeros(n)
        c[k] = 1.0
        Vi[:, k] = np.polynomial.legendre.legval(t, np.polynomial.legendre.legint(c, lbnd=-1))
    Int = Vi @ np.linalg.inv(Vm)
    return t, w, lam, D, _bary(t, lam, -1.0), _bary(t, lam, 1.0), Int


def _bary(t, lam, x):
    d = x - t
    hit = np.abs(d) < 1e-14
    if hit.any():
        out = np.zeros_like(t)
        out[np.argmax(hit)] = 1.0
        return out
    c = lam / d
    return c / c.sum()


@dataclass(frozen=True)
class _Element:
    """Gauss element on [lo, hi]; ``kind`` "left"/"right" stretches toward a cut at ``c``.

    Stretched elements use p = c +- w sinh(sigma) with sigma uniform over
    [s0, s1], so that features of width w at the cut are resolved.
    """

    start: int
    n: int
    lo: float
    hi: float
    kind: str = "plain"
    c: float = 0.0
    w: float = 1.0
    s0: float = 0.0
    s1: float = 0.0

    def map(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "plain":
            return self.lo + (t + 1) * (self.hi - self.lo) / 2, np.full(t.shape, (self.hi - self.lo) / 2)
        ds = (self.s1 - self.s0) / 2
        if self.kind == "left":
            sig = self.s0 + (t + 1) * ds
            return self.c + self.w * np.sinh(sig), self.w * np.cosh(sig) * ds
        sig = self.s1 - (t + 1) * ds
        return self.c - self.w * np.sinh(sig), self.w * np.cosh(sig) * ds

    @property
    def sl(self) -> slice:
        return slice(self.start, self.start + self.n)


@dataclass(frozen=True, eq=False)
class CutGrid:
    """Nodes, quadrature weights and ring structure. Gamma_1 nodes come first.

    ``rings[0]`` is Gamma_1; the remaining rings make up Gamma_c, each a
    tuple of elements in ring order. A ring follows p upward through its
    half-cells and jumps where two traces are identified: at a resolved
    open-gap cut the band is continued adiabatically (m b/2 - 0 with
    -m b/2 + 0, and -m b/2 - 0 with m b/2 + 0), elsewhere p simply runs on.
    With every interior gap resolved there is one ring per band.
    ``line_rings`` is the same element set with Gamma_c as a single ring
    that runs on along p through all cuts except +-b/2, the topology of the
    decoupled problem. ``halfcells`` maps m to its elements. Node i lies in half-cell ``cell[i]`` (the interval
    [m b/2, (m+1) b/2]) at position ``local[i]`` of that half-cell's
    template. Half-cells m and m + 2 share one template, so p - jb of a node
    is the node (cell - 2j, local). ``widths`` maps a cut index m to the
    two-level spike width at m b/2; ``class_widths`` holds the stretch width
    actually used toward even (key 0) and odd (key 1) cuts.
    """

    p: np.ndarray
    w: np.ndarray
    n1: int
    rings: tuple
    b: float
    p_max: float
    widths: dict
    class_widths: dict
    adiabatic: frozenset
    line_rings: tuple = field(repr=False)
    halfcells: dict = field(repr=False)
    cell: np.ndarray = field(repr=False)
    local: np.ndarray = field(repr=False)
    index: dict = field(repr=False)

    def shifted(self, i: int, j: int) -> int | None:
        """Index of the node at p_i - j b, or None when it is off the grid."""
        return self.index.get((int(self.cell[i]) - 2 * j, int(self.local[i])))


def gap_width(B: BandStructure, m: int) -> float:
    """Width of gap m (0.0 when closed), computing high bands on demand."""
    if m <= B.n_max:
        return float(B.gaps[m - 1][2])
    top = band_edges(B, m)[1]
    width = band_edges(B, m + 1)[0] - top
    return float(width) if width >= GAP_CLOSED_RTOL * max(1.0, abs(top)) else 0.0


#: a cut is graded unless its coupling spike is this much narrower than the plain node spacing
CLUSTER_FLOOR = 1e-6


def _cut_widths(B: BandStructure, P: int, params: GridParams) -> dict:
    """Spike width per cut index, from the two-level estimate gap / (4 |p_cut|)."""
    half = B.b / 2
    L = half / 2
    t, *_ = _gauss(params.nodes)
    d_min = L * (1 - t[-1]) / 2
    out = {}
    if not params.cluster:
        return out
    # the spike at cut m sits in C_{+-m}; beyond j_max it is not represented
    for m in range(1, min(P, params.j_max) + 1):
        g = gap_width(B, m)
        if g <= 0:
            continue
        w = g / (4 * m * half)
        if w >= CLUSTER_FLOOR * d_min and w < L:
            out[m] = w
    return out


def _class_widths(widths: dict) -> dict:
    # b-periodicity ties every even cut to p = 0 and every odd cut to b/2, so
    # each class is graded down to its narrowest spike; the geometric sinh
    # grading then resolves all wider ones as well
    out = {}
    for parity in (0, 1):
        ws = [w for m, w in widths.items() if m % 2 == parity]
        out[parity] = min(ws) if ws else None
    return out


def _half_cell(m: int, half: float, wclass: dict, params: GridParams, start: int):
    lo, hi = m * half, (m + 1) * half
    mid = 0.5 * (lo + hi)
    h = params.resolved_h_max() * 2 * half
    els = []
    n = params.nodes
    for side, (a0, a1), cut in (("left", (lo, mid), m), ("right", (mid, hi), m + 1)):
        w = wclass.get(cut % 2)
        L = a1 - a0
        if w is None:
            k = max(1, int(np.ceil(L / h - 1e-9)))
            edges = np.linspace(a0, a1, k + 1)
            for e_lo, e_hi in zip(edges[:-1], edges[1:]):
                els.append(_Element(start, n, float(e_lo), float(e_hi)))
                start += n
            continue
        smax = float(np.arcsinh(L / w))
        k = max(1, int(np.ceil(smax / params.sigma_step)))
        coarse = np.linspace(0.0, smax, k + 1)
        sig = [0.0]
        for s0, s1 in zip(coarse[:-1], coarse[1:]):
            # split in sigma until no piece is longer than h in p
            length = w * (np.sinh(s1) - np.sinh(s0))
            parts = max(1, int(np.ceil(length / h - 1e-9)))
            sig.extend(np.linspace(s0, s1, parts + 1)[1:])
        sig = np.array(sig)
        k = sig.size - 1
        c = cut * half
        pieces = []
        for i in range(k):
            if side == "left":
                e_lo = c if i == 0 else c + w * np.sinh(sig[i])
                e_hi = a1 if i == k - 1 else c + w * np.sinh(sig[i + 1])
                pieces.append(("left", e_lo, e_hi, sig[i], sig[i + 1]))
            else:
                e_hi = c if i == 0 else c - w * np.sinh(sig[i])
                e_lo = a0 if i == k - 1 else c - w * np.sinh(sig[i + 1])
                pieces.append(("right", e_lo, e_hi, sig[i], sig[i + 1]))
        if side == "right":
            pieces.reverse()
        for kind, e_lo, e_hi, s0, s1 in pieces:
            els.append(_Element(start, n, float(e_lo), float(e_hi), kind, float(c), float(w), float(s0), float(s1)))
            start += n
    return els, start


def _adiabatic_cuts(B: BandStructure, P: int, params: GridParams, widths: dict) -> set:
    """Cuts 2..P-1 whose coupling spike is resolved, so that bands are glued adiabatically there.

    A closed gap has no spike, a spike far below the node spacing is passed
    diabatically, and so is one at m > j_max, whose coupling C_{+-m} is not
    kept; all of these are continued along p instead.
    """
    half = B.b / 2
    out = set()
    for m in range(2, min(P, params.j_max + 1)):
        if m in widths:
            out.add(m)
            continue
        g = gap_width(B, m)
        if g > 0 and g / (4 * m * half) >= half / 2:
            out.add(m)
    return out


def _gamma_c_rings(P: int, adiabatic: set) -> list:
    """Half-cell sequences of the Gamma_c rings."""

    def nxt(m):
        if m >= 1:
            c = m + 1
            if c == P:
                return -P
            return -c if c in adiabatic else m + 1
        c = -(m + 1)
        if c == 1 or c in adiabatic:
            return c
        return m + 1

    todo = [m for m in range(-P, P) if m not in (-1, 0)]
    seen, rings = set(), []
    for start in sorted(todo, key=lambda m: (abs(m + 0.5), m)):
        if start in seen:
            continue
        # begin each ring at its innermost positive half-cell
        ring, m = [], start
        while m not in seen:
            seen.add(m)
            ring.append(m)
            m = nxt(m)
        k = min(range(len(ring)), key=lambda i: (ring[i] < 0, abs(ring[i])))
        rings.append(ring[k:] + ring[:k])
    return rings


_GRID_CACHE: dict = {}


def make_grid(B: BandStructure, params: GridParams) -> CutGrid:
    """Nodes on Gamma_1 + Gamma_c, graded toward open-gap cuts and invariant under p -> p + b."""
    key = (id(B), params)
    hit = _GRID_CACHE.get(key)
    if hit is not None and hit[0] is B:
        return hit[1]
    b = B.b
    half = b / 2
    p_max = params.resolved_p_max(b)
    P = int(round(p_max / half))
    if abs(P * half - p_max) > 1e-12 * p_max or P < 3:
        raise StarkError("p_max must be a multiple of b/2 and at least 3b/2")
    widths = _cut_widths(B, P, params)
    wclass = _class_widths(widths)
    adiabatic = _adiabatic_cuts(B, P, params, widths)
    rings, idx = [], 0
    cells, locals_ = [], []
    halfcells = {}
    for ring_cells in [[-1, 0]] + _gamma_c_rings(P, adiabatic):
        ring = []
        for m in ring_cells:
            first = idx
            els, idx = _half_cell(m, half, wclass, params, idx)
            halfcells[m] = tuple(els)
            ring.extend(els)
            cells.append(np.full(idx - first, m))
            locals_.append(np.arange(idx - first))
        rings.append(tuple(ring))
    ps, ws = [], []
    t, wt, *_ = _gauss(params.nodes)
    for ring in rings:
        for el in ring:
            p, J = el.map(t)
            ps.append(p)
            ws.append(wt * J)
    n1 = sum(el.n for el in rings[0])
    cell = np.concatenate(cells)
    local = np.concatenate(locals_)
    index = {(int(m), int(l)): i for i, (m, l) in enumerate(zip(cell, local))}
    line_c = [el for m in list(range(-P, -1)) + list(range(1, P)) for el in halfcells[m]]
    line_rings = (rings[0], tuple(line_c))
    grid = CutGrid(np.concatenate(ps), np.concatenate(ws), n1, tuple(rings), b, p_max, widths, wclass,
                   frozenset(adiabatic), line_rings, halfcells, cell, local, index)
    _GRID_CACHE[key] = (B, grid)
    return grid


def derivative_matrix(grid: CutGrid, links: dict | None = None, rings: tuple | None = None) -> scipy.sparse.csr_matrix:
    """Central-flux discontinuous-Galerkin d/dp on the rings of the grid (strong form, sparse).

    ``links[(r, e)]`` multiplies the trace that element e of ring r receives
    from its right neighbour; the neighbour receives the reciprocal.
    ``rings`` defaults to ``grid.rings``.
    """
    links = links or {}
    rings = grid.rings if rings is None else rings
    N = grid.p.size
    rows, cols, vals = [], [], []

    def put(rs, cs, block):
        rr, cc = np.meshgrid(np.arange(rs.start, rs.stop), np.arange(cs.start, cs.stop), indexing="ij")
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        vals.append(np.asarray(block, dtype=complex).ravel())

    for r, ring in enumerate(rings):
        m = len(ring)
        for e, el in enumerate(ring):
            t, _, _, D0, lL, lR, _ = _gauss(el.n)
            sl = el.sl
            _, J = el.map(t)
            winv = 1.0 / grid.w[sl]
            put(sl, sl, D0 / J[:, None] + winv[:, None] * (-0.5 * np.outer(lR, lR) + 0.5 * np.outer(lL, lL)))
            right = ring[(e + 1) % m]
            left = ring[(e - 1) % m]
            g_right = links.get((r, e), 1.0)
            g_left = 1.0 / links.get((r, (e - 1) % m), 1.0)
            rL = _gauss(right.n)[4]
            qR = _gauss(left.n)[5]
            put(sl, right.sl, g_right * winv[:, None] * (0.5 * np.outer(lR, rL)))
            put(sl, left.sl, g_left * winv[:, None] * (-0.5 * np.outer(lL, qR)))
    return scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)).tocsr()


def _cell_integral(grid: CutGrid, f: np.ndarray):
    """S(p) = int f from the lower end of each half-cell, and the totals per half-cell."""
    S = np.zeros(f.shape, dtype=float)
    totals = {}
    for m, els in grid.halfcells.items():
        acc = 0.0
        for el in els:
            t, wt, _, _, _, _, Int = _gauss(el.n)
            fe = f[el.sl] * el.map(t)[1]
            S[el.sl] = acc + Int @ fe
            acc += float(wt @ fe)
        totals[m] = acc
    return S, totals


# ---------------------------------------------------------------------------
# couplings on a grid

@dataclass(frozen=True, eq=False)
class GridCouplings:
    """Energies, phases and coupling entries on a ``CutGrid``.

    ``entries[j]`` is a pair of index arrays (rows, partners) and the values
    C_j(p_row), where partner is the node at p_row - jb. ``S`` is the running
    integral of E from the lower end of each half-cell, ``S_cell`` its
    total over each half-cell.
    """

    grid: CutGrid
    j_max: int
    E: np.ndarray
    C0: np.ndarray
    S: np.ndarray
    S_cell: dict
    entries: dict
    nodes: int

    def hermiticity_defect(self) -> float:
        """max |C_j(p) - conj(C_{-j}(p - jb))| over all stored pairs."""
        worst = 0.0
        for j, (ri, ci, C) in self.entries.items():
            back = self.entries.get(-j)
            if back is None:
                continue
            lookup = {(int(r), int(c)): v for r, c, v in zip(*back)}
            for r, c, v in zip(ri, ci, C):
                u = lookup.get((int(c), int(r)))
                if u is not None:
                    worst = max(worst, abs(v - np.conj(u)))
        return worst


_COUPLING_CACHE: dict = {}


def grid_couplings(V: PeriodicPotential, B: BandStructure, params: GridParams) -> GridCouplings:
    """Evaluate Bloch data at every node and the couplings C_j(p) = i alpha_j(p, p - jb)."""
    key = (id(V), id(B), params, current_phase_convention())
    hit = _COUPLING_CACHE.get(key)
    if hit is not None and hit[0] is B:
        return hit[1]
    grid = make_grid(B, params)
    b, a = V.b, V.period
    ps = grid.p
    j_max = params.j_max
    if grid.p_max < (j_max + 0.5) * b - 1e-12:
        raise StarkError(f"p_max = {grid.p_max} cannot hold couplings up to j_max = {j_max}")
    M = pick_nodes(V, B, ps, j_max)
    U = np.empty((ps.size, M), dtype=complex)
    dU = np.empty((ps.size, M), dtype=complex)
    for i, p in enumerate(ps):
        U[i], dU[i] = periodic_part_on_grid(V, B, float(p), M)
    E = np.array([multisheeted_E(B, float(p)) for p in ps])
    x = np.arange(M) * (a / M)
    C0 = (1j * np.sum(np.conj(U) * dU, axis=1) * (a / M)).real
    entries = {}
    for j in range(-j_max, j_max + 1):
        if j == 0:
            continue
        pairs = [(i, k) for i in range(ps.size) if (k := grid.shifted(i, j)) is not None]
        ri = np.array([r for r, _ in pairs], dtype=np.int64)
        ci = np.array([c for _, c in pairs], dtype=np.int64)
        phase = np.exp(-1j * j * b * x)
        C = 1j * np.sum(np.conj(U[ri]) * dU[ci] * phase, axis=1) * (a / M)
        entries[j] = (ri, ci, C)
    S, S_cell = _cell_integral(grid, E)
    out = GridCouplings(grid, j_max, E, C0, S, S_cell, entries, M)
    _COUPLING_CACHE[key] = (B, out)
    return out


# ---------------------------------------------------------------------------
# distorted operator

#: below this size eigenvalue problems are solved densely
DENSE_LIMIT = 1500


@dataclass(frozen=True, eq=False)
class DistortedOperator:
    """Sparse matrix of the distorted operator on the nodes of Gamma_1 + Gamma_c.

    On Gamma_1 the unknowns are nodal values of psi_1. On Gamma_c they are
    g = exp(-i S(p)/F) psi_c with S the running integral of E(p); this
    diagonal unitary change of variables removes the fast phase that E(p)/F
    imposes and leaves a slowly varying envelope. ``symmetric_form()``
    returns W^{1/2} A W^{-1/2}, Hermitian up to rounding for theta = 0
    without absorber.
    """

    theta: complex
    F: float
    eta: float
    N_cut: int
    p_max: float
    grid: CutGrid
    matrix: scipy.sparse.csr_matrix
    absorber: np.ndarray = field(repr=False)

    @property
    def n1(self) -> int:
        return self.grid.n1

    @property
    def size(self) -> int:
        return self.grid.p.size

    def symmetric_form(self) -> scipy.sparse.csr_matrix:
        s = np.sqrt(self.grid.w)
        return (scipy.sparse.diags(s) @ self.matrix @ scipy.sparse.diags(1.0 / s)).tocsr()

    def dense(self) -> np.ndarray:
        return self.symmetric_form().toarray()

    def eigvals(self) -> np.ndarray:
        """All eigenvalues (dense)."""
        return scipy.linalg.eigvals(self.dense(), check_finite=False, overwrite_a=True)

    def eig(self):
        """All eigenpairs of the symmetric form (dense)."""
        return scipy.linalg.eig(self.dense(), check_finite=False, overwrite_a=True)

    def eigs_near(self, center: complex, radius: float, k0: int = 24):
        """Every eigenpair within ``radius`` of ``center``.

        Shift-invert Arnoldi at ``center``; the number of requested pairs is
        doubled until the farthest one found lies outside the disc.
        """
        A = self.symmetric_form()
        N = A.shape[0]
        if N <= DENSE_LIMIT:
            vals, vecs = self.eig()
        else:
            k = min(k0, N - 2)
            while True:
                vals, vecs = scipy.sparse.linalg.eigs(A, k=k, sigma=complex(center), which="LM")
                if np.max(np.abs(vals - center)) > radius or k >= N - 2:
                    break
                k = min(2 * k, N - 2)
        keep = np.abs(vals - center) <= radius
        return vals[keep], vecs[:, keep]

    def blocks(self):
        n1 = self.n1
        A = self.matrix
        return A[:n1, :n1], A[:n1, n1:], A[n1:, :n1], A[n1:, n1:]


def _links(V, B, grid: CutGrid, T: GridCouplings, F: float, theta: complex, rings: tuple) -> dict:
    """Trace factors between consecutive half-cells of every ring.

    At an identification p_L ~ p_R the Bloch functions satisfy
    phi(p_L) = r phi(p_R) with r from ``identification_phase``. The state
    is continuous, so psi(p_L) = conj(r) psi(p_R). On Gamma_c the
    unknown is g = G psi with G(p) = exp(-i S(p)/F + i p theta), which adds
    G(p_L)/G(p_R) at every half-cell boundary. The outer closure at
    +-p_max is artificial. It takes the theta factor that makes the total
    twist of its ring unitary, so a truncated line keeps the spectrum of an
    unbounded one; it sits behind the absorber.
    """
    half = grid.b / 2
    links = {}
    for r, ring in enumerate(rings):
        twist = 0.0
        closure = None
        for e, el in enumerate(ring):
            nxt = ring[(e + 1) % len(ring)]
            m = int(grid.cell[el.start])
            if grid.cell[nxt.start] == m and nxt.start > el.start:
                continue
            f = 1.0 + 0j
            if r > 0:
                f *= np.exp(-1j * T.S_cell[m] / F)
            if abs(el.hi) > grid.p_max - 1e-9 * half:
                closure = (r, e)
            elif abs(el.hi - nxt.lo) > 1e-9 * half:
                cut = int(round(abs(el.hi) / half))
                f *= np.conj(identification_phase(V, B, cut, upper=el.hi < 0))
                if r > 0:
                    f *= np.exp(1j * (el.hi - nxt.lo) * theta)
                    twist += el.hi - nxt.lo
            links[(r, e)] = f
        if closure is not None:
            links[closure] *= np.exp(-1j * twist * theta)
    return {k: f for k, f in links.items() if f != 1.0}


def zak_shift(V: PeriodicPotential, B: BandStructure) -> float:
    """Constant added to X_11 to pass to the gauge that is periodic over the zone.

    The band-1 Bloch functions at k = b/2 and k = -b/2 differ by a unit
    factor r; the periodic gauge u -> exp(-i arg(r) (k + b/2) / b) u shifts
    X_11 by arg(r) / b, with arg in (-pi, pi]. For even V, r = +-1 and the
    shift is a/2 or 0.
    """
    r = identification_phase(V, B, 1, upper=False)
    return float(np.angle(r) / V.b)


def assemble_distorted(
    V: PeriodicPotential,
    B: BandStructure,
    table: GridCouplings | None,
    F: float,
    theta: complex,
    eta: float,
    grid_params: GridParams | None = None,
    N_cut: int = 1,
    absorber: bool = True,
) -> DistortedOperator:
    """Assemble the truncated distorted operator.

    Rows on Gamma_1 carry iF d/dp + E(p) + F C_0(p) and eta K_1c; rows on
    Gamma_c carry iF d/dp + E(p) + F C_0(p) + F theta (- i Gamma_abs) plus
    eta (K_c1 + K_cc). Entries of K are C_j(p) times exp(-i(p-bj)theta)
    (K_1c), exp(ip theta) (K_c1) and exp(ijb theta) (K_cc). At the open
    cuts 2 <= m <= j_max, whose spikes C_{+-m} are kept, the derivative
    moves from continuation along p (eta = 0) to the adiabatic
    identification of the bands (eta = F) in proportion to eta.

    Raises
    ------
    StarkError
        theta outside -R < Im theta <= 0, eta outside [0, F], or p_max too
        small for j_max.
    NotImplementedError
        N_cut other than 1.
    """
    if N_cut != 1:
        raise NotImplementedError("only N_cut = 1 is implemented")
    theta = complex(theta)
    if not (-V.R < theta.imag <= 0):
        raise StarkError(f"Im theta = {theta.imag} outside (-R, 0] with R = {V.R}")
    if not F > 0:
        raise StarkError("F must be positive")
    if not 0 <= eta <= F * (1 + 1e-12):
        raise StarkError("eta must lie in [0, F]")
    params = grid_params or GridParams()
    b = V.b
    if params.resolved_p_max(b) < (params.j_max + 0.5) * b - 1e-12:
        raise StarkError(f"p_max = {params.resolved_p_max(b)} cannot hold couplings up to j_max = {params.j_max}")
    T = table if table is not None else grid_couplings(V, B, params)
    grid = T.grid
    N, n1 = grid.p.size, grid.n1
    D = derivative_matrix(grid, _links(V, B, grid, T, F, theta, grid.rings))
    if grid.adiabatic:
        # without coupling the higher cuts are passed along p; the switch to
        # the adiabatic identification belongs to the coupling and is scaled
        # with it, so eta = 0 gives the decoupled problem
        D_line = derivative_matrix(grid, _links(V, B, grid, T, F, theta, grid.line_rings), grid.line_rings)
        D = D_line + (eta / F) * (D - D_line)
    A = (1j * F) * D
    diag = (F * T.C0).astype(complex)
    diag[:n1] += T.E[:n1]
    diag[n1:] += F * theta
    gamma = np.zeros(N)
    if absorber and params.absorber > 0:
        pc = np.abs(grid.p[n1:])
        start = grid.p_max - params.absorber_fraction * (grid.p_max - b / 2)
        ramp = np.clip((pc - start) / (grid.p_max - start), 0.0, None)
        gamma[n1:] = params.absorber * F * ramp ** 2
    diag -= 1j * gamma
    A = A + scipy.sparse.diags(diag)
    if eta != 0:
        S = T.S
        rows, cols, vals = [], [], []
        for j, (ri, ci, C) in T.entries.items():
            p, q = grid.p[ri], grid.p[ci]
            row_c, col_c = ri >= n1, ci >= n1
            ph = np.zeros(ri.size, dtype=complex)
            m = ~row_c & col_c
            ph[m] = np.exp(-1j * q[m] * theta)
            m = row_c & ~col_c
            ph[m] = np.exp(1j * p[m] * theta)
            m = row_c & col_c
            ph[m] = np.exp(1j * j * b * theta)
            ph = ph * np.where(col_c, np.exp(1j * S[ci] / F), 1.0) * np.where(row_c, np.exp(-1j * S[ri] / F), 1.0)
            rows.append(ri)
            cols.append(ci)
            vals.append(eta * C * ph)
        K = scipy.sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                    shape=(N, N))
        A = A + K.tocsr()
    return DistortedOperator(theta, float(F), float(eta), N_cut, grid.p_max, grid, A.tocsr(), gamma)


# ---------------------------------------------------------------------------
# resonances

@dataclass(frozen=True)
class Resonance:
    value: complex
    cell: int
    reduced: complex
    width: float
    refinement_delta: float
    theta_delta: float
    converged: bool
    gamma1_weight: float

    def to_dict(self) -> dict:
        return {"re": float(self.value.real), "im": float(self.value.imag), "width": float(self.width),
                "cell": int(self.cell), "converged": bool(self.converged),
                "refinement_delta": float(self.refinement_delta), "theta_delta": float(self.theta_delta)}


@dataclass(frozen=True)
class ResonanceSet:
    """Eigenvalues inside the strip |Im z| < F |Im theta| / 2 near the ladder.

    ``resonances`` are ordered by cell index; ``E10`` is the decoupled ladder
    value and ``beyond_F_N`` flags fields above the configured smallness
    threshold.
    """

    F: float
    theta_used: complex
    resonances: tuple
    E10: float
    tolerance: float
    grid: dict
    beyond_F_N: bool
    F_N: float
    spectrum: np.ndarray = field(repr=False)

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.resonances])

    @property
    def widths(self) -> np.ndarray:
        return np.array([r.width for r in self.resonances])

    def in_cell(self, j: int) -> list:
        return [r for r in self.resonances if r.cell == j]

    def principal(self) -> Resonance:
        hits = self.in_cell(0)
        if len(hits) != 1:
            raise StarkError(f"cell 0 holds {len(hits)} resonances, expected one")
        return hits[0]

    def to_dict(self) -> dict:
        return {"F": float(self.F), "theta": [float(self.theta_used.real), float(self.theta_used.imag)],
                "E10": float(self.E10), "tolerance": float(self.tolerance), "F_N": float(self.F_N),
                "beyond_F_N": bool(self.beyond_F_N),
                "resonances": [r.to_dict() for r in self.resonances], "grid": self.grid}


def default_F_N(B: BandStructure) -> float:
    """Smallness threshold 0.5 * (first gap width) / a."""
    return 0.5 * B.gaps[0][2] / B.a


#: default absolute tolerance on a resonance under refinement
RESONANCE_TOL = 1e-6


def _strip_eigs(op: DistortedOperator, E10: float, F: float, a: float, cells: int):
    """Eigenpairs in the boxes of cells -cells..cells, each of width F a around E10 + j F a."""
    half_h = F * abs(op.theta.imag) / 2
    radius = float(np.hypot(F * a / 2, half_h))
    if op.size <= DENSE_LIMIT:
        vals, vecs = op.eig()
        return vals, vecs
    vs, ws = [], []
    for j in range(-cells, cells + 1):
        v, w = op.eigs_near(E10 + j * F * a, radius)
        vs.append(v)
        ws.append(w)
    return np.concatenate(vs), np.concatenate(ws, axis=1)


def _strip_candidates(vals, vecs, n1, E10, F, a, theta, cells):
    half_h = F * abs(theta.imag) / 2
    out = []
    for idx, z in enumerate(vals):
        if not abs(z.imag) < half_h:
            continue
        cell = int(np.floor((z.real - E10) / (F * a) + 0.5))
        if abs(cell) > cells:
            continue
        if any(abs(z - o[0]) < 1e-13 * max(1.0, abs(z)) for o in out):
            continue
        weight = float(np.sum(np.abs(vecs[:n1, idx]) ** 2) / np.sum(np.abs(vecs[:, idx]) ** 2))
        out.append((z, cell, weight))
    out.sort(key=lambda t: (t[1], t[0].real))
    return out


def _nearest(vals, z):
    d = np.abs(vals - z)
    return float(np.min(d)) if d.size else np.inf


def resonances(
    V: PeriodicPotential,
    B: BandStructure,
    table: GridCouplings | None,
    F: float,
    theta: complex,
    grid_params: GridParams | None = None,
    cells: int = 1,
    tol: float = RESONANCE_TOL,
    F_N: float | None = None,
    refine: bool = True,
) -> ResonanceSet:
    """Resonances of the distorted operator near the band-1 ladder.

    Parameters
    ----------
    table : GridCouplings or None
        Coupling data on the grid of ``grid_params.for_field(F)``; built
        when ``None``.
    cells : int
        Report cells j = -cells..cells of width F a around E_{1,0}.
    tol : float
        Absolute tolerance for the refinement test (four more Gauss nodes
        per element, and p_max + 2b).
    refine : bool
        Run the refinement and theta-change studies.

    Raises
    ------
    StarkError
        Im theta >= 0, or no eigenvalue at all inside the strip.
    """
    params = (grid_params or GridParams()).for_field(F)
    theta = complex(theta)
    if not theta.imag < 0:
        raise StarkError("resonances need a distortion with Im theta < 0")
    F_N = default_F_N(B) if F_N is None else F_N
    beyond = F > F_N
    if beyond:
        warnings.warn(f"F = {F} exceeds the smallness threshold F_N = {F_N:.4g}; "
                      "perturbative ordering is not guaranteed", stacklevel=2)
        log.warning("F = %s above F_N = %s", F, F_N)
    a, b = V.period, V.b
    if table is None:
        table = grid_couplings(V, B, params)
    elif not np.array_equal(table.grid.p, make_grid(B, params).p):
        raise StarkError("the coupling table was built on another grid; "
                         "use grid_params.for_field(F) when building it")
    op = assemble_distorted(V, B, table, F, theta, F, params)
    L = ladder(V, B, None, F)
    vals, vecs = _strip_eigs(op, L.E10, F, a, cells)
    found = _strip_candidates(vals, vecs, op.n1, L.E10, F, a, theta, cells)
    if not found:
        order = np.argsort(np.abs(vals - L.E10))[:10]
        raise StarkError("no eigenvalue in the strip; nearest eigenvalues: "
                         + ", ".join(f"{z:.6g}" for z in vals[order]))
    deltas_ref = [0.0] * len(found)
    deltas_th = [0.0] * len(found)
    if refine:
        pmax = op.p_max
        variants = {
            "grid": (theta, replace(params, nodes=params.nodes + 4)),
            "p_max": (theta, replace(params, p_max=pmax + 2 * b)),
            "theta": (complex(theta.real, 1.25 * theta.imag), params),
        }
        other = {}
        for name, (th, pr) in variants.items():
            if th.imag <= -V.R:
                other[name] = None
                continue
            op2 = assemble_distorted(V, B, grid_couplings(V, B, pr), F, th, F, pr)
            other[name] = _strip_eigs(op2, L.E10, F, a, cells)[0]
        for i, (z, cell, _) in enumerate(found):
            dr = max(_nearest(other[k], z) for k in ("grid", "p_max"))
            dt = _nearest(other["theta"], z) if other["theta"] is not None else np.nan
            deltas_ref[i], deltas_th[i] = dr, dt
    res = []
    for (z, cell, wgt), dr, dt in zip(found, deltas_ref, deltas_th):
        res.append(Resonance(complex(z), cell, complex(z) - cell * F * a, float(-2 * z.imag), dr, dt,
                             bool(refine and dr < tol), wgt))
    return ResonanceSet(float(F), theta, tuple(res), L.E10, tol, params.to_dict(b), bool(beyond), float(F_N),
                        np.sort_complex(vals))
