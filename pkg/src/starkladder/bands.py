"""Band edges, band functions, the multisheeted E(p) and Kohn branch points.

Edges are located without scanning for sign changes of mu -/+ 1 (which fail
for nearly closed gaps, where mu -/+ 1 has a near-double root). Instead the
critical points E*_n of mu are found first: there is exactly one per gap,
they are well separated, and mu is monotone between consecutive ones. Each
edge is then a bracketed root on a monotone interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .hill import discriminant, monodromy
from .potential import PeriodicPotential

#: gap n counts as closed below this width times max(1, E^t_n)
GAP_CLOSED_RTOL = 1e-9


class BandError(RuntimeError):
    """Band-structure construction failed (carries the offending interval)."""


def _mu(V, E):
    return discriminant(V, E)[0].real


def _dmu(V, E):
    return discriminant(V, E)[1].real


def _G(V, E):
    """1 - mu^2 written as -((phi1 - phi2')/2)^2 - phi1' phi2.

    The factors are small near the edges of a small gap and are computed
    with relative accuracy there, unlike mu -/+ 1.
    """
    fp = monodromy(V, E, K=0)
    d = 0.5 * (fp.phi1_at_a - fp.phi2p_at_a)
    return float((-d * d - fp.phi1p_at_a * fp.phi2_at_a).real)


def _polish_edge(V, E0, inward, target=0.0, h0=None, reach=None):
    """Root of G(E) = target within ``reach`` of E0; ``inward`` is +1 if the band lies above E0.

    Returns None when no sign change is found.
    """
    f = lambda e: _G(V, e) - target  # noqa: E731
    scale = max(1.0, abs(E0))
    h = 1e-12 * scale if not h0 else h0
    reach = 1e-6 * scale if reach is None else reach
    f0 = f(E0)
    if f0 == 0.0:
        return E0
    # the band side has G > target, the gap side G < target
    step = inward if f0 < 0 else -inward
    start = E0
    while abs(E0 + step * h - start) <= reach:
        E1 = E0 + step * h
        f1 = f(E1)
        if np.sign(f1) != np.sign(f0):
            lo, hi = sorted((E0, E1))
            return brentq(f, lo, hi, xtol=4 * np.finfo(float).eps * scale, rtol=4 * np.finfo(float).eps,
                          maxiter=200)
        E0, f0 = E1, f1
        h *= 4
    return None


def _refine_edge(V, E, inward, lo, hi):
    """Sharpen a root of mu -/+ 1 into a root of 1 - mu^2 (see ``_G``)."""
    E2 = _polish_edge(V, E, inward)
    if E2 is None or not lo <= E2 <= hi or abs(E2 - E) > 1e-6 * max(1.0, abs(E)):
        return E
    return E2


def _root(f, lo, hi, what):
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise BandError(f"no sign change for {what} on [{lo!r}, {hi!r}]")
    scale = max(1.0, abs(lo), abs(hi))
    return brentq(f, lo, hi, xtol=1e-13 * scale, rtol=4 * np.finfo(float).eps, maxiter=500)


@dataclass(frozen=True, eq=False)
class BandStructure:
    """Band edges ``edges[n-1] = (E^b_n, E^t_n)`` and gap data for n = 1..n_max.

    ``kohn_points[n-1] = (n, E*_n, kappa_n)``; ``gaps[n-1] = (E^t_n, E^b_{n+1}, width)``.
    """

    potential: PeriodicPotential
    n_max: int
    edges: np.ndarray
    gaps: list
    kohn_points: list
    mu_star: np.ndarray = field(repr=False)
    _high: dict = field(default_factory=dict, repr=False)

    @property
    def a(self) -> float:
        return self.potential.period

    @property
    def b(self) -> float:
        return self.potential.b

    def gap_open(self, n: int) -> bool:
        return bool(self.kohn_points[n - 1][2] > 0)


def _critical_points(V: PeriodicPotential, count: int) -> list[float]:
    """First ``count`` zeros of dmu/dE above the spectrum bottom, by scan + brentq."""
    b = V.b
    E = -V.sup_norm() - 1.0
    d_prev = _dmu(V, E)
    found: list[float] = []
    while len(found) < count:
        n_free = int(np.sqrt(max(E, 0.0)) / (b / 2)) + 1
        step = (b * b / 4) * (2 * n_free - 1) / 16.0
        E_next = E + step
        d_next = _dmu(V, E_next)
        if d_prev == 0.0:
            found.append(E)
        elif np.sign(d_prev) != np.sign(d_next) and d_next != 0.0:
            found.append(_root(lambda e: _dmu(V, e), E, E_next, "dmu/dE"))
        E, d_prev = E_next, d_next
        if E > 1e9:
            raise BandError("critical-point scan ran past E = 1e9")
    return found


def compute_edges(V: PeriodicPotential, n_max: int) -> BandStructure:
    """Band edges for bands 1..n_max, gap widths and Kohn branch data.

    Raises
    ------
    BandError
        When an edge cannot be bracketed between consecutive critical points.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    a = V.period
    stars = _critical_points(V, n_max)
    mu_star = np.array([_mu(V, e) for e in stars])
    lower = -V.sup_norm() - 1.0
    while _mu(V, lower) <= 1.0:
        lower = 2 * lower - 1.0
    edges = np.empty((n_max, 2))
    for n in range(1, n_max + 1):
        lo = lower if n == 1 else stars[n - 2]
        hi = stars[n - 1]
        s_bot = 1.0 if n % 2 else -1.0
        # closed gap below: the edge sits exactly at the critical point
        if n > 1 and abs(mu_star[n - 2]) <= 1.0:
            bot = stars[n - 2]
        else:
            bot = _refine_edge(V, _root(lambda e: _mu(V, e) - s_bot, lo, hi, f"E^b_{n}"), 1, lo, hi)
        if abs(mu_star[n - 1]) <= 1.0:
            top = stars[n - 1]
        else:
            top = _refine_edge(V, _root(lambda e: _mu(V, e) + s_bot, lo, hi, f"E^t_{n}"), -1, lo, hi)
        edges[n - 1] = bot, top
    gaps, kohn = [], []
    for n in range(1, n_max + 1):
        Et = edges[n - 1, 1]
        if n < n_max:
            Eb_next = edges[n, 0]
        else:
            s = -1.0 if n % 2 else 1.0  # sign of mu at the bottom of band n+1
            hi_n = stars[n - 1] + (Et - edges[n - 1, 0]) + V.b ** 2
            Eb_next = stars[n - 1] if abs(mu_star[n - 1]) <= 1.0 else _refine_edge(V, _root(
                lambda e: _mu(V, e) - s, stars[n - 1], hi_n, f"E^b_{n + 1}"), 1, stars[n - 1], hi_n)
        width = max(Eb_next - Et, 0.0)
        closed = width < GAP_CLOSED_RTOL * max(1.0, abs(Et))
        kappa = 0.0 if closed else float(np.arccosh(max(abs(mu_star[n - 1]), 1.0)) / a)
        gaps.append((float(Et), float(Eb_next), 0.0 if closed else float(width)))
        kohn.append((n, float(stars[n - 1]), kappa))
    return BandStructure(V, n_max, edges, gaps, kohn, mu_star)


def _critical_point_local(V: PeriodicPotential, m: int) -> float:
    """Critical point of mu in gap m, bracketed around the free value (m b/2)^2.

    Valid once the free-particle spacing dwarfs the potential, which is the
    only regime where it is called.
    """
    centre = (m * V.b / 2) ** 2
    w = m * V.b ** 2 / 8
    lo, hi = centre - w, centre + w
    if w < 2 * V.sup_norm():
        raise BandError(f"gap {m} is not in the free-particle regime; extend n_max instead")
    return _root(lambda e: _dmu(V, e), lo, hi, f"dmu/dE near gap {m}")


def band_edges(B: BandStructure, n: int) -> tuple[float, float]:
    """(E^b_n, E^t_n) for any n >= 1; bands above n_max are computed on demand."""
    if n <= B.n_max:
        return float(B.edges[n - 1, 0]), float(B.edges[n - 1, 1])
    hit = B._high.get(n)
    if hit is not None:
        return hit
    V = B.potential
    lo = B.kohn_points[-1][1] if n == B.n_max + 1 else _critical_point_local(V, n - 1)
    hi = _critical_point_local(V, n)
    s_bot = 1.0 if n % 2 else -1.0
    mu_lo, mu_hi = _mu(V, lo), _mu(V, hi)
    bot = lo if abs(mu_lo) <= 1.0 else _refine_edge(
        V, _root(lambda e: _mu(V, e) - s_bot, lo, hi, f"E^b_{n}"), 1, lo, hi)
    top = hi if abs(mu_hi) <= 1.0 else _refine_edge(
        V, _root(lambda e: _mu(V, e) + s_bot, lo, hi, f"E^t_{n}"), -1, lo, hi)
    B._high[n] = (float(bot), float(top))
    return B._high[n]


def kohn_branch_point(B: BandStructure, n: int) -> tuple[float, float]:
    """(E*_n, kappa_n) with kappa_n = arccosh|mu(E*_n)| / a, or kappa_n = 0 for a closed gap."""
    if not 1 <= n <= B.n_max:
        raise ValueError(f"gap index {n} outside 1..{B.n_max}")
    _, e_star, kappa = B.kohn_points[n - 1]
    return e_star, kappa


#: below this sin^2(pa) the band solve switches to the 1 - mu^2 form
NEAR_EDGE_S2 = 1e-2


@lru_cache(maxsize=262144)
def _solve_in_band(B: BandStructure, n: int, c: float, s: float | None = None) -> float:
    """E in band n with mu(E) = c, by bracketing and a final Newton polish.

    With ``s = sin(pa)`` given and small, the root is sharpened on
    1 - mu^2 = s^2, which keeps relative accuracy in E - (edge) close to a cut.
    """
    V = B.potential
    bot, top = band_edges(B, n)
    s_bot = 1.0 if n % 2 else -1.0
    if s is not None and 0 < s * s < NEAR_EDGE_S2:
        # c itself has lost the information here (cos(pa) rounds to +-1)
        near_bot = c * s_bot > 0
        edge, inward = (bot, 1) if near_bot else (top, -1)
        E2 = _polish_edge(V, edge, inward, target=s * s, reach=top - bot)
        if E2 is not None and bot <= E2 <= top:
            return float(E2)
    if c * s_bot >= 1.0:
        return float(bot)
    if -c * s_bot >= 1.0:
        return float(top)
    E = _root(lambda e: _mu(V, e) - c, bot, top, f"band {n} at mu = {c!r}")
    mu, dmu = discriminant(V, E)
    if dmu.real != 0:
        E_new = E - (mu.real - c) / dmu.real
        if bot <= E_new <= top:
            E = E_new
    return float(E)


def fold_k(B: BandStructure, k: float) -> float:
    """Reduce k into [-b/2, b/2]; a point within rounding of the boundary stays put."""
    b = B.b
    k = float(k)
    if abs(k) <= b / 2 * (1 + 1e-14):
        return k
    return (k + b / 2) % b - b / 2


def band_function(B: BandStructure, n: int, k: float) -> float:
    """E_n(k) for k in the Brillouin zone [-b/2, b/2].

    Raises
    ------
    ValueError
        If ``n`` exceeds ``n_max`` or ``k`` is not within the zone.
    """
    if not 1 <= n <= B.n_max:
        raise ValueError(f"band {n} outside 1..{B.n_max}")
    if abs(k) > B.b / 2 * (1 + 1e-12):
        raise ValueError(f"k = {k} outside the Brillouin zone [-{B.b / 2}, {B.b / 2}]")
    return _solve_in_band(B, n, float(np.cos(k * B.a)), float(np.sin(k * B.a)))


def sheet_of(B: BandStructure, p: float, side: str = "below") -> int:
    """Band index n whose sheet carries E(p); ``side`` resolves p = +-nb/2."""
    if side not in ("above", "below"):
        raise ValueError("side must be 'above' or 'below'")
    half = B.b / 2
    t = abs(p) / half
    m = int(np.floor(t))
    if t == m and m > 0:
        # inside the sheet means |p| approached from below
        inside = (side == "below") == (p > 0)
        return m if inside else m + 1
    return m + 1


def multisheeted_E(B: BandStructure, p: float, side: str = "below") -> float:
    """E(p) on the cut real line; ``side`` is the p -/+ 0 limit at cut points."""
    n = sheet_of(B, p, side)
    if p == 0.0:
        return float(B.edges[0, 0])
    half = B.b / 2
    m = abs(p) / half
    if m == int(m) and m > 0:
        at_top = int(m) == n
        return band_edges(B, n)[1 if at_top else 0]
    return _solve_in_band(B, n, float(np.cos(p * B.a)), float(np.sin(p * B.a)))


def dE_dp(B: BandStructure, p: float, E: float | None = None) -> float:
    """dE/dp from cos(pa) = mu(E): a sin(pa) / (-dmu/dE)."""
    if E is None:
        E = multisheeted_E(B, p)
    _, dmu = discriminant(B.potential, E)
    return float(B.a * np.sin(p * B.a) / (-dmu.real))


def band_table(B: BandStructure, k_points: int) -> np.ndarray:
    """Rows (n, k, E_n(k)) on a uniform grid of [-b/2, b/2] for all bands."""
    ks = np.linspace(-B.b / 2, B.b / 2, k_points)
    rows = [(n, k, band_function(B, n, k)) for n in range(1, B.n_max + 1) for k in ks]
    return np.array(rows)


def branch_table(B: BandStructure) -> np.ndarray:
    """Rows (n, E*_n, kappa_n)."""
    return np.array([(n, e, kap) for n, e, kap in B.kohn_points])
