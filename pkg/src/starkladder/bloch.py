"""Normalized Bloch functions phi(x, p) and periodic parts u(x, p) = exp(-ipx) phi(x, p).

Everything is evaluated as a second-order Taylor jet in p: E(p) follows from
cos(pa) = mu(E) by implicit differentiation, and the E-dependence of the
fundamental system comes from the variational hierarchy in `hill`. The jet
then gives u, du/dp and d^2u/dp^2 exactly (to solver precision).

Phase convention
----------------
With y1 = phi2(a) phi1 + (lambda - phi1(a)) phi2 and N1 = -2 phi2(a) mu'(E)
(positive inside a band), the closed form

    phi = sign(phi2(a)) * y1 / sqrt(N1)

has phi(0, p) > 0. The sign factor removes the only sign flips of the bare
formula, which occur where phi2(a) changes sign at a band edge. When phi2(a)
is tiny the same function is built from the second row of the monodromy
matrix, y2 = (lambda - phi2'(a)) phi1 + phi1'(a) phi2, which is better
conditioned there. This is the ``"origin"`` convention.

The default ``"mean"`` convention multiplies by a further p-dependent phase
so that the cell average of u(x, p) is real and positive. That average is
the weight of exp(ipx) in phi, the dominant plane wave on each sheet, so it
never vanishes. phi(0, p) can vanish, and for non-even V it nearly does
close to some band edges, where the origin convention turns quickly.
Both conventions are continuous along each band and across closed gaps and
give exp(ipx)/sqrt(a) for V = 0; for even V they differ by a sign per sheet.
Select one with ``phase_convention``.
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bands import GAP_CLOSED_RTOL, BandStructure, _solve_in_band, band_edges, sheet_of
from .hill import integrate_path, straight_path
from .potential import PeriodicPotential

#: default exclusion radius around open-gap cut points, in units of b
DELTA_P_REL = 1e-12
#: x-nodes for the cell average that fixes the "mean" phase convention
GAUGE_NODES = 64
PHASE_CONVENTIONS = ("mean", "origin")
_CONVENTION = contextvars.ContextVar("phase_convention", default="mean")


def current_phase_convention() -> str:
    return _CONVENTION.get()


@contextmanager
def phase_convention(name: str):
    """Evaluate Bloch data in the given phase convention inside the block."""
    if name not in PHASE_CONVENTIONS:
        raise ValueError(f"unknown phase convention {name!r}")
    token = _CONVENTION.set(name)
    try:
        yield
    finally:
        _CONVENTION.reset(token)


class BlochError(ValueError):
    """Evaluation requested where the Bloch function is not defined."""


# -- order-2 Taylor jets: arrays whose axis 0 holds coefficients of eps^0..eps^2

def _jmul(f, g):
    return np.stack([f[0] * g[0], f[0] * g[1] + f[1] * g[0], f[0] * g[2] + f[1] * g[1] + f[2] * g[0]])


def _jinv(f):
    g0 = 1.0 / f[0]
    g1 = -f[1] * g0 * g0
    g2 = -(f[1] * g1 + f[2] * g0) * g0
    return np.stack([g0, g1, g2])


def _jsqrt(f):
    g0 = np.sqrt(f[0])
    g1 = f[1] / (2 * g0)
    g2 = (f[2] - g1 * g1) / (2 * g0)
    return np.stack([g0, g1, g2])


def _compose(d, e1, e2):
    """Jet of f(E0 + delta) from f, f', f'' at E0 and delta = e1 eps + e2 eps^2."""
    return np.stack([d[0], d[1] * e1, d[1] * e2 + 0.5 * d[2] * e1 * e1])


def _const(c, like=None):
    c = np.asarray(c, dtype=complex)
    return np.stack([c, np.zeros_like(c), np.zeros_like(c)])


@dataclass(frozen=True)
class BlochEval:
    """Bloch data at one (p, x)."""

    p: float
    E: float
    x: complex
    phi: complex
    u: complex
    du_dp: complex
    dE_dp: float
    normalization_C: complex

    @property
    def du_dE(self) -> complex:
        return self.du_dp / self.dE_dp


@dataclass(frozen=True)
class _Jets:
    E: np.ndarray        # (3,) real Taylor coefficients of E(p)
    phi: np.ndarray      # (3, n_x) Taylor coefficients of phi(x_m, p)
    u: np.ndarray        # (3, n_x)
    C: complex           # multiplier of phi1 in phi, for reference


def _check_p(B: BandStructure, p: float, side: str, strict: bool, delta_p: float | None) -> float:
    """Return the p actually evaluated: cut points are moved inside by delta_p."""
    half = B.b / 2
    dp = DELTA_P_REL * B.b if delta_p is None else delta_p
    m = round(abs(p) / half)
    if m >= 1 and abs(abs(p) - m * half) < dp:
        n = sheet_of(B, p, side)
        gap = m  # cut at |p| = m b/2 separates bands m and m+1
        if strict and _gap_is_open(B, gap):
            raise BlochError(f"p = {p} is within {dp:.2g} of the open-gap cut at {m}b/2")
        # step into the interior of sheet n
        direction = 1.0 if n > m else -1.0
        return float(np.sign(p) * (m * half + direction * dp))
    return float(p)


def _gap_is_open(B: BandStructure, m: int) -> bool:
    if m <= B.n_max:
        return B.gap_open(m)
    top = band_edges(B, m)[1]
    return band_edges(B, m + 1)[0] - top >= GAP_CLOSED_RTOL * max(1.0, abs(top))


def _jets(V: PeriodicPotential, B: BandStructure, p: float, side: str, xs, form: str = "auto",
          grid: int | None = None, order: int = 2, convention: str | None = None) -> _Jets:
    convention = convention or _CONVENTION.get()
    a = V.period
    n = sheet_of(B, p, side)
    c, s = np.cos(p * a), np.sin(p * a)
    E0 = _solve_in_band(B, n, float(c), float(s))
    xs = np.atleast_1d(np.asarray(xs, dtype=complex))
    if grid is not None:
        # one sweep over [0, a] recording the equispaced nodes; the jet of
        # dmu/dE needs one E-derivative more than the requested order
        K = 3 if order >= 2 else 2
        rec = integrate_path(V, E0, straight_path(a), K=K, n_out=grid)
        if K < 3:
            rec = np.concatenate([rec, np.zeros(rec.shape[:2] + (3 - K,) + rec.shape[3:], dtype=complex)], axis=2)
        mono, rows = rec[-1], rec[:grid]
    else:
        mono = integrate_path(V, E0, straight_path(a), K=3)[-1]
        rows = None
    mu_d = 0.5 * (mono[0, :, 0] + mono[1, :, 1]).real
    if mu_d[1] == 0:
        raise BlochError(f"dmu/dE vanishes at E = {E0} (p = {p})")
    e1 = -a * s / mu_d[1]
    e2 = (-0.5 * a * a * c - 0.5 * mu_d[2] * e1 * e1) / mu_d[1] if order >= 2 else 0.0
    Ejet = np.array([E0, e1, e2])
    p1a = _compose(mono[0, :, 0], e1, e2)
    p1pa = _compose(mono[0, :, 1], e1, e2)
    p2a = _compose(mono[1, :, 0], e1, e2)
    p2pa = _compose(mono[1, :, 1], e1, e2)
    dmu = _compose(mu_d[1:], e1, e2)
    # On the band cos(pa) = mu, so e^{ipa} - phi1(a) = i sin(pa) - d and
    # e^{ipa} - phi2'(a) = i sin(pa) + d with d = (phi1(a) - phi2'(a)) / 2.
    # Writing them this way avoids cancellation; for even V, d vanishes
    # identically, and zeroing it keeps the phase of w smooth at band edges.
    sjet = 1j * np.array([s, a * c, -0.5 * a * a * s])
    dj = 0.5 * (p1a - p2pa)
    if V.is_even:
        dj = np.zeros_like(dj)
    # fundamental system at the requested x
    vals = np.empty((3, 2, xs.size), dtype=complex)
    for i, x in enumerate(xs):
        if rows is not None:
            row = rows[i]
        elif x == 0:
            row = np.zeros((2, 4, 2), dtype=complex)
            row[0, 0, 0] = 1.0
            row[1, 0, 1] = 1.0
        else:
            row = integrate_path(V, E0, straight_path(x), K=2)[-1]
        for sidx in range(2):
            vals[:, sidx, i] = _compose(row[sidx, :, 0], e1, e2)
    f1 = vals[:, 0, :]
    f2 = vals[:, 1, :]
    k_scale = np.sqrt(max(abs(E0), 1.0))
    if form == "auto":
        form = "row1" if abs(p2a[0]) * k_scale >= abs(p1pa[0]) / k_scale else "row2"
    if form in ("row1", "symmetric"):
        if form == "symmetric":
            second = 1j * np.array([s, a * c, -0.5 * a * a * s])
        else:
            second = sjet - dj
        y = _jmul(p2a[:, None], f1) + _jmul(second[:, None], f2)
        norm = _jsqrt(-2.0 * _jmul(p2a, dmu))
        coef = np.sign(p2a[0].real) * _jinv(norm)
        C0 = coef[0] * p2a[0]
    elif form == "row2":
        w = sjet + dj
        y = _jmul(w[:, None], f1) + _jmul(p1pa[:, None], f2)
        absw = _jsqrt(_jmul(w, np.conj(w)))
        norm = _jsqrt(2.0 * _jmul(p1pa, dmu))
        coef = _jmul(absw, _jinv(_jmul(w, norm)))
        C0 = coef[0] * w[0]
    else:
        raise ValueError(f"unknown form {form!r}")
    phi = _jmul(coef[:, None], y)
    ph = np.exp(-1j * p * xs)
    emx = np.stack([ph, -1j * xs * ph, -0.5 * xs * xs * ph])
    u = _jmul(emx, phi)
    if convention == "mean":
        if grid is not None and grid >= GAUGE_NODES:
            m = u.mean(axis=1)
        else:
            m = _mean_jet(V, B, p, side, 2 if order >= 2 else 1)
        mc = np.conj(m)
        g = _jmul(mc, _jinv(_jsqrt(_jmul(m, mc))))
        phi = _jmul(g[:, None], phi)
        u = _jmul(g[:, None], u)
        C0 = C0 * g[0]
    return _Jets(Ejet, phi, u, complex(C0))


@lru_cache(maxsize=16384)
def _mean_jet(V: PeriodicPotential, B: BandStructure, p: float, side: str, order: int) -> np.ndarray:
    """Jet of the cell average of u in the origin convention."""
    xs = np.arange(GAUGE_NODES) * (V.period / GAUGE_NODES)
    J = _jets(V, B, p, side, xs, grid=GAUGE_NODES, order=order, convention="origin")
    m = J.u.mean(axis=1)
    m.setflags(write=False)
    return m


def bloch_at(
    V: PeriodicPotential,
    B: BandStructure,
    p: float,
    x: complex,
    side: str = "below",
    form: str = "auto",
    delta_p: float | None = None,
) -> BlochEval:
    """Normalized Bloch function and periodic part at real p, complex x.

    Parameters
    ----------
    p : float
        Quasimomentum on the cut real line. Points within ``delta_p`` of a
        cut are moved that far into the sheet selected by ``side``.
    x : complex
        Position; complex values should lie in the box 0 <= Re x <= a,
        -R <= Im x <= 0 (the fundamental system is integrated on the straight
        segment from 0, along which Im x is monotone).
    form : {"auto", "row1", "row2", "symmetric"}
        Which closed form to use. ``"symmetric"`` is only valid for even V
        and exists for cross-checking.
    """
    p_eval = _check_p(B, float(p), side, strict=False, delta_p=delta_p)
    J = _jets(V, B, p_eval, side, [x], form)
    return BlochEval(
        p=p_eval, E=float(J.E[0]), x=complex(x), phi=complex(J.phi[0, 0]), u=complex(J.u[0, 0]),
        du_dp=complex(J.u[1, 0]), dE_dp=float(J.E[1]), normalization_C=J.C,
    )


def u_and_derivatives(
    V: PeriodicPotential,
    B: BandStructure,
    p: float,
    x,
    side: str = "below",
    delta_p: float | None = None,
    second: bool = False,
):
    """(u, du/dE, du/dp) at quasimomentum p for one or several x.

    du/dE is the derivative along the band, du/dp / (dE/dp). With
    ``second=True`` a fourth entry d^2u/dE^2 is appended.

    Raises
    ------
    BlochError
        When p is within ``delta_p`` of an open-gap cut, where dE/dp -> 0 and
        the E-derivatives are singular.
    """
    p_eval = _check_p(B, float(p), side, strict=True, delta_p=delta_p)
    scalar = np.ndim(x) == 0
    J = _jets(V, B, p_eval, side, np.atleast_1d(x))
    u, up, upp = J.u[0], J.u[1], 2.0 * J.u[2]
    Ep, Epp = J.E[1], 2.0 * J.E[2]
    if Ep == 0:
        raise BlochError(f"dE/dp = 0 at p = {p_eval}")
    uE = up / Ep
    out = [u, uE, up]
    if second:
        out.append((upp - uE * Epp) / (Ep * Ep))
    if scalar:
        out = [complex(o[0]) for o in out]
    return tuple(out)


@lru_cache(maxsize=16384)
def _grid_cached(V: PeriodicPotential, B: BandStructure, p: float, side: str, M: int, convention: str):
    xs = np.arange(M) * (V.period / M)
    J = _jets(V, B, p, side, xs, grid=M, order=1, convention=convention)
    u, up = J.u[0], J.u[1]
    u.setflags(write=False)
    up.setflags(write=False)
    return u, up


def periodic_part_on_grid(V: PeriodicPotential, B: BandStructure, p: float, M: int, side: str = "below"):
    """u(x_m, p) and du/dp(x_m, p) on x_m = m a / M, m = 0..M-1.

    The fundamental system is integrated once over [0, a] with output at the
    nodes, which is much cheaper than M separate evaluations.
    """
    p_eval = _check_p(B, float(p), side, strict=False, delta_p=None)
    return _grid_cached(V, B, p_eval, side, int(M), _CONVENTION.get())


def identification_phase(V: PeriodicPotential, B: BandStructure, m: int, upper: bool, M: int = 64) -> complex:
    """Unit factor r with phi(x, p_L) = r phi(x, p_R) at a pair of identified cut points.

    Both points carry the same band at the same quasimomentum, so the two
    Bloch functions agree up to this factor. For the lower band at cut m
    the pair is p_L = m b/2 - 0, p_R = -m b/2 + 0; for the upper band it is
    p_L = -m b/2 - 0, p_R = m b/2 + 0. The overlap is measured just inside
    the cut, well within the p-range gap / (4 m b/2) over which a narrow gap
    mixes the two bands. For even V, r is real in either convention and is
    returned as exactly +-1.
    """
    return _identification_phase(V, B, int(m), bool(upper), int(M), _CONVENTION.get())


@lru_cache(maxsize=256)
def _identification_phase(V, B, m, upper, M, convention):
    half = V.b / 2
    d = 1e-9 * V.b
    if m <= B.n_max and B.gaps[m - 1][2] > 0:
        d = min(d, 1e-4 * B.gaps[m - 1][2] / (4 * m * half))
    if upper:
        pL, pR = -m * half - d, m * half + d
    else:
        pL, pR = m * half - d, -m * half + d
    x = np.arange(M) * (V.period / M)
    uL, _ = periodic_part_on_grid(V, B, pL, M)
    uR, _ = periodic_part_on_grid(V, B, pR, M)
    r = np.sum(np.conj(np.exp(1j * pR * x) * uR) * np.exp(1j * pL * x) * uL) * (V.period / M)
    if abs(abs(r) - 1) > 1e-4:
        raise BlochError(f"Bloch functions at the identified points of cut {m} do not match (overlap {r:.6g})")
    if V.is_even:
        if abs(r.imag) > 1e-3:
            raise BlochError(f"identification factor at cut {m} is not real for even V ({r:.6g})")
        return complex(np.sign(r.real))
    return complex(r / abs(r))
