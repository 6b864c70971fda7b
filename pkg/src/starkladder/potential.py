"""Finite Fourier-series potentials V(x) = sum_{n != 0} v_n exp(i n b x)."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np


class PotentialError(ValueError):
    """Invalid potential data. ``location`` points at the offending input."""

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


@dataclass(frozen=True, eq=False)
class PeriodicPotential:
    """Real, mean-zero, a-periodic potential given by a finite Fourier series.

    Attributes
    ----------
    period : float
        Period ``a``.
    harmonics : ndarray of int
        Harmonic indices ``n`` (both signs present, never 0).
    amplitudes : ndarray of complex
        Coefficients ``v_n`` with ``v_{-n} = conj(v_n)``.
    R : float
        Half-width of the strip in which complex positions are trusted.
    """

    period: float
    harmonics: np.ndarray
    amplitudes: np.ndarray
    R: float = 1.0

    @property
    def a(self) -> float:
        return self.period

    @property
    def b(self) -> float:
        return 2.0 * np.pi / self.period

    @property
    def max_harmonic(self) -> int:
        return int(np.max(np.abs(self.harmonics))) if self.harmonics.size else 0

    @property
    def is_even(self) -> bool:
        """True when V(-x) = V(x), i.e. all v_n are real."""
        return bool(np.all(np.abs(self.amplitudes.imag) <= 1e-15 * (1 + np.abs(self.amplitudes))))

    @property
    def is_zero(self) -> bool:
        return self.harmonics.size == 0

    def coeff(self, n: int) -> complex:
        hit = np.nonzero(self.harmonics == n)[0]
        return complex(self.amplitudes[hit[0]]) if hit.size else 0.0j

    def sup_norm(self) -> float:
        """Upper bound for |V| on the real axis."""
        return float(np.sum(np.abs(self.amplitudes)))

    def to_json(self) -> dict:
        pos = self.harmonics > 0
        rows = [[int(n), float(v.real), float(v.imag)]
                for n, v in sorted(zip(self.harmonics[pos], self.amplitudes[pos]))]
        return {"period": float(self.period), "coeffs": rows, "R": float(self.R)}


def free_potential(period: float, R: float = 1.0) -> PeriodicPotential:
    """The V = 0 reference case, which `make_potential` rejects on purpose."""
    if not period > 0:
        raise PotentialError("period must be positive", "period")
    return PeriodicPotential(float(period), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=complex), R)


def make_potential(period: float, coeffs: Iterable[tuple[int, complex]], R: float = 1.0) -> PeriodicPotential:
    """Build a validated potential.

    Parameters
    ----------
    period : float
        Period ``a > 0``.
    coeffs : iterable of (n, v_n)
        Harmonics. Giving only one of ``n``/``-n`` is enough; the partner is
        filled in with the complex conjugate. Giving both requires them to be
        conjugate.
    R : float
        Analyticity radius used for complex positions. Finite series are
        entire, so this is a user choice.

    Raises
    ------
    PotentialError
        Zero period, a harmonic ``n = 0``, inconsistent conjugate pairs, or
        all coefficients zero.
    """
    if not np.isfinite(period) or period <= 0:
        raise PotentialError("period must be a positive number", "period")
    if not R > 0:
        raise PotentialError("analyticity radius must be positive", "R")
    table: dict[int, complex] = {}
    for i, item in enumerate(coeffs):
        n, v = item
        if int(n) != n:
            raise PotentialError("harmonic index must be an integer", f"coeffs[{i}]")
        n = int(n)
        v = complex(v)
        if n == 0:
            raise PotentialError("n=0 term present; the potential must have mean zero", f"coeffs[{i}]")
        if n in table and abs(table[n] - v) > 1e-12 * max(1.0, abs(v)):
            raise PotentialError(f"harmonic {n} given twice with different values", f"coeffs[{i}]")
        table[n] = v
    for n in list(table):
        partner = table.get(-n)
        if partner is None:
            table[-n] = np.conj(table[n])
        elif abs(partner - np.conj(table[n])) > 1e-12 * max(1.0, abs(partner)):
            raise PotentialError(f"v_{-n} must equal conj(v_{n}) for a real potential", f"harmonic {n}")
    table = {n: v for n, v in table.items() if v != 0}
    if not table:
        raise PotentialError("all coefficients are zero; constant potentials are excluded", "coeffs")
    ns = np.array(sorted(table), dtype=np.int64)
    vs = np.array([table[n] for n in ns], dtype=complex)
    # exact conjugate symmetry, not just to tolerance
    for i, n in enumerate(ns):
        if n < 0:
            vs[i] = np.conj(table[-n])
    return PeriodicPotential(float(period), ns, vs, float(R))


def _check_strip(V: PeriodicPotential, x) -> None:
    im = np.max(np.abs(np.imag(x))) if np.size(x) else 0.0
    if im > V.R:
        warnings.warn(f"|Im x| = {im:.3g} exceeds the analyticity radius R = {V.R}", stacklevel=3)


def eval_V(V: PeriodicPotential, x):
    """V(x) for real or complex x (scalar or array). Real dtype for real x."""
    x = np.asarray(x)
    _check_strip(V, x)
    if V.is_zero:
        out = np.zeros_like(x, dtype=complex)
    else:
        phase = np.exp(1j * V.b * np.multiply.outer(x, V.harmonics))
        out = phase @ V.amplitudes
    if not np.iscomplexobj(x):
        out = out.real
    return out[()] if out.ndim == 0 else out


def eval_Q(V: PeriodicPotential, x):
    """Antiderivative Q(x) = int_0^x V(y) dy, in closed form."""
    x = np.asarray(x)
    _check_strip(V, x)
    if V.is_zero:
        out = np.zeros_like(x, dtype=complex)
    else:
        k = 1j * V.b * V.harmonics
        out = np.expm1(np.multiply.outer(x, k)) @ (V.amplitudes / k)
    if not np.iscomplexobj(x):
        out = out.real
    return out[()] if out.ndim == 0 else out


def potential_from_dict(data, source: str = "<dict>") -> PeriodicPotential:
    """Validate the JSON object form ``{"period": a, "coeffs": [[n, re, im], ...]}``."""
    if not isinstance(data, dict):
        raise PotentialError("top level must be an object", source)
    unknown = set(data) - {"period", "coeffs", "R"}
    if unknown:
        raise PotentialError(f"unknown keys {sorted(unknown)}", source)
    if "period" not in data:
        raise PotentialError("missing key 'period'", source)
    period = data["period"]
    if isinstance(period, bool) or not isinstance(period, (int, float)):
        raise PotentialError("must be a number", f"{source}: period")
    raw = data.get("coeffs")
    if not isinstance(raw, list):
        raise PotentialError("must be a list of [n, re, im]", f"{source}: coeffs")
    pairs = []
    for i, row in enumerate(raw):
        loc = f"{source}: coeffs[{i}]"
        if not isinstance(row, list) or len(row) != 3:
            raise PotentialError("expected [n, re, im]", loc)
        n, re, im = row
        if isinstance(n, bool) or not isinstance(n, int):
            raise PotentialError("harmonic index must be an integer", loc + "[0]")
        for j, val in ((1, re), (2, im)):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise PotentialError("must be a number", f"{loc}[{j}]")
        pairs.append((n, complex(re, im)))
    R = data.get("R", 1.0)
    if isinstance(R, bool) or not isinstance(R, (int, float)):
        raise PotentialError("must be a number", f"{source}: R")
    try:
        return make_potential(float(period), pairs, R=float(R))
    except PotentialError as exc:
        raise PotentialError(str(exc), source) from None


def load_potential(path: str | Path) -> PeriodicPotential:
    """Read a potential JSON file; errors carry file name and line/column or key path."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise PotentialError(f"cannot read file ({exc.strerror})", str(path)) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PotentialError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from None
    return potential_from_dict(data, str(path))
