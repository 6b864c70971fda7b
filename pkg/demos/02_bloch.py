"""Normalized Bloch functions on the cut p-line.

Shows the normalization, the quasi-periodicity phi(x + a) = exp(ipa) phi(x)
and how the phase is fixed. Run: python demos/02_bloch.py
"""

import numpy as np

from starkladder import bloch_at, compute_edges, load_potential, periodic_part_on_grid
from starkladder.bloch import phase_convention

V = load_potential("potentials/cosine_v03.json")
B = compute_edges(V, 4)
a = V.period

p = 0.4
u, du = periodic_part_on_grid(V, B, p, 64)
print(f"p = {p}: int_0^a |u|^2 dx = {np.mean(np.abs(u) ** 2) * a:.12f}")

x = 0.3 + 0.2j  # complex x is allowed inside the analyticity strip
lhs = bloch_at(V, B, p, x + a).phi
rhs = np.exp(1j * p * a) * bloch_at(V, B, p, x).phi
print(f"quasi-periodicity residual at x = {x}: {abs(lhs - rhs):.2e}")

# two phase conventions: cell average of u real and positive (default), or
# phi(0, p) > 0; for a potential without reflection symmetry they differ by
# a genuine phase
W = load_potential("potentials/asymmetric.json")
BW = compute_edges(W, 4)
for name in ("mean", "origin"):
    with phase_convention(name):
        u, _ = periodic_part_on_grid(W, BW, 1.4, 64)
        print(f"{name:>6}: mean(u) = {u.mean():.6f}, u(0) = {u[0]:.6f}")
