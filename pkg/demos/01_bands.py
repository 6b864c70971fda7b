"""Bands of the cosine potential 2 v cos(2x), checked against plane waves.

Run: python demos/01_bands.py
"""

import numpy as np

from starkladder import band_function, compute_edges, kohn_branch_point, load_potential
from starkladder.oracle import pw_band

V = load_potential("potentials/cosine_v03.json")
B = compute_edges(V, 4)

print("band edges (bottom, top):")
for n, (lo, hi) in enumerate(B.edges, start=1):
    print(f"  band {n}: {lo:.10f}  {hi:.10f}")

# for weak v the first gap is close to 2|v|
print("gap widths:", ", ".join(f"{g[2]:.6f}" for g in B.gaps))

# Kohn branch points: where the bands meet when continued to complex p
for n in (1, 2, 3):
    E_star, kappa = kohn_branch_point(B, n)
    print(f"  gap {n}: E* = {E_star:.8f}, kappa = {kappa:.6f}")

# the discriminant method and plane-wave diagonalization agree
worst = 0.0
for k in np.linspace(-0.95, 0.95, 11):
    for n in (1, 2, 3):
        worst = max(worst, abs(band_function(B, n, k) - pw_band(V, k, n)))
print(f"largest difference to plane waves over 33 points: {worst:.2e}")
