"""Wannier-Stark ladder and resonances for the cosine potential.

The decoupled first band gives a real ladder E_{1,0} + j F a. Switching on
the coupling to the other bands turns each rung into a resonance with a
small negative imaginary part, found as an eigenvalue of the analytically
distorted operator. This demo uses a coarse grid so that it runs in about
a minute; the CLI defaults are finer.

Run: python demos/04_resonances.py
"""

import warnings

from starkladder import GridParams, compute_edges, ladder, load_potential, resonances

V = load_potential("potentials/cosine_v03.json")
B = compute_edges(V, 10)
F = 0.1

L = ladder(V, B, None, F, (-2, 2))
print(f"decoupled ladder, spacing F a = {L.spacing:.6f}:")
print("  " + "  ".join(f"{E:.6f}" for E in L.eigenvalues))

params = GridParams(p_max=7.0, j_max=2, nodes=8, h_max=0.1)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")  # F = 0.1 sits just above the F_N guard
    R = resonances(V, B, None, F, -0.5j, params, refine=False)
for r in R.resonances:
    print(f"  cell {r.cell:+d}: z = {r.value.real:.8f} {r.value.imag:+.8f}i, width {r.width:.3e}")
print("every cell carries the same resonance, shifted by F a")
