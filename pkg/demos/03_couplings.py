"""Coupling coefficients C_j(p) of the position operator.

C_j links p with p - jb. They fall off exponentially in j and like p^-2
at large p. Run: python demos/03_couplings.py
"""

import numpy as np

from starkladder import compute_edges, coupling_C, load_potential

V = load_potential("potentials/cosine_v03.json")
B = compute_edges(V, 6)
b = V.b

p = 0.37
print("decay in j at p = 0.37:")
for j in range(0, 5):
    print(f"  |C_{j}| = {abs(coupling_C(V, B, j, p)):.3e}")

# Hermiticity of the position operator: C_j(p) = conj(C_{-j}(p - jb))
c1 = coupling_C(V, B, 1, p)
c2 = np.conj(coupling_C(V, B, -1, p - b))
print(f"symmetry defect: {abs(c1 - c2):.2e}")

ps = np.array([10.0, 30.0, 100.0]) * b + 0.37
vals = [abs(coupling_C(V, B, 1, q + b)) for q in ps]
slope = -np.polyfit(np.log(ps), np.log(vals), 1)[0]
print(f"large-p decay exponent of |C_1(p + b)|: {slope:.3f}")
