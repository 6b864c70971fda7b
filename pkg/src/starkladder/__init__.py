"""Wannier-Stark resonances of one-dimensional analytic periodic potentials.

The package follows one pipeline: a finite Fourier potential, the Hill
discriminant, bands and branch points, normalized Bloch functions, the
crystal-momentum coupling coefficients, and finally the complex eigenvalues
of the analytically distorted Stark operator.
"""

__version__ = "0.1.0"

from .potential import (
    PeriodicPotential, PotentialError, free_potential, make_potential, eval_V, eval_Q,
    potential_from_dict, load_potential,
)
from .hill import FundamentalPair, HillSolverError, fundamental_system, discriminant, monodromy, monodromy_eigenvalue
from .bands import (
    BandError, BandStructure, compute_edges, band_edges, band_function, multisheeted_E, kohn_branch_point,
    band_table, branch_table,
)
from .bloch import BlochError, BlochEval, bloch_at, u_and_derivatives, periodic_part_on_grid, identification_phase
from .cmr import CouplingTable, alpha, coupling_C, X_intraband, build_coupling_table, suggest_j_max
from .stark import (
    StarkError, LadderSpectrum, DistortedOperator, GridParams, CutGrid, GridCouplings, Resonance, ResonanceSet,
    ladder, ladder_eigenvector, resolvent_H1, make_grid, gap_width, grid_couplings, zak_shift,
    assemble_distorted, default_F_N, resonances,
)

__all__ = [
    "PeriodicPotential", "PotentialError", "free_potential", "make_potential", "eval_V", "eval_Q",
    "potential_from_dict", "load_potential",
    "FundamentalPair", "HillSolverError", "fundamental_system", "discriminant", "monodromy",
    "monodromy_eigenvalue",
    "BandError", "BandStructure", "compute_edges", "band_edges", "band_function", "multisheeted_E",
    "kohn_branch_point", "band_table", "branch_table",
    "BlochError", "BlochEval", "bloch_at", "u_and_derivatives", "periodic_part_on_grid", "identification_phase",
    "CouplingTable", "alpha", "coupling_C", "X_intraband", "build_coupling_table", "suggest_j_max",
    "StarkError", "LadderSpectrum", "DistortedOperator", "GridParams", "CutGrid", "GridCouplings", "Resonance",
    "ResonanceSet", "ladder", "ladder_eigenvector", "resolvent_H1", "make_grid", "gap_width", "grid_couplings",
    "zak_shift", "assemble_distorted", "default_F_N", "resonances",
    "__version__",
]
