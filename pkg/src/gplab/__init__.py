"""Desk-scale numerics for mean-field limits of bosons with multi-body interactions.

Submodules
----------
lattice      periodic grids, spectral Laplacian, free propagators
tensorio     GPH1 binary tensors, JSON manifests, CSV tables
nls          combined-power NLS solver and conserved functionals
manybody     finite-N bosonic dynamics, marginals, trace distance
hierarchy    density kernels, contraction operators, GP/BBGKY residuals
boardgame    Duhamel collapsing maps, acceptable moves, echelon classes
experiments  convergence scan and bundled residual/bound suites
cli          command-line entry point
"""

__version__ = "0.1.0"
