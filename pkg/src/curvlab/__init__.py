"""curvlab: a desk-scale laboratory for scalar-curvature stability under
C0 metric perturbations, built on harmonic-function level-set functionals."""

__version__ = "0.1.0"
