"""Numerical laboratory for rank-2 Higgs bundles on planar desk models.

Subpackages
-----------
numerics     special functions, radial BVPs, Newton solvers on grids, series
quadiff      flat geometry of polynomial quadratic differentials
localmodel   model harmonic metrics and disc solves of the Hitchin equation
spectral     hyperelliptic curves, L2 pairings and residue pairings
approxforms  glued metrics and approximate harmonic End(E)-valued 1-forms
cli          command-line front end
"""

__version__ = "0.1.0"
