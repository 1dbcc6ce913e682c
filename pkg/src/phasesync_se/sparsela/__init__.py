"""Sparse Hermitian linear algebra: ordering, Cholesky, inverse iteration, eigenvalue bounds."""
from .cholesky import CholFactor, NotPositiveDefinite, Symbolic, analyze, cholesky, solve
from .eigen import EigResult, FactorizationError, min_eig_lower_bound, min_eigvec, spectral_gap
from .ordering import Ordering, fill_order

__all__ = ["CholFactor", "NotPositiveDefinite", "Symbolic", "analyze", "cholesky", "solve",
           "EigResult", "FactorizationError", "min_eig_lower_bound", "min_eigvec", "spectral_gap",
           "Ordering", "fill_order"]
