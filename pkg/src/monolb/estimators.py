"""Thin scikit-learn style wrappers over the functional API.

Only steps with a natural fit/transform reading are wrapped: building the
moment-matched pair (fit only), projecting truth tables onto monotone
functions, encoding coefficient vectors as sign-pattern keys, and pruning a
query set.  All hyper-parameters are constructor arguments, so
``get_params``/``set_params``/``clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_sign_matrix
from .momentlab import build_pair, relative_moment_errors, gaussian_raw_moments
from .monodist import TruthTable, monotone_projection
from .orthants import pattern_keys, sign_pattern
from .pruning import PruneParams, prune


class MomentMatchedPair(BaseEstimator):
    """Build the yes/no variables sharing the first ``ell`` Gaussian moments.

    Parameters
    ----------
    ell : int
        Odd number of matched moments.
    mu : int or None
        Gaussian mean; ``None`` searches for the smallest feasible value.
    grid_size : int
        Candidate-grid size for the no-variable linear program.

    Attributes
    ----------
    pair_ : YesNoPair
    mu_ : int
    residuals_ : dict
        Relative moment errors of both variables.
    """

    def __init__(self, ell: int = 3, mu: int | None = None, grid_size: int = 200):
        self.ell = ell
        self.mu = mu
        self.grid_size = grid_size

    def fit(self, X=None, y=None):
        self.pair_ = build_pair(self.ell, self.mu, self.grid_size)
        self.mu_ = self.pair_.mu
        target = gaussian_raw_moments(self.mu_, self.ell)
        self.residuals_ = {"yes": relative_moment_errors(self.pair_.yes_rv, target),
                           "no": relative_moment_errors(self.pair_.no_rv, target)}
        return self


class MonotoneProjector(TransformerMixin, BaseEstimator):
    """Map truth tables to a nearest monotone function (exact min cut).

    ``X`` is a ``(m, 2^n)`` array of +-1 truth-table values in little-endian
    point order.  ``transform`` returns the projected tables and stores the
    exact distances in ``distances_``.
    """

    def fit(self, X, y=None):
        X = self._check(X)
        self.n_ = int(np.log2(X.shape[1]))
        return self

    def transform(self, X):
        check_is_fitted(self, "n_")
        X = self._check(X)
        if X.shape[1] != 1 << self.n_:
            raise ValueError(f"expected tables of length {1 << self.n_}, got {X.shape[1]}")
        results = [monotone_projection(TruthTable(self.n_, row)) for row in X]
        self.distances_ = [r.distance for r in results]
        return np.array([r.nearest.values for r in results], dtype=np.int8)

    @staticmethod
    def _check(X) -> np.ndarray:
        X = check_sign_matrix(X, "truth tables")
        size = X.shape[1]
        if size < 2 or size & (size - 1):
            raise ValueError(f"truth-table length must be a power of two >= 2, got {size}")
        return X


class SignPatternEncoder(TransformerMixin, BaseEstimator):
    """Encode coefficient vectors ``(m, d)`` as integer sign-pattern keys.

    ``sign(0) = +1``; values within the zero tolerance of ``scale`` count as 0.
    """

    def __init__(self, scale: float = 1.0):
        self.scale = scale

    def fit(self, X, y=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.d_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "d_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.d_:
            raise ValueError(f"expected {self.d_} columns, got {X.shape[1]}")
        return pattern_keys(sign_pattern(X, self.scale))


class QueryPruner(TransformerMixin, BaseEstimator):
    """Prune a query set until it is scattered.

    ``fit`` runs the pruning procedure on ``X`` (rows in ``{-1, +1}^n``) and
    keeps the trace; ``transform`` returns the surviving rows of the fitted
    set.  Parameters mirror :class:`monolb.pruning.PruneParams`.
    """

    def __init__(self, h: int = 3, eps: float | None = None, log_power: float = 5.0,
                 gamma1: float | None = None, exhaustive_budget: float = 2e6,
                 sampled_subsets: int = 10_000, seed: int = 0):
        self.h = h
        self.eps = eps
        self.log_power = log_power
        self.gamma1 = gamma1
        self.exhaustive_budget = exhaustive_budget
        self.sampled_subsets = sampled_subsets
        self.seed = seed

    def _params(self) -> PruneParams:
        return PruneParams(eps=self.eps, log_power=self.log_power, gamma1=self.gamma1,
                           exhaustive_budget=self.exhaustive_budget,
                           sampled_subsets=self.sampled_subsets, seed=self.seed)

    def fit(self, X, y=None):
        X = check_sign_matrix(X, "query rows")
        pruned, self.trace_ = prune(X, self.h, self._params())
        self.kept_ = self.trace_.kept
        self.n_features_in_ = X.shape[1]
        self._fitted_rows = X
        return self

    def transform(self, X):
        check_is_fitted(self, "trace_")
        X = check_sign_matrix(X, "query rows")
        if not np.array_equal(X, self._fitted_rows):
            raise ValueError("QueryPruner.transform expects the set it was fitted on")
        return X[self.kept_]
