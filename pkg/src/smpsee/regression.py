"""Least-squares polynomial regression used for conditional expectations."""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.preprocessing import PolynomialFeatures
from sklearn.utils.validation import check_array, check_is_fitted

log = logging.getLogger(__name__)


class RegressionBasis(RegressorMixin, BaseEstimator):
    """Polynomial basis on a subset of state modes, fit by least squares.

    Regressors are standardised before the polynomial expansion. If the
    design matrix is rank deficient on the sample the degree is lowered until
    it has full column rank (down to the constant basis).

    Parameters
    ----------
    degree : int, default=2
    active_modes : sequence of int or None
        State coordinates used as regressors. ``None`` takes the first
        ``min(n_state, 4)``.
    """

    def __init__(self, degree: int = 2, active_modes=None):
        self.degree = degree
        self.active_modes = active_modes

    def _modes(self, n_features):
        if self.active_modes is None:
            return np.arange(min(n_features, 4))
        return np.asarray(self.active_modes, dtype=int)

    def _design(self, X, degree):
        Xs = (X[:, self.modes_] - self.center_) / self.scale_
        return PolynomialFeatures(degree).fit_transform(Xs)

    def fit(self, X, Y):
        X = check_array(X)
        Y = np.asarray(Y, dtype=float)
        self.modes_ = self._modes(X.shape[1])
        sub = X[:, self.modes_]
        self.center_ = sub.mean(axis=0)
        spread = sub.std(axis=0)
        self.scale_ = np.where(spread > 0, spread, 1.0)
        for degree in range(self.degree, -1, -1):
            design = self._design(X, degree)
            coef, _, rank, _ = np.linalg.lstsq(design, Y, rcond=None)
            if rank == design.shape[1]:
                break
            log.info("regression design rank %d < %d at degree %d; lowering degree",
                     rank, design.shape[1], degree)
        self.degree_ = degree
        self.coef_ = coef
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return self._design(X, self.degree_) @ self.coef_


def conditional_expectation(X, Y, basis: RegressionBasis):
    """Regress ``Y`` on ``basis(X)`` and return in-sample fitted values and the fit degree.

    Responses that are identical across paths are returned unchanged: the
    conditional expectation of a constant is exact.
    """
    Y = np.asarray(Y, dtype=float)
    if np.all(Y == Y[:1]):
        return Y.copy(), None
    flat = Y.reshape(Y.shape[0], -1)
    est = RegressionBasis(**basis.get_params()).fit(X, flat)
    return est.predict(X).reshape(Y.shape), est.degree_


def cross_validated_se(X, Y, basis: RegressionBasis, n_folds: int = 5, seed: int = 0) -> float:
    """Standard error of the fitted conditional mean, by K-fold resampling.

    The RMS gap between fold fits and the full-sample fit has variance
    ``(1/(1 - 1/K) - 1)`` times that of the full fit, so it is rescaled by
    ``sqrt(K - 1)``. Zero for responses that are constant across paths.
    """
    Y = np.asarray(Y, dtype=float).reshape(len(Y), -1)
    if np.all(Y == Y[:1]):
        return 0.0
    full = RegressionBasis(**basis.get_params()).fit(X, Y)
    folds = np.random.default_rng(seed).permutation(len(Y)) % n_folds
    sq = 0.0
    for k in range(n_folds):
        test = folds == k
        est = RegressionBasis(**basis.get_params()).fit(X[~test], Y[~test])
        sq += np.sum((est.predict(X[test]) - full.predict(X[test])) ** 2)
    return float(np.sqrt(sq / Y.size) * np.sqrt(n_folds - 1))
