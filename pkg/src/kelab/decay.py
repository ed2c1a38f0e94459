"""Fitting exponential decay of sublevel volumes, v(K) ~ C K^n exp(-r K)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

__all__ = ["DecayFit", "fit_decay", "envelope_constant", "reference_rate", "DecayRegressor"]

MIN_POINTS = 4


def reference_rate(n: int, weighted: bool = False) -> float:
    """Exponent 1/(4n+2) of the volume bound, or 1/(4n+4) for |phi|-weighted volumes."""
    return 1.0 / (4 * n + 4) if weighted else 1.0 / (4 * n + 2)


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit of log v(K) - n log K = log C - r K above a floor.

    ``conclusive`` is False when fewer than four volumes exceed the floor;
    C, r and R^2 are then NaN.
    """

    K: tuple
    volumes: tuple
    n: int
    C: float
    r: float
    r_squared: float
    floor: float
    n_used: int

    @property
    def conclusive(self) -> bool:
        return self.n_used >= MIN_POINTS

    def predict(self, K):
        K = np.asarray(K, dtype=float)
        return self.C * K ** self.n * np.exp(-self.r * K)


def fit_decay(K_grid, volumes, n: int, floor: Optional[float] = None,
              V: float = 1.0) -> DecayFit:
    """Fit (C, r) to the sublevel volumes.

    Parameters
    ----------
    K_grid : array_like
        Ascending levels K >= 1.
    volumes : array_like
        Measured v(K).
    n : int
        Complex dimension (power of K in the model).
    floor : float, optional
        Volumes at or below this are ignored (default 1e-14 * V).
    """
    K = np.asarray(K_grid, dtype=float)
    v = np.asarray(volumes, dtype=float)
    if K.shape != v.shape or K.ndim != 1:
        raise ValueError("K-grid and volumes must be matching 1-D arrays")
    if np.any(np.diff(K) <= 0) or (K.size and K[0] < 1):
        raise ValueError("K-grid must be ascending with K >= 1")
    floor = 1e-14 * V if floor is None else float(floor)
    use = v > floor
    m = int(use.sum())
    nan = float("nan")
    if m < MIN_POINTS:
        return DecayFit(tuple(K), tuple(v), n, nan, nan, nan, floor, m)
    x, y = K[use], np.log(v[use]) - n * np.log(K[use])
    A = np.column_stack([np.ones_like(x), -x])
    (logC, r), *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ np.array([logC, r])
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(tuple(K), tuple(v), n, float(np.exp(logC)), float(r), r2, floor, m)


def envelope_constant(K_grid, volumes, n: int, rate: float) -> float:
    """Smallest C with v(K) <= C K^n exp(-rate K) at every grid point.

    Returns 0 when all volumes vanish.
    """
    K = np.asarray(K_grid, dtype=float)
    v = np.asarray(volumes, dtype=float)
    if v.size == 0:
        return 0.0
    return float(max(0.0, np.max(v / (K ** n * np.exp(-rate * K)))))


class DecayRegressor(BaseEstimator, RegressorMixin):
    """Estimator form of :func:`fit_decay`.

    ``X`` holds the K levels (shape (m,) or (m, 1)), ``y`` the volumes.
    """

    def __init__(self, n=1, floor=None, V=1.0):
        self.n = n
        self.floor = floor
        self.V = V

    @staticmethod
    def _levels(X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise ValueError("DecayRegressor expects a single feature (K)")
            X = X[:, 0]
        return X

    def fit(self, X, y):
        self.fit_ = fit_decay(self._levels(X), y, self.n, self.floor, self.V)
        if not self.fit_.conclusive:
            raise ValueError(f"only {self.fit_.n_used} volumes above the floor; "
                             f"need at least {MIN_POINTS}")
        self.C_ = self.fit_.C
        self.rate_ = self.fit_.r
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        return self.fit_.predict(self._levels(X))
