"""Least-squares estimators of conditional expectations on polynomial features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RegressionError, SpecError

COND_LIMIT = 1e10


@dataclass(frozen=True)
class RegressionBasis:
    """Monomials of total degree <= ``degree`` in the own state and the cross-player mean state."""

    degree: int = 2
    ridge: float = 0.0
    use_mean: bool = True

    def __post_init__(self):
        if not 0 <= int(self.degree) <= 3:
            raise SpecError("basis degree must be between 0 and 3")
        if self.ridge < 0:
            raise SpecError("ridge parameter must be nonnegative")

    @property
    def exponents(self):
        d = int(self.degree)
        if not self.use_mean:
            return [(a, 0) for a in range(d + 1)]
        return [(a, tot - a) for tot in range(d + 1) for a in range(tot, -1, -1)]

    @property
    def size(self) -> int:
        return len(self.exponents)

    def features(self, own, mean=None) -> np.ndarray:
        own = np.asarray(own, dtype=float)
        if mean is None or not self.use_mean:
            mean = np.zeros_like(own)
        mean = np.broadcast_to(np.asarray(mean, dtype=float), own.shape)
        cols = [own**a * mean**b for a, b in self.exponents]
        return np.stack(cols, axis=-1)


class Projector:
    """Ridge projection onto the span of a design whose first column is the intercept.

    Columns that are numerically constant are dropped, the rest are
    standardized. A ridge term is added automatically when the condition
    number of the standardized design exceeds ``1e10``.
    """

    def __init__(self, design: np.ndarray, ridge: float = 0.0):
        design = np.asarray(design, dtype=float)
        if design.ndim != 2:
            raise SpecError("design must be two-dimensional")
        m, p = design.shape
        self.width = p
        mu = design.mean(axis=0)
        sd = design.std(axis=0)
        keep = sd > 1e-9 * (1.0 + np.abs(mu))
        keep[0] = False
        self.keep = np.nonzero(keep)[0]
        self.mu = mu[self.keep]
        self.sd = sd[self.keep]
        std = np.empty((m, self.keep.size + 1))
        std[:, 0] = 1.0
        std[:, 1:] = (design[:, self.keep] - self.mu) / self.sd
        if m <= std.shape[1] - 1:
            raise RegressionError(f"need more samples ({m}) than basis functions ({std.shape[1]})")
        u, s, vt = np.linalg.svd(std, full_matrices=False)
        cond = s[0] / s[-1] if s[-1] > 0 else np.inf
        lam = ridge * m
        if cond > COND_LIMIT and lam == 0.0:
            lam = 1e-10 * s[0] ** 2
        eff = np.sqrt(s[0] ** 2 + lam) / np.sqrt(s[-1] ** 2 + lam)
        if not np.isfinite(eff) or eff > 1e14:
            raise RegressionError(f"design rank deficient after ridge (condition number {cond:.3g})", cond)
        self.condition_number = float(cond)
        self.ridge_used = float(lam)
        self._u = u
        self._gain = s / (s * s + lam)
        self._vt = vt
        self._std = std

    def coefficients(self, targets: np.ndarray) -> np.ndarray:
        """Standardized-space coefficients, shape (p', T) or (p',)."""
        proj = self._u.T @ targets
        scaled = (self._gain[:, None] * proj) if proj.ndim == 2 else self._gain * proj
        return self._vt.T @ scaled

    def fit(self, targets: np.ndarray) -> np.ndarray:
        """Fitted values of the projection of each target column."""
        return self._std @ self.coefficients(targets)

    def raw_coefficients(self, targets: np.ndarray) -> np.ndarray:
        """Coefficients on the original design columns (zeros for dropped columns)."""
        c = self.coefficients(targets)
        squeeze = c.ndim == 1
        if squeeze:
            c = c[:, None]
        raw = np.zeros((self.width, c.shape[1]))
        slopes = c[1:] / self.sd[:, None]
        raw[self.keep] = slopes
        raw[0] = c[0] - (self.mu[:, None] * slopes).sum(axis=0)
        return raw[:, 0] if squeeze else raw


def regress_conditional_expectation(targets, features, ridge: float = 0.0):
    """Ridge least squares of ``targets`` on the columns of ``features``.

    Returns ``(coefficients, fitted values)``. Raises
    :class:`RegressionError` when the design stays rank deficient.
    """
    y = np.asarray(targets, dtype=float)
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    m, p = x.shape
    if m <= p:
        raise RegressionError(f"need more samples ({m}) than basis functions ({p})")
    s = np.linalg.svd(x, compute_uv=False)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    lam = ridge * m
    if lam == 0.0:
        if cond > 1e14:
            raise RegressionError(f"design rank deficient (condition number {cond:.3g})", cond)
        coef = np.linalg.lstsq(x, y, rcond=None)[0]
    else:
        coef = np.linalg.solve(x.T @ x + lam * np.eye(p), x.T @ y)
    return coef, x @ coef


def ols_standard_errors(targets, features):
    """OLS coefficients with heteroscedasticity-robust (HC0) standard errors."""
    y = np.asarray(targets, dtype=float)
    x = np.asarray(features, dtype=float)
    coef, fitted = regress_conditional_expectation(y, x)
    resid = y - fitted
    xtx_inv = np.linalg.pinv(x.T @ x)
    meat = (x * resid[:, None] ** 2).T @ x
    cov = xtx_inv @ meat @ xtx_inv
    return coef, np.sqrt(np.maximum(np.diag(cov), 0.0))

