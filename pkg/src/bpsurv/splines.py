"""Cubic B-spline expansions for partially linear predictors.

A nonlinear term for covariate l is u_l(x) = sum_k xi_k B_k(x) built from a
standard cubic B-spline basis with interior knots at data quantiles.  The
first and last raw basis functions are dropped (the linear term is already in
the model) and the retained columns are mean-centered over the data, so the
term is identified against the baseline.  Coefficients get the normal prior
N_K(0, g n (X_l' X_l)^{-1}) with g = [log M / Phi^{-1}(q)]^2 / K, M=10, q=0.9.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.special import ndtri

DEGREE = 3  # cubic


def gprior_scale(dim, big=10.0, prob=0.9):
    """g = [log(big) / Phi^{-1}(prob)]^2 / dim."""
    return float((np.log(big) / ndtri(prob)) ** 2 / dim)


@dataclass
class SplineTerm:
    """Centered cubic B-spline design for one covariate.

    design has K columns (raw basis minus first/last, mean-centered); g is the
    prior scale; prior_cov = g n (X'X)^{-1}.
    """

    name: str
    K: int
    knots: np.ndarray          # full knot vector (boundary multiplicities included)
    col_means: np.ndarray      # means of the retained raw columns
    design: np.ndarray = field(repr=False)
    xmin: float = 0.0
    xmax: float = 1.0
    g: float = 0.0
    prior_cov: np.ndarray = field(default=None, repr=False)

    def raw_rows(self, x):
        """Rows of the retained (dropped-boundary) raw basis at new points.

        Points outside the training range are clamped with a warning.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any((x < self.xmin) | (x > self.xmax)):
            warnings.warn("spline term evaluated outside its data range; clamping",
                          stacklevel=2)
            x = np.clip(x, self.xmin, self.xmax)
        full = BSpline.design_matrix(x, self.knots, DEGREE, extrapolate=False).toarray()
        return full[:, 1:-1]

    def rows(self, x):
        """Centered basis rows at new points (what enters the predictor)."""
        return self.raw_rows(x) - self.col_means

    def evaluate(self, x, xi):
        """u(x) = centered basis row dot xi; scalar in, scalar out."""
        xi = np.asarray(xi, dtype=float)
        out = self.rows(x) @ xi
        return float(out[0]) if np.ndim(x) == 0 else out


def build_basis(values, K=5, name="x"):
    """Construct a SplineTerm from observed covariate values.

    K retained columns come from a raw basis of K+2 cubic B-splines, i.e.
    K-2 interior knots at equispaced quantiles of the data.
    """
    values = np.asarray(values, dtype=float)
    if K < 1:
        raise ValueError("K must be at least 1")
    distinct = np.unique(values)
    if distinct.size < K + 5:
        raise ValueError(f"need at least K+5={K + 5} distinct values, got {distinct.size}")
    xmin, xmax = float(distinct[0]), float(distinct[-1])
    n_interior = K + 2 - (DEGREE + 1)
    if n_interior < 0:
        raise ValueError("K too small for a cubic basis; need K >= 2")
    if n_interior:
        qs = np.linspace(0, 1, n_interior + 2)[1:-1]
        interior = np.quantile(values, qs)
        if np.unique(interior).size != interior.size or interior[0] <= xmin \
                or interior[-1] >= xmax:
            raise ValueError("data quantiles give degenerate interior knots")
    else:
        interior = np.zeros(0)
    knots = np.concatenate([[xmin] * (DEGREE + 1), interior, [xmax] * (DEGREE + 1)])
    full = BSpline.design_matrix(values, knots, DEGREE, extrapolate=False).toarray()
    raw = full[:, 1:-1]
    col_means = raw.mean(axis=0)
    design = raw - col_means
    g = gprior_scale(K)
    xtx = design.T @ design
    n = values.shape[0]
    prior_cov = g * n * np.linalg.inv(xtx + 1e-12 * np.eye(K))
    prior_cov = 0.5 * (prior_cov + prior_cov.T)
    return SplineTerm(name=name, K=K, knots=knots, col_means=col_means, design=design,
                      xmin=xmin, xmax=xmax, g=g, prior_cov=prior_cov)
