"""Bernstein-polynomial baseline machinery.

The baseline survival function is a Bernstein-polynomial distortion of a
parametric survival curve: S0(t) = D(S_theta(t) | J, w) where D is a mixture
of Beta(j, J-j+1) distribution functions with simplex weights w, and S_theta
is one of three two-parameter centering families (log-logistic, log-normal,
Weibull) parameterized on R^2.  Equal weights w_j = 1/J recover S_theta
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, ndtr

FAMILIES = ("loglogistic", "lognormal", "weibull")

# Transform values are clamped away from {0,1} before entering the Bernstein
# basis; avoids log(0) at extreme times.
_CLAMP = 1e-15
_LOG2PI = float(np.log(2.0 * np.pi))


def _check_family(family):
    if family not in FAMILIES:
        raise ValueError(f"unknown centering family {family!r}; expected one of {FAMILIES}")


def family_survival(family, theta, t):
    """Survival function S_theta(t) of a centering family, vectorized in t.

    theta = (theta1, theta2) lives on R^2: exp(theta1) is a rate and
    exp(theta2) a shape for the log-logistic/Weibull; for the log-normal,
    S(t) = 1 - Phi((log t + theta1) * exp(theta2)).
    """
    _check_family(family)
    t = np.asarray(t, dtype=float)
    th1, th2 = float(theta[0]), float(theta[1])
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        logt = np.log(t)
        if family == "loglogistic":
            # S = 1 / (1 + (e^th1 t)^k), k = e^th2
            loggy = np.exp(th2) * (th1 + logt)
            s = 1.0 / (1.0 + np.exp(loggy))
        elif family == "lognormal":
            z = (logt + th1) * np.exp(th2)
            s = ndtr(-z)
        else:  # weibull
            loggy = np.exp(th2) * (th1 + logt)
            s = np.exp(-np.exp(loggy))
    s = np.where(t <= 0.0, 1.0, s)
    s = np.where(np.isposinf(t), 0.0, s)
    return s


def family_log_density(family, theta, t):
    """log f_theta(t) of a centering family; -inf where t <= 0."""
    _check_family(family)
    t = np.asarray(t, dtype=float)
    th1, th2 = float(theta[0]), float(theta[1])
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        logt = np.log(t)
        if family == "loglogistic":
            # f = (k/t) y / (1+y)^2 with y = (e^th1 t)^k
            logy = np.exp(th2) * (th1 + logt)
            out = th2 - logt + logy - 2.0 * np.logaddexp(0.0, logy)
        elif family == "lognormal":
            z = (logt + th1) * np.exp(th2)
            out = -0.5 * z * z - 0.5 * _LOG2PI + th2 - logt
        else:  # weibull
            logy = np.exp(th2) * (th1 + logt)
            out = th2 - logt + logy - np.exp(logy)
    return np.where((t <= 0.0) | ~np.isfinite(t), -np.inf, out)


def family_density(family, theta, t):
    """Density f_theta(t); zero where t <= 0 or t = inf."""
    return np.exp(family_log_density(family, theta, t))


@dataclass(frozen=True)
class CenteringFamily:
    """A centering survival family tag plus its R^2 parameter."""

    name: str
    theta: tuple

    def __post_init__(self):
        _check_family(self.name)

    def survival(self, t):
        return family_survival(self.name, self.theta, t)

    def density(self, t):
        return family_density(self.name, self.theta, t)

    def log_density(self, t):
        return family_log_density(self.name, self.theta, t)


# ---------------------------------------------------------------------------
# Bernstein polynomial basis
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _comb_row(ntrials):
    k = np.arange(ntrials + 1)
    logc = gammaln(ntrials + 1) - gammaln(k + 1) - gammaln(ntrials - k + 1)
    return np.exp(logc)


def _pmf_rows(x, ntrials):
    """Rows k = 0..ntrials of C(ntrials,k) x^k (1-x)^(ntrials-k), shape (ntrials+1, N).

    Row-major power recurrences keep every operation contiguous; this is the
    innermost kernel of every likelihood evaluation.
    """
    x = np.asarray(x, dtype=float)
    N = x.shape[0]
    y = 1.0 - x
    xp = np.empty((ntrials + 1, N))
    yp = np.empty((ntrials + 1, N))
    xp[0] = 1.0
    yp[0] = 1.0
    for k in range(1, ntrials + 1):
        np.multiply(xp[k - 1], x, out=xp[k])
        np.multiply(yp[k - 1], y, out=yp[k])
    xp *= yp[::-1]
    xp *= _comb_row(ntrials)[:, None]
    return xp


def bernstein_cdf_rows(x, J):
    """Rows j = 1..J of Delta_{j,J}(x), shape (J, len(x)).

    Uses the downward recursion Delta_{j+1,J} = Delta_{j,J} - C(J,j) x^j (1-x)^(J-j),
    equivalently the binomial tail identity Delta_{j,J}(x) = P(Bin(J,x) >= j).
    """
    pmf = _pmf_rows(x, J)
    tail = 1.0 - np.cumsum(pmf[:-1], axis=0)
    return np.clip(tail, 0.0, 1.0, out=tail)


def bernstein_pdf_rows(x, J):
    """Rows j = 1..J of delta_{j,J}(x), shape (J, len(x))."""
    pmf = _pmf_rows(x, J - 1)
    pmf *= J
    return pmf


def bernstein_cdf_basis(x, J):
    """Beta(j, J-j+1) cdf values Delta_{j,J}(x) for j = 1..J, shape (len(x), J)."""
    return bernstein_cdf_rows(x, J).T


def bernstein_pdf_basis(x, J):
    """Beta(j, J-j+1) density values delta_{j,J}(x) for j = 1..J, shape (len(x), J)."""
    return bernstein_pdf_rows(x, J).T


def _check_simplex(w, J, tol=1e-8):
    w = np.asarray(w, dtype=float)
    if w.shape != (J,):
        raise ValueError(f"weight vector must have length {J}, got shape {w.shape}")
    if np.any(w <= 0.0) or abs(w.sum() - 1.0) > tol:
        raise ValueError("weights must be positive and sum to 1")
    return w


def bernstein_cdf(x, J, w):
    """Mixture cdf D(x | J, w) = sum_j w_j Delta_{j,J}(x) for x in [0, 1]."""
    x = np.asarray(x, dtype=float)
    if np.any((x < 0.0) | (x > 1.0)):
        raise ValueError("x must lie in [0, 1]")
    w = _check_simplex(w, J)
    out = bernstein_cdf_basis(np.atleast_1d(x), J) @ w
    return float(out[0]) if x.ndim == 0 else out


def bernstein_pdf(x, J, w):
    """Mixture density d(x | J, w) = sum_j w_j delta_{j,J}(x) for x in [0, 1]."""
    x = np.asarray(x, dtype=float)
    if np.any((x < 0.0) | (x > 1.0)):
        raise ValueError("x must lie in [0, 1]")
    w = _check_simplex(w, J)
    out = bernstein_pdf_basis(np.atleast_1d(x), J) @ w
    return float(out[0]) if x.ndim == 0 else out


# ---------------------------------------------------------------------------
# Simplex weights <-> logits
# ---------------------------------------------------------------------------

def weights_from_logits(z):
    """Softmax with the last logit pinned at zero: w_j = e^{z_j} / sum_k e^{z_k}."""
    z = np.asarray(z, dtype=float)
    zfull = np.append(z, 0.0)
    zfull -= zfull.max()
    ez = np.exp(zfull)
    return ez / ez.sum()


def logits_from_weights(w):
    """Inverse of weights_from_logits: z_j = log w_j - log w_J (length J-1)."""
    w = np.asarray(w, dtype=float)
    return np.log(w[:-1]) - np.log(w[-1])


def dirichlet_symmetric_logpdf(w, alpha):
    """log Dirichlet(alpha, ..., alpha) density of a simplex vector w."""
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    w = np.asarray(w, dtype=float)
    J = w.shape[0]
    return float(gammaln(alpha * J) - J * gammaln(alpha) + (alpha - 1.0) * np.log(w).sum())


def tbp_log_prior(z, alpha, J):
    """Log prior of the baseline weight logits z (length J-1) under a
    symmetric Dirichlet(alpha) on w, including the z -> w Jacobian.

    Equals log Gamma(alpha J) - J log Gamma(alpha) + alpha * sum_j log w_j(z).
    """
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    z = np.asarray(z, dtype=float)
    if z.shape != (J - 1,):
        raise ValueError(f"z must have length J-1 = {J - 1}")
    w = weights_from_logits(z)
    return float(gammaln(alpha * J) - J * gammaln(alpha) + alpha * np.log(w).sum())


def alpha_log_prior_at_zero(alpha, J):
    """log p(z = 0 | alpha) = log Gamma(alpha J) - J (alpha log J + log Gamma(alpha))."""
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    return float(gammaln(alpha * J) - J * (alpha * np.log(J) + gammaln(alpha)))


# ---------------------------------------------------------------------------
# The transformed baseline distribution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TbpBaseline:
    """Baseline survival S0(t) = D(S_theta(t) | J, w) with density
    f0(t) = d(S_theta(t) | J, w) f_theta(t)."""

    J: int
    w: np.ndarray
    family: CenteringFamily

    @classmethod
    def from_logits(cls, z, family, J=None):
        z = np.asarray(z, dtype=float)
        J = int(J if J is not None else z.shape[0] + 1)
        return cls(J=J, w=weights_from_logits(z), family=family)

    @classmethod
    def equal_weights(cls, J, family):
        return cls(J=J, w=np.full(J, 1.0 / J), family=family)

    def __post_init__(self):
        _check_simplex(self.w, self.J, tol=1e-10)

    @property
    def z(self):
        return logits_from_weights(self.w)

    def _transform(self, t):
        s = family_survival(self.family.name, self.family.theta, t)
        return np.clip(s, _CLAMP, 1.0 - _CLAMP)

    def survival(self, t):
        """S0(t) for t >= 0 (scalar or array)."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        x = self._transform(np.atleast_1d(t))
        out = bernstein_cdf_basis(x, self.J) @ self.w
        out = np.where(np.atleast_1d(t) <= 0.0, 1.0, out)
        out = np.where(np.isposinf(np.atleast_1d(t)), 0.0, out)
        return float(out[0]) if scalar else out

    def log_density(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tv = np.atleast_1d(t)
        x = self._transform(tv)
        d = bernstein_pdf_basis(x, self.J) @ self.w
        logf = family_log_density(self.family.name, self.family.theta, tv)
        out = np.log(np.maximum(d, 1e-300)) + logf
        return float(out[0]) if scalar else out

    def density(self, t):
        """f0(t) = d(S_theta(t)) f_theta(t)."""
        return np.exp(self.log_density(t))
