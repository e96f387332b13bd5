"""AFT, PH, and PO survival models and the arbitrary-censoring likelihood.

With linear predictor eta = x'(gamma*beta) + sum_l u_l(x_l) + v_i and baseline
survival S0, the three models are

    aft:  S_x(t) = S0(e^eta t)
    ph:   S_x(t) = S0(t)^(e^eta)
    po:   S_x(t) = e^-eta S0(t) / (1 + (e^-eta - 1) S0(t))

An observation (u, a, b) contributes f_x(a) when a == b and
S_x(a) - S_x(b) otherwise, divided by S_x(u) when left-truncated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .baseline import (
    bernstein_cdf_rows,
    bernstein_pdf_rows,
    family_log_density,
    family_survival,
    _CLAMP,
)

MODELS = ("aft", "ph", "po")

_FLOOR = 1e-300


def _check_model(model):
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


@dataclass
class RegressionState:
    """Regression parameters entering the linear predictor.

    gamma defaults to all-ones (no selection); xi is an optional list of
    per-term spline coefficient vectors; v is the frailty vector (length m).
    """

    beta: np.ndarray
    gamma: np.ndarray = None
    xi: list = None
    v: np.ndarray = None

    def effective_beta(self):
        b = np.asarray(self.beta, dtype=float)
        if self.gamma is None:
            return b
        return b * np.asarray(self.gamma, dtype=float)


def linear_predictor(dataset, state, spline_terms=None):
    """eta_i = x_i'(gamma*beta) + sum_l u_l(x_il) + v_{loc(i)}."""
    eta = dataset.X @ state.effective_beta()
    if spline_terms:
        for term, xi in zip(spline_terms, state.xi or []):
            eta = eta + term.design @ np.asarray(xi, dtype=float)
    if state.v is not None:
        eta = eta + np.asarray(state.v, dtype=float)[dataset.loc - 1]
    return eta


# ---------------------------------------------------------------------------
# Scalar/ndarray reference implementations
# ---------------------------------------------------------------------------

def surv(model, t, eta, baseline):
    """S_x(t) for one linear-predictor value; vectorized over t."""
    _check_model(model)
    t = np.asarray(t, dtype=float)
    if model == "aft":
        out = baseline.survival(np.exp(eta) * t)
    elif model == "ph":
        s0 = np.maximum(baseline.survival(t), _FLOOR)
        out = np.exp(np.exp(eta) * np.log(s0))
    else:
        s0 = baseline.survival(t)
        r = np.exp(-eta)
        out = r * s0 / ((1.0 - s0) + r * s0)
    return out


def dens(model, t, eta, baseline):
    """f_x(t) = -dS_x/dt; vectorized over t."""
    _check_model(model)
    t = np.asarray(t, dtype=float)
    if model == "aft":
        return np.exp(eta) * baseline.density(np.exp(eta) * t)
    if model == "ph":
        s0 = np.maximum(baseline.survival(t), _FLOOR)
        ee = np.exp(eta)
        return ee * np.exp((ee - 1.0) * np.log(s0)) * baseline.density(t)
    s0 = baseline.survival(t)
    r = np.exp(-eta)
    return r * baseline.density(t) / ((1.0 - s0) + r * s0) ** 2


def obs_loglik(model, obs, eta, baseline):
    """Log-likelihood of one observation at a given linear predictor.

    Returns -inf (rather than raising) when the observation interval carries
    no probability mass under the current parameters.
    """
    if obs.a == obs.b:
        ll = math.log(max(dens(model, obs.a, eta, baseline), _FLOOR))
        if dens(model, obs.a, eta, baseline) <= 0.0:
            ll = -math.inf
    else:
        sa = surv(model, obs.a, eta, baseline) if obs.a > 0 else 1.0
        sb = surv(model, obs.b, eta, baseline) if math.isfinite(obs.b) else 0.0
        mass = sa - sb
        ll = math.log(max(mass, _FLOOR)) if mass > 0.0 else -math.inf
    if obs.u > 0.0:
        su = surv(model, obs.u, eta, baseline)
        ll -= math.log(max(su, _FLOOR))
    return ll


def total_loglik(model, dataset, state, baseline, spline_terms=None):
    """Sum of per-observation log-likelihoods plus the per-observation vector.

    The vector is what model criteria (CPO/WAIC) consume.  Uses the vectorized
    evaluator; summation order is fixed, so results are deterministic.
    """
    if dataset.n == 0:
        return 0.0, np.zeros(0)
    ev = LikelihoodEvaluator(dataset, model, baseline.family.name, baseline.J)
    eta = linear_predictor(dataset, state, spline_terms)
    cache = ev.build_cache(np.asarray(baseline.family.theta, dtype=float), eta)
    ll = ev.loglik_obs(cache, baseline.w, eta)
    return float(ll.sum()), ll


# ---------------------------------------------------------------------------
# Vectorized evaluator (the MCMC hot path)
# ---------------------------------------------------------------------------

class LikelihoodEvaluator:
    """Vectorized per-observation log-likelihood for one dataset and model.

    The Bernstein basis matrices depend only on theta (and, for the AFT model,
    on eta through the time rescaling), so they are built once per (theta, eta)
    in build_cache and reused across weight updates.
    """

    def __init__(self, dataset, model, family, J):
        _check_model(model)
        self.model = model
        self.family = family
        self.J = int(J)
        self.n = dataset.n
        self.a = dataset.a.copy()
        self.b = dataset.b.copy()
        self.u = dataset.u.copy()
        self.loc0 = dataset.loc - 1  # 0-based site index per observation
        self.m = dataset.m

        self.idx_exact = np.flatnonzero(self.a == self.b)
        self.idx_cens = np.flatnonzero(self.a < self.b)
        self.idx_bfin = self.idx_cens[np.isfinite(self.b[self.idx_cens])]
        self.idx_trunc = np.flatnonzero(self.u > 0.0)
        # positions of the b and u sections inside the stacked point vector
        self._nb = self.idx_bfin.size
        self._nu = self.idx_trunc.size
        self._pts = np.concatenate([self.a, self.b[self.idx_bfin], self.u[self.idx_trunc]])
        # a-entries equal to zero (left censoring) transform to S_theta = 1 exactly
        self._scale_idx = np.concatenate([np.arange(self.n), self.idx_bfin, self.idx_trunc])

    def build_cache(self, theta, eta=None):
        """Precompute basis matrices and centering-density terms.

        For the AFT model eta must be supplied and the cache is only valid for
        that eta; for PH/PO the cache depends on theta alone.
        """
        if self.model == "aft":
            if eta is None:
                raise ValueError("aft cache requires eta")
            scale = np.exp(eta)
            pts = self._pts * scale[self._scale_idx]
        else:
            pts = self._pts
        x = family_survival(self.family, theta, pts)
        np.clip(x, _CLAMP, 1.0 - _CLAMP, out=x)
        cdfb = bernstein_cdf_rows(x, self.J)
        xa_exact = x[self.idx_exact]
        pdfb = bernstein_pdf_rows(xa_exact, self.J)
        t_exact = pts[self.idx_exact]
        logf = family_log_density(self.family, theta, t_exact)
        return {"cdfb": cdfb, "pdfb": pdfb, "logf_exact": logf,
                "theta": np.array(theta, dtype=float),
                "eta": None if eta is None else np.array(eta, dtype=float)}

    def loglik_obs(self, cache, w, eta):
        """Per-observation log-likelihood vector given a cache for (theta, eta)."""
        n = self.n
        S0 = w @ cache["cdfb"]
        S0a = S0[:n]
        S0b = S0[n:n + self._nb]
        S0u = S0[n + self._nb:]
        d0 = w @ cache["pdfb"] if self.idx_exact.size else np.zeros(0)

        if self.model == "aft":
            Sa, Sb, Su = S0a, S0b, S0u
            logf = eta[self.idx_exact] + np.log(np.maximum(d0, _FLOOR)) + cache["logf_exact"]
        elif self.model == "ph":
            ee = np.exp(eta)
            logS0a = np.log(np.maximum(S0a, _FLOOR))
            Sa = np.exp(ee * logS0a)
            Sb = np.exp(ee[self.idx_bfin] * np.log(np.maximum(S0b, _FLOOR)))
            Su = np.exp(ee[self.idx_trunc] * np.log(np.maximum(S0u, _FLOOR)))
            logf = (eta[self.idx_exact]
                    + (ee[self.idx_exact] - 1.0) * logS0a[self.idx_exact]
                    + np.log(np.maximum(d0, _FLOOR)) + cache["logf_exact"])
        else:  # po
            r = np.exp(-eta)
            den_a = (1.0 - S0a) + r * S0a
            Sa = r * S0a / den_a
            rb = r[self.idx_bfin]
            Sb = rb * S0b / ((1.0 - S0b) + rb * S0b)
            ru = r[self.idx_trunc]
            Su = ru * S0u / ((1.0 - S0u) + ru * S0u)
            logf = (-eta[self.idx_exact] + np.log(np.maximum(d0, _FLOOR))
                    + cache["logf_exact"] - 2.0 * np.log(den_a[self.idx_exact]))

        ll = np.zeros(n)
        if self.idx_cens.size:
            sb_full = np.zeros(n)
            sb_full[self.idx_bfin] = Sb
            mass = Sa[self.idx_cens] - sb_full[self.idx_cens]
            with np.errstate(divide="ignore"):
                llc = np.log(np.maximum(mass, _FLOOR))
            llc[mass <= 0.0] = -np.inf
            ll[self.idx_cens] = llc
        if self.idx_exact.size:
            ll[self.idx_exact] = logf
        if self._nu:
            ll[self.idx_trunc] -= np.log(np.maximum(Su, _FLOOR))
        return ll

    def loglik(self, theta, w, eta):
        """Convenience: build_cache + loglik_obs in one call."""
        cache = self.build_cache(theta, eta if self.model == "aft" else None)
        return self.loglik_obs(cache, w, eta)

    def site_sums(self, ll_obs):
        """Sum a per-observation vector within each site (for frailty updates)."""
        return np.bincount(self.loc0, weights=ll_obs, minlength=self.m)

    def survival_probs(self, theta, w, eta):
        """(S_x(a), S_x(b), S_x(u)) per observation; S_x(inf)=0, S_x(0)=1.

        Used by Cox-Snell residuals.
        """
        cache = self.build_cache(theta, eta if self.model == "aft" else None)
        n = self.n
        S0 = w @ cache["cdfb"]
        S0a, S0b, S0u = S0[:n], S0[n:n + self._nb], S0[n + self._nb:]
        if self.model == "aft":
            Sa, Sb_f, Su_f = S0a, S0b, S0u
        elif self.model == "ph":
            ee = np.exp(eta)
            Sa = np.exp(ee * np.log(np.maximum(S0a, _FLOOR)))
            Sb_f = np.exp(ee[self.idx_bfin] * np.log(np.maximum(S0b, _FLOOR)))
            Su_f = np.exp(ee[self.idx_trunc] * np.log(np.maximum(S0u, _FLOOR)))
        else:
            r = np.exp(-eta)
            Sa = r * S0a / ((1.0 - S0a) + r * S0a)
            rb = r[self.idx_bfin]
            Sb_f = rb * S0b / ((1.0 - S0b) + rb * S0b)
            ru = r[self.idx_trunc]
            Su_f = ru * S0u / ((1.0 - S0u) + ru * S0u)
        Sa = np.where(self.a <= 0.0, 1.0, Sa)
        Sb = np.zeros(n)
        Sb[self.idx_bfin] = Sb_f
        Sb[self.idx_exact] = Sa[self.idx_exact]
        Su = np.ones(n)
        Su[self.idx_trunc] = Su_f
        return Sa, Sb, Su
