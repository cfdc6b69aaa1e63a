"""Dirichlet posterior math for evidential classification.

Per-class evidence (pseudocounts) e maps to Dirichlet parameters
alpha = e + 1 on top of a uniform prior, so every alpha_k >= 1 and the
precision S = sum(alpha) >= K.  The mean alpha/S is the predictive
categorical distribution, K/S the total uncertainty, and the KL of the
off-true-class conditional to the uniform Dirichlet is the
misclassification regularizer.  All functions accept a single parameter
vector or a batch (last axis = classes).
"""

from __future__ import annotations

import numpy as np
from scipy import integrate
from scipy.special import gammaln, psi

__all__ = [
    "evidence_to_alpha",
    "mean_and_variance",
    "total_uncertainty",
    "misclassification_params",
    "kl_to_uniform",
    "kl_to_uniform_numeric",
    "dirichlet_log_pdf",
    "categorical_entropy",
]

SIMPLEX_INPUT_TOL = 1e-6
SIMPLEX_STRICT_TOL = 1e-9


def _check_alpha(alpha, min_classes=1):
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape[-1] < min_classes:
        raise ValueError(f"need at least {min_classes} classes, got {alpha.shape[-1]}")
    if np.any(alpha < 1.0 - SIMPLEX_STRICT_TOL):
        raise ValueError("alpha components must be >= 1 (uniform prior incorporated)")
    return alpha


def evidence_to_alpha(evidence):
    """alpha = evidence + 1; evidence must be non-negative, K >= 2."""
    e = np.asarray(evidence, dtype=np.float64)
    if e.shape[-1] < 2:
        raise ValueError(f"evidence vector needs K >= 2 classes, got {e.shape[-1]}")
    if np.any(e < 0):
        raise ValueError("evidence components must be non-negative")
    return e + 1.0


def mean_and_variance(alpha):
    """Predictive mean alpha/S and per-class variance alpha(S-alpha)/(S^2(S+1))."""
    alpha = _check_alpha(alpha, min_classes=1)
    s = alpha.sum(axis=-1, keepdims=True)
    mean = alpha / s
    var = alpha * (s - alpha) / (s * s * (s + 1.0))
    return mean, var


def total_uncertainty(alpha):
    """K/S in (0, 1]; equals 1 exactly when there is zero total evidence."""
    alpha = _check_alpha(alpha, min_classes=1)
    k = alpha.shape[-1]
    return k / alpha.sum(axis=-1)


def misclassification_params(alpha, true_class):
    """Parameters of the conditional Dirichlet over the K-1 wrong classes.

    Removes the true-class component; `true_class` may be a scalar or a
    per-row index array for batched alpha.
    """
    alpha = _check_alpha(alpha, min_classes=2)
    idx = np.asarray(true_class)
    if alpha.ndim == 1:
        if idx.ndim != 0:
            raise ValueError("scalar index expected for a single parameter vector")
        return np.delete(alpha, int(idx))
    n, k = alpha.shape
    keep = np.ones((n, k), dtype=bool)
    keep[np.arange(n), idx] = False
    return alpha[keep].reshape(n, k - 1)


def kl_to_uniform(alpha):
    """KL( Dirichlet(alpha) || Dirichlet(1,...,1) ) in closed form.

    lnG(S) - sum_j lnG(a_j) - lnG(J) + sum_j (a_j - 1)(psi(a_j) - psi(S));
    validated against numeric integration of the density
    (see `kl_to_uniform_numeric`).
    """
    alpha = _check_alpha(alpha, min_classes=1)
    j = alpha.shape[-1]
    s = alpha.sum(axis=-1)
    kl = (
        gammaln(s)
        - gammaln(alpha).sum(axis=-1)
        - gammaln(j)
        + ((alpha - 1.0) * (psi(alpha) - psi(s)[..., None])).sum(axis=-1)
    )
    return kl


def dirichlet_log_pdf(alpha, p):
    """Log density of Dirichlet(alpha) at an interior simplex point p."""
    alpha = _check_alpha(alpha, min_classes=2)
    p = np.asarray(p, dtype=np.float64)
    if p.shape != alpha.shape:
        raise ValueError(f"point shape {p.shape} does not match alpha shape {alpha.shape}")
    if abs(p.sum() - 1.0) > SIMPLEX_STRICT_TOL or np.any(p <= 0):
        raise ValueError("p must lie strictly inside the simplex")
    log_beta = gammaln(alpha).sum() - gammaln(alpha.sum())
    return float(((alpha - 1.0) * np.log(p)).sum() - log_beta)


def kl_to_uniform_numeric(alpha):
    """Numeric-integration oracle for `kl_to_uniform` (J = 2 or 3 only).

    Integrates f * (log f - log u) over the simplex with adaptive
    quadrature, where f is exp(dirichlet_log_pdf) and u the uniform
    Dirichlet density.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    j = alpha.shape[-1]
    if j == 2:
        def integrand(p1):
            p = np.array([p1, 1.0 - p1])
            lf = dirichlet_log_pdf(alpha, p)
            lu = dirichlet_log_pdf(np.ones(2), p)
            return np.exp(lf) * (lf - lu)

        value, _ = integrate.quad(integrand, 0.0, 1.0, limit=200)
        return value
    if j == 3:
        def integrand(p2, p1):
            p3 = 1.0 - p1 - p2
            if p3 <= 0:
                return 0.0
            p = np.array([p1, p2, p3])
            lf = dirichlet_log_pdf(alpha, p)
            lu = dirichlet_log_pdf(np.ones(3), p)
            return np.exp(lf) * (lf - lu)

        value, _ = integrate.dblquad(
            integrand, 0.0, 1.0, lambda p1: 0.0, lambda p1: 1.0 - p1,
            epsabs=1e-6, epsrel=1e-6,
        )
        return value
    raise ValueError(f"numeric oracle supports J in (2, 3), got J={j}")


def categorical_entropy(p):
    """Shannon entropy -sum p ln p in nats, with 0 ln 0 := 0."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > SIMPLEX_INPUT_TOL) or np.any(p < 0):
        raise ValueError("p must lie on the probability simplex (tolerance 1e-6)")
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)
