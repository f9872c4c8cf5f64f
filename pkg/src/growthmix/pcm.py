"""Longitudinal partial credit model with item-specific covariate effects.

The probability that subject i answers item j at time t with category h is

    P(h) = exp(a_j * (h * th - sum_{l<h} b_jl) + h * e_ij) / normaliser,

where th is the subject's latent trait for the item's domain at that time,
a_j > 0 is the item discrimination, b_j is the step-difficulty vector, and
e_ij is the cached covariate inner product for (subject, item).  The step
vector is stored with length m and structural zeros in its first two slots;
the h = 0 sum is empty.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "ItemParams",
    "Traits",
    "all_cell_logliks",
    "category_logits",
    "category_probs",
    "icc_curve",
    "item_cell_logliks",
    "step_prefix",
    "y_loglik_cell",
    "y_loglik_item",
]


@dataclass
class ItemParams:
    """Item-level parameters: discriminations, steps, subscale means, covariate effects.

    alpha : (J,) positive discriminations.
    beta : (J, m) step difficulties; beta[:, 0] = beta[:, 1] = 0 always.
    mu_s : (n_s,) subscale means of log alpha.
    gamma_Y : (J, q_Y) item-specific covariate coefficients.
    """

    alpha: np.ndarray
    beta: np.ndarray
    mu_s: np.ndarray
    gamma_Y: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if np.any(self.alpha <= 0):
            j = int(np.argmax(self.alpha <= 0))
            raise ValueError(f"alpha must be positive, item {j + 1} has {self.alpha[j]}")
        if np.any(self.beta[:, :2] != 0.0):
            raise ValueError("beta[:, 0] and beta[:, 1] are structural zeros")
        if not (np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.alpha))):
            raise ValueError("non-finite item parameters")


@dataclass
class Traits:
    """Latent traits per (domain, subject, time) and their cluster-linked means."""

    theta: np.ndarray   # (n_p, N, T_Y)
    theta0: np.ndarray  # (n_p, N, T_Y)


def step_prefix(beta):
    """Cumulative step sums: prefix[..., h] = sum_{l < h} beta[..., l].

    Accepts a (m,) row or a (J, m) matrix; the final beta entry never
    enters any logit because the sum stops at h - 1.
    """
    beta = np.asarray(beta, dtype=float)
    prefix = np.zeros_like(beta)
    prefix[..., 1:] = np.cumsum(beta[..., :-1], axis=-1)
    return prefix


def category_logits(theta, alpha, beta_row, eta):
    """Logits of the m answer categories for one (subject, time, item) cell."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    beta_row = np.asarray(beta_row, dtype=float)
    m = beta_row.shape[0]
    h = np.arange(m)
    return alpha * (h * theta - step_prefix(beta_row)) + h * eta


def category_probs(logits):
    """Softmax over the last axis with max subtraction for overflow safety."""
    logits = np.asarray(logits, dtype=float)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def y_loglik_cell(y, theta, alpha, beta_row, eta):
    """Log probability of observed category y for one cell."""
    logits = category_logits(theta, alpha, beta_row, eta)
    return float(logits[y] - logsumexp(logits))


def _item_logits(theta_p, alpha_j, prefix_j, eta_j):
    """Logits for every (time, subject) cell of one item.

    theta_p : (N, T_Y) traits for the item's domain.
    eta_j : (N,) covariate inner products.
    Returns (T_Y, N, m).
    """
    m = prefix_j.shape[0]
    h = np.arange(m)
    th = theta_p.T[:, :, None]  # (T_Y, N, 1)
    return alpha_j * (h * th - prefix_j) + h * eta_j[None, :, None]


def item_cell_logliks(j, Y, y_missing, theta, domain, alpha, beta, eta):
    """Per-cell log likelihood of item j, zero where the answer is missing.

    Y : (T_Y, N, J) categories, theta : (n_p, N, T_Y), eta : (N, J).
    Returns (T_Y, N).
    """
    p = int(domain[j]) - 1
    logits = _item_logits(theta[p], alpha[j], step_prefix(beta[j]), eta[:, j])
    y = np.where(y_missing[:, :, j], 0, Y[:, :, j])
    ll = np.take_along_axis(logits, y[:, :, None], axis=2)[:, :, 0] - logsumexp(logits, axis=2)
    return np.where(y_missing[:, :, j], 0.0, ll)


def y_loglik_item(j, Y, y_missing, theta, domain, alpha, beta, eta):
    """Total log likelihood of item j over its observed cells."""
    return float(item_cell_logliks(j, Y, y_missing, theta, domain, alpha, beta, eta).sum())


def all_cell_logliks(Y, y_missing, theta, domain, alpha, beta, eta):
    """Log likelihood of every observed cell, zero at missing ones.

    Returns (T_Y, N, J).  Vectorised across items; the per-item slice
    agrees with item_cell_logliks.
    """
    T_Y, N, J = Y.shape
    m = beta.shape[1]
    h = np.arange(m)
    th = theta[np.asarray(domain) - 1]          # (J, N, T_Y)
    th = np.moveaxis(th, 0, 2)[:, :, :, None]   # (N, T_Y, J, 1)
    prefix = step_prefix(beta)                  # (J, m)
    logits = alpha[None, None, :, None] * (h * th - prefix[None, None, :, :]) \
        + h * eta[:, None, :, None]             # (N, T_Y, J, m)
    y = np.where(y_missing, 0, Y)               # (T_Y, N, J)
    y = np.moveaxis(y, 0, 1)                    # (N, T_Y, J)
    ll = np.take_along_axis(logits, y[..., None], axis=3)[..., 0] - logsumexp(logits, axis=3)
    ll = np.moveaxis(ll, 1, 0)                  # (T_Y, N, J)
    return np.where(y_missing, 0.0, ll)


def icc_curve(j, items, theta_grid, eta=0.0):
    """Category probabilities of item j on a trait grid.

    Returns (len(grid), m); row g sums to one.
    """
    grid = np.asarray(theta_grid, dtype=float)
    m = items.beta.shape[1]
    h = np.arange(m)
    logits = items.alpha[j] * (h * grid[:, None] - step_prefix(items.beta[j])) + h * eta
    return category_probs(logits)
