"""Normalized generalized gamma clustering machinery.

Allocation follows a Polya urn conditional on an auxiliary variable u:
an occupied cluster attracts subject i with weight (n_j - sigma) times the
subject's likelihood under the cluster atom, and a new cluster with total
weight kappa (1 + u)^sigma spread over m_aux fresh atoms (Neal's algorithm 8
for the non-conjugate base measure).  sigma -> 0 recovers the Dirichlet
process urn with mass kappa.

The module also carries an independent route to the same prior: the exact
partition weights V_{n,k} computed by quadrature, which drive a sequential
urn sampler.  The quadrature route never touches the Neal-8 code, so the two
can certify each other.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln, logsumexp

from .adaptive import AdaptiveKernel, mh_step

__all__ = [
    "NggConfig",
    "Partition",
    "UniqueValues",
    "gibbs_unique_values",
    "log_urn_weight_existing",
    "log_urn_weight_new",
    "ngg_log_vtable",
    "resample_allocation",
    "run_prior_chain",
    "sample_prior_partition",
    "u_log_target",
    "update_u",
]

_SIGMA_DP_LIMIT = 1e-12  # below this the process is treated as a DP


@dataclass(frozen=True)
class NggConfig:
    """Process parameters (kappa, sigma) plus the Neal-8 auxiliary count."""

    kappa: float = 1.0
    sigma: float = 0.75
    m_aux: int = 3

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not 0.0 <= self.sigma < 1.0:
            raise ValueError(f"sigma must lie in [0, 1), got {self.sigma}")
        if self.m_aux < 1:
            raise ValueError(f"m_aux must be >= 1, got {self.m_aux}")


@dataclass
class Partition:
    """Cluster allocations with contiguous 0-based labels.

    Output files use 1-based labels; internally label k indexes row k of
    the unique-value arrays.
    """

    c: np.ndarray      # (N,)
    sizes: np.ndarray  # (K_N,)

    @property
    def K_N(self):
        return len(self.sizes)

    @classmethod
    def from_labels(cls, labels):
        """Build from arbitrary labels, relabelled by first appearance."""
        labels = np.asarray(labels)
        _, first = np.unique(labels, return_index=True)
        order = labels[np.sort(first)]
        remap = {lab: k for k, lab in enumerate(order)}
        c = np.array([remap[lab] for lab in labels], dtype=int)
        sizes = np.bincount(c)
        return cls(c=c, sizes=sizes)

    def validate(self):
        sizes = np.bincount(self.c, minlength=self.K_N)
        if len(sizes) != self.K_N or np.any(sizes != self.sizes) or np.any(self.sizes < 1):
            raise ValueError("partition labels are not contiguous or sizes are stale")
        if int(self.sizes.sum()) != len(self.c):
            raise ValueError("sizes do not sum to N")


@dataclass
class UniqueValues:
    """Per-cluster atoms: spline coefficients and latent-trait means."""

    b_star: np.ndarray       # (K_N, d)
    theta0_star: np.ndarray  # (K_N, n_p, T_Y)


def log_urn_weight_existing(n_j_minus_i, sigma, loglik_i_given_j):
    """Log urn weight of an occupied cluster: log(n_j - sigma) + loglik."""
    w = n_j_minus_i - sigma
    assert w > 0, "occupied cluster weight must be positive for sigma < 1"
    return math.log(w) + loglik_i_given_j


def log_urn_weight_new(kappa, sigma, u, m_aux, loglik_i_given_fresh):
    """Log urn weight of one auxiliary atom: log(kappa (1+u)^sigma / m_aux) + loglik."""
    return math.log(kappa) + sigma * math.log1p(u) - math.log(m_aux) + loglik_i_given_fresh


def resample_allocation(i, part, uniq, u, cfg, subject_loglik, draw_atoms, rng):
    """One Polya-urn allocation draw for subject i (Neal-8).

    Removes i from its cluster (dropping the cluster and shifting labels if
    it empties), lines up m_aux auxiliary atoms -- recycling the vacated atom
    as the first when i was a singleton -- and samples the new allocation
    from the normalised log weights.  A chosen auxiliary atom becomes a new
    cluster appended at label K_N.

    subject_loglik(i, b_cand, t0_cand) evaluates the subject's joint growth
    and trait likelihood under a stack of candidate atoms; draw_atoms(n, rng)
    samples n fresh atoms from the base measure.  Mutates part/uniq arrays
    and returns (part, uniq).
    """
    j_old = int(part.c[i])
    part.sizes[j_old] -= 1
    recycled = None
    if part.sizes[j_old] == 0:
        recycled = (uniq.b_star[j_old].copy(), uniq.theta0_star[j_old].copy())
        uniq.b_star = np.delete(uniq.b_star, j_old, axis=0)
        uniq.theta0_star = np.delete(uniq.theta0_star, j_old, axis=0)
        part.sizes = np.delete(part.sizes, j_old)
        part.c = np.where(part.c > j_old, part.c - 1, part.c)
    K = part.K_N

    n_fresh = cfg.m_aux - (recycled is not None)
    fresh_b, fresh_t0 = draw_atoms(n_fresh, rng)
    if recycled is not None:
        fresh_b = np.concatenate([recycled[0][None], fresh_b], axis=0)
        fresh_t0 = np.concatenate([recycled[1][None], fresh_t0], axis=0)

    cand_b = np.concatenate([uniq.b_star, fresh_b], axis=0)
    cand_t0 = np.concatenate([uniq.theta0_star, fresh_t0], axis=0)
    logliks = subject_loglik(i, cand_b, cand_t0)

    logw = np.empty(K + cfg.m_aux)
    logw[:K] = np.log(part.sizes - cfg.sigma) + logliks[:K]
    logw[K:] = (
        math.log(cfg.kappa) + cfg.sigma * math.log1p(u) - math.log(cfg.m_aux) + logliks[K:]
    )
    probs = np.exp(logw - logsumexp(logw))
    pick = int(np.searchsorted(np.cumsum(probs), rng.random()))
    pick = min(pick, K + cfg.m_aux - 1)

    if pick < K:
        part.c[i] = pick
        part.sizes[pick] += 1
    else:
        part.c[i] = K
        part.sizes = np.append(part.sizes, 1)
        uniq.b_star = np.concatenate([uniq.b_star, cand_b[pick][None]], axis=0)
        uniq.theta0_star = np.concatenate([uniq.theta0_star, cand_t0[pick][None]], axis=0)
    return part, uniq


def gibbs_unique_values(gram_sum, resid_sum, sigma2_Z, theta_sum, n_j, rng):
    """Draw one cluster's atom from its full conditionals.

    b* has prior N(0, I_d) and Gaussian likelihood restricted to the
    cluster members' observed growth cells, summarised by
    gram_sum = sum_i B_obs B_obs^T and resid_sum = sum_i B_obs (z_i - offset).
    theta0* is conjugate around the member trait mean with total precision
    n_j + 1.

    Returns (b_star_j, theta0_star_j).
    """
    d = gram_sum.shape[0]
    prec = np.eye(d) + gram_sum / sigma2_Z
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, resid_sum / sigma2_Z)
    z = rng.standard_normal(d)
    b_star = mean + np.linalg.solve(chol.T, z)

    t0_mean = theta_sum / (n_j + 1)
    t0_star = t0_mean + rng.standard_normal(theta_sum.shape) / np.sqrt(n_j + 1)
    return b_star, t0_star


def u_log_target(u, n_subjects, K_N, cfg):
    """Log full-conditional density of the auxiliary variable at u.

    For sigma -> 0 the (kappa/sigma)(1+u)^sigma term is replaced by its
    u-dependent limit kappa*log(1+u).
    """
    if u <= 0:
        return -np.inf
    if cfg.sigma < _SIGMA_DP_LIMIT:
        penalty = cfg.kappa * math.log1p(u)
    else:
        penalty = (cfg.kappa / cfg.sigma) * math.exp(cfg.sigma * math.log1p(u))
    return (n_subjects - 1) * math.log(u) - penalty - (n_subjects - K_N * cfg.sigma) * math.log1p(u)


def update_u(u, n_subjects, K_N, cfg, kernel, rng):
    """One adaptive random-walk step on log u; returns (new u, accepted)."""

    def log_target(x):
        return u_log_target(math.exp(x), n_subjects, K_N, cfg) + x

    x_new, accepted = mh_step(math.log(u), log_target, kernel, rng)
    return math.exp(x_new), accepted


# ---------------------------------------------------------------------------
# Independent route to the prior: exact partition weights by quadrature.
# ---------------------------------------------------------------------------


def _log_v_entry(n, k, kappa, sigma):
    """log integral_0^inf u^{n-1} (1+u)^{k sigma - n} e^{-psi(u)} du, x = log u."""

    def logf(x):
        u = np.exp(x)
        return (
            n * x
            + (k * sigma - n) * np.log1p(u)
            - (kappa / sigma) * np.expm1(sigma * np.log1p(u))
        )

    xs = np.linspace(-40.0, 40.0, 2001)
    vals = logf(xs)
    m = float(vals.max())
    keep = xs[vals > m - 60.0]
    val, _ = quad(lambda x: np.exp(logf(x) - m), keep[0] - 1.0, keep[-1] + 1.0, limit=200)
    return m + math.log(val)


@lru_cache(maxsize=8)
def ngg_log_vtable(n_max, kappa, sigma):
    """Exact log V_{n,k} for 1 <= k <= n <= n_max.

    V_{n,k} weights a partition of n elements into k clusters in the
    exchangeable partition probability function
    p(n_1..n_k) = V_{n,k} prod_j (1-sigma)_{n_j - 1}.
    """
    logv = np.full((n_max + 1, n_max + 1), -np.inf)
    for n in range(1, n_max + 1):
        for k in range(1, n + 1):
            logv[n, k] = k * math.log(kappa) - gammaln(n) + _log_v_entry(n, k, kappa, sigma)
    return logv


def sample_prior_partition(n_subjects, kappa, sigma, rng, logv=None):
    """Sequential-urn draw of a partition from the clustering prior.

    Uses the exact predictive weights (n_j - sigma) V_{n+1,K} for occupied
    clusters and V_{n+1,K+1} for a new one; the Dirichlet-process case
    falls back to the plain urn.  Returns 0-based contiguous labels.
    """
    c = np.zeros(n_subjects, dtype=int)
    sizes = [1]
    if sigma < _SIGMA_DP_LIMIT:
        for n in range(1, n_subjects):
            w = np.array(sizes + [kappa], dtype=float)
            pick = int(rng.choice(len(w), p=w / w.sum()))
            if pick == len(sizes):
                sizes.append(1)
            else:
                sizes[pick] += 1
            c[n] = pick
        return c
    if logv is None:
        logv = ngg_log_vtable(n_subjects, kappa, sigma)
    for n in range(1, n_subjects):
        K = len(sizes)
        logw = np.empty(K + 1)
        logw[:K] = np.log(np.array(sizes) - sigma) + logv[n + 1, K]
        logw[K] = logv[n + 1, K + 1]
        probs = np.exp(logw - logsumexp(logw))
        pick = int(np.searchsorted(np.cumsum(probs), rng.random()))
        pick = min(pick, K)
        if pick == K:
            sizes.append(1)
        else:
            sizes[pick] += 1
        c[n] = pick
    return c


def run_prior_chain(n_subjects, cfg, n_sweeps, rng, warmup=500):
    """Marginal sampler run with the likelihood switched off.

    Drives the production allocation and u updates with loglik = 0 so the
    stationary law of the partition is the clustering prior itself.
    Returns the post-warmup trace of K_N.
    """

    def zero_loglik(i, b_cand, t0_cand):
        return np.zeros(len(b_cand))

    def draw_atoms(n, rng_):
        return rng_.standard_normal((n, 1)), rng_.standard_normal((n, 1, 1))

    part = Partition(c=np.zeros(n_subjects, dtype=int), sizes=np.array([n_subjects]))
    uniq = UniqueValues(
        b_star=np.zeros((1, 1)), theta0_star=np.zeros((1, 1, 1))
    )
    u = 1.0
    kernel = AdaptiveKernel(1, init_scale=0.8)
    kernel.begin_adaptation()
    ks = np.empty(n_sweeps, dtype=int)
    for sweep in range(warmup + n_sweeps):
        if sweep == warmup:
            kernel.freeze()
        for i in range(n_subjects):
            resample_allocation(i, part, uniq, u, cfg, zero_loglik, draw_atoms, rng)
        u, _ = update_u(u, n_subjects, part.K_N, cfg, kernel, rng)
        if sweep >= warmup:
            ks[sweep - warmup] = part.K_N
    return ks
