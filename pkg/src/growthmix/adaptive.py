"""Adaptive Gaussian random-walk Metropolis kernels.

Proposal covariance per block is scale * (running chain covariance + eps I),
with the scale tuned toward a target acceptance rate on a vanishing
schedule.  Kernels pass through three phases driven by the sampler: an
initial collection phase (moments accumulate, proposals stay at their
initial spread), an adaptation phase, and a frozen phase used for the
recorded part of the chain.

Targets default to 0.234 for multivariate blocks and 0.44 for scalars.
"""

import numpy as np

__all__ = [
    "AdaptiveKernel",
    "BlockBatchKernel",
    "ScalarFieldKernel",
    "mh_step",
    "mh_step_batch",
    "mh_step_field",
]

EPS_JITTER = 1e-8
_RM_OFFSET = 10.0  # softens the first Robbins-Monro steps


def _gain(t):
    return (t + _RM_OFFSET) ** -0.6


class _Phases:
    """Shared phase flags: collect -> adapt -> frozen."""

    def __init__(self):
        self.adapting = False
        self.frozen = False
        self._t = 0

    def begin_adaptation(self):
        self.adapting = True
        self.frozen = False

    def freeze(self):
        self.adapting = False
        self.frozen = True


class AdaptiveKernel(_Phases):
    """One adaptive proposal for a single parameter block of dimension dim."""

    def __init__(self, dim, init_scale=1.0, target=None, eps=EPS_JITTER):
        super().__init__()
        self.dim = dim
        self.target = target if target is not None else (0.44 if dim == 1 else 0.234)
        self.eps = eps
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))
        self.init_var = init_scale**2
        self.log_scale = np.log(2.38**2 / dim)

    def observe(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += np.outer(delta, x - self.mean)

    def proposal_chol(self):
        if self.count > 2 * self.dim and (self.adapting or self.frozen):
            cov = self.m2 / (self.count - 1) + self.eps * np.eye(self.dim)
        else:
            cov = self.init_var * np.eye(self.dim)
        return np.linalg.cholesky(np.exp(self.log_scale) * cov)

    def adapt_scale(self, acc_prob):
        if self.adapting:
            self._t += 1
            self.log_scale += _gain(self._t) * (acc_prob - self.target)


def mh_step(current, log_target, kernel, rng):
    """One Metropolis step for a block; returns (new value, accepted).

    A non-finite log target at the proposal rejects outright.  Scalars in,
    scalars out.
    """
    scalar = np.isscalar(current) or np.ndim(current) == 0
    x = np.atleast_1d(np.asarray(current, dtype=float))
    chol = kernel.proposal_chol()
    prop = x + chol @ rng.standard_normal(kernel.dim)
    lp_prop = log_target(prop[0] if scalar else prop)
    lp_cur = log_target(x[0] if scalar else x)
    if np.isfinite(lp_prop):
        acc_prob = min(1.0, np.exp(min(0.0, lp_prop - lp_cur)))
    else:
        acc_prob = 0.0
    accepted = rng.random() < acc_prob
    new = prop if accepted else x
    kernel.observe(new)
    kernel.adapt_scale(acc_prob)
    return (float(new[0]) if scalar else new), bool(accepted)


class ScalarFieldKernel(_Phases):
    """Independent scalar kernels over an array of parameters.

    Every entry keeps its own running variance and proposal scale, so a
    field update is exactly a bank of one-at-a-time scalar Metropolis
    steps whose conditionals do not interact.
    """

    def __init__(self, shape, init_scale=1.0, target=0.44, eps=EPS_JITTER):
        super().__init__()
        self.shape = shape
        self.target = target
        self.eps = eps
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)
        self.init_var = init_scale**2
        self.log_scale = np.zeros(shape) + np.log(2.38**2)

    def observe(self, x):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def proposal_std(self):
        if self.count > 2 and (self.adapting or self.frozen):
            var = self.m2 / (self.count - 1) + self.eps
        else:
            var = self.init_var
        return np.sqrt(np.exp(self.log_scale) * var)

    def adapt_scale(self, acc_prob):
        if self.adapting:
            self._t += 1
            self.log_scale += _gain(self._t) * (acc_prob - self.target)


def mh_step_field(current, log_target_field, kernel, rng):
    """Simultaneous scalar Metropolis steps over an independent field.

    log_target_field maps a full field array to per-entry target values;
    entries must not couple (each value may depend only on its own cell).
    Returns (new field, acceptance fraction).
    """
    prop = current + kernel.proposal_std() * rng.standard_normal(kernel.shape)
    delta = log_target_field(prop) - log_target_field(current)
    acc_prob = np.minimum(1.0, np.exp(np.minimum(0.0, delta)))
    acc_prob = np.where(np.isfinite(delta), acc_prob, 0.0)
    accepted = rng.random(kernel.shape) < acc_prob
    new = np.where(accepted, prop, current)
    kernel.observe(new)
    kernel.adapt_scale(acc_prob)
    return new, float(accepted.mean())


class BlockBatchKernel(_Phases):
    """A bank of independent block kernels, one per row of an (n, k) array."""

    def __init__(self, n_blocks, k, init_scale=1.0, target=0.234, eps=EPS_JITTER):
        super().__init__()
        self.n = n_blocks
        self.k = k
        self.target = target
        self.eps = eps
        self.count = 0
        self.mean = np.zeros((n_blocks, k))
        self.m2 = np.zeros((n_blocks, k, k))
        self.init_var = init_scale**2
        self.log_scale = np.zeros(n_blocks) + np.log(2.38**2 / k)

    def observe(self, x):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta[:, :, None] * (x - self.mean)[:, None, :]

    def proposal_chol(self):
        eye = np.eye(self.k)
        if self.count > 2 * self.k and (self.adapting or self.frozen):
            cov = self.m2 / (self.count - 1) + self.eps * eye
        else:
            cov = self.init_var * np.broadcast_to(eye, (self.n, self.k, self.k)).copy()
        return np.linalg.cholesky(np.exp(self.log_scale)[:, None, None] * cov)

    def adapt_scale(self, acc_prob):
        if self.adapting:
            self._t += 1
            self.log_scale += _gain(self._t) * (acc_prob - self.target)


def mh_step_batch(current, log_target_batch, kernel, rng):
    """Simultaneous block Metropolis steps across independent rows.

    log_target_batch maps an (n, k) array to n per-row target values.
    Returns (new (n, k) array, acceptance fraction).
    """
    chol = kernel.proposal_chol()
    z = rng.standard_normal((kernel.n, kernel.k))
    prop = current + np.einsum("nij,nj->ni", chol, z)
    delta = log_target_batch(prop) - log_target_batch(current)
    acc_prob = np.minimum(1.0, np.exp(np.minimum(0.0, delta)))
    acc_prob = np.where(np.isfinite(delta), acc_prob, 0.0)
    accepted = rng.random(kernel.n) < acc_prob
    new = np.where(accepted[:, None], prop, current)
    kernel.observe(new)
    kernel.adapt_scale(acc_prob)
    return new, float(accepted.mean())
