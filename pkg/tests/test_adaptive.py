"""Adaptive Metropolis kernel behaviour on known targets."""

import numpy as np

from growthmix.adaptive import (
    AdaptiveKernel,
    BlockBatchKernel,
    ScalarFieldKernel,
    mh_step,
    mh_step_batch,
    mh_step_field,
)


def test_standard_normal_target_moments():
    rng = np.random.default_rng(0)
    kern = AdaptiveKernel(1)
    kern.begin_adaptation()
    x = 0.0
    draws = []
    for it in range(30_000):
        if it == 2000:
            kern.freeze()
        x, _ = mh_step(x, lambda v: -0.5 * v**2, kern, rng)
        if it >= 2000:
            draws.append(x)
    draws = np.asarray(draws)
    # generous MC bounds for a correlated chain
    assert abs(draws.mean()) < 0.08
    assert abs(draws.var() - 1.0) < 0.12


def test_acceptance_rate_lands_in_band():
    rng = np.random.default_rng(1)
    kern = AdaptiveKernel(1)
    kern.begin_adaptation()
    x = 0.0
    acc = []
    for it in range(8000):
        if it == 4000:
            kern.freeze()
        x, accepted = mh_step(x, lambda v: -0.5 * v**2, kern, rng)
        if it >= 4000:
            acc.append(accepted)
    assert 0.1 < np.mean(acc) < 0.6


def test_identical_proposal_always_accepted():
    rng = np.random.default_rng(2)

    class ZeroKernel(AdaptiveKernel):
        def proposal_chol(self):
            return np.zeros((1, 1))

    kern = ZeroKernel(1)
    for _ in range(50):
        _, accepted = mh_step(1.3, lambda v: -0.5 * v**2, kern, rng)
        assert accepted


def test_nonfinite_proposal_autorejected():
    rng = np.random.default_rng(3)
    kern = AdaptiveKernel(1, init_scale=10.0)

    def log_target(v):
        return 0.0 if abs(v - 5.0) < 1e-9 else -np.inf

    for _ in range(100):
        x, accepted = mh_step(5.0, log_target, kern, rng)
        assert x == 5.0 and not accepted


def test_field_kernel_tracks_independent_normals():
    rng = np.random.default_rng(4)
    shape = (3, 4)
    mu = np.arange(12, dtype=float).reshape(shape)
    kern = ScalarFieldKernel(shape)
    kern.begin_adaptation()
    x = np.zeros(shape)

    def target(v):
        return -0.5 * (v - mu) ** 2

    draws = []
    for it in range(20_000):
        if it == 3000:
            kern.freeze()
        x, _ = mh_step_field(x, target, kern, rng)
        if it >= 3000:
            draws.append(x.copy())
    draws = np.asarray(draws)
    np.testing.assert_allclose(draws.mean(axis=0), mu, atol=0.12)
    np.testing.assert_allclose(draws.var(axis=0), 1.0, atol=0.2)


def test_batch_kernel_tracks_correlated_blocks():
    rng = np.random.default_rng(5)
    n, k = 4, 2
    prec = np.array([[2.0, 0.6], [0.6, 1.0]])
    kern = BlockBatchKernel(n, k)
    kern.begin_adaptation()
    x = np.zeros((n, k))

    def target(v):
        return -0.5 * np.einsum("ni,ij,nj->n", v, prec, v)

    draws = []
    for it in range(25_000):
        if it == 4000:
            kern.freeze()
        x, _ = mh_step_batch(x, target, kern, rng)
        if it >= 4000:
            draws.append(x.copy())
    draws = np.asarray(draws)
    cov = np.linalg.inv(prec)
    for b in range(n):
        emp = np.cov(draws[:, b, :].T)
        np.testing.assert_allclose(emp, cov, atol=0.12)
    np.testing.assert_allclose(draws.mean(axis=0), 0.0, atol=0.1)
