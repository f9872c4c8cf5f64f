"""Clustering-prior tests: urn weights, prior fidelity, and the u step."""

import math

import numpy as np
import pytest
from scipy.stats import chi2_contingency

from growthmix.adaptive import AdaptiveKernel
from growthmix.ngg import (
    NggConfig,
    Partition,
    UniqueValues,
    gibbs_unique_values,
    log_urn_weight_existing,
    log_urn_weight_new,
    ngg_log_vtable,
    resample_allocation,
    run_prior_chain,
    sample_prior_partition,
    update_u,
)


def test_urn_weight_existing_dp_limit():
    assert log_urn_weight_existing(2, 0.0, 0.0) == pytest.approx(math.log(2))


def test_urn_weight_existing_paper_parameters():
    assert log_urn_weight_existing(1, 0.75, 0.0) == pytest.approx(math.log(0.25))


def test_urn_weight_existing_random_scalar_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 30))
        sigma = float(rng.uniform(0, 0.95))
        ll = float(rng.normal())
        assert log_urn_weight_existing(n, sigma, ll) == pytest.approx(math.log(n - sigma) + ll)


def test_urn_weight_new_dp_limit():
    got = log_urn_weight_new(2.0, 0.0, 1.0, 4, 0.0)
    assert got == pytest.approx(math.log(2.0 / 4))


def test_urn_weight_new_derived_value():
    assert log_urn_weight_new(1.0, 0.75, 1.0, 1, 0.0) == pytest.approx(0.75 * math.log(2), abs=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        NggConfig(kappa=0.0)
    with pytest.raises(ValueError):
        NggConfig(sigma=1.0)
    with pytest.raises(ValueError):
        NggConfig(m_aux=0)


def test_partition_from_labels_and_validate():
    part = Partition.from_labels([5, 2, 5, 9, 2])
    np.testing.assert_array_equal(part.c, [0, 1, 0, 2, 1])
    np.testing.assert_array_equal(part.sizes, [2, 2, 1])
    part.validate()
    bad = Partition(c=np.array([0, 2]), sizes=np.array([1, 1]))
    with pytest.raises(ValueError):
        bad.validate()


def _zero_loglik(i, b_cand, t0_cand):
    return np.zeros(len(b_cand))


def _draw_atoms(d=2, n_p=1, t_y=2):
    def draw(n, rng):
        return rng.standard_normal((n, d)), rng.standard_normal((n, n_p, t_y))

    return draw


def _fresh_state(c_labels, d=2, n_p=1, t_y=2, seed=0):
    rng = np.random.default_rng(seed)
    part = Partition.from_labels(c_labels)
    uniq = UniqueValues(
        b_star=rng.standard_normal((part.K_N, d)),
        theta0_star=rng.standard_normal((part.K_N, n_p, t_y)),
    )
    return part, uniq


def test_single_subject_always_forms_one_cluster():
    cfg = NggConfig(kappa=1.0, sigma=0.75, m_aux=3)
    rng = np.random.default_rng(1)
    for _ in range(50):
        part, uniq = _fresh_state([0])
        resample_allocation(0, part, uniq, 1.0, cfg, _zero_loglik, _draw_atoms(), rng)
        part.validate()
        assert part.K_N == 1 and part.sizes[0] == 1


def test_allocation_frequencies_match_urn_weights():
    # Subject 5 leaves a cluster of size 3; flat likelihood makes the
    # allocation probabilities exactly the prior urn weights.
    cfg = NggConfig(kappa=1.3, sigma=0.6, m_aux=3)
    u = 0.8
    rng = np.random.default_rng(2)
    w = np.array([3 - cfg.sigma, 2 - cfg.sigma, cfg.kappa * (1 + u) ** cfg.sigma])
    probs = w / w.sum()
    counts = np.zeros(3)
    n = 100_000
    for _ in range(n):
        part, uniq = _fresh_state([0, 0, 0, 1, 1, 1])
        resample_allocation(5, part, uniq, u, cfg, _zero_loglik, _draw_atoms(), rng)
        part.validate()
        k = part.c[5]
        counts[min(k, 2)] += 1
    freq = counts / n
    se = np.sqrt(probs * (1 - probs) / n)
    np.testing.assert_array_less(np.abs(freq - probs), 4 * se)


def test_allocation_joins_near_cluster_under_dominant_likelihood():
    cfg = NggConfig(kappa=1.0, sigma=0.75, m_aux=2)
    rng = np.random.default_rng(3)
    target = np.array([10.0, -10.0])

    def loglik(i, b_cand, t0_cand):
        return -0.5 * ((b_cand - target) ** 2).sum(axis=1)

    joins = 0
    for _ in range(200):
        part, uniq = _fresh_state([0, 0, 1, 1, 2])
        uniq.b_star = np.array([[10.0, -10.0], [-10.0, 10.0], [0.0, 0.0]])
        resample_allocation(4, part, uniq, 1.0, cfg, loglik, _draw_atoms(), rng)
        joins += part.c[4] == 0
    assert joins == 200


def test_singleton_atom_recycled_as_first_auxiliary():
    cfg = NggConfig(kappa=1.0, sigma=0.5, m_aux=1)
    rng = np.random.default_rng(4)
    part, uniq = _fresh_state([0, 0, 1])
    vacated = uniq.b_star[1].copy()

    def loglik(i, b_cand, t0_cand):
        # force re-selection of the auxiliary atom
        return np.where(np.all(b_cand == vacated, axis=1), 1e3, -1e3)

    resample_allocation(2, part, uniq, 1.0, cfg, loglik, _draw_atoms(), rng)
    part.validate()
    assert part.K_N == 2
    np.testing.assert_array_equal(uniq.b_star[part.c[2]], vacated)


def test_labels_stay_contiguous_and_sizes_sum():
    cfg = NggConfig(kappa=2.0, sigma=0.3, m_aux=2)
    rng = np.random.default_rng(5)
    part, uniq = _fresh_state([0, 1, 2, 3, 0, 1, 2, 0], seed=2)
    for sweep in range(200):
        for i in range(8):
            resample_allocation(i, part, uniq, 1.0, cfg, _zero_loglik, _draw_atoms(), rng)
        part.validate()
        assert part.sizes.sum() == 8
        assert len(uniq.b_star) == part.K_N


def test_dp_limit_allocation_weights_match_dp_urn():
    # sigma = 1e-6 allocation log-weights vs the exact DP urn, within 1e-4.
    sigma = 1e-6
    kappa, u, m_aux = 1.0, 2.3, 3
    sizes = np.array([4, 2, 1])
    ngg_w = [log_urn_weight_existing(n, sigma, 0.0) for n in sizes]
    ngg_new = log_urn_weight_new(kappa, sigma, u, m_aux, 0.0)
    dp_w = [math.log(n) for n in sizes]
    dp_new = math.log(kappa / m_aux)
    np.testing.assert_allclose(ngg_w, dp_w, atol=1e-4)
    assert abs(ngg_new - dp_new) < 1e-4


def test_sigma_zero_equals_dp_urn_exactly():
    sizes = np.array([4, 2, 1])
    for n in sizes:
        assert log_urn_weight_existing(n, 0.0, 0.0) == pytest.approx(math.log(n), abs=1e-12)
    assert log_urn_weight_new(1.7, 0.0, 5.0, 2, 0.0) == pytest.approx(
        math.log(1.7 / 2), abs=1e-12
    )


def test_vtable_recursion_identity():
    # V_{n,k} = (n - k sigma) V_{n+1,k} + V_{n+1,k+1}, a nontrivial identity
    # the quadrature must satisfy.
    kappa, sigma = 1.0, 0.75
    logv = ngg_log_vtable(10, kappa, sigma)
    for n in range(1, 10):
        for k in range(1, n + 1):
            lhs = logv[n, k]
            rhs = np.logaddexp(math.log(n - k * sigma) + logv[n + 1, k], logv[n + 1, k + 1])
            assert lhs == pytest.approx(rhs, abs=1e-7)


def test_prior_partition_small_n_exact_probabilities():
    # N = 2: P(together) = V_{2,1} / (V_{2,1} + V_{2,2}) with the pair factor
    # (1 - sigma) on the merged partition.
    kappa, sigma = 1.0, 0.75
    logv = ngg_log_vtable(2, kappa, sigma)
    p_together = math.exp(logv[2, 1] + math.log(1 - sigma))
    p_apart = math.exp(logv[2, 2])
    assert p_together + p_apart == pytest.approx(1.0, abs=1e-7)
    rng = np.random.default_rng(6)
    same = sum((sample_prior_partition(2, kappa, sigma, rng) == [0, 0]).all() for _ in range(40_000))
    freq = same / 40_000
    assert abs(freq - p_together) < 4 * math.sqrt(p_together * (1 - p_together) / 40_000)


def test_prior_chain_matches_sequential_urn():
    # The Neal-8 + u machinery with the likelihood switched off must
    # reproduce the prior distribution of the cluster count.
    kappa, sigma = 1.0, 0.75
    cfg = NggConfig(kappa=kappa, sigma=sigma, m_aux=3)
    rng = np.random.default_rng(7)
    n_subjects = 12
    ks_chain = run_prior_chain(n_subjects, cfg, 6000, rng, warmup=300)[::3]
    ks_urn = np.array(
        [np.unique(sample_prior_partition(n_subjects, kappa, sigma, rng)).size for _ in range(2000)]
    )
    lo, hi = 1, n_subjects
    bins = np.arange(lo, hi + 2)
    a, _ = np.histogram(ks_chain, bins=bins)
    b, _ = np.histogram(ks_urn, bins=bins)
    keep = (a + b) >= 10
    table = np.array([a[keep], b[keep]])
    _, p, _, _ = chi2_contingency(table)
    assert p > 0.01


def test_update_u_mode_matches_grid_oracle():
    n_subjects, k_n = 10, 3
    cfg = NggConfig(kappa=1.0, sigma=0.75, m_aux=3)

    def stated_density(u):
        return (
            (n_subjects - 1) * math.log(u)
            - cfg.kappa / cfg.sigma * (1 + u) ** cfg.sigma
            - (n_subjects - k_n * cfg.sigma) * math.log(1 + u)
        )

    grid = np.linspace(1e-4, 400, 400_000)
    dens = np.array([stated_density(u) for u in grid])
    mode = grid[np.argmax(dens)]

    rng = np.random.default_rng(8)
    kernel = AdaptiveKernel(1, init_scale=0.6)
    kernel.begin_adaptation()
    u = 1.0
    draws = []
    for it in range(60_000):
        if it == 5000:
            kernel.freeze()
        u, _ = update_u(u, n_subjects, k_n, cfg, kernel, rng)
        if it >= 5000:
            draws.append(u)
    draws = np.asarray(draws)
    # chain histogram peak should sit near the grid mode
    hist, edges = np.histogram(draws, bins=200, range=(0, 60))
    peak = 0.5 * (edges[np.argmax(hist)] + edges[np.argmax(hist) + 1])
    assert abs(peak - mode) < 2.0

    # KS distance between the chain and the grid-normalised density
    cdf = np.cumsum(np.exp(dens - dens.max()))
    cdf /= cdf[-1]
    ecdf_points = np.searchsorted(grid, np.sort(draws)) / len(grid)
    ks = np.max(np.abs(cdf[np.searchsorted(grid, np.sort(draws)).clip(0, len(grid) - 1)]
                       - np.arange(1, len(draws) + 1) / len(draws)))
    assert ks < 0.02


def test_update_u_sigma_zero_limit_runs():
    cfg = NggConfig(kappa=1.0, sigma=0.0, m_aux=1)
    rng = np.random.default_rng(9)
    kernel = AdaptiveKernel(1)
    u = 1.0
    for _ in range(200):
        u, _ = update_u(u, 5, 2, cfg, kernel, rng)
        assert u > 0


def test_gibbs_unique_values_prior_limit():
    rng = np.random.default_rng(10)
    d, n_p, t_y = 3, 2, 2
    draws_b, draws_t = [], []
    for _ in range(20_000):
        b, t0 = gibbs_unique_values(
            np.zeros((d, d)), np.zeros(d), 1.0, np.zeros((n_p, t_y)), 0, rng
        )
        draws_b.append(b)
        draws_t.append(t0)
    draws_b = np.asarray(draws_b)
    draws_t = np.asarray(draws_t)
    np.testing.assert_allclose(draws_b.mean(axis=0), 0.0, atol=0.035)
    np.testing.assert_allclose(draws_b.var(axis=0), 1.0, atol=0.05)
    np.testing.assert_allclose(draws_t.var(axis=0), 1.0, atol=0.05)


def test_gibbs_theta0_printed_formula_case():
    # One member with traits (2,2,2,2): mean (1,1,1,1), variance 1/2.
    rng = np.random.default_rng(11)
    theta_sum = np.full((1, 4), 2.0)
    draws = np.array(
        [
            gibbs_unique_values(np.zeros((2, 2)), np.zeros(2), 1.0, theta_sum, 1, rng)[1]
            for _ in range(30_000)
        ]
    )
    np.testing.assert_allclose(draws.mean(axis=0), 1.0, atol=0.02)
    np.testing.assert_allclose(draws.var(axis=0), 0.5, atol=0.02)


def test_gibbs_b_star_moments_match_analytic():
    rng = np.random.default_rng(12)
    d = 4
    a = rng.standard_normal((d, d))
    gram = a @ a.T
    resid = rng.standard_normal(d) * 3
    sigma2 = 0.7
    prec = np.eye(d) + gram / sigma2
    cov = np.linalg.inv(prec)
    mean = cov @ (resid / sigma2)
    n = 10_000
    draws = np.array(
        [gibbs_unique_values(gram, resid, sigma2, np.zeros((1, 1)), 2, rng)[0] for _ in range(n)]
    )
    for q in range(d):
        se = math.sqrt(cov[q, q] / n)
        assert abs(draws[:, q].mean() - mean[q]) < 3 * se
        assert abs(draws[:, q].var() - cov[q, q]) < 3 * cov[q, q] * math.sqrt(2 / (n - 1))
