"""Synthetic-data generation and the joint-distribution correctness harness.

The generator draws data forward through the full model so sampler runs can
be validated against known ground truth.  The harness compares two exact
samplers of the same joint distribution: the marginal arm draws parameters
from the prior and data given parameters; the successive arm alternates one
posterior sweep with a data regeneration step.  If every update is correct
the two arms share every moment, so large z-scores localise broken updates.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from .data import dataset_from_arrays
from .longitudinal import SIGMA2_PRIOR_RATE, SIGMA2_PRIOR_SHAPE
from .ngg import NggConfig, Partition, UniqueValues, sample_prior_partition
from .pcm import category_probs, step_prefix
from .sampler import Kernels, McmcConfig, ModelState, Precomp, sweep
from .splines import build_basis

__all__ = [
    "GewekeReport",
    "TrueParams",
    "default_scenario",
    "generate",
    "geweke_run",
    "save_truth",
]


@dataclass
class TrueParams:
    """Complete generative parameter set, including the true partition."""

    z_times: np.ndarray
    subscale: np.ndarray
    domain: np.ndarray
    m: int
    c: np.ndarray            # (N,) 0-based true allocations
    b_star: np.ndarray       # (K, d)
    theta0_star: np.ndarray  # (K, n_p, T_Y)
    gamma_Z: np.ndarray
    sigma2_Z: float
    alpha: np.ndarray
    beta: np.ndarray
    mu_s: np.ndarray
    gamma_Y: np.ndarray
    X_Z: np.ndarray
    X_Y: np.ndarray
    degree: int = 3
    interior: object = "median"


def default_scenario(seed=0, n_subjects=100, n_items=12, t_y=4, m=5):
    """Paper-shaped scenario shrunk to desk scale: three separated clusters.

    Cluster trajectories sit at distinct levels and the domain trait means
    split the clusters in the questionnaire dimension as well.
    """
    rng = np.random.default_rng(seed)
    z_times = np.array([1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0])
    per = n_items // 4
    subscale = np.repeat([1, 2, 3, 4], per)[:n_items]
    domain = np.where(subscale <= 2, 1, 2)
    basis = build_basis(z_times)
    weights = np.array([0.45, 0.35, 0.20])
    sizes = np.maximum(1, np.round(weights * n_subjects).astype(int))
    sizes[-1] = n_subjects - sizes[:-1].sum()
    c = np.repeat(np.arange(3), sizes)
    levels = np.array([-2.5, 0.0, 2.5])
    b_star = levels[:, None] + 0.4 * rng.standard_normal((3, basis.d))
    t0_levels = np.array([[-1.5, 1.0], [0.0, 0.0], [1.5, -1.0]])
    theta0_star = t0_levels[:, :, None] + 0.3 * rng.standard_normal((3, 2, t_y))
    mu_s = 0.2 * rng.standard_normal(4)
    beta = np.zeros((n_items, m))
    beta[:, 2:] = 0.5 * rng.standard_normal((n_items, m - 2))
    return TrueParams(
        z_times=z_times,
        subscale=subscale,
        domain=domain,
        m=m,
        c=c,
        b_star=b_star,
        theta0_star=theta0_star,
        gamma_Z=np.array([0.5, -0.3]),
        sigma2_Z=0.25,
        alpha=np.exp(mu_s[subscale - 1] + 0.3 * rng.standard_normal(n_items)),
        beta=beta,
        mu_s=mu_s,
        gamma_Y=0.5 * rng.standard_normal((n_items, 2)),
        X_Z=rng.integers(0, 2, size=(n_subjects, 2)).astype(float),
        X_Y=rng.integers(0, 2, size=(n_subjects, 2)).astype(float),
    )


def _draw_observations(b, gamma_Z, sigma2_Z, theta, alpha, beta, gamma_Y,
                       X_Z, X_Y, domain, m, basis, rng):
    """Forward draw of (Z, Y) given every parameter; no masking."""
    N = b.shape[0]
    T_Y = theta.shape[2]
    J = len(alpha)
    mean = b @ basis.B + (X_Z @ gamma_Z)[:, None]
    Z = mean + np.sqrt(sigma2_Z) * rng.standard_normal(mean.shape)
    eta = X_Y @ gamma_Y.T
    h = np.arange(m)
    th = np.moveaxis(theta[np.asarray(domain) - 1], 0, 2)[:, :, :, None]  # (N, T_Y, J, 1)
    logits = alpha[None, None, :, None] * (h * th - step_prefix(beta)[None, None, :, :]) \
        + h * eta[:, None, :, None]
    probs = category_probs(logits)  # (N, T_Y, J, m)
    cum = np.cumsum(probs, axis=3)
    draws = (cum < rng.random((N, T_Y, J, 1))).sum(axis=3)
    Y = np.moveaxis(draws, 0, 1)  # (T_Y, N, J)
    return Z, Y


def _draw_masks(shape_z, shape_y, z_rate, y_rate, rng):
    """Uniform missingness masks; rows leaving a subject fully missing are redrawn."""
    N = shape_z[0]
    z_mask = rng.random(shape_z) < z_rate
    y_mask = rng.random(shape_y) < y_rate
    for i in range(N):
        while z_mask[i].all():
            z_mask[i] = rng.random(shape_z[1]) < z_rate
        while y_mask[:, i, :].all():
            y_mask[:, i, :] = rng.random((shape_y[0], shape_y[2])) < y_rate
    return z_mask, y_mask


def generate(true, z_missing_rate, y_missing_rate, rng):
    """Draw a full synthetic dataset from the model.

    Returns (Dataset, truth) where truth holds the realised latent traits
    alongside the generating parameters.
    """
    basis = build_basis(true.z_times, true.degree, true.interior)
    N = len(true.c)
    T_Y = true.theta0_star.shape[2]
    b = true.b_star[true.c]
    theta0 = np.moveaxis(true.theta0_star[true.c], 0, 1)
    theta = theta0 + rng.standard_normal(theta0.shape)
    Z, Y = _draw_observations(
        b, true.gamma_Z, true.sigma2_Z, theta, true.alpha, true.beta, true.gamma_Y,
        true.X_Z, true.X_Y, true.domain, true.m, basis, rng,
    )
    z_mask, y_mask = _draw_masks(Z.shape, Y.shape, z_missing_rate, y_missing_rate, rng)
    ds = dataset_from_arrays(
        np.where(z_mask, np.nan, Z),
        true.z_times,
        np.where(y_mask, -1, Y),
        true.X_Z,
        true.X_Y,
        true.subscale,
        true.domain,
        true.m,
    )
    truth = {"params": true, "theta": theta, "Z_full": Z, "Y_full": Y}
    return ds, truth


def save_truth(truth, path):
    """Serialise the generating partition and parameters as JSON."""
    true = truth["params"]
    payload = {
        "partition": [int(v) + 1 for v in true.c],
        "b_star": true.b_star.tolist(),
        "theta0_star": true.theta0_star.tolist(),
        "gamma_Z": true.gamma_Z.tolist(),
        "sigma2_Z": float(true.sigma2_Z),
        "alpha": true.alpha.tolist(),
        "beta": true.beta.tolist(),
        "mu_s": true.mu_s.tolist(),
        "gamma_Y": true.gamma_Y.tolist(),
        "theta": truth["theta"].tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Joint-distribution correctness harness
# ---------------------------------------------------------------------------


def _toy_dataset(rng, n_subjects=8, n_items=4, t_y=2, t_z=5, m=3, miss_rate=0.1):
    """Fixed toy problem: masks and covariates drawn once and held constant."""
    z_times = np.linspace(1.0, 5.0, t_z)
    subscale = np.array([1, 1, 2, 2])[:n_items]
    domain = np.array([1, 1, 2, 2])[:n_items]
    X_Z = rng.integers(0, 2, size=(n_subjects, 2)).astype(float)
    X_Y = rng.integers(0, 2, size=(n_subjects, 2)).astype(float)
    z_mask, y_mask = _draw_masks((n_subjects, t_z), (t_y, n_subjects, n_items), miss_rate, miss_rate, rng)
    Z = np.where(z_mask, np.nan, rng.standard_normal((n_subjects, t_z)))
    Y = np.where(y_mask, -1, rng.integers(0, m, size=(t_y, n_subjects, n_items)))
    return dataset_from_arrays(Z, z_times, Y, X_Z, X_Y, subscale, domain, m)


def _prior_state(ds, cfg, basis, rng):
    """Exact prior draw of the full state, partition included."""
    N, T_Z, T_Y, J, m, n_s, n_p, q_Z, q_Y = ds.dims
    labels = sample_prior_partition(N, cfg.ngg.kappa, cfg.ngg.sigma, rng)
    part = Partition.from_labels(labels)
    uniq = UniqueValues(
        b_star=rng.standard_normal((part.K_N, basis.d)),
        theta0_star=rng.standard_normal((part.K_N, n_p, T_Y)),
    )
    mu_s = rng.standard_normal(n_s)
    beta = np.zeros((J, m))
    if m > 2:
        beta[:, 2:] = rng.standard_normal((J, m - 2))
    theta0 = np.moveaxis(uniq.theta0_star[part.c], 0, 1)
    state = ModelState(
        part=part,
        uniq=uniq,
        gamma_Z=rng.standard_normal(q_Z),
        sigma2_Z=float(SIGMA2_PRIOR_RATE / rng.gamma(SIGMA2_PRIOR_SHAPE)),
        alpha=np.exp(mu_s[np.asarray(ds.subscale) - 1] + rng.standard_normal(J)),
        beta=beta,
        mu_s=mu_s,
        gamma_Y=rng.standard_normal((J, q_Y)),
        theta=theta0 + rng.standard_normal((n_p, N, T_Y)),
        u=1.0,
        Z_imp=np.where(ds.mask.z_missing, 0.0, ds.Z),
        Y_imp=np.where(ds.mask.y_missing, 0, ds.Y),
    )
    return state


def _regenerate(ds, state, basis, rng):
    """Redraw the data given the current state, keeping the masks fixed."""
    Z, Y = _draw_observations(
        state.b, state.gamma_Z, state.sigma2_Z, state.theta, state.alpha, state.beta,
        state.gamma_Y, ds.X_Z, ds.X_Y, ds.domain, ds.m, basis, rng,
    )
    return replace(
        ds,
        Z=np.where(ds.mask.z_missing, np.nan, Z),
        Y=np.where(ds.mask.y_missing, -1, Y),
    )


def geweke_statistics(state, ds):
    """Fixed battery of scalar functionals of (parameters, data)."""
    obs_z = ~ds.mask.z_missing
    obs_y = ~ds.mask.y_missing
    log_alpha = np.log(state.alpha)
    free_beta = state.beta[:, 2:]
    b = state.b
    stats = {
        "gamma_Z_1": state.gamma_Z[0],
        "gamma_Z_2": state.gamma_Z[1],
        "sigma2_Z": state.sigma2_Z,
        "sigma2_Z_sq": state.sigma2_Z**2,
        "log_alpha_mean": log_alpha.mean(),
        "log_alpha_sq_mean": (log_alpha**2).mean(),
        "log_alpha_first": log_alpha[0],
        "log_alpha_last": log_alpha[-1],
        "mu_s_1": state.mu_s[0],
        "mu_s_2": state.mu_s[1],
        "beta_free_mean": free_beta.mean() if free_beta.size else 0.0,
        "beta_free_sq_mean": (free_beta**2).mean() if free_beta.size else 0.0,
        "gamma_Y_mean": state.gamma_Y.mean(),
        "gamma_Y_sq_mean": (state.gamma_Y**2).mean(),
        "theta_mean": state.theta.mean(),
        "theta_sq_mean": (state.theta**2).mean(),
        "theta0_mean": state.theta0.mean(),
        "b_mean": b.mean(),
        "b_sq_mean": (b**2).mean(),
        "K_N": float(state.part.K_N),
        "K_N_sq": float(state.part.K_N**2),
        "pair_12_together": float(state.part.c[0] == state.part.c[1]),
        "z_obs_mean": ds.Z[obs_z].mean(),
        "z_obs_sq_mean": (ds.Z[obs_z] ** 2).mean(),
        "y_obs_mean": ds.Y[obs_y].mean(),
    }
    return stats


def _batch_se(values, n_batches=50):
    """Batch-means standard error for an autocorrelated sequence."""
    n = len(values) // n_batches * n_batches
    batches = values[:n].reshape(n_batches, -1).mean(axis=1)
    return float(batches.std(ddof=1) / np.sqrt(n_batches))


@dataclass
class GewekeReport:
    """Per-statistic comparison of the two harness arms."""

    names: list
    mean_marginal: np.ndarray
    mean_successive: np.ndarray
    z_scores: np.ndarray
    n_outer: int
    corrupt_sigma2: float = 0.0
    threshold: float = 3.0

    @property
    def frac_within(self):
        return float(np.mean(np.abs(self.z_scores) < self.threshold))

    @property
    def passed(self):
        return self.frac_within >= 0.95

    def to_text(self):
        lines = [
            f"joint-distribution check: {len(self.names)} statistics, "
            f"{self.n_outer} outer iterations",
            f"{'statistic':<22}{'marginal':>12}{'successive':>12}{'z':>8}",
        ]
        for k, name in enumerate(self.names):
            flag = "" if abs(self.z_scores[k]) < self.threshold else "  <-- FLAG"
            lines.append(
                f"{name:<22}{self.mean_marginal[k]:>12.4f}"
                f"{self.mean_successive[k]:>12.4f}{self.z_scores[k]:>8.2f}{flag}"
            )
        lines.append(f"within |z| < {self.threshold}: {self.frac_within:.1%}")
        lines.append("RESULT: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text() + "\n")


def marginal_arm(ds, cfg, basis, rng, n_outer):
    """Independent (prior, data) draws; rows are the statistic battery."""
    names = None
    rows = []
    for _ in range(n_outer):
        state = _prior_state(ds, cfg, basis, rng)
        data = _regenerate(ds, state, basis, rng)
        stats = geweke_statistics(state, data)
        names = names or list(stats.keys())
        rows.append(list(stats.values()))
    return names, np.asarray(rows)


def successive_arm(ds, cfg, basis, pre, rng, n_outer, sc_burn=500,
                   corrupt_sigma2=0.0, n_sweeps_per_iter=1):
    """Alternate posterior sweeps with data regeneration.

    With n_sweeps_per_iter = 0 the arm degenerates into the marginal arm.
    Kernels stay at fixed scales so every transition is exactly reversible
    with respect to its conditional.
    """
    kernels = Kernels(ds.dims)
    if n_sweeps_per_iter > 0:
        state = _prior_state(ds, cfg, basis, rng)
        data = _regenerate(ds, state, basis, rng)
    names = None
    rows = []
    for r in range(sc_burn + n_outer):
        if n_sweeps_per_iter == 0:
            state = _prior_state(ds, cfg, basis, rng)
        else:
            for _ in range(n_sweeps_per_iter):
                sweep(state, data, basis, pre, cfg, kernels, rng,
                      sigma2_shape_offset=corrupt_sigma2)
        data = _regenerate(ds, state, basis, rng)
        if r >= sc_burn:
            stats = geweke_statistics(state, data)
            names = names or list(stats.keys())
            rows.append(list(stats.values()))
    return names, np.asarray(rows)


def geweke_run(n_outer=20000, seed=0, corrupt_sigma2=0.0, n_subjects=8, n_items=4,
               t_y=2, t_z=5, m=3, sc_burn=500, kappa=1.0, sigma=0.75):
    """Run both harness arms on the toy problem and z-compare the moments.

    The successive arm threads the production sweep with adaptation off,
    regenerating the data after every sweep.  corrupt_sigma2 shifts the
    variance-update shape to demonstrate the harness flags broken updates.
    Failures are reported, never raised.
    """
    rng = np.random.default_rng(seed)
    ds = _toy_dataset(rng, n_subjects, n_items, t_y, t_z, m)
    cfg = McmcConfig(
        n_iter=10, burn_in=0, thin=1, init_burn_in=0, seed=seed,
        ngg=NggConfig(kappa=kappa, sigma=sigma, m_aux=3),
    )
    basis = build_basis(ds.Z_times, cfg.degree, cfg.interior)
    pre = Precomp(ds, basis)

    names, mc = marginal_arm(ds, cfg, basis, np.random.default_rng([seed, 1]), n_outer)
    _, sc = successive_arm(
        ds, cfg, basis, pre, np.random.default_rng([seed, 2]), n_outer,
        sc_burn=sc_burn, corrupt_sigma2=corrupt_sigma2,
    )

    z = np.empty(len(names))
    for k in range(len(names)):
        se_mc = mc[:, k].std(ddof=1) / np.sqrt(n_outer)
        se_sc = _batch_se(sc[:, k])
        z[k] = (mc[:, k].mean() - sc[:, k].mean()) / np.sqrt(se_mc**2 + se_sc**2)
    return GewekeReport(
        names=names,
        mean_marginal=mc.mean(axis=0),
        mean_successive=sc.mean(axis=0),
        z_scores=z,
        n_outer=n_outer,
        corrupt_sigma2=corrupt_sigma2,
    )
