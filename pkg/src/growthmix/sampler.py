"""Metropolis-within-Gibbs sweep and chain driver.

One sweep follows the update schedule: (1) impute missing cells, (2) Gibbs
draws for the growth fixed effects and variance, (3) adaptive Metropolis
updates for traits, discriminations, steps, and item covariate effects plus
a Gibbs draw for the subscale means, (4) the allocation urn, cluster atom
updates, and the auxiliary-variable step.

Latent traits and the per-item blocks have mutually non-interacting full
conditionals (each block's target involves no other block of its kind), so
their one-at-a-time Metropolis updates run as simultaneous vectorised
proposals with per-block adaptive scales; the result is identical in law to
a sequential scan.

Proposal adaptation collects moments during the first init_burn_in sweeps,
adapts through the burn-in, and freezes for the recorded part of the chain.
"""

import pickle
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .adaptive import (
    AdaptiveKernel,
    BlockBatchKernel,
    ScalarFieldKernel,
    mh_step_batch,
    mh_step_field,
)
from .chainio import ChainOutput, ChainWriter, dataset_hash
from .longitudinal import (
    SIGMA2_PRIOR_RATE,
    SIGMA2_PRIOR_SHAPE,
    gibbs_gamma_Z,
    gibbs_sigma2_Z,
)
from .ngg import (
    NggConfig,
    Partition,
    UniqueValues,
    gibbs_unique_values,
    resample_allocation,
    update_u,
)
from .pcm import all_cell_logliks, step_prefix
from .splines import build_basis

__all__ = ["McmcConfig", "ModelState", "init_state", "run_chain", "sweep"]

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class McmcConfig:
    """Chain settings; defaults follow the reference analysis."""

    n_iter: int = 25000
    burn_in: int = 15000
    thin: int = 2
    init_burn_in: int = 100
    seed: int = 0
    ngg: NggConfig = field(default_factory=NggConfig)
    degree: int = 3
    interior: object = "median"
    checkpoint_every: int = 1000

    def __post_init__(self):
        if not self.burn_in < self.n_iter:
            raise ValueError(f"burn_in ({self.burn_in}) must be < n_iter ({self.n_iter})")
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        if self.init_burn_in < 0 or self.checkpoint_every < 1:
            raise ValueError("init_burn_in must be >= 0 and checkpoint_every >= 1")

    def n_stored(self):
        return (self.n_iter - self.burn_in + self.thin - 1) // self.thin


@dataclass
class ModelState:
    """Every latent quantity of one sweep.

    Subject-level spline coefficients and trait means are views into the
    cluster atoms, so the state cannot drift out of sync with the
    partition.
    """

    part: Partition
    uniq: UniqueValues
    gamma_Z: np.ndarray   # (q_Z,)
    sigma2_Z: float
    alpha: np.ndarray     # (J,)
    beta: np.ndarray      # (J, m)
    mu_s: np.ndarray      # (n_s,)
    gamma_Y: np.ndarray   # (J, q_Y)
    theta: np.ndarray     # (n_p, N, T_Y)
    u: float
    Z_imp: np.ndarray     # (N, T_Z) data with imputed missing cells
    Y_imp: np.ndarray     # (T_Y, N, J) data with imputed missing cells
    iteration: int = 0

    @property
    def b(self):
        """Per-subject spline coefficients, (N, d)."""
        return self.uniq.b_star[self.part.c]

    @property
    def theta0(self):
        """Per-subject trait means, (n_p, N, T_Y)."""
        return np.moveaxis(self.uniq.theta0_star[self.part.c], 0, 1)


class Kernels:
    """Adaptive proposal bank for one chain."""

    def __init__(self, dims):
        N, T_Z, T_Y, J, m, n_s, n_p, q_Z, q_Y = dims
        self.theta = ScalarFieldKernel((n_p, N, T_Y), init_scale=0.5)
        self.log_alpha = ScalarFieldKernel((J,), init_scale=0.3)
        self.beta = BlockBatchKernel(J, m - 2, init_scale=0.3) if m > 2 else None
        self.gamma_Y = BlockBatchKernel(J, q_Y, init_scale=0.3)
        self.u = AdaptiveKernel(1, init_scale=0.6)

    def _all(self):
        banks = [self.theta, self.log_alpha, self.gamma_Y, self.u]
        if self.beta is not None:
            banks.insert(2, self.beta)
        return banks

    def begin_adaptation(self):
        for k in self._all():
            k.begin_adaptation()

    def freeze(self):
        for k in self._all():
            k.freeze()


class Precomp:
    """Per-dataset constants shared by every sweep (mask-dependent)."""

    def __init__(self, ds, basis):
        self.obs_z = ~ds.mask.z_missing
        self.n_obs_i = self.obs_z.sum(axis=1)
        self.y_obs = ~ds.mask.y_missing
        # spline Gram matrix of each subject's observed columns
        Bm = basis.B[None, :, :] * self.obs_z[:, None, :]  # (N, d, T_Z)
        self.B_masked = Bm
        self.gram_i = np.einsum("nit,njt->nij", Bm, Bm)
        self.dom_idx = np.asarray(ds.domain) - 1
        self.items_by_domain = [np.where(self.dom_idx == p)[0] for p in range(ds.n_p)]
        self.items_by_subscale = [np.where(np.asarray(ds.subscale) == s + 1)[0] for s in range(ds.n_s)]
        self.n_items_subscale = np.array([len(ix) for ix in self.items_by_subscale])
        self.miss_y = np.argwhere(ds.mask.y_missing)  # rows (t, i, j)


def gibbs_mu_s(log_alpha, items_by_subscale, rng):
    """Conjugate draw of each subscale mean given its items' log discriminations.

    Posterior: N(sum_j log alpha_j / (n_s + 1), 1 / (n_s + 1)) with n_s the
    item count of the subscale.
    """
    out = np.empty(len(items_by_subscale))
    for s, items in enumerate(items_by_subscale):
        n = len(items)
        out[s] = log_alpha[items].sum() / (n + 1) + rng.standard_normal() / np.sqrt(n + 1)
    return out


def init_state(ds, cfg, rng, basis=None):
    """Draw every parameter from its prior; one shared cluster; u = 1."""
    if basis is None:
        basis = build_basis(ds.Z_times, cfg.degree, cfg.interior)
    N, T_Z, T_Y, J, m, n_s, n_p, q_Z, q_Y = ds.dims
    part = Partition(c=np.zeros(N, dtype=int), sizes=np.array([N]))
    uniq = UniqueValues(
        b_star=rng.standard_normal((1, basis.d)),
        theta0_star=rng.standard_normal((1, n_p, T_Y)),
    )
    gamma_Z = rng.standard_normal(q_Z)
    sigma2_Z = SIGMA2_PRIOR_RATE / rng.gamma(SIGMA2_PRIOR_SHAPE)
    mu_s = rng.standard_normal(n_s)
    alpha = np.exp(mu_s[np.asarray(ds.subscale) - 1] + rng.standard_normal(J))
    beta = np.zeros((J, m))
    if m > 2:
        beta[:, 2:] = rng.standard_normal((J, m - 2))
    gamma_Y = rng.standard_normal((J, q_Y))
    theta0 = np.moveaxis(uniq.theta0_star[part.c], 0, 1)
    theta = theta0 + rng.standard_normal((n_p, N, T_Y))
    state = ModelState(
        part=part,
        uniq=uniq,
        gamma_Z=gamma_Z,
        sigma2_Z=float(sigma2_Z),
        alpha=alpha,
        beta=beta,
        mu_s=mu_s,
        gamma_Y=gamma_Y,
        theta=theta,
        u=1.0,
        Z_imp=np.where(ds.mask.z_missing, 0.0, ds.Z),
        Y_imp=np.where(ds.mask.y_missing, 0, ds.Y),
        iteration=0,
    )
    _impute_missing(state, ds, basis, rng)
    return state


def _impute_missing(state, ds, basis, rng):
    """Step 1: draw missing growth cells and missing answers in place."""
    z_miss = ds.mask.z_missing
    if z_miss.any():
        mean = state.b @ basis.B + (ds.X_Z @ state.gamma_Z)[:, None]
        draws = mean[z_miss] + np.sqrt(state.sigma2_Z) * rng.standard_normal(int(z_miss.sum()))
        state.Z_imp = np.where(z_miss, 0.0, ds.Z)
        state.Z_imp[z_miss] = draws
    cells = np.argwhere(ds.mask.y_missing)
    if len(cells):
        t_ix, i_ix, j_ix = cells.T
        eta = ds.X_Y @ state.gamma_Y.T
        m = ds.m
        h = np.arange(m)
        p_ix = np.asarray(ds.domain)[j_ix] - 1
        th = state.theta[p_ix, i_ix, t_ix]
        prefix = step_prefix(state.beta)[j_ix]
        logits = state.alpha[j_ix, None] * (h * th[:, None] - prefix) + h * eta[i_ix, j_ix, None]
        z = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(z)
        probs /= probs.sum(axis=1, keepdims=True)
        draws = (np.cumsum(probs, axis=1) < rng.random((len(cells), 1))).sum(axis=1)
        state.Y_imp = np.where(ds.mask.y_missing, 0, ds.Y)
        state.Y_imp[t_ix, i_ix, j_ix] = draws


def _irt_updates(state, ds, pre, kernels, rng):
    """Step 3: traits, discriminations, steps, subscale means, item covariates."""
    Y, y_miss = ds.Y, ds.mask.y_missing
    domain = ds.domain
    eta = ds.X_Y @ state.gamma_Y.T

    def domain_sums(cube):
        out = np.empty_like(state.theta)
        for p, items in enumerate(pre.items_by_domain):
            out[p] = cube[:, :, items].sum(axis=2).T
        return out

    # latent traits: per-cell likelihood plus the N(theta0, 1) prior
    theta0 = state.theta0

    def theta_target(th):
        cube = all_cell_logliks(Y, y_miss, th, domain, state.alpha, state.beta, eta)
        return domain_sums(cube) - 0.5 * (th - theta0) ** 2

    state.theta, _ = mh_step_field(state.theta, theta_target, kernels.theta, rng)

    # discriminations on the log scale; the N(mu_s, 1) prior on log alpha
    # already absorbs the change of variables
    mu_j = state.mu_s[np.asarray(ds.subscale) - 1]

    def log_alpha_target(x):
        cube = all_cell_logliks(Y, y_miss, state.theta, domain, np.exp(x), state.beta, eta)
        return cube.sum(axis=(0, 1)) - 0.5 * (x - mu_j) ** 2

    x, _ = mh_step_field(np.log(state.alpha), log_alpha_target, kernels.log_alpha, rng)
    state.alpha = np.exp(x)

    # step difficulties, free coordinates only
    if kernels.beta is not None:

        def beta_target(free):
            beta = state.beta.copy()
            beta[:, 2:] = free
            cube = all_cell_logliks(Y, y_miss, state.theta, domain, state.alpha, beta, eta)
            return cube.sum(axis=(0, 1)) - 0.5 * (free**2).sum(axis=1)

        free, _ = mh_step_batch(state.beta[:, 2:].copy(), beta_target, kernels.beta, rng)
        state.beta[:, 2:] = free

    # subscale means: conjugate around the mean of member log discriminations
    state.mu_s = gibbs_mu_s(np.log(state.alpha), pre.items_by_subscale, rng)

    # item covariate effects
    def gamma_y_target(g):
        eta_g = ds.X_Y @ g.T
        cube = all_cell_logliks(Y, y_miss, state.theta, domain, state.alpha, state.beta, eta_g)
        return cube.sum(axis=(0, 1)) - 0.5 * (g**2).sum(axis=1)

    state.gamma_Y, _ = mh_step_batch(state.gamma_Y.copy(), gamma_y_target, kernels.gamma_Y, rng)


def _bnp_updates(state, ds, basis, pre, cfg, kernels, rng):
    """Step 4: allocation urn, unique-value draws, auxiliary variable."""
    N = ds.N
    offsets = ds.X_Z @ state.gamma_Z
    s2 = state.sigma2_Z
    z0 = np.where(pre.obs_z, ds.Z, 0.0)
    n_traits = state.theta.shape[0] * state.theta.shape[2]

    def subject_loglik(i, b_cand, t0_cand):
        obs = pre.obs_z[i]
        resid = z0[i, obs] - b_cand @ basis.B[:, obs] - offsets[i]
        ll = -0.5 * pre.n_obs_i[i] * np.log(2 * np.pi * s2) - 0.5 * (resid**2).sum(axis=1) / s2
        dtheta = state.theta[:, i, :][None] - t0_cand
        ll += -0.5 * n_traits * LOG_2PI - 0.5 * (dtheta**2).sum(axis=(1, 2))
        return ll

    def draw_atoms(n, rng_):
        return (
            rng_.standard_normal((n, basis.d)),
            rng_.standard_normal((n,) + state.uniq.theta0_star.shape[1:]),
        )

    for i in range(N):
        resample_allocation(i, state.part, state.uniq, state.u, cfg.ngg, subject_loglik, draw_atoms, rng)

    # cluster atoms
    resid = np.where(pre.obs_z, ds.Z - offsets[:, None], 0.0)
    rhs = np.einsum("nit,nt->ni", pre.B_masked, resid)  # (N, d)
    for j in range(state.part.K_N):
        members = np.where(state.part.c == j)[0]
        b_j, t0_j = gibbs_unique_values(
            pre.gram_i[members].sum(axis=0),
            rhs[members].sum(axis=0),
            s2,
            state.theta[:, members, :].sum(axis=1),
            len(members),
            rng,
        )
        state.uniq.b_star[j] = b_j
        state.uniq.theta0_star[j] = t0_j

    state.u, _ = update_u(state.u, N, state.part.K_N, cfg.ngg, kernels.u, rng)


def sweep(state, ds, basis, pre, cfg, kernels, rng, sigma2_shape_offset=0.0):
    """One full Metropolis-within-Gibbs pass; mutates and returns state."""
    _impute_missing(state, ds, basis, rng)
    b = state.b
    state.gamma_Z = gibbs_gamma_Z(b, state.sigma2_Z, ds, basis, rng)
    state.sigma2_Z = float(
        gibbs_sigma2_Z(b, state.gamma_Z, ds, basis, rng, shape_offset=sigma2_shape_offset)
    )
    _irt_updates(state, ds, pre, kernels, rng)
    _bnp_updates(state, ds, basis, pre, cfg, kernels, rng)
    state.iteration += 1
    return state


class _Recorder:
    """Accumulates stored draws in memory (and optionally on disk)."""

    def __init__(self, ds, basis, writer=None):
        self.dims = ds.dims
        self.writer = writer
        self.iters = []
        self.blocks = {k: [] for k in
                       ("partitions", "gamma_Z", "sigma2_Z", "u", "alpha", "beta",
                        "mu_s", "gamma_Y", "theta")}
        self.psi = []

    def record(self, it, state):
        self.iters.append(it)
        self.blocks["partitions"].append(state.part.c.copy())
        self.blocks["gamma_Z"].append(state.gamma_Z.copy())
        self.blocks["sigma2_Z"].append(state.sigma2_Z)
        self.blocks["u"].append(state.u)
        self.blocks["alpha"].append(state.alpha.copy())
        self.blocks["beta"].append(state.beta.copy())
        self.blocks["mu_s"].append(state.mu_s.copy())
        self.blocks["gamma_Y"].append(state.gamma_Y.copy())
        self.blocks["theta"].append(state.theta.copy())
        self.psi.append(
            {"b_star": state.uniq.b_star.copy(), "theta0_star": state.uniq.theta0_star.copy()}
        )
        if self.writer is not None:
            self.writer.append(it, state)

    def truncate(self, n):
        self.iters = self.iters[:n]
        for key in self.blocks:
            self.blocks[key] = self.blocks[key][:n]
        self.psi = self.psi[:n]

    def output(self, manifest):
        return ChainOutput(
            iters=np.asarray(self.iters),
            partitions=np.asarray(self.blocks["partitions"]),
            gamma_Z=np.asarray(self.blocks["gamma_Z"]),
            sigma2_Z=np.asarray(self.blocks["sigma2_Z"]),
            u=np.asarray(self.blocks["u"]),
            alpha=np.asarray(self.blocks["alpha"]),
            beta=np.asarray(self.blocks["beta"]),
            mu_s=np.asarray(self.blocks["mu_s"]),
            gamma_Y=np.asarray(self.blocks["gamma_Y"]),
            theta=np.asarray(self.blocks["theta"]),
            psi=self.psi,
            dims=self.dims,
            manifest=manifest,
        )


def _config_dict(cfg):
    return {
        "n_iter": cfg.n_iter,
        "burn_in": cfg.burn_in,
        "thin": cfg.thin,
        "init_burn_in": cfg.init_burn_in,
        "seed": cfg.seed,
        "kappa": cfg.ngg.kappa,
        "sigma": cfg.ngg.sigma,
        "m_aux": cfg.ngg.m_aux,
        "degree": cfg.degree,
        "interior": cfg.interior if isinstance(cfg.interior, str) else list(cfg.interior),
        "checkpoint_every": cfg.checkpoint_every,
    }


def run_chain(ds, cfg, out_dir=None, resume=False):
    """Run a full chain; returns the ChainOutput of stored draws.

    With out_dir set the chain is persisted incrementally (block CSVs, a
    manifest, and a rolling checkpoint that makes interrupted runs
    resumable with resume=True).  Identical seed and config produce
    byte-identical output files.
    """
    basis = build_basis(ds.Z_times, cfg.degree, cfg.interior)
    pre = Precomp(ds, basis)
    kernels = Kernels(ds.dims)
    rng = np.random.default_rng(cfg.seed)
    writer = None
    checkpoint_path = None
    if out_dir is not None:
        writer = ChainWriter(out_dir, ds.dims, basis.d)
        checkpoint_path = Path(out_dir) / "checkpoint.pkl"
    recorder = _Recorder(ds, basis, writer)
    total = cfg.init_burn_in + cfg.n_iter
    start = 0

    if resume:
        if checkpoint_path is None or not checkpoint_path.exists():
            raise FileNotFoundError("resume requested but no checkpoint found")
        with open(checkpoint_path, "rb") as fh:
            ck = pickle.load(fh)
        state = ck["state"]
        kernels = ck["kernels"]
        rng = np.random.default_rng()
        rng.bit_generator.state = ck["rng_state"]
        recorder.iters = ck["recorder_iters"]
        recorder.blocks = ck["recorder_blocks"]
        recorder.psi = ck["recorder_psi"]
        writer.rows = ck["rows"]
        writer.psi_rows = ck["psi_rows"]
        writer.truncate(ck["rows"], ck["psi_rows"])
        start = ck["iteration"]
    else:
        if writer is not None:
            writer.start()
        state = init_state(ds, cfg, rng, basis)

    manifest = {
        "config": _config_dict(cfg),
        "dims": list(ds.dims),
        "spline_dim": basis.d,
        "input_hash": dataset_hash(ds),
        "version": __version__,
        "status": "running",
    }
    if writer is not None:
        writer.write_manifest(manifest)

    try:
        for g in range(start, total):
            if g == cfg.init_burn_in:
                kernels.begin_adaptation()
            if g == cfg.init_burn_in + cfg.burn_in:
                kernels.freeze()
            sweep(state, ds, basis, pre, cfg, kernels, rng)
            local = g - cfg.init_burn_in
            if local >= cfg.burn_in and (local - cfg.burn_in) % cfg.thin == 0:
                recorder.record(local, state)
            if checkpoint_path is not None and (g + 1) % cfg.checkpoint_every == 0:
                _write_checkpoint(checkpoint_path, g + 1, state, kernels, rng, recorder, writer)
    except OSError:
        manifest["status"] = "partial"
        if writer is not None:
            writer.write_manifest(manifest)
        raise

    manifest["status"] = "complete"
    manifest["n_stored"] = len(recorder.iters)
    if writer is not None:
        writer.write_manifest(manifest)
    return recorder.output(manifest)


def _write_checkpoint(path, iteration, state, kernels, rng, recorder, writer):
    payload = {
        "iteration": iteration,
        "state": state,
        "kernels": kernels,
        "rng_state": rng.bit_generator.state,
        "recorder_iters": list(recorder.iters),
        "recorder_blocks": {k: list(v) for k, v in recorder.blocks.items()},
        "recorder_psi": list(recorder.psi),
        "rows": writer.rows,
        "psi_rows": writer.psi_rows,
    }
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        pickle.dump(payload, fh)
    tmp.replace(path)
