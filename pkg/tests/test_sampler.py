"""Sweep orchestration tests: determinism, invariants, storage, resume."""

import filecmp

import numpy as np
import pytest

import growthmix.sampler as sampler_mod
from growthmix.chainio import load_chain
from growthmix.data import load_dataset
from growthmix.ngg import NggConfig
from growthmix.sampler import Kernels, McmcConfig, Precomp, init_state, run_chain, sweep
from growthmix.splines import build_basis
from conftest import write_dataset_files


def toy_files(tmp_path, seed=0):
    return write_dataset_files(
        tmp_path,
        N=6,
        T_Z=5,
        T_Y=2,
        J=4,
        m=3,
        q_Z=2,
        q_Y=2,
        seed=seed,
        subscale=[1, 1, 2, 2],
        domain=[1, 1, 2, 2],
        z_times=[1.0, 2.0, 3.0, 4.0, 5.0],
        z_missing=[(0, 1), (3, 4)],
        y_missing=[(0, 1, 2), (1, 5, 0)],
    )


def toy_cfg(**kw):
    base = dict(
        n_iter=12, burn_in=4, thin=2, init_burn_in=3, seed=11,
        ngg=NggConfig(kappa=1.0, sigma=0.75, m_aux=3), checkpoint_every=5,
    )
    base.update(kw)
    return McmcConfig(**base)


@pytest.fixture
def toy_ds(tmp_path):
    return load_dataset(*toy_files(tmp_path))


def test_init_state_deterministic_and_constrained(toy_ds):
    cfg = toy_cfg()
    a = init_state(toy_ds, cfg, np.random.default_rng(5))
    b = init_state(toy_ds, cfg, np.random.default_rng(5))
    assert a.part.K_N == 1
    np.testing.assert_array_equal(a.beta[:, :2], 0.0)
    assert np.all(a.alpha > 0)
    np.testing.assert_array_equal(a.gamma_Z, b.gamma_Z)
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.Z_imp, b.Z_imp)
    assert a.sigma2_Z == b.sigma2_Z
    # imputation never overwrites observed cells
    obs = ~toy_ds.mask.z_missing
    np.testing.assert_array_equal(a.Z_imp[obs], toy_ds.Z[obs])
    np.testing.assert_array_equal(a.Y_imp[~toy_ds.mask.y_missing], toy_ds.Y[~toy_ds.mask.y_missing])


def test_sweep_preserves_invariants(toy_ds):
    cfg = toy_cfg()
    rng = np.random.default_rng(3)
    basis = build_basis(toy_ds.Z_times)
    pre = Precomp(toy_ds, basis)
    kernels = Kernels(toy_ds.dims)
    state = init_state(toy_ds, cfg, rng, basis)
    for _ in range(30):
        sweep(state, toy_ds, basis, pre, cfg, kernels, rng)
        state.part.validate()
        assert state.part.sizes.sum() == toy_ds.N
        np.testing.assert_array_equal(state.beta[:, :2], 0.0)
        assert np.all(state.alpha > 0)
        assert state.sigma2_Z > 0 and state.u > 0
        # subject-level views stay tied to the cluster atoms
        np.testing.assert_array_equal(state.b, state.uniq.b_star[state.part.c])
        np.testing.assert_array_equal(
            state.theta0, np.moveaxis(state.uniq.theta0_star[state.part.c], 0, 1)
        )
        obs = ~toy_ds.mask.z_missing
        np.testing.assert_array_equal(state.Z_imp[obs], toy_ds.Z[obs])


def test_stored_draw_counts(toy_ds):
    out = run_chain(toy_ds, toy_cfg(n_iter=10, burn_in=0, thin=1, init_burn_in=0))
    assert out.n_draws == 10
    out = run_chain(toy_ds, toy_cfg(n_iter=12, burn_in=4, thin=2))
    assert out.n_draws == 4
    # reference-analysis arithmetic
    assert McmcConfig(n_iter=25000, burn_in=15000, thin=2).n_stored() == 5000


def test_config_validation():
    with pytest.raises(ValueError, match="burn_in"):
        McmcConfig(n_iter=10, burn_in=10)
    with pytest.raises(ValueError, match="thin"):
        McmcConfig(thin=0)


def test_chain_reproducible_in_memory(toy_ds):
    a = run_chain(toy_ds, toy_cfg())
    b = run_chain(toy_ds, toy_cfg())
    np.testing.assert_array_equal(a.gamma_Z, b.gamma_Z)
    np.testing.assert_array_equal(a.partitions, b.partitions)
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.sigma2_Z, b.sigma2_Z)


def test_chain_files_byte_identical(tmp_path):
    ds = load_dataset(*toy_files(tmp_path / "d"))
    run_chain(ds, toy_cfg(), out_dir=tmp_path / "r1")
    run_chain(ds, toy_cfg(), out_dir=tmp_path / "r2")
    names = [p.name for p in (tmp_path / "r1").iterdir() if p.suffix == ".csv"]
    names.append("manifest.json")
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "r1", tmp_path / "r2", names, shallow=False)
    assert not mismatch and not errors
    assert len(match) == len(names)


def test_chain_roundtrip_through_files(tmp_path):
    ds = load_dataset(*toy_files(tmp_path / "d"))
    mem = run_chain(ds, toy_cfg(), out_dir=tmp_path / "chain")
    loaded = load_chain(tmp_path / "chain")
    np.testing.assert_array_equal(mem.partitions, loaded.partitions)
    np.testing.assert_allclose(mem.gamma_Z, loaded.gamma_Z, rtol=0, atol=0)
    np.testing.assert_allclose(mem.beta, loaded.beta, atol=0)
    np.testing.assert_allclose(mem.theta, loaded.theta, atol=0)
    np.testing.assert_allclose(mem.u, loaded.u, atol=0)
    for a, b in zip(mem.psi, loaded.psi):
        np.testing.assert_allclose(a["b_star"], b["b_star"], atol=0)
        np.testing.assert_allclose(a["theta0_star"], b["theta0_star"], atol=0)
    assert loaded.manifest["status"] == "complete"
    assert loaded.manifest["config"]["seed"] == 11


def test_interrupted_run_resumes_byte_identical(tmp_path, monkeypatch):
    ds = load_dataset(*toy_files(tmp_path / "d"))
    cfg = toy_cfg(n_iter=20, burn_in=2, thin=1, init_burn_in=2, checkpoint_every=6)
    run_chain(ds, cfg, out_dir=tmp_path / "full")

    real_sweep = sampler_mod.sweep
    calls = {"n": 0}

    def failing_sweep(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 13:
            raise KeyboardInterrupt
        return real_sweep(*args, **kwargs)

    monkeypatch.setattr(sampler_mod, "sweep", failing_sweep)
    with pytest.raises(KeyboardInterrupt):
        run_chain(ds, cfg, out_dir=tmp_path / "broken")
    monkeypatch.setattr(sampler_mod, "sweep", real_sweep)
    resumed = run_chain(ds, cfg, out_dir=tmp_path / "broken", resume=True)
    assert resumed.n_draws == cfg.n_stored()

    names = [p.name for p in (tmp_path / "full").iterdir() if p.suffix == ".csv"]
    names.append("manifest.json")
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "full", tmp_path / "broken", names, shallow=False)
    assert not mismatch and not errors


def test_resume_without_checkpoint_raises(toy_ds, tmp_path):
    with pytest.raises(FileNotFoundError):
        run_chain(toy_ds, toy_cfg(), out_dir=tmp_path / "nochk", resume=True)
