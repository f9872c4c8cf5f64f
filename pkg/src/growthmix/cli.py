"""Command-line pipeline: simulate, fit, summarize, geweke.

Configuration is a JSON file with optional sections; a section that is
present must be complete, an omitted section falls back to the built-in
defaults (which mirror the reference analysis settings).  Every command
writes a manifest binding its inputs, config hash, seed, and package
version so pipelines replay byte-identically.

Exit codes: 0 ok, 1 usage or config error, 2 data or I/O error.
"""

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .chainio import dataset_hash, load_chain
from .data import DataError, load_dataset_dir, save_dataset_dir
from .ngg import NggConfig
from .posterior import EmptyChain, write_summary_dir
from .sampler import McmcConfig, run_chain
from .simulate import default_scenario, generate, geweke_run, save_truth

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

DEFAULT_CONFIG = {
    "seed": 0,
    "mcmc": {
        "n_iter": 25000,
        "burn_in": 15000,
        "thin": 2,
        "init_burn_in": 100,
        "checkpoint_every": 1000,
    },
    "ngg": {"kappa": 1.0, "sigma": 0.75, "m_aux": 3},
    "spline": {"degree": 3, "interior": "median"},
    "simulate": {
        "n_subjects": 100,
        "n_items": 12,
        "t_y": 4,
        "m": 5,
        "z_missing_rate": 0.065,
        "y_missing_rate": 0.065,
    },
    "geweke": {"n_outer": 20000, "corrupt_sigma2": 0.0},
}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def load_config(path):
    """Merge a JSON config over the defaults, section by section."""
    config = json.loads(json.dumps(DEFAULT_CONFIG))
    if path is None:
        return config
    try:
        with open(path) as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {e}")
    for key, value in user.items():
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"unknown config field: {key}")
        if isinstance(DEFAULT_CONFIG[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config field {key} must be a section")
            for sub in value:
                if sub not in DEFAULT_CONFIG[key]:
                    raise ConfigError(f"unknown config field: {key}.{sub}")
            for sub in DEFAULT_CONFIG[key]:
                if sub not in value:
                    raise ConfigError(f"missing config field: {key}.{sub}")
            config[key] = value
        else:
            config[key] = value
    return config


def _config_hash(config):
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def _out_path(path):
    root = os.environ.get("GROWTHMIX_OUT")
    path = Path(path)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _write_manifest(out_dir, command, config, extra):
    manifest = {
        "command": command,
        "config": config,
        "config_hash": _config_hash(config),
        "version": __version__,
    }
    manifest.update(extra)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{command}_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _mcmc_config(config, args):
    mc = dict(config["mcmc"])
    ngg = dict(config["ngg"])
    seed = config["seed"]
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    if getattr(args, "iters", None) is not None:
        mc["n_iter"] = args.iters
    if getattr(args, "burnin", None) is not None:
        mc["burn_in"] = args.burnin
    if getattr(args, "thin", None) is not None:
        mc["thin"] = args.thin
    if getattr(args, "kappa", None) is not None:
        ngg["kappa"] = args.kappa
    if getattr(args, "sigma", None) is not None:
        ngg["sigma"] = args.sigma
    try:
        return McmcConfig(
            n_iter=mc["n_iter"],
            burn_in=mc["burn_in"],
            thin=mc["thin"],
            init_burn_in=mc["init_burn_in"],
            seed=seed,
            ngg=NggConfig(kappa=ngg["kappa"], sigma=ngg["sigma"], m_aux=ngg["m_aux"]),
            degree=config["spline"]["degree"],
            interior=config["spline"]["interior"],
            checkpoint_every=mc["checkpoint_every"],
        )
    except ValueError as e:
        raise ConfigError(str(e))


def cmd_simulate(args):
    config = load_config(args.config)
    sim = config["simulate"]
    out_dir = _out_path(args.out)
    rng = np.random.default_rng(config["seed"])
    true = default_scenario(
        seed=config["seed"],
        n_subjects=sim["n_subjects"],
        n_items=sim["n_items"],
        t_y=sim["t_y"],
        m=sim["m"],
    )
    ds, truth = generate(true, sim["z_missing_rate"], sim["y_missing_rate"], rng)
    save_dataset_dir(ds, out_dir)
    save_truth(truth, out_dir / "truth.json")
    _write_manifest(out_dir, "simulate", config, {"seed": config["seed"], "dims": list(ds.dims)})
    print(f"wrote dataset ({ds.N} subjects) to {out_dir}")
    return EXIT_OK


def _fit_one(ds, cfg, out_dir):
    run_chain(ds, cfg, out_dir=out_dir)
    return out_dir


def cmd_fit(args):
    config = load_config(args.config)
    data_dir = _out_path(args.data)
    ds = load_dataset_dir(data_dir)
    out_dir = _out_path(args.out)
    cfg = _mcmc_config(config, args)
    if args.chains == 1:
        run_chain(ds, cfg, out_dir=out_dir, resume=args.resume)
        chain_dirs = [out_dir]
    else:
        from dataclasses import replace

        chain_dirs = [Path(out_dir) / f"chain_{k + 1:02d}" for k in range(args.chains)]
        configs = [replace(cfg, seed=cfg.seed + k) for k in range(args.chains)]
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.chains) as pool:
            futures = [
                pool.submit(_fit_one, ds, c, d) for c, d in zip(configs, chain_dirs)
            ]
            for f in futures:
                f.result()
    _write_manifest(
        out_dir,
        "fit",
        config,
        {
            "seed": cfg.seed,
            "data_dir": str(data_dir),
            "input_hash": dataset_hash(ds),
            "chains": [str(d) for d in chain_dirs],
        },
    )
    print(f"chain written to {out_dir}")
    return EXIT_OK


def cmd_summarize(args):
    chain_dir = _out_path(args.chain)
    chain = load_chain(chain_dir)
    if args.data is not None:
        data_dir = _out_path(args.data)
    else:
        fit_manifest = Path(chain_dir) / "fit_manifest.json"
        if not fit_manifest.exists():
            raise ConfigError(
                "no fit manifest next to the chain; pass --data with the dataset directory"
            )
        with open(fit_manifest) as fh:
            data_dir = Path(json.load(fh)["data_dir"])
    ds = load_dataset_dir(data_dir)
    out_dir = _out_path(args.out) if args.out else Path(chain_dir) / "summary"
    write_summary_dir(chain, ds, out_dir)
    _write_manifest(
        out_dir,
        "summarize",
        {"seed": None},
        {"chain_dir": str(chain_dir), "n_draws": int(chain.n_draws)},
    )
    print(f"summary written to {out_dir}")
    return EXIT_OK


def cmd_geweke(args):
    config = load_config(args.config)
    gw = config["geweke"]
    report = geweke_run(
        n_outer=gw["n_outer"],
        seed=config["seed"],
        corrupt_sigma2=gw["corrupt_sigma2"],
    )
    out = _out_path(args.out) if args.out else None
    text = report.to_text()
    print(text)
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        report.save(out)
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="growthmix", description=__doc__)
    parser.add_argument("--print-config", action="store_true", help="print default config and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="run the sampler on a dataset directory")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--burnin", type=int, default=None)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("summarize", help="post-process a chain directory")
    p.add_argument("--chain", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("geweke", help="run the joint-distribution correctness harness")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(json.dumps(DEFAULT_CONFIG, indent=1, sort_keys=True))
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    handler = {
        "simulate": cmd_simulate,
        "fit": cmd_fit,
        "summarize": cmd_summarize,
        "geweke": cmd_geweke,
    }[args.command]
    try:
        return handler(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EmptyChain) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
