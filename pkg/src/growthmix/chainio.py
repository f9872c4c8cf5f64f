"""Chain persistence: per-block CSV files, run manifest, and reload.

Every stored draw appends one row per block file (the partition block uses
1-based cluster labels; the per-cluster atom block is long format with one
row per active cluster).  Floats are written with shortest round-trip
formatting so identical runs produce identical bytes.
"""

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["ChainOutput", "ChainWriter", "dataset_hash", "load_chain"]

BLOCK_FILES = (
    "partition.csv",
    "gamma_z.csv",
    "sigma2_z.csv",
    "u.csv",
    "alpha.csv",
    "beta.csv",
    "mu_s.csv",
    "gamma_y.csv",
    "theta.csv",
    "psi_star.csv",
)


def _fmt(x):
    return repr(float(x))


def dataset_hash(ds):
    """Content hash binding a run to its input data."""
    h = hashlib.sha256()
    for arr in (
        np.nan_to_num(ds.Z, nan=-1e300),
        ds.Z_times,
        ds.Y,
        ds.X_Z,
        ds.X_Y,
        ds.subscale,
        ds.domain,
        ds.mask.z_missing,
        ds.mask.y_missing,
    ):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(repr(ds.dims).encode())
    return h.hexdigest()


@dataclass
class ChainOutput:
    """Thinned post-burn-in draws, one leading axis entry per stored sweep."""

    iters: np.ndarray        # (S,)
    partitions: np.ndarray   # (S, N) 0-based labels
    gamma_Z: np.ndarray      # (S, q_Z)
    sigma2_Z: np.ndarray     # (S,)
    u: np.ndarray            # (S,)
    alpha: np.ndarray        # (S, J)
    beta: np.ndarray         # (S, J, m)
    mu_s: np.ndarray         # (S, n_s)
    gamma_Y: np.ndarray      # (S, J, q_Y)
    theta: np.ndarray        # (S, n_p, N, T_Y)
    psi: list                # per draw: dict with b_star (K, d), theta0_star (K, n_p, T_Y)
    dims: tuple
    manifest: dict = field(default_factory=dict)

    @property
    def n_draws(self):
        return len(self.iters)


class ChainWriter:
    """Incremental block-CSV writer with truncation support for resumes."""

    def __init__(self, out_dir, dims, d):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.dims = dims
        self.d = d
        self.rows = 0
        self.psi_rows = 0

    def _headers(self):
        N, T_Z, T_Y, J, m, n_s, n_p, q_Z, q_Y = self.dims
        return {
            "partition.csv": ["iter"] + [f"c{i + 1}" for i in range(N)],
            "gamma_z.csv": ["iter"] + [f"g{q + 1}" for q in range(q_Z)],
            "sigma2_z.csv": ["iter", "sigma2_z"],
            "u.csv": ["iter", "u"],
            "alpha.csv": ["iter"] + [f"a{j + 1}" for j in range(J)],
            "beta.csv": ["iter"] + [f"b{j + 1}_{h}" for j in range(J) for h in range(m)],
            "mu_s.csv": ["iter"] + [f"mu{s + 1}" for s in range(n_s)],
            "gamma_y.csv": ["iter"] + [f"g{j + 1}_{q + 1}" for j in range(J) for q in range(q_Y)],
            "theta.csv": ["iter"]
            + [f"th{p + 1}_{i + 1}_{t + 1}" for p in range(n_p) for i in range(N) for t in range(T_Y)],
            "psi_star.csv": ["iter", "cluster", "size"]
            + [f"b{k + 1}" for k in range(self.d)]
            + [f"t0_{p + 1}_{t + 1}" for p in range(n_p) for t in range(T_Y)],
        }

    def start(self):
        for name, header in self._headers().items():
            with open(self.out_dir / name, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(header)
        self.rows = 0
        self.psi_rows = 0

    def append(self, it, state):
        def row_of(values):
            return [it] + [_fmt(v) for v in np.asarray(values).ravel()]

        files = {
            "partition.csv": [it] + [int(c) + 1 for c in state.part.c],
            "gamma_z.csv": row_of(state.gamma_Z),
            "sigma2_z.csv": row_of([state.sigma2_Z]),
            "u.csv": row_of([state.u]),
            "alpha.csv": row_of(state.alpha),
            "beta.csv": row_of(state.beta),
            "mu_s.csv": row_of(state.mu_s),
            "gamma_y.csv": row_of(state.gamma_Y),
            "theta.csv": row_of(state.theta),
        }
        for name, row in files.items():
            with open(self.out_dir / name, "a", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(row)
        with open(self.out_dir / "psi_star.csv", "a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for k in range(state.part.K_N):
                w.writerow(
                    [it, k + 1, int(state.part.sizes[k])]
                    + [_fmt(v) for v in state.uniq.b_star[k]]
                    + [_fmt(v) for v in state.uniq.theta0_star[k].ravel()]
                )
                self.psi_rows += 1
        self.rows += 1

    def truncate(self, n_rows, n_psi_rows):
        """Drop rows written after the last checkpoint (resume support)."""
        for name in BLOCK_FILES:
            keep = n_psi_rows if name == "psi_star.csv" else n_rows
            path = self.out_dir / name
            lines = path.read_text().splitlines()
            path.write_text("\n".join(lines[: keep + 1]) + "\n")
        self.rows = n_rows
        self.psi_rows = n_psi_rows

    def write_manifest(self, manifest):
        with open(self.out_dir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")


def _read_block(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return header, body


def load_chain(chain_dir):
    """Reload a persisted chain directory into a ChainOutput."""
    chain_dir = Path(chain_dir)
    with open(chain_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    dims = tuple(manifest["dims"])
    N, T_Z, T_Y, J, m, n_s, n_p, q_Z, q_Y = dims

    def block(name, shape):
        _, body = _read_block(chain_dir / name)
        arr = np.array([[float(v) for v in row[1:]] for row in body])
        iters = np.array([int(row[0]) for row in body])
        if shape is not None:
            arr = arr.reshape((len(body),) + shape)
        return iters, arr

    iters, partitions = block("partition.csv", None)
    partitions = partitions.astype(int) - 1
    _, gamma_Z = block("gamma_z.csv", None)
    _, sigma2 = block("sigma2_z.csv", None)
    _, u = block("u.csv", None)
    _, alpha = block("alpha.csv", None)
    _, beta = block("beta.csv", (J, m))
    _, mu_s = block("mu_s.csv", None)
    _, gamma_Y = block("gamma_y.csv", (J, q_Y))
    _, theta = block("theta.csv", (n_p, N, T_Y))

    d = manifest["spline_dim"]
    _, body = _read_block(chain_dir / "psi_star.csv")
    psi_by_iter = {}
    for row in body:
        it = int(row[0])
        vals = [float(v) for v in row[3:]]
        entry = psi_by_iter.setdefault(it, {"b": [], "t0": []})
        entry["b"].append(vals[:d])
        entry["t0"].append(np.array(vals[d:]).reshape(n_p, T_Y))
    psi = [
        {
            "b_star": np.array(psi_by_iter[it]["b"]),
            "theta0_star": np.array(psi_by_iter[it]["t0"]),
        }
        for it in iters
    ]
    return ChainOutput(
        iters=iters,
        partitions=partitions,
        gamma_Z=gamma_Z,
        sigma2_Z=sigma2[:, 0],
        u=u[:, 0],
        alpha=alpha,
        beta=beta,
        mu_s=mu_s,
        gamma_Y=gamma_Y,
        theta=theta,
        psi=psi,
        dims=dims,
        manifest=manifest,
    )
