"""Dataset container, structural validation, and CSV ingestion.

File layout (wide CSVs, header row, ``NA`` marks a missing cell):

* ``z``   -- one row per subject: ``subject, z1..zT``   (growth scores)
* ``y``   -- one row per (time, subject): ``time, subject, q1..qJ`` with
  answers coded ``1..m`` as they appear on the questionnaire
* ``xz``  -- one row per subject: ``subject, <covariate names>`` (complete)
* ``xy``  -- same layout for the questionnaire covariates
* ``meta`` -- JSON declaring dims, observation times, subscale and domain
  maps, and covariate names

Internally answer categories are shifted to ``0..m-1``; the ingestion layer
subtracts 1 on load and adds it back on save.  Covariates must arrive
dummy-coded and complete.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "Dataset",
    "DimensionMismatch",
    "FullyMissingSubject",
    "InconsistentSubscaleMap",
    "MissingCovariateValue",
    "MissingMask",
    "NonIncreasingTimes",
    "OutOfRangeCategory",
    "load_dataset",
    "load_dataset_dir",
    "missing_rates",
    "save_dataset",
    "save_dataset_dir",
]

NA_TOKEN = "NA"


class DataError(ValueError):
    """Structural problem in the observation files."""


class DimensionMismatch(DataError):
    pass


class OutOfRangeCategory(DataError):
    pass


class NonIncreasingTimes(DataError):
    pass


class UnknownSubscale(DataError):
    pass


class InconsistentSubscaleMap(DataError):
    pass


class MissingCovariateValue(DataError):
    pass


class FullyMissingSubject(DataError):
    pass


@dataclass(frozen=True)
class MissingMask:
    """Boolean missingness flags; True marks a missing cell."""

    z_missing: np.ndarray  # (N, T_Z)
    y_missing: np.ndarray  # (T_Y, N, J)


@dataclass(frozen=True)
class Dataset:
    """Validated observation block.

    Z holds NaN and Y holds -1 at missing cells; ``mask`` is the
    authoritative flag.  Immutable after construction and safe to share.
    dims = (N, T_Z, T_Y, J, m, n_s, n_p, q_Z, q_Y).
    """

    Z: np.ndarray        # (N, T_Z) float
    Z_times: np.ndarray  # (T_Z,)
    Y: np.ndarray        # (T_Y, N, J) int, categories 0..m-1
    X_Z: np.ndarray      # (N, q_Z)
    X_Y: np.ndarray      # (N, q_Y)
    subscale: np.ndarray  # (J,) values 1..n_s
    domain: np.ndarray    # (J,) values 1..n_p
    dims: tuple
    mask: MissingMask = field(repr=False)
    xz_names: tuple = ()
    xy_names: tuple = ()

    @property
    def N(self):
        return self.dims[0]

    @property
    def T_Z(self):
        return self.dims[1]

    @property
    def T_Y(self):
        return self.dims[2]

    @property
    def J(self):
        return self.dims[3]

    @property
    def m(self):
        return self.dims[4]

    @property
    def n_s(self):
        return self.dims[5]

    @property
    def n_p(self):
        return self.dims[6]

    @property
    def q_Z(self):
        return self.dims[7]

    @property
    def q_Y(self):
        return self.dims[8]


def _fmt(x):
    if isinstance(x, float) and np.isnan(x):
        return NA_TOKEN
    return repr(float(x))


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    return rows[0], rows[1:]


def _parse_cell(raw, path, row, col):
    raw = raw.strip()
    if raw == "" or raw == NA_TOKEN:
        return np.nan
    try:
        return float(raw)
    except ValueError:
        raise DataError(f"{path}: unparseable value {raw!r} at row {row}, column {col}")


def _load_matrix(path, n_rows, n_cols, what):
    """Read a subject-indexed wide CSV into an (n_rows, n_cols) float array."""
    header, rows = _read_rows(path)
    if len(header) != n_cols + 1:
        raise DimensionMismatch(
            f"{path}: expected {n_cols + 1} columns for {what}, found {len(header)}"
        )
    if len(rows) != n_rows:
        raise DimensionMismatch(f"{path}: expected {n_rows} rows for {what}, found {len(rows)}")
    out = np.empty((n_rows, n_cols))
    for r, row in enumerate(rows):
        if len(row) != n_cols + 1:
            raise DimensionMismatch(f"{path}: row {r + 2} has {len(row)} fields, expected {n_cols + 1}")
        for c in range(n_cols):
            out[r, c] = _parse_cell(row[c + 1], path, r + 2, c + 2)
    return out


def _load_meta(meta_path):
    with open(meta_path) as fh:
        meta = json.load(fh)
    required = ["dims", "z_times", "subscale", "domain"]
    for key in required:
        if key not in meta:
            raise DataError(f"{meta_path}: missing required key {key!r}")
    dim_keys = ("N", "T_Z", "T_Y", "J", "m", "n_s", "n_p", "q_Z", "q_Y")
    for key in dim_keys:
        if key not in meta["dims"]:
            raise DataError(f"{meta_path}: dims is missing {key!r}")
    dims = tuple(int(meta["dims"][k]) for k in dim_keys)
    return meta, dims


def load_dataset(z_path, y_path, xz_path, xy_path, meta_path):
    """Load and validate the five observation files.

    Returns a Dataset whose ``mask`` field is the MissingMask.  Every
    structural violation raises a DataError subclass naming the offending
    file coordinates; no partially built Dataset ever escapes.
    """
    meta, dims = _load_meta(meta_path)
    N, T_Z, T_Y, J, m, n_s, n_p, q_Z, q_Y = dims

    if m < 2:
        raise DimensionMismatch(f"{meta_path}: m must be >= 2, got {m}")
    if T_Z < 4:
        raise DimensionMismatch(f"{meta_path}: T_Z must be >= 4 for a cubic spline, got {T_Z}")

    z_times = np.asarray(meta["z_times"], dtype=float)
    if len(z_times) != T_Z:
        raise DimensionMismatch(f"{meta_path}: z_times has {len(z_times)} entries, dims say T_Z={T_Z}")
    if np.any(np.diff(z_times) <= 0):
        bad = int(np.argmax(np.diff(z_times) <= 0))
        raise NonIncreasingTimes(
            f"{meta_path}: z_times not strictly increasing at position {bad + 1} -> {bad + 2}"
        )

    subscale = np.asarray(meta["subscale"], dtype=int)
    domain = np.asarray(meta["domain"], dtype=int)
    if len(subscale) != J or len(domain) != J:
        raise DimensionMismatch(
            f"{meta_path}: subscale/domain must have length J={J}, got {len(subscale)}/{len(domain)}"
        )
    for j in range(J):
        if not 1 <= subscale[j] <= n_s:
            raise UnknownSubscale(f"{meta_path}: subscale id {subscale[j]} at item {j + 1} not in 1..{n_s}")
        if not 1 <= domain[j] <= n_p:
            raise UnknownSubscale(f"{meta_path}: domain id {domain[j]} at item {j + 1} not in 1..{n_p}")
    # Each subscale must live inside exactly one domain.
    s_to_p = {}
    for j in range(J):
        s, p = int(subscale[j]), int(domain[j])
        if s in s_to_p and s_to_p[s] != p:
            raise InconsistentSubscaleMap(
                f"{meta_path}: subscale {s} maps to domains {s_to_p[s]} and {p} (item {j + 1})"
            )
        s_to_p[s] = p

    Z = _load_matrix(z_path, N, T_Z, "Z")
    X_Z = _load_matrix(xz_path, N, q_Z, "X_Z")
    X_Y = _load_matrix(xy_path, N, q_Y, "X_Y")
    for name, X, path in (("X_Z", X_Z, xz_path), ("X_Y", X_Y, xy_path)):
        if np.any(np.isnan(X)):
            i, c = np.argwhere(np.isnan(X))[0]
            raise MissingCovariateValue(
                f"{path}: {name} has a missing value at subject {i + 1}, column {c + 1}"
            )

    # Y: long-by-time wide-by-item, (time, subject) rows in order.
    header, rows = _read_rows(y_path)
    if len(header) != J + 2:
        raise DimensionMismatch(f"{y_path}: expected {J + 2} columns, found {len(header)}")
    if len(rows) != T_Y * N:
        raise DimensionMismatch(f"{y_path}: expected {T_Y * N} rows, found {len(rows)}")
    Y = np.full((T_Y, N, J), -1, dtype=int)
    y_missing = np.zeros((T_Y, N, J), dtype=bool)
    for r, row in enumerate(rows):
        t, i = divmod(r, N)
        for j in range(J):
            val = _parse_cell(row[j + 2], y_path, r + 2, j + 3)
            if np.isnan(val):
                y_missing[t, i, j] = True
                continue
            cat = int(round(val))
            if not 1 <= cat <= m:
                raise OutOfRangeCategory(
                    f"{y_path}: answer {cat} not in 1..{m} at time {t + 1}, subject {i + 1}, item {j + 1}"
                )
            Y[t, i, j] = cat - 1

    z_missing = np.isnan(Z)
    for i in range(N):
        if z_missing[i].all():
            raise FullyMissingSubject(f"{z_path}: subject {i + 1} has no observed growth cells")
        if y_missing[:, i, :].all():
            raise FullyMissingSubject(f"{y_path}: subject {i + 1} has no observed answers")

    mask = MissingMask(z_missing=z_missing, y_missing=y_missing)
    return Dataset(
        Z=Z,
        Z_times=z_times,
        Y=Y,
        X_Z=X_Z,
        X_Y=X_Y,
        subscale=subscale,
        domain=domain,
        dims=dims,
        mask=mask,
        xz_names=tuple(meta.get("xz_names", [f"x{k + 1}" for k in range(q_Z)])),
        xy_names=tuple(meta.get("xy_names", [f"x{k + 1}" for k in range(q_Y)])),
    )


def save_dataset(ds, z_path, y_path, xz_path, xy_path, meta_path):
    """Write a Dataset back to the five-file CSV layout (inverse of load)."""
    N, T_Z, T_Y, J, m, n_s, n_p, q_Z, q_Y = ds.dims
    with open(z_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject"] + [f"z{t + 1}" for t in range(T_Z)])
        for i in range(N):
            w.writerow([i + 1] + [NA_TOKEN if ds.mask.z_missing[i, t] else _fmt(ds.Z[i, t]) for t in range(T_Z)])
    with open(y_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "subject"] + [f"q{j + 1}" for j in range(J)])
        for t in range(T_Y):
            for i in range(N):
                w.writerow(
                    [t + 1, i + 1]
                    + [NA_TOKEN if ds.mask.y_missing[t, i, j] else str(int(ds.Y[t, i, j]) + 1) for j in range(J)]
                )
    for path, X, names in ((xz_path, ds.X_Z, ds.xz_names), (xy_path, ds.X_Y, ds.xy_names)):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject"] + list(names))
            for i in range(N):
                w.writerow([i + 1] + [_fmt(x) for x in X[i]])
    meta = {
        "dims": {
            "N": N, "T_Z": T_Z, "T_Y": T_Y, "J": J, "m": m,
            "n_s": n_s, "n_p": n_p, "q_Z": q_Z, "q_Y": q_Y,
        },
        "z_times": [float(t) for t in ds.Z_times],
        "subscale": [int(s) for s in ds.subscale],
        "domain": [int(p) for p in ds.domain],
        "xz_names": list(ds.xz_names),
        "xy_names": list(ds.xy_names),
    }
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


_DIR_FILES = ("z.csv", "y.csv", "xz.csv", "xy.csv", "meta.json")


def load_dataset_dir(directory):
    """Load a dataset from a directory using the standard file names."""
    d = Path(directory)
    return load_dataset(*(d / name for name in _DIR_FILES))


def save_dataset_dir(ds, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, *(d / name for name in _DIR_FILES))
    return d


def dataset_from_arrays(Z, z_times, Y, X_Z, X_Y, subscale, domain, m, xz_names=None, xy_names=None):
    """Assemble a Dataset from in-memory arrays (NaN / -1 mark missing cells).

    Applies the same structural checks as file ingestion minus the file
    coordinates; used by the synthetic-data generator and the correctness
    harness.
    """
    Z = np.asarray(Z, dtype=float)
    Y = np.asarray(Y, dtype=int)
    z_times = np.asarray(z_times, dtype=float)
    subscale = np.asarray(subscale, dtype=int)
    domain = np.asarray(domain, dtype=int)
    N, T_Z = Z.shape
    T_Y, _, J = Y.shape
    dims = (N, T_Z, T_Y, J, int(m), int(subscale.max()), int(domain.max()),
            X_Z.shape[1], X_Y.shape[1])
    if m < 2 or T_Z < 4:
        raise DimensionMismatch(f"need m >= 2 and T_Z >= 4, got m={m}, T_Z={T_Z}")
    if np.any(np.diff(z_times) <= 0):
        raise NonIncreasingTimes("z_times not strictly increasing")
    if Y.max() > m - 1:
        raise OutOfRangeCategory(f"category {Y.max()} out of range 0..{m - 1}")
    mask = MissingMask(z_missing=np.isnan(Z), y_missing=Y < 0)
    for i in range(N):
        if mask.z_missing[i].all() or mask.y_missing[:, i, :].all():
            raise FullyMissingSubject(f"subject {i + 1} has no observed cells")
    return Dataset(
        Z=Z,
        Z_times=z_times,
        Y=np.where(mask.y_missing, -1, Y),
        X_Z=np.asarray(X_Z, dtype=float),
        X_Y=np.asarray(X_Y, dtype=float),
        subscale=subscale,
        domain=domain,
        dims=dims,
        mask=mask,
        xz_names=tuple(xz_names or (f"x{k + 1}" for k in range(X_Z.shape[1]))),
        xy_names=tuple(xy_names or (f"x{k + 1}" for k in range(X_Y.shape[1]))),
    )


def missing_rates(ds):
    """Overall fraction of missing growth cells and per-time answer rates.

    Counts are integers, so the single division per rate is exact up to
    the final rounding of the quotient.
    """
    N, T_Z, T_Y, J = ds.dims[0], ds.dims[1], ds.dims[2], ds.dims[3]
    z_rate = int(ds.mask.z_missing.sum()) / (N * T_Z)
    y_rates = np.array([int(ds.mask.y_missing[t].sum()) / (N * J) for t in range(T_Y)])
    return z_rate, y_rates
