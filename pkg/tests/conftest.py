"""Shared fixture builders: small CSV datasets shaped like the real study."""

import csv
import json

import numpy as np
import pytest

# Questionnaire structure: 8 subscales of sizes (5,4,4,3,5,4,4,6) = 35 items,
# subscales 1-4 in domain 1 and 5-8 in domain 2.
SUBSCALE_SIZES = (5, 4, 4, 3, 5, 4, 4, 6)
Z_TIMES = [1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]


def full_subscale_map():
    subscale = []
    for s, size in enumerate(SUBSCALE_SIZES, start=1):
        subscale += [s] * size
    domain = [1 if s <= 4 else 2 for s in subscale]
    return subscale, domain


def write_dataset_files(
    directory,
    N=5,
    T_Z=14,
    T_Y=4,
    J=35,
    m=5,
    q_Z=6,
    q_Y=7,
    seed=0,
    z_missing=(),
    y_missing=(),
    subscale=None,
    domain=None,
    z_times=None,
    y_override=None,
    n_s=None,
    n_p=None,
):
    """Write a well-formed five-file dataset; returns the five paths.

    z_missing holds (subject, time) pairs and y_missing (time, subject, item)
    pairs, all 0-based.  y_override maps (t, i, j) -> raw 1..m value.
    """
    rng = np.random.default_rng(seed)
    directory.mkdir(parents=True, exist_ok=True)
    if subscale is None:
        subscale, domain = full_subscale_map()
        subscale, domain = subscale[:J], domain[:J]
    if z_times is None:
        z_times = Z_TIMES[:T_Z]
    n_s = max(subscale) if n_s is None else n_s
    n_p = max(domain) if n_p is None else n_p

    z_path = directory / "z.csv"
    with open(z_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject"] + [f"z{t + 1}" for t in range(T_Z)])
        for i in range(N):
            row = [i + 1]
            for t in range(T_Z):
                row.append("NA" if (i, t) in set(z_missing) else repr(float(rng.normal())))
            w.writerow(row)

    y_path = directory / "y.csv"
    with open(y_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "subject"] + [f"q{j + 1}" for j in range(J)])
        for t in range(T_Y):
            for i in range(N):
                row = [t + 1, i + 1]
                for j in range(J):
                    if (t, i, j) in set(y_missing):
                        row.append("NA")
                    elif y_override and (t, i, j) in y_override:
                        row.append(str(y_override[(t, i, j)]))
                    else:
                        row.append(str(int(rng.integers(1, m + 1))))
                w.writerow(row)

    for name, q in (("xz.csv", q_Z), ("xy.csv", q_Y)):
        with open(directory / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["subject"] + [f"x{k + 1}" for k in range(q)])
            for i in range(N):
                w.writerow([i + 1] + [repr(float(rng.integers(0, 2))) for _ in range(q)])

    meta = {
        "dims": {
            "N": N, "T_Z": T_Z, "T_Y": T_Y, "J": J, "m": m,
            "n_s": n_s, "n_p": n_p, "q_Z": q_Z, "q_Y": q_Y,
        },
        "z_times": list(z_times),
        "subscale": list(subscale),
        "domain": list(domain),
        "xz_names": [f"x{k + 1}" for k in range(q_Z)],
        "xy_names": [f"x{k + 1}" for k in range(q_Y)],
    }
    meta_path = directory / "meta.json"
    with open(meta_path, "w") as fh:
        json.dump(meta, fh)
    return z_path, y_path, directory / "xz.csv", directory / "xy.csv", meta_path


@pytest.fixture
def paper_shaped_files(tmp_path):
    return write_dataset_files(tmp_path / "data", z_missing=[(0, 3)], y_missing=[(1, 2, 4)])
