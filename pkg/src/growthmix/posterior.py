"""Posterior partition estimation and chain summaries.

Turns stored draws into the deliverables: the pairwise co-clustering
matrix, the partition minimising Binder's loss (equal misclassification
costs), per-parameter summary rows with credible-interval significance
flags, discrimination rankings, answer-curve tables, and per-cluster
trajectory tables computed from the raw data.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pcm import category_probs, step_prefix

__all__ = [
    "CoClusteringMatrix",
    "DiscriminationRanking",
    "EmptyChain",
    "PosteriorSummary",
    "adjusted_rand_index",
    "binder_estimate",
    "binder_score",
    "cluster_trajectories",
    "coclustering",
    "discrimination_ranking",
    "icc_table",
    "relabel_by_size",
    "set_partitions",
    "summarize_scalars",
    "write_summary_dir",
]

SUMMARY_FILES = (
    "coclustering.csv",
    "binder_partition.csv",
    "summaries.csv",
    "icc.csv",
    "trajectories.csv",
    "summary_manifest.json",
)


class EmptyChain(ValueError):
    """Raised when a summary is requested from a chain with no draws."""


@dataclass(frozen=True)
class CoClusteringMatrix:
    """Pairwise posterior co-membership frequencies; symmetric, unit diagonal."""

    P: np.ndarray


def _quantile(x, q, axis=None):
    """Deterministic empirical (inverted-CDF) quantile."""
    return np.quantile(x, q, method="inverted_cdf", axis=axis)


def coclustering(partitions):
    """Co-membership frequency matrix from sampled label vectors."""
    partitions = np.asarray(partitions)
    if partitions.ndim != 2 or len(partitions) == 0:
        raise EmptyChain("need at least one sampled partition")
    n = partitions.shape[1]
    acc = np.zeros((n, n))
    for c in partitions:
        acc += c[:, None] == c[None, :]
    return CoClusteringMatrix(P=acc / len(partitions))


def binder_score(labels, P):
    """Pairwise score sum_{i<k} (1[c_i = c_k] - 1/2)(P_ik - 1/2); higher is better.

    Maximising this score minimises the expected Binder loss with equal
    misclassification costs.
    """
    labels = np.asarray(labels)
    iu = np.triu_indices(len(labels), 1)
    together = labels[iu[0]] == labels[iu[1]]
    return float(((together - 0.5) * (P[iu] - 0.5)).sum())


def set_partitions(n):
    """All set partitions of n elements as restricted-growth label arrays."""
    labels = np.zeros(n, dtype=int)

    def rec(pos, max_label):
        if pos == n:
            yield labels.copy()
            return
        for lab in range(max_label + 2):
            labels[pos] = lab
            yield from rec(pos + 1, max(max_label, lab))

    yield from rec(1, 0)


def relabel_by_size(labels):
    """Relabel clusters 0..K-1 by decreasing size (ties by first appearance)."""
    labels = np.asarray(labels)
    ids, first = np.unique(labels, return_index=True)
    sizes = np.array([(labels == k).sum() for k in ids])
    order = sorted(range(len(ids)), key=lambda r: (-sizes[r], first[r]))
    remap = {int(ids[r]): new for new, r in enumerate(order)}
    return np.array([remap[int(v)] for v in labels])


def binder_estimate(partitions, P=None, exhaustive=False):
    """Partition minimising the expected Binder loss.

    The search space is the sampled partitions themselves; with
    exhaustive=True every set partition is scored instead (practical for
    roughly 10 subjects or fewer).  Ties break toward fewer clusters, then
    first occurrence.  The winner is relabelled by decreasing cluster size.
    """
    partitions = np.asarray(partitions)
    if partitions.ndim != 2 or len(partitions) == 0:
        raise EmptyChain("need at least one sampled partition")
    if P is None:
        P = coclustering(partitions).P
    elif isinstance(P, CoClusteringMatrix):
        P = P.P
    candidates = set_partitions(partitions.shape[1]) if exhaustive else partitions
    best, best_score, best_k = None, -np.inf, None
    for labels in candidates:
        score = binder_score(labels, P)
        k = len(np.unique(labels))
        if score > best_score + 1e-12 or (
            abs(score - best_score) <= 1e-12 and best_k is not None and k < best_k
        ):
            best, best_score, best_k = np.asarray(labels).copy(), score, k
    return relabel_by_size(best)


@dataclass
class PosteriorSummary:
    """Per-parameter summary rows plus the partition point estimate."""

    rows: list
    binder: np.ndarray = None
    cluster_sizes: np.ndarray = None
    cocluster: CoClusteringMatrix = None

    def row(self, param, i=None, k=None):
        for r in self.rows:
            if r["param"] == param and r.get("i") == i and r.get("k") == k:
                return r
        raise KeyError((param, i, k))


def _summary_row(param, values, i=None, k=None):
    lo = float(_quantile(values, 0.025))
    hi = float(_quantile(values, 0.975))
    return {
        "param": param,
        "i": i,
        "k": k,
        "mean": float(np.mean(values)),
        "median": float(np.median(values)),
        "q025": lo,
        "q975": hi,
        "significant": bool(lo > 0.0 or hi < 0.0),
    }


def summarize_scalars(chain, subscale=None):
    """Summary table over every reported scalar block of the chain.

    For discrimination rows the second index column carries the item's
    subscale id when a subscale map is supplied (the figure layer groups
    by it).
    """
    if chain.n_draws < 2:
        raise EmptyChain("need at least two draws to summarise")
    rows = []
    for q in range(chain.gamma_Z.shape[1]):
        rows.append(_summary_row("gamma_Z", chain.gamma_Z[:, q], i=q + 1))
    rows.append(_summary_row("sigma2_Z", chain.sigma2_Z))
    rows.append(_summary_row("u", chain.u))
    J = chain.alpha.shape[1]
    for j in range(J):
        sub = int(subscale[j]) if subscale is not None else None
        rows.append(_summary_row("alpha", chain.alpha[:, j], i=j + 1, k=sub))
    m = chain.beta.shape[2]
    for j in range(J):
        for h in range(2, m):
            rows.append(_summary_row("beta", chain.beta[:, j, h], i=j + 1, k=h))
    for s in range(chain.mu_s.shape[1]):
        rows.append(_summary_row("mu_s", chain.mu_s[:, s], i=s + 1))
    for j in range(J):
        for q in range(chain.gamma_Y.shape[2]):
            rows.append(_summary_row("gamma_Y", chain.gamma_Y[:, j, q], i=j + 1, k=q + 1))
    k_n = np.array([len(np.unique(c)) for c in chain.partitions])
    rows.append(_summary_row("K_N", k_n))
    return PosteriorSummary(rows=rows)


@dataclass
class DiscriminationRanking:
    """Items ordered by posterior median discrimination, most first."""

    order: np.ndarray       # item indices, 0-based
    medians: np.ndarray     # aligned with order
    q025: np.ndarray
    q975: np.ndarray
    highly: np.ndarray      # mass concentrated above one (2.5% quantile > 1)

    @property
    def top5(self):
        return self.order[:5]

    @property
    def bottom5(self):
        return self.order[-5:][::-1]


def discrimination_ranking(chain):
    """Rank items by posterior median discrimination (stable, descending)."""
    if chain.n_draws == 0:
        raise EmptyChain("no discrimination draws")
    med = np.median(chain.alpha, axis=0)
    q025 = _quantile(chain.alpha, 0.025, axis=0)
    q975 = _quantile(chain.alpha, 0.975, axis=0)
    order = np.argsort(-med, kind="stable")
    return DiscriminationRanking(
        order=order,
        medians=med[order],
        q025=q025[order],
        q975=q975[order],
        highly=q025[order] > 1.0,
    )


def cluster_trajectories(ds, labels):
    """Per-cluster observed-data trajectories with 95% empirical bands.

    Growth rows average the observed cells; questionnaire rows average
    per-subject domain sum scores on the original 1..m coding, skipping
    missing answers.  Cells with no observed member data yield NA bands.
    Returns a list of row dicts keyed cluster/kind/domain/time.
    """
    labels = np.asarray(labels)
    rows = []
    for k in np.unique(labels):
        members = np.where(labels == k)[0]
        for t in range(ds.T_Z):
            vals = ds.Z[members, t]
            vals = vals[~ds.mask.z_missing[members, t]]
            rows.append(_traj_row(k, "z", 0, ds.Z_times[t], vals))
        for p in range(1, ds.n_p + 1):
            items = np.where(np.asarray(ds.domain) == p)[0]
            for t in range(ds.T_Y):
                obs = ~ds.mask.y_missing[t][np.ix_(members, items)]
                answers = (ds.Y[t][np.ix_(members, items)] + 1) * obs
                per_subject = answers.sum(axis=1)[obs.any(axis=1)]
                rows.append(_traj_row(k, "sumscore", p, float(t + 1), per_subject))
    return rows


def _traj_row(cluster, kind, domain, time, vals):
    if len(vals) == 0:
        return {
            "cluster": int(cluster) + 1, "kind": kind, "domain": domain, "time": time,
            "mean": np.nan, "lo": np.nan, "hi": np.nan, "n": 0,
        }
    return {
        "cluster": int(cluster) + 1,
        "kind": kind,
        "domain": domain,
        "time": time,
        "mean": float(np.mean(vals)),
        "lo": float(_quantile(vals, 0.025)),
        "hi": float(_quantile(vals, 0.975)),
        "n": int(len(vals)),
    }


def icc_table(chain, grid=None):
    """Posterior-mean answer-category curves per item on a trait grid.

    Averages the category probabilities over draws at reference covariates
    (eta = 0).  Returns a list of (item, category, theta, prob) rows.
    """
    if chain.n_draws == 0:
        raise EmptyChain("no item-parameter draws")
    if grid is None:
        grid = np.linspace(-4.0, 4.0, 41)
    S, J, m = chain.beta.shape
    h = np.arange(m)
    rows = []
    for j in range(J):
        prefix = step_prefix(chain.beta[:, j, :])            # (S, m)
        logits = chain.alpha[:, j, None, None] * (
            h * grid[None, :, None] - prefix[:, None, :]
        )                                                    # (S, G, m)
        probs = category_probs(logits).mean(axis=0)          # (G, m)
        for g, th in enumerate(grid):
            for cat in range(m):
                rows.append(
                    {"item": j + 1, "category": cat + 1, "theta": float(th),
                     "prob": float(probs[g, cat])}
                )
    return rows


def adjusted_rand_index(a, b):
    """Chance-corrected agreement between two partitions."""
    a, b = np.asarray(a), np.asarray(b)
    ka, kb = a.max() + 1, b.max() + 1
    table = np.zeros((ka, kb), dtype=np.int64)
    np.add.at(table, (a, b), 1)

    def comb2(x):
        return x * (x - 1) // 2

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    total = comb2(len(a))
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def _fmt(x):
    if isinstance(x, float) and np.isnan(x):
        return "NA"
    return repr(float(x))


def write_summary_dir(chain, ds, out_dir, grid=None):
    """Run the whole post-processing stack and write the summary CSVs.

    Emits coclustering.csv, binder_partition.csv, summaries.csv, icc.csv,
    trajectories.csv, and a manifest binding the outputs to the chain.
    """
    if chain.n_draws == 0:
        raise EmptyChain("chain directory holds no stored draws")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    P = coclustering(chain.partitions)
    binder = binder_estimate(chain.partitions, P)
    sizes = np.bincount(binder)
    summary = summarize_scalars(chain, subscale=ds.subscale)
    n = P.P.shape[0]

    with open(out / "coclustering.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject"] + [f"p{i + 1}" for i in range(n)])
        for i in range(n):
            w.writerow([i + 1] + [_fmt(v) for v in P.P[i]])

    with open(out / "binder_partition.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "cluster"])
        for i, c in enumerate(binder):
            w.writerow([i + 1, int(c) + 1])

    with open(out / "summaries.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "i", "k", "mean", "median", "q025", "q975", "significant"])
        for r in summary.rows:
            w.writerow(
                [r["param"], r["i"] or "", r["k"] or "",
                 _fmt(r["mean"]), _fmt(r["median"]), _fmt(r["q025"]), _fmt(r["q975"]),
                 int(r["significant"])]
            )

    with open(out / "icc.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item", "category", "theta", "prob"])
        for r in icc_table(chain, grid):
            w.writerow([r["item"], r["category"], _fmt(r["theta"]), _fmt(r["prob"])])

    with open(out / "trajectories.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", "kind", "domain", "time", "mean", "lo", "hi", "n"])
        for r in cluster_trajectories(ds, binder):
            w.writerow(
                [r["cluster"], r["kind"], r["domain"], _fmt(r["time"]),
                 _fmt(r["mean"]), _fmt(r["lo"]), _fmt(r["hi"]), r["n"]]
            )

    manifest = {
        "n_draws": int(chain.n_draws),
        "binder_sizes": [int(s) for s in sorted(sizes, reverse=True)],
        "K_binder": int(len(sizes)),
        "chain_manifest": chain.manifest,
        "outputs": list(SUMMARY_FILES[:-1]),
    }
    with open(out / "summary_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out
