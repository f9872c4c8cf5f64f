"""Render the posterior summary CSVs into the standard figure set.

Consumes only the documented summary-directory contract (coclustering.csv,
binder_partition.csv, summaries.csv, icc.csv, trajectories.csv) and writes
six PNG figures plus an HTML index:

* coclustering.png   -- pairwise co-clustering heatmap, rows and columns
                        ordered by the estimated partition
* trajectories.png   -- per-cluster domain sum-score and growth panels with
                        95% bands; growth panels carry dotted guides at
                        +-1 and +-2
* discrimination.png -- per-item discrimination medians with 95% intervals,
                        grouped by subscale
* subscale_means.png -- subscale mean parameters with 95% intervals
* coefficients.png   -- regression coefficient forest plots; red markers
                        where the 95% interval excludes zero
* icc.png            -- answer-category probability curves per item

Rendering is a pure function of the input CSVs; missing (NA) cells render
as gaps, never as crashes.
"""

import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["binder_order", "main", "render_all"]

FIGURES = (
    "coclustering.png",
    "trajectories.png",
    "discrimination.png",
    "subscale_means.png",
    "coefficients.png",
    "icc.png",
)

_SAVE_OPTS = {"dpi": 110, "metadata": {"Software": None}}


class MissingInputError(FileNotFoundError):
    """A required summary CSV is absent."""


def _read_csv(path):
    if not path.exists():
        raise MissingInputError(f"required summary file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _num(value):
    if value in ("", "NA"):
        return np.nan
    return float(value)


def binder_order(labels):
    """Heatmap permutation: subjects sorted by cluster label, then index."""
    labels = np.asarray(labels)
    return np.lexsort((np.arange(len(labels)), labels))


def _load_partition(summary_dir):
    _, rows = _read_csv(summary_dir / "binder_partition.csv")
    return np.array([int(r[1]) for r in rows])


def _render_coclustering(summary_dir, out_dir):
    _, rows = _read_csv(summary_dir / "coclustering.csv")
    P = np.array([[_num(v) for v in r[1:]] for r in rows])
    labels = _load_partition(summary_dir)
    order = binder_order(labels)
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(P[np.ix_(order, order)], vmin=0, vmax=1, cmap="viridis", interpolation="nearest")
    boundaries = np.where(np.diff(labels[order]))[0] + 0.5
    for b in boundaries:
        ax.axhline(b, color="white", lw=0.6)
        ax.axvline(b, color="white", lw=0.6)
    ax.set_xlabel("subject (partition order)")
    ax.set_ylabel("subject (partition order)")
    ax.set_title("posterior co-clustering probabilities")
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.savefig(out_dir / "coclustering.png", **_SAVE_OPTS)
    plt.close(fig)
    return order


def _render_trajectories(summary_dir, out_dir):
    header, rows = _read_csv(summary_dir / "trajectories.csv")
    idx = {name: k for k, name in enumerate(header)}
    data = [
        {
            "cluster": int(r[idx["cluster"]]),
            "kind": r[idx["kind"]],
            "domain": int(r[idx["domain"]]),
            "time": _num(r[idx["time"]]),
            "mean": _num(r[idx["mean"]]),
            "lo": _num(r[idx["lo"]]),
            "hi": _num(r[idx["hi"]]),
        }
        for r in rows
    ]
    clusters = sorted({d["cluster"] for d in data})
    domains = sorted({d["domain"] for d in data if d["kind"] == "sumscore"})
    n_rows = len(domains) + 1
    fig, axes = plt.subplots(
        n_rows, len(clusters), figsize=(2.6 * len(clusters), 2.2 * n_rows),
        sharex="row", sharey="row", squeeze=False,
    )
    for col, k in enumerate(clusters):
        for row, p in enumerate(domains):
            ax = axes[row][col]
            pts = [d for d in data if d["cluster"] == k and d["kind"] == "sumscore" and d["domain"] == p]
            _band_plot(ax, pts, color=f"C{row}")
            if col == 0:
                ax.set_ylabel(f"domain {p} sum score")
            if row == 0:
                ax.set_title(f"cluster {k}")
        ax = axes[-1][col]
        pts = [d for d in data if d["cluster"] == k and d["kind"] == "z"]
        _band_plot(ax, pts, color="C3")
        for guide in (-2, -1, 1, 2):
            ax.axhline(guide, ls=":", lw=0.7, color="grey")
        ax.set_xlabel("age")
        if col == 0:
            ax.set_ylabel("growth score")
    fig.tight_layout()
    fig.savefig(out_dir / "trajectories.png", **_SAVE_OPTS)
    plt.close(fig)


def _band_plot(ax, pts, color):
    pts = sorted(pts, key=lambda d: d["time"])
    t = np.array([d["time"] for d in pts])
    mean = np.array([d["mean"] for d in pts])
    lo = np.array([d["lo"] for d in pts])
    hi = np.array([d["hi"] for d in pts])
    ok = ~np.isnan(lo)
    if ok.any():
        ax.fill_between(t[ok], lo[ok], hi[ok], alpha=0.25, color=color, lw=0)
    ax.plot(t, mean, color=color, lw=1.4)


def _load_summary_rows(summary_dir):
    header, rows = _read_csv(summary_dir / "summaries.csv")
    idx = {name: k for k, name in enumerate(header)}
    out = []
    for r in rows:
        out.append(
            {
                "param": r[idx["param"]],
                "i": int(r[idx["i"]]) if r[idx["i"]] else None,
                "k": int(r[idx["k"]]) if r[idx["k"]] else None,
                "mean": _num(r[idx["mean"]]),
                "median": _num(r[idx["median"]]),
                "q025": _num(r[idx["q025"]]),
                "q975": _num(r[idx["q975"]]),
                "significant": r[idx["significant"]] == "1",
            }
        )
    return out


def _render_discrimination(summary_rows, out_dir):
    alpha = [r for r in summary_rows if r["param"] == "alpha"]
    alpha.sort(key=lambda r: ((r["k"] or 0), r["i"]))
    x = np.arange(len(alpha))
    med = np.array([r["median"] for r in alpha])
    lo = np.array([r["q025"] for r in alpha])
    hi = np.array([r["q975"] for r in alpha])
    subs = np.array([r["k"] or 0 for r in alpha])
    fig, ax = plt.subplots(figsize=(max(6, 0.3 * len(alpha)), 4))
    for s in np.unique(subs):
        sel = subs == s
        label = f"subscale {s}" if s else None
        ax.errorbar(
            x[sel], med[sel], yerr=[med[sel] - lo[sel], hi[sel] - med[sel]],
            fmt="o", ms=4, capsize=2, label=label,
        )
    ax.axhline(1.0, ls="--", lw=0.8, color="grey")
    ax.set_xticks(x)
    ax.set_xticklabels([f"Q{r['i']}" for r in alpha], rotation=90, fontsize=7)
    ax.set_ylabel("discrimination")
    ax.set_title("posterior discrimination parameters")
    if subs.any():
        ax.legend(fontsize=7, ncol=4)
    fig.tight_layout()
    fig.savefig(out_dir / "discrimination.png", **_SAVE_OPTS)
    plt.close(fig)


def _render_subscale_means(summary_rows, out_dir):
    mu = [r for r in summary_rows if r["param"] == "mu_s"]
    mu.sort(key=lambda r: r["i"])
    x = np.arange(len(mu))
    med = np.array([r["mean"] for r in mu])
    lo = np.array([r["q025"] for r in mu])
    hi = np.array([r["q975"] for r in mu])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(x, med, yerr=[med - lo, hi - med], fmt="s", capsize=3, color="C0")
    ax.axhline(0.0, ls="--", lw=0.8, color="grey")
    ax.set_xticks(x)
    ax.set_xticklabels([f"subscale {r['i']}" for r in mu], rotation=30)
    ax.set_ylabel("mean log discrimination")
    ax.set_title("subscale-level discrimination means")
    fig.tight_layout()
    fig.savefig(out_dir / "subscale_means.png", **_SAVE_OPTS)
    plt.close(fig)


def _render_coefficients(summary_rows, out_dir):
    gz = [r for r in summary_rows if r["param"] == "gamma_Z"]
    gy = [r for r in summary_rows if r["param"] == "gamma_Y"]
    gz.sort(key=lambda r: r["i"])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    y = np.arange(len(gz))
    mean = np.array([r["mean"] for r in gz])
    lo = np.array([r["q025"] for r in gz])
    hi = np.array([r["q975"] for r in gz])
    sig = np.array([r["significant"] for r in gz])
    ax1.errorbar(mean, y, xerr=[mean - lo, hi - mean], fmt="o", capsize=3, color="C0", zorder=2)
    if sig.any():
        ax1.plot(mean[sig], y[sig], "o", color="red", zorder=3)
    ax1.axvline(0.0, ls="--", lw=0.8, color="grey")
    ax1.set_yticks(y)
    ax1.set_yticklabels([f"covariate {r['i']}" for r in gz])
    ax1.set_title("growth-model coefficients")
    ax1.set_xlabel("posterior mean and 95% interval")

    if gy:
        items = np.array([r["i"] for r in gy])
        covs = np.array([r["k"] for r in gy])
        means = np.array([r["mean"] for r in gy])
        sig = np.array([r["significant"] for r in gy])
        for q in np.unique(covs):
            sel = covs == q
            ax2.plot(items[sel], means[sel], "o", ms=3, label=f"covariate {q}", zorder=2)
        if sig.any():
            ax2.plot(items[sig], means[sig], "o", ms=5, mfc="none", mec="red", zorder=3)
    ax2.axhline(0.0, ls="--", lw=0.8, color="grey")
    ax2.set_xlabel("item")
    ax2.set_title("answer-model coefficients (posterior means)")
    ax2.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_dir / "coefficients.png", **_SAVE_OPTS)
    plt.close(fig)


def _render_icc(summary_dir, out_dir):
    header, rows = _read_csv(summary_dir / "icc.csv")
    idx = {name: k for k, name in enumerate(header)}
    items = sorted({int(r[idx["item"]]) for r in rows})
    n_cols = min(4, len(items))
    n_rows = (len(items) + n_cols - 1) // n_cols
    fig, axes = plt.subplots(
        n_rows, n_cols, figsize=(2.6 * n_cols, 2.2 * n_rows), sharex=True, sharey=True,
        squeeze=False,
    )
    for slot, j in enumerate(items):
        ax = axes[slot // n_cols][slot % n_cols]
        cats = sorted({int(r[idx["category"]]) for r in rows if int(r[idx["item"]]) == j})
        for cat in cats:
            pts = [
                (_num(r[idx["theta"]]), _num(r[idx["prob"]]))
                for r in rows
                if int(r[idx["item"]]) == j and int(r[idx["category"]]) == cat
            ]
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], lw=1.1, label=str(cat))
        ax.set_title(f"Q{j}", fontsize=8)
    for slot in range(len(items), n_rows * n_cols):
        axes[slot // n_cols][slot % n_cols].axis("off")
    axes[0][0].legend(fontsize=6, title="category", title_fontsize=6)
    fig.suptitle("answer-category probability curves")
    fig.tight_layout()
    fig.savefig(out_dir / "icc.png", **_SAVE_OPTS)
    plt.close(fig)


def _write_index(out_dir):
    lines = ["<html><head><title>posterior summary figures</title></head><body>",
             "<h1>posterior summary figures</h1>"]
    for name in FIGURES:
        lines.append(f'<h2>{name}</h2><img src="{name}" style="max-width:100%">')
    lines.append("</body></html>")
    (out_dir / "index.html").write_text("\n".join(lines) + "\n")


def render_all(summary_dir, out_dir):
    """Render every figure; returns metadata including the heatmap order.

    Raises MissingInputError naming the first absent input file.
    """
    summary_dir = Path(summary_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    order = _render_coclustering(summary_dir, out_dir)
    _render_trajectories(summary_dir, out_dir)
    summary_rows = _load_summary_rows(summary_dir)
    _render_discrimination(summary_rows, out_dir)
    _render_subscale_means(summary_rows, out_dir)
    _render_coefficients(summary_rows, out_dir)
    _render_icc(summary_dir, out_dir)
    _write_index(out_dir)
    return {
        "figures": list(FIGURES),
        "heatmap_order": [int(v) for v in order],
        "index": str(out_dir / "index.html"),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(prog="growthmix-report", description=__doc__)
    parser.add_argument("--in", dest="summary_dir", required=True, help="summary CSV directory")
    parser.add_argument("--out", dest="out_dir", required=True, help="figure output directory")
    args = parser.parse_args(argv)
    try:
        meta = render_all(args.summary_dir, args.out_dir)
    except MissingInputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {len(meta['figures'])} figures and index to {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
