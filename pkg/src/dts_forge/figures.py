"""Matplotlib renderings of a benchmark report.

Three figures accompany the delimited output: average accuracy versus the
sparsity ratio, per-pair degradation under pairwise weight averaging, and
the storage/accuracy trade-off of every strategy.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bench import BenchReport

_SWEEP_LABELS = {
    "dts_t": "four-group (task vec)",
    "dts_d": "four-group (diff vec)",
    "binarize": "two-group baseline",
    "dts_t_noscale": "no scaling",
}


def render_figures(report: BenchReport, outdir) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = [
        _accuracy_vs_r(report, outdir / "accuracy_vs_r.png"),
        _pairwise(report, outdir / "pairwise_degradation.png"),
        _tradeoff(report, outdir / "storage_tradeoff.png"),
    ]
    return paths


def _accuracy_vs_r(report: BenchReport, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for strategy, label in _SWEEP_LABELS.items():
        node = report.strategies.get(strategy)
        if not node:
            continue
        rs = sorted(node, key=float)
        ax.plot([float(r) for r in rs], [node[r]["average"] for r in rs], marker="o", label=label)
    ind = report.strategies["individual"]["average"]
    ax.axhline(ind, color="gray", linestyle="--", linewidth=1, label="individual avg")
    ax.set_xlabel("sparsity ratio r")
    ax.set_ylabel("average accuracy (%)")
    ax.set_title("Accuracy vs retained-rank ratio")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _pairwise(report: BenchReport, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    labels = [f"{row['eval_task']}+{row['partner']}" for row in report.pairwise]
    drops = [row["individual"] - row["merged"] for row in report.pairwise]
    cosines = [row["embedding_cosine"] for row in report.pairwise]
    order = sorted(range(len(drops)), key=lambda i: -cosines[i])
    ax.bar(range(len(order)), [drops[i] for i in order], color="#4878d0")
    ax.set_xticks(range(len(order)))
    ax.set_xticklabels([labels[i] for i in order], rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("accuracy drop vs individual (pts)")
    ax.set_title("Pairwise weight-average degradation (most similar pair first)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _tradeoff(report: BenchReport, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for strategy in ("weight_average", "task_arithmetic", "dts_t_budget", "dts_d_budget"):
        entry = report.strategies.get(strategy)
        if entry:
            ax.scatter(100 * (entry["amr"] or 0.0), entry["average"], label=strategy)
    for strategy in ("dts_t", "dts_d", "binarize"):
        node = report.strategies.get(strategy, {})
        for rkey, entry in node.items():
            ax.scatter(100 * entry["amr"], entry["average"], marker="x",
                       label=f"{strategy} r={rkey}")
    ax.axhline(report.strategies["individual"]["average"], color="gray", linestyle="--",
               linewidth=1)
    ax.set_xlabel("extra storage per task (% of model)")
    ax.set_ylabel("average accuracy (%)")
    ax.set_title("Storage / accuracy trade-off")
    ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
