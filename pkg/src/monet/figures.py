"""Rendered companions to the delimited reports.

Every report-producing command drops a PNG next to its TSV so runs can be
eyeballed without loading the tables elsewhere.  NaN rows (failed sweep
points) simply leave gaps.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .datasets import MODALITIES


def save_training_curves(log_rows, path) -> None:
    """Loss per epoch plus validation recall on a twin axis."""
    epochs = [r[0] for r in log_rows]
    losses = [r[1] for r in log_rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, color="tab:blue", label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss", color="tab:blue")
    eval_pts = [(r[0], r[2]) for r in log_rows if r[2] is not None]
    if eval_pts:
        ax2 = ax.twinx()
        ax2.plot(*zip(*eval_pts), color="tab:red", marker=".", label="val recall")
        ax2.set_ylabel("validation recall", color="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_figure(param_name, rows, path) -> None:
    """Recall and both preservation gaps against the swept value."""
    values = np.array([r[0] for r in rows], dtype=float)
    recall = np.array([r[2] for r in rows], dtype=float)
    diff_t = np.array([r[4] for r in rows], dtype=float)
    diff_v = np.array([r[5] for r in rows], dtype=float)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(values, recall, marker="o", color="tab:blue")
    ax1.set_xlabel(param_name)
    ax1.set_ylabel("recall")
    ax2.plot(values, diff_t, marker="o", label="avg_diff_t")
    ax2.plot(values, diff_v, marker="s", label="avg_diff_v")
    ax2.set_xlabel(param_name)
    ax2.set_ylabel("avg_diff")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_ablation_figure(rows, path) -> None:
    """Bars per variant: recall on the left panel, avg_diff on the right."""
    names = [r[0] for r in rows]
    recall = np.array([r[2] for r in rows], dtype=float)
    diff_t = np.array([r[4] for r in rows], dtype=float)
    diff_v = np.array([r[5] for r in rows], dtype=float)
    x = np.arange(len(names))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    ax1.bar(x, recall, color="tab:blue")
    ax1.set_xticks(x, names, rotation=30, ha="right")
    ax1.set_ylabel("recall")
    ax2.bar(x - 0.2, diff_t, width=0.4, label="avg_diff_t")
    ax2.bar(x + 0.2, diff_v, width=0.4, label="avg_diff_v")
    ax2.set_xticks(x, names, rotation=30, ha="right")
    ax2.set_ylabel("avg_diff")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_similarity_figure(report, path) -> None:
    """Grouped bars: interacted-interacted vs interacted-noninteracted means."""
    x = np.arange(len(MODALITIES))
    ii = [report.mean_ii[m] for m in MODALITIES]
    inn = [report.mean_in[m] for m in MODALITIES]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(x - 0.2, ii, width=0.4, label="I-I")
    ax.bar(x + 0.2, inn, width=0.4, label="I-N")
    ax.set_xticks(x, MODALITIES)
    ax.set_ylabel("mean cosine similarity")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
