"""Static figure emission for the report path (SVG, matplotlib Agg).

Each function renders one figure to a file and returns the path; nothing is
shown interactively.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_training_curves(log_rows: dict, n: int, K: int, path) -> str:
    """Six panels: total loss, posterior variances, prior means/variances/
    weights, and per-source |corr| when tracked."""
    epochs = log_rows["epoch"]
    fig, axes = plt.subplots(2, 3, figsize=(13, 7))
    ax = axes[0, 0]
    ax.plot(epochs, log_rows["total"], lw=1.0)
    ax.set_title("total loss")
    ax.set_xlabel("epoch")

    ax = axes[0, 1]
    for j in range(n):
        ax.plot(epochs, log_rows[f"sigma2_{j+1}"], lw=1.0, label=f"dim {j+1}")
    ax.set_title("posterior variances")
    ax.set_xlabel("epoch")
    ax.legend(fontsize=8)

    panel_specs = [
        ("mu", "prior component means", axes[0, 2]),
        ("var", "prior component variances", axes[1, 0]),
        ("w", "prior component weights", axes[1, 1]),
    ]
    for key, title, ax in panel_specs:
        for j in range(n):
            for k in range(K):
                ax.plot(epochs, log_rows[f"{key}_{j+1}_{k+1}"], lw=0.8)
        ax.set_title(title)
        ax.set_xlabel("epoch")

    ax = axes[1, 2]
    corr_key = "abs_corr_1"
    if corr_key in log_rows and any(v == v for v in log_rows[corr_key]):
        for j in range(n):
            ax.plot(epochs, log_rows[f"abs_corr_{j+1}"], lw=1.0, label=f"source {j+1}")
        ax.set_ylim(0.0, 1.05)
        ax.legend(fontsize=8)
    ax.set_title("per-source max |corr|")
    ax.set_xlabel("epoch")

    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def plot_source_overlays(true_cols: np.ndarray, est_cols: np.ndarray,
                         band_halfwidths, abs_corrs, path,
                         max_points: int = 1000) -> str:
    """Per source: z-scored truth vs aligned estimate with +/- 2 sigma band."""
    n = true_cols.shape[1]
    T = true_cols.shape[0]
    step = max(1, T // max_points)
    t = np.arange(0, T, step)
    fig, axes = plt.subplots(n, 1, figsize=(11, 2.4 * n), sharex=True)
    axes = np.atleast_1d(axes)
    for j in range(n):
        ax = axes[j]
        est = est_cols[t, j]
        ax.fill_between(t, est - band_halfwidths[j], est + band_halfwidths[j],
                        alpha=0.25, color="tab:orange", linewidth=0)
        ax.plot(t, true_cols[t, j], lw=0.7, color="tab:blue", label="true")
        ax.plot(t, est, lw=0.7, color="tab:orange", label="estimated")
        ax.set_ylabel(f"source {j+1}")
        ax.set_title(f"|corr| = {abs_corrs[j]:.4f}", fontsize=9)
        if j == 0:
            ax.legend(fontsize=8, loc="upper right")
    axes[-1].set_xlabel("sample index")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def plot_density_comparison(table, source_idx: int, path) -> str:
    """True/estimated histograms against the learned mixture density."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.bar(table.grid, table.true_density, width=table.bin_width,
           alpha=0.4, color="tab:blue", label="true (histogram)")
    ax.bar(table.grid, table.est_density, width=table.bin_width,
           alpha=0.4, color="tab:orange", label="estimated (histogram)")
    ax.plot(table.grid, table.gmm_density, color="tab:red", lw=1.5,
            label="learned mixture")
    ax.set_title(
        f"source {source_idx + 1} marginal (TV = {table.tv_distance:.4f})"
    )
    ax.set_xlabel("z-scored value")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def read_log_columns(path) -> dict:
    """train_log.csv as {column name: list of floats (nan for blanks)}."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        cols = {h: [] for h in header}
        for line in fh:
            for h, cell in zip(header, line.rstrip("\n").split(",")):
                cols[h].append(float(cell) if cell else float("nan"))
    return cols
