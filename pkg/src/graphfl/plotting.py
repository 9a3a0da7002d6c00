"""Figures for comparison results."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import to_db

COLORS = {"none": "black", "iid": "tab:red", "hybrid": "tab:blue"}
LABELS = {"none": "non-private", "iid": "IID noise", "hybrid": "hybrid"}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    # fixed ids keep the SVG byte-stable between runs
    "svg.hashsalt": "graphfl",
}


def _db_curve(values: np.ndarray) -> np.ndarray:
    return np.array([to_db(v) for v in values])


def plot_comparison(result, path) -> None:
    """MSD and network disagreement per scheme, averaged over completed runs."""
    with plt.rc_context(STYLE):
        fig, (ax_msd, ax_dis) = plt.subplots(1, 2, figsize=(8.0, 3.2))
        for scheme in result.trajectories:
            mse = result.mean_curve(scheme, "mse")
            if mse.size == 0:
                continue
            iterations = np.arange(mse.size)
            color = COLORS.get(scheme)
            ax_msd.plot(iterations, _db_curve(mse), color=color, lw=1.0, label=LABELS.get(scheme, scheme))
            disagreement = result.mean_curve(scheme, "disagreement")
            ax_dis.plot(iterations[1:], _db_curve(disagreement[1:]), color=color, lw=1.0)
        ax_msd.set_xlabel("iteration")
        ax_msd.set_ylabel("MSD (dB)")
        ax_msd.legend(loc="upper right")
        ax_dis.set_xlabel("iteration")
        ax_dis.set_ylabel("disagreement (dB)")
        config = result.config
        fig.suptitle(
            f"P={config.servers}, K={config.clients}, M={config.dim}, "
            f"mu={config.mu:g}, rho={config.rho:g}, sigma_g={config.sigma_g:g}, R={config.repetitions}",
            fontsize=9,
        )
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
