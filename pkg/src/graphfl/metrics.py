"""Centroid error, network disagreement and gradient-noise statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .task import FederatedDataset, loss_gradient


@dataclass(frozen=True, eq=False)
class MetricsRow:
    iteration: int
    centroid: np.ndarray
    mse: float
    msd_db: float
    disagreement: float
    scheme: str = ""
    run: int = 0


def network_centroid(models) -> np.ndarray:
    return np.asarray(models, dtype=float).mean(axis=0)


def network_disagreement(models) -> float:
    """Mean squared distance of the server models from their centroid."""
    models = np.asarray(models, dtype=float)
    deviation = models - models.mean(axis=0)
    return float(np.mean(np.sum(deviation * deviation, axis=-1)))


def to_db(value: float) -> float:
    return 10.0 * math.log10(value) if value > 0 else -math.inf


def metrics_row(models, optimum, iteration: int, scheme: str = "", run: int = 0) -> MetricsRow:
    centroid = network_centroid(models)
    error = np.asarray(optimum, dtype=float) - centroid
    mse = float(error @ error)
    return MetricsRow(iteration, centroid, mse, to_db(mse), network_disagreement(models), scheme, run)


def gradient_noise_variance(data: FederatedDataset, optimum, rho: float) -> float:
    """Twice the average squared per-sample gradient norm at the optimum.

    Each client's samples are averaged first, then clients are averaged, so
    duplicating a client's data leaves the value unchanged.
    """
    mask = data.valid_mask()
    gradients = loss_gradient(np.asarray(optimum, dtype=float), data.features, data.labels, rho)
    squared = np.where(mask, np.sum(gradients * gradients, axis=-1), 0.0)
    per_client = squared.sum(axis=-1) / data.counts
    return float(2.0 * per_client.mean())


def steady_state_msd(mse_values, window: int) -> float:
    """Mean MSE over the last ``window`` entries, in dB.

    ``mse_values`` may be a sequence of floats or of :class:`MetricsRow`.
    """
    values = [getattr(v, "mse", v) for v in mse_values]
    if window < 1:
        raise ValueError("window must be at least 1")
    if len(values) < window:
        raise ValueError(f"trajectory has {len(values)} entries, shorter than window {window}")
    return to_db(float(np.mean(values[-window:])))
