"""Regularized logistic regression over a grid of federated clients.

Data live in padded arrays indexed ``[server, client, sample]``; ``counts``
records how many samples each client really holds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .rng import StreamKind, stream


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class FederatedDataset:
    features: np.ndarray  # (P, K, N_max, M)
    labels: np.ndarray  # (P, K, N_max), entries +-1; padding is 0
    counts: np.ndarray  # (P, K)
    seed: int | None = None

    def __post_init__(self):
        if self.features.ndim != 4 or self.labels.shape != self.features.shape[:3]:
            raise ValueError("features must be (P, K, N, M) with labels (P, K, N)")
        if self.counts.shape != self.features.shape[:2] or self.counts.min() < 1:
            raise ValueError("every client needs at least one sample")
        for array in (self.features, self.labels, self.counts):
            array.setflags(write=False)

    @property
    def servers(self) -> int:
        return self.features.shape[0]

    @property
    def clients(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[3]

    def client(self, p: int, k: int) -> tuple[np.ndarray, np.ndarray]:
        n = self.counts[p, k]
        return self.features[p, k, :n], self.labels[p, k, :n]

    def valid_mask(self) -> np.ndarray:
        return np.arange(self.features.shape[2]) < self.counts[..., None]

    def flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All real samples as ``(features, labels, weights)``.

        ``weights`` make a plain weighted sum equal the objective's average of
        per-client averages.
        """
        mask = self.valid_mask()
        weights = np.broadcast_to(1.0 / self.counts[..., None], mask.shape)[mask]
        weights = weights / (self.servers * self.clients)
        return self.features[mask], self.labels[mask], weights

    def replace_client(self, p: int, k: int, features, labels) -> FederatedDataset:
        """Neighboring dataset with one client's data swapped out."""
        features = np.asarray(features, dtype=float)
        labels = np.asarray(labels, dtype=float)
        n = labels.shape[0]
        if n > self.features.shape[2]:
            raise ValueError("replacement data longer than the padded sample axis")
        new_features = self.features.copy()
        new_labels = self.labels.copy()
        new_counts = self.counts.copy()
        new_features[p, k] = 0.0
        new_labels[p, k] = 0.0
        new_features[p, k, :n] = features
        new_labels[p, k, :n] = labels
        new_counts[p, k] = n
        return FederatedDataset(new_features, new_labels, new_counts, self.seed)

    def permute_servers(self, order) -> FederatedDataset:
        """Dataset whose server ``q`` holds what server ``order[q]`` held."""
        order = np.asarray(order)
        return FederatedDataset(
            self.features[order].copy(), self.labels[order].copy(), self.counts[order].copy(), self.seed
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["p", "k", "n", "gamma"] + [f"h_{j + 1}" for j in range(self.dim)])
            for p in range(self.servers):
                for k in range(self.clients):
                    for n in range(self.counts[p, k]):
                        writer.writerow(
                            [p, k, n, repr(float(self.labels[p, k, n]))]
                            + [repr(float(v)) for v in self.features[p, k, n]]
                        )

    @classmethod
    def from_csv(cls, path) -> FederatedDataset:
        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader)
            dim = len(header) - 4
            rows = [row for row in reader if row]
        index = np.array([[int(v) for v in row[:3]] for row in rows], dtype=int)
        shape = index.max(axis=0) + 1
        features = np.zeros((shape[0], shape[1], shape[2], dim))
        labels = np.zeros(tuple(shape))
        counts = np.zeros((shape[0], shape[1]), dtype=int)
        for (p, k, n), row in zip(index, rows):
            labels[p, k, n] = float(row[3])
            features[p, k, n] = [float(v) for v in row[4:]]
            counts[p, k] = max(counts[p, k], n + 1)
        return cls(features, labels, counts)

    def equals(self, other: FederatedDataset) -> bool:
        return (
            np.array_equal(self.counts, other.counts)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class TheoryConstants:
    strong_convexity: float
    smoothness: float
    gradient_bound: float


@dataclass(frozen=True, eq=False)
class GlobalOptimum:
    w: np.ndarray
    residual_gradient_norm: float
    iterations: int


def generate_synthetic(
    servers: int,
    clients: int,
    samples: int,
    dim: int,
    feature_std=(0.5, 1.5),
    seed: int = 0,
) -> FederatedDataset:
    """Class-conditional Gaussian features with mean ``label * ones(dim)``.

    ``feature_std`` is either a ``(low, high)`` range from which each client's
    standard deviation is drawn uniformly, or a single shared value.
    """
    if min(servers, clients, samples, dim) < 1:
        raise ValueError("all counts must be at least 1")
    rng = stream(seed, StreamKind.DATA)
    labels = np.where(rng.random((servers, clients, samples)) < 0.5, -1.0, 1.0)
    if np.ndim(feature_std) == 0:
        std = np.full((servers, clients), float(feature_std))
    else:
        low, high = feature_std
        std = low + (high - low) * rng.random((servers, clients))
    noise = rng.standard_normal((servers, clients, samples, dim))
    features = labels[..., None] + std[..., None, None] * noise
    counts = np.full((servers, clients), samples, dtype=int)
    return FederatedDataset(features, labels, counts, seed)


def _check_dims(w, h):
    if np.shape(w)[-1] != np.shape(h)[-1]:
        raise ValueError(f"dimension mismatch: model {np.shape(w)[-1]} vs feature {np.shape(h)[-1]}")


def loss(w, h, gamma, rho: float):
    """``ln(1 + exp(-gamma h.w)) + rho |w|^2``, broadcasting over leading axes."""
    w = np.asarray(w, dtype=float)
    h = np.asarray(h, dtype=float)
    _check_dims(w, h)
    margin = gamma * np.sum(h * w, axis=-1)
    return np.logaddexp(0.0, -margin) + rho * np.sum(w * w, axis=-1)


def loss_gradient(w, h, gamma, rho: float):
    w = np.asarray(w, dtype=float)
    h = np.asarray(h, dtype=float)
    _check_dims(w, h)
    gamma = np.asarray(gamma, dtype=float)
    margin = gamma * np.sum(h * w, axis=-1)
    return -(gamma * expit(-margin))[..., None] * h + 2.0 * rho * w


def batch_mean_gradient(models, features, labels, rho: float) -> np.ndarray:
    """Mini-batch mean gradients for many clients at once.

    ``models`` is ``(P, M)``, ``features`` ``(P, L, B, M)`` and ``labels``
    ``(P, L, B)``; the result is ``(P, L, M)``.
    """
    margin = labels * np.einsum("plbm,pm->plb", features, models)
    coefficient = labels * expit(-margin)
    mean = np.einsum("plb,plbm->plm", coefficient, features) / features.shape[2]
    return 2.0 * rho * models[:, None, :] - mean


def objective(data: FederatedDataset, w, rho: float) -> float:
    features, labels, weights = data.flat()
    return float(np.dot(weights, loss(w, features, labels, rho)))


def objective_gradient(data: FederatedDataset, w, rho: float) -> np.ndarray:
    return _full_gradient(*data.flat(), np.asarray(w, dtype=float), rho)


def _full_gradient(features, labels, weights, w, rho):
    # weights sum to one, so the regularizer gradient enters unscaled
    coefficient = weights * labels * expit(-labels * (features @ w))
    return 2.0 * rho * w - features.T @ coefficient


def per_sample_gradient_norms(data: FederatedDataset, w, rho: float) -> np.ndarray:
    features, labels, _ = data.flat()
    return np.linalg.norm(loss_gradient(w, features, labels, rho), axis=-1)


def estimate_theory_constants(
    data: FederatedDataset, rho: float, trajectory=None, probe_steps: int = 200
) -> TheoryConstants:
    """Curvature bounds from the data and a measured gradient bound.

    The gradient bound is the largest per-sample gradient norm over every
    model in ``trajectory``. Without a trajectory, full-batch gradient descent
    from zero (``probe_steps`` steps of size 1/smoothness) supplies one.
    """
    features, labels, weights = data.flat()
    smoothness = float(np.max(np.sum(features**2, axis=-1)) / 4.0 + 2.0 * rho)
    strong_convexity = 2.0 * rho
    if trajectory is None:
        w = np.zeros(data.dim)
        trajectory = [w]
        for _ in range(probe_steps):
            w = w - _full_gradient(features, labels, weights, w, rho) / smoothness
            trajectory.append(w)
    bound = 0.0
    for w in np.reshape(np.asarray(trajectory, dtype=float), (-1, data.dim)):
        norms = np.linalg.norm(loss_gradient(w, features, labels, rho), axis=-1)
        bound = max(bound, float(norms.max()))
    return TheoryConstants(strong_convexity, smoothness, bound)


def compute_global_optimum(
    data: FederatedDataset,
    rho: float,
    tolerance: float = 1e-10,
    max_iter: int = 200_000,
) -> GlobalOptimum:
    """Full-batch gradient descent with step 1/smoothness to a gradient-norm tolerance."""
    if rho <= 0:
        raise ValueError("rho must be positive for a unique minimizer")
    features, labels, weights = data.flat()
    step = 1.0 / (np.max(np.sum(features**2, axis=-1)) / 4.0 + 2.0 * rho)
    w = np.zeros(data.dim)
    residual = np.inf
    for iteration in range(max_iter + 1):
        gradient = _full_gradient(features, labels, weights, w, rho)
        residual = float(np.linalg.norm(gradient))
        if residual <= tolerance:
            return GlobalOptimum(w, residual, iteration)
        w = w - step * gradient
    raise ConvergenceError(
        f"gradient descent stopped after {max_iter} iterations with residual {residual:.3e}",
        residual,
    )
