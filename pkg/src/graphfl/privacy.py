"""Privatization schemes, their noise generators, and the privacy accountant."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .rng import open_uniform


@dataclass(frozen=True)
class NonPrivate:
    label = "none"


@dataclass(frozen=True)
class IIDNoise:
    """Independent Laplace noise on every client upload and every server message."""

    sigma_g: float
    label = "iid"

    def __post_init__(self):
        if not self.sigma_g > 0:
            raise ValueError(f"sigma_g must be positive, got {self.sigma_g}")


@dataclass(frozen=True)
class Hybrid:
    """Zero-sum client masks plus graph-homomorphic server perturbations.

    ``mask_scale`` is the standard deviation of the pairwise secrets.
    """

    sigma_g: float
    mask_scale: float = 1.0
    label = "hybrid"

    def __post_init__(self):
        if not self.sigma_g > 0:
            raise ValueError(f"sigma_g must be positive, got {self.sigma_g}")
        if not self.mask_scale >= 0:
            raise ValueError(f"mask_scale must be nonnegative, got {self.mask_scale}")


PrivacyScheme = NonPrivate | IIDNoise | Hybrid

SCHEME_NAMES = ("none", "iid", "hybrid")


def parse_scheme(name: str, sigma_g: float = 0.2, mask_scale: float = 1.0) -> PrivacyScheme:
    if name == "none":
        return NonPrivate()
    if name == "iid":
        return IIDNoise(sigma_g)
    if name == "hybrid":
        return Hybrid(sigma_g, mask_scale)
    raise ValueError(f"unknown scheme {name!r}; expected one of {', '.join(SCHEME_NAMES)}")


def laplace_scale(sigma_g: float) -> float:
    """Laplace scale whose variance is ``sigma_g**2``."""
    return sigma_g / math.sqrt(2.0)


def laplace_from_uniform(u, scale: float):
    """Inverse Laplace CDF applied to uniforms in (0, 1)."""
    u = np.asarray(u, dtype=float)
    centered = u - 0.5
    return -scale * np.sign(centered) * np.log1p(-2.0 * np.abs(centered))


def sample_laplace(scale: float, size, rng: np.random.Generator) -> np.ndarray:
    if not scale > 0:
        raise ValueError(f"Laplace scale must be positive, got {scale}")
    return laplace_from_uniform(open_uniform(rng, size), scale)


@dataclass(frozen=True, eq=False)
class ClientMaskSet:
    masks: np.ndarray  # (L, M)

    def total(self) -> np.ndarray:
        return self.masks.sum(axis=0)


def masks_from_secrets(secrets) -> np.ndarray:
    """Turn pairwise secrets into zero-sum masks.

    ``secrets[..., k, l, :]`` for ``k < l`` is the vector shared by clients
    ``k`` and ``l``; entries on or below the diagonal are ignored. Client ``k``
    adds the secrets it shares with higher ids and subtracts those shared with
    lower ids, so the masks telescope to zero.
    """
    secrets = np.asarray(secrets, dtype=float)
    count = secrets.shape[-2]
    rows, cols = np.triu_indices(count, k=1)
    return masks_from_pairs(secrets[..., rows, cols, :], count)


@lru_cache(maxsize=32)
def _pair_incidence(count: int) -> np.ndarray:
    rows, cols = np.triu_indices(count, k=1)
    incidence = np.zeros((count, rows.size))
    pairs = np.arange(rows.size)
    incidence[rows, pairs] = 1.0
    incidence[cols, pairs] = -1.0
    incidence.setflags(write=False)
    return incidence


def masks_from_pairs(pair_secrets, count: int) -> np.ndarray:
    """Masks from secrets listed in ``np.triu_indices(count, 1)`` order, shape ``(..., pairs, M)``."""
    return _pair_incidence(count) @ np.asarray(pair_secrets, dtype=float)


def draw_pair_secrets(count: int, dim: int, scale: float, rng: np.random.Generator, batch=()) -> np.ndarray:
    """Gaussian secrets, one per unordered client pair: shape ``(..., L(L-1)/2, dim)``."""
    pairs = count * (count - 1) // 2
    return scale * rng.standard_normal(tuple(batch) + (pairs, dim))


def generate_client_masks(count: int, dim: int, scale: float, rng: np.random.Generator) -> ClientMaskSet:
    if count < 1:
        raise ValueError("need at least one sampled client")
    return ClientMaskSet(masks_from_pairs(draw_pair_secrets(count, dim, scale, rng), count))


@dataclass(frozen=True, eq=False)
class ServerPerturbationSet:
    base: np.ndarray  # (P, M): g_m
    edge: np.ndarray  # (P, P, M): edge[m, p] = g_mp, zero where a_mp = 0

    def network_sum(self, weights) -> np.ndarray:
        """``(1/P) sum_p sum_m a_mp g_mp``."""
        weights = np.asarray(getattr(weights, "weights", weights))
        return np.einsum("mp,mpd->d", weights, self.edge) / weights.shape[0]


def graph_homomorphic_noise(weights, base) -> ServerPerturbationSet:
    """Edge noise that cancels in the network-wide weighted average.

    Server ``m`` sends ``g_m`` to every neighbor and keeps
    ``-(1 - a_mm)/a_mm * g_m`` for itself.
    """
    weights = np.asarray(getattr(weights, "weights", weights), dtype=float)
    base = np.asarray(base, dtype=float)
    diagonal = np.diag(weights)
    if np.any(diagonal <= 0):
        server = int(np.flatnonzero(diagonal <= 0)[0])
        raise ValueError(f"a_mm must be positive for every server; a_{server}{server} = {diagonal[server]}")
    connected = weights > 0
    edge = np.where(connected[..., None], base[:, None, :], 0.0)
    index = np.arange(weights.shape[0])
    edge[index, index] = -((1.0 - diagonal) / diagonal)[:, None] * base
    return ServerPerturbationSet(base, edge)


def generate_server_perturbations(weights, sigma_g: float, dim: int, rng: np.random.Generator) -> ServerPerturbationSet:
    size = np.asarray(getattr(weights, "weights", weights)).shape[0]
    base = sample_laplace(laplace_scale(sigma_g), (size, dim), rng)
    return graph_homomorphic_noise(weights, base)


# accountant


@dataclass(frozen=True)
class PrivacyBudget:
    step_size: float
    gradient_bound: float
    sigma_g: float
    iteration: int
    sensitivity: float
    epsilon: float


def sensitivity(mu: float, gradient_bound: float, i: int) -> float:
    """Worst-case drift ``2 mu B i`` between neighboring trajectories."""
    if i < 0:
        raise ValueError("iteration must be nonnegative")
    return 2.0 * mu * gradient_bound * i


def epsilon_at(mu: float, gradient_bound: float, sigma_g: float, i: int) -> float:
    if not sigma_g > 0:
        raise ValueError("sigma_g must be positive")
    return math.sqrt(2.0) * mu * gradient_bound * (1 + i) * i / sigma_g


def sigma_for_epsilon(mu: float, gradient_bound: float, epsilon: float, i: int) -> float:
    """Noise level that makes iteration ``i`` ``epsilon``-private."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive; zero would need infinite noise")
    if i < 1:
        raise ValueError("iteration must be at least 1")
    return math.sqrt(2.0) * mu * gradient_bound * (1 + i) * i / epsilon


def budget(mu: float, gradient_bound: float, sigma_g: float, i: int) -> PrivacyBudget:
    return PrivacyBudget(
        mu,
        gradient_bound,
        sigma_g,
        i,
        sensitivity(mu, gradient_bound, i),
        epsilon_at(mu, gradient_bound, sigma_g, i),
    )
