"""Synchronous rounds of graph federated learning.

Each round every server samples ``L`` clients, each sampled client takes one
mini-batch SGD step from its server's model, the server averages the
(possibly masked) client models, and servers mix their aggregates through
the combination matrix, optionally perturbing what they send.

Randomness is drawn per round from one stream per purpose. Arrays drawn from
a stream are indexed by *logical* server id (``server_keys``), so relabeling
servers relabels their random draws with them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .privacy import (
    Hybrid,
    IIDNoise,
    NonPrivate,
    PrivacyScheme,
    ServerPerturbationSet,
    draw_pair_secrets,
    graph_homomorphic_noise,
    laplace_from_uniform,
    laplace_scale,
    masks_from_pairs,
)
from .metrics import metrics_row
from .rng import StreamKind, open_uniform, stream
from .task import FederatedDataset, batch_mean_gradient, loss_gradient
from .topology import CombinationMatrix

DIVERGENCE_THRESHOLD = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, server: int, iteration: int, value: float):
        super().__init__(
            f"model diverged at server {server}, iteration {iteration} (|w| component = {value!r})"
        )
        self.server = server
        self.iteration = iteration


@dataclass(frozen=True)
class EngineConfig:
    step_size: float = 0.1
    sampled_clients: int = 50
    batch_size: int = 10
    iterations: int = 2000
    scheme: PrivacyScheme = field(default_factory=lambda: Hybrid(0.2))
    regularization: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.sampled_clients < 1:
            raise ValueError(f"sampled_clients must be at least 1, got {self.sampled_clients}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be nonnegative, got {self.iterations}")
        if self.regularization < 0:
            raise ValueError(f"regularization must be nonnegative, got {self.regularization}")

    def check_against(self, data: FederatedDataset) -> None:
        if self.sampled_clients > data.clients:
            raise ValueError(f"sampled_clients L={self.sampled_clients} exceeds K={data.clients}")
        if self.batch_size > data.counts.min():
            raise ValueError(
                f"batch_size {self.batch_size} exceeds the smallest client dataset ({data.counts.min()})"
            )


@dataclass(frozen=True, eq=False)
class NetworkState:
    iteration: int
    models: np.ndarray  # (P, M)
    initial: np.ndarray  # (M,)

    @classmethod
    def start(cls, servers: int, initial) -> NetworkState:
        initial = np.asarray(initial, dtype=float)
        return cls(0, np.tile(initial, (servers, 1)), initial)


@dataclass(frozen=True, eq=False)
class RoundPlan:
    sampled: np.ndarray  # (P, L) client ids
    batches: np.ndarray  # (P, L, B) sample ids


@dataclass(frozen=True, eq=False)
class RoundTrace:
    sampled: np.ndarray  # (P, L)
    batches: np.ndarray  # (P, L, B)
    client_models: np.ndarray  # (P, L, M): w_{p,k,i} before masking
    aggregates: np.ndarray  # (P, M): psi_p as received, masks included
    perturbations: ServerPerturbationSet | None


def client_update(w_server, features, labels, batch, mu: float, rho: float) -> np.ndarray:
    """One mini-batch SGD step from the server model."""
    batch = np.asarray(batch, dtype=int)
    if batch.size == 0:
        raise ValueError("mini-batch is empty")
    gradients = loss_gradient(w_server, np.asarray(features)[batch], np.asarray(labels)[batch], rho)
    return np.asarray(w_server, dtype=float) - mu * gradients.mean(axis=0)


def server_aggregate(client_models, masks=None) -> np.ndarray:
    client_models = np.asarray(client_models, dtype=float)
    if masks is None:
        return client_models.mean(axis=0)
    masks = np.asarray(getattr(masks, "masks", masks), dtype=float)
    if masks.shape != client_models.shape:
        raise ValueError(f"{client_models.shape[0]} client models but {masks.shape[0]} masks")
    return (client_models + masks).mean(axis=0)


def server_combine(weights, aggregates, perturbations=None) -> np.ndarray:
    """``w_p = sum_m a_mp (psi_m + g_mp)`` for every server ``p``."""
    weights = np.asarray(getattr(weights, "weights", weights), dtype=float)
    aggregates = np.asarray(aggregates, dtype=float)
    combined = weights.T @ aggregates
    if perturbations is not None:
        edge = getattr(perturbations, "edge", perturbations)
        combined = combined + np.einsum("mp,mpd->pd", weights, edge)
    return combined


def _random_subset(u: np.ndarray, population) -> np.ndarray:
    """Floyd's algorithm: ``u.shape[-1]`` distinct ids from ``range(population)``.

    ``u`` holds uniforms in (0, 1); ``population`` broadcasts against
    ``u.shape[:-1]`` and must be at least ``u.shape[-1]``.
    """
    picks = u.shape[-1]
    population = np.broadcast_to(np.asarray(population), u.shape[:-1])
    chosen = np.empty(u.shape, dtype=np.int64)
    for step in range(picks):
        top = population - picks + step
        candidate = np.minimum(np.floor(u[..., step] * (top + 1)).astype(np.int64), top)
        taken = (chosen[..., :step] == candidate[..., None]).any(axis=-1)
        chosen[..., step] = np.where(taken, top, candidate)
    return chosen


def plan_round(
    data: FederatedDataset, config: EngineConfig, iteration: int, run: int = 0, server_keys=None
) -> RoundPlan:
    """Client and mini-batch sampling for one round, shared by every scheme."""
    servers, clients = data.servers, data.clients
    keys = np.arange(servers) if server_keys is None else np.asarray(server_keys)
    # random sort keys per client; the L smallest are sampled
    sort_keys = stream(config.seed, StreamKind.CLIENT_SAMPLING, run=run, iteration=iteration).random(
        (servers, clients)
    )[keys]
    sampled = np.sort(np.argsort(sort_keys, axis=1, kind="stable")[:, : config.sampled_clients], axis=1)
    # every client gets a batch draw, so a client's batch never depends on who else was sampled
    u_batches = open_uniform(
        stream(config.seed, StreamKind.BATCH_SAMPLING, run=run, iteration=iteration),
        (servers, clients, config.batch_size),
    )[keys]
    counts = np.take_along_axis(data.counts, sampled, axis=1)
    chosen = np.take_along_axis(u_batches, sampled[..., None], axis=1)
    batches = _random_subset(chosen, counts)
    return RoundPlan(sampled, batches)


def _noise(scheme, weights, servers, count, dim, seed, run, iteration, keys):
    """Client-side noise ``(P, L, M)`` and server perturbations for one round."""
    if isinstance(scheme, NonPrivate):
        return None, None
    if isinstance(scheme, Hybrid):
        secrets = draw_pair_secrets(
            count, dim, scheme.mask_scale,
            stream(seed, StreamKind.MASKS, run=run, iteration=iteration), batch=(servers,),
        )[keys]
        u = open_uniform(stream(seed, StreamKind.PERTURBATIONS, run=run, iteration=iteration), (servers, dim))
        base = laplace_from_uniform(u[keys], laplace_scale(scheme.sigma_g))
        return masks_from_pairs(secrets, count), graph_homomorphic_noise(weights, base)
    if isinstance(scheme, IIDNoise):
        scale = laplace_scale(scheme.sigma_g)
        u = open_uniform(stream(seed, StreamKind.CLIENT_NOISE, run=run, iteration=iteration), (servers, count, dim))
        client_noise = laplace_from_uniform(u[keys], scale)
        u = open_uniform(stream(seed, StreamKind.PERTURBATIONS, run=run, iteration=iteration), (servers, servers, dim))
        edge = laplace_from_uniform(u[keys][:, keys], scale)
        edge = np.where((weights > 0)[..., None], edge, 0.0)
        return client_noise, ServerPerturbationSet(np.zeros((servers, dim)), edge)
    raise TypeError(f"unsupported scheme {scheme!r}")


def run_round(
    state: NetworkState,
    data: FederatedDataset,
    config: EngineConfig,
    weights: CombinationMatrix,
    run: int = 0,
    server_keys=None,
    plan: RoundPlan | None = None,
) -> tuple[NetworkState, RoundTrace]:
    """Advance the network by one iteration.

    Raises:
        DivergenceError: a model component is non-finite or exceeds
            ``DIVERGENCE_THRESHOLD`` in magnitude.
    """
    if state.iteration >= config.iterations:
        raise ValueError(f"already at the final iteration {config.iterations}")
    iteration = state.iteration + 1
    servers = data.servers
    keys = np.arange(servers) if server_keys is None else np.asarray(server_keys)
    if plan is None:
        plan = plan_round(data, config, iteration, run, keys)
    depth = data.features.shape[2]
    flat = (np.arange(servers)[:, None, None] * data.clients + plan.sampled[..., None]) * depth + plan.batches
    batch_features = data.features.reshape(-1, data.dim)[flat]
    batch_labels = data.labels.reshape(-1)[flat]
    models = state.models
    gradients = batch_mean_gradient(models, batch_features, batch_labels, config.regularization)
    client_models = models[:, None, :] - config.step_size * gradients

    matrix = np.asarray(weights.weights)
    client_noise, perturbations = _noise(
        config.scheme, matrix, servers, config.sampled_clients, data.dim,
        config.seed, run, iteration, keys,
    )
    aggregates = client_models.mean(axis=1) if client_noise is None else (client_models + client_noise).mean(axis=1)
    new_models = server_combine(matrix, aggregates, perturbations)

    bad = ~np.isfinite(new_models) | (np.abs(new_models) > DIVERGENCE_THRESHOLD)
    if bad.any():
        server = int(np.flatnonzero(bad.any(axis=1))[0])
        raise DivergenceError(server, iteration, float(np.abs(new_models[server]).max()))
    trace = RoundTrace(plan.sampled, plan.batches, client_models, aggregates, perturbations)
    return NetworkState(iteration, new_models, state.initial), trace


@dataclass(eq=False)
class Trajectory:
    scheme: str
    run: int
    rows: list = field(default_factory=list)
    divergence: DivergenceError | None = None

    @property
    def diverged(self) -> bool:
        return self.divergence is not None

    @property
    def mse(self) -> np.ndarray:
        return np.array([row.mse for row in self.rows])

    @property
    def disagreement(self) -> np.ndarray:
        return np.array([row.disagreement for row in self.rows])


def run_experiment(
    data: FederatedDataset,
    config: EngineConfig,
    optimum,
    weights: CombinationMatrix,
    run: int = 0,
    sink=None,
    initial=None,
    server_keys=None,
) -> Trajectory:
    """Run ``config.iterations`` rounds from a common initial model.

    One metrics row is recorded for the initial state and one per round;
    ``sink``, if given, is called with each row as it is produced. A
    divergence ends the run early and is stored on the trajectory.
    """
    config.check_against(data)
    if weights.size != data.servers:
        raise ValueError(f"combination matrix is {weights.size}x{weights.size} for {data.servers} servers")
    optimum = np.asarray(getattr(optimum, "w", optimum), dtype=float)
    initial = np.zeros(data.dim) if initial is None else initial
    state = NetworkState.start(data.servers, initial)
    trajectory = Trajectory(config.scheme.label, run)

    def record(models, iteration):
        row = metrics_row(models, optimum, iteration, config.scheme.label, run)
        trajectory.rows.append(row)
        if sink is not None:
            sink(row)

    record(state.models, 0)
    while state.iteration < config.iterations:
        try:
            state, _ = run_round(state, data, config, weights, run, server_keys)
        except DivergenceError as exc:
            trajectory.divergence = exc
            break
        record(state.models, state.iteration)
    return trajectory
