"""Server communication graphs and their combination matrices."""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .rng import StreamKind, stream

# Above this size the spectral gap is found by power iteration.
EIGEN_SOLVE_LIMIT = 512
RANDOM_GRAPH_ATTEMPTS = 100


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class GraphSpec:
    """Undirected server graph; self-loops are implicit and never listed."""

    node_count: int
    edges: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.node_count < 1:
            raise TopologyError(f"node_count must be positive, got {self.node_count}")
        normalized = set()
        for m, p in self.edges:
            if m == p:
                raise TopologyError(f"explicit self-loop on node {m}")
            for node in (m, p):
                if not 0 <= node < self.node_count:
                    raise TopologyError(
                        f"node id {node} outside [0, {self.node_count})"
                    )
            normalized.add((min(m, p), max(m, p)))
        object.__setattr__(self, "edges", frozenset(normalized))

    @classmethod
    def ring(cls, node_count: int) -> GraphSpec:
        if node_count < 3:
            # a ring on 1 or 2 nodes degenerates to a path
            return cls.path(node_count)
        return cls(node_count, frozenset((p, (p + 1) % node_count) for p in range(node_count)))

    @classmethod
    def path(cls, node_count: int) -> GraphSpec:
        return cls(node_count, frozenset((p, p + 1) for p in range(node_count - 1)))

    @classmethod
    def complete(cls, node_count: int) -> GraphSpec:
        return cls(
            node_count,
            frozenset((m, p) for m in range(node_count) for p in range(m + 1, node_count)),
        )

    @classmethod
    def random_connected(cls, node_count: int, edge_prob: float, seed: int) -> GraphSpec:
        """Erdős–Rényi graph, redrawn until connected.

        After ``RANDOM_GRAPH_ATTEMPTS`` disconnected draws the last draw is
        augmented with a spanning ring.
        """
        if not 0.0 < edge_prob <= 1.0:
            raise TopologyError(f"edge_prob must lie in (0, 1], got {edge_prob}")
        rows, cols = np.triu_indices(node_count, k=1)
        spec = cls(node_count)
        for attempt in range(RANDOM_GRAPH_ATTEMPTS):
            rng = stream(seed, StreamKind.GRAPH, iteration=attempt)
            keep = rng.random(rows.size) < edge_prob
            spec = cls(node_count, frozenset(zip(rows[keep].tolist(), cols[keep].tolist())))
            if spec.is_connected():
                return spec
        return cls(node_count, spec.edges | cls.ring(node_count).edges)

    @classmethod
    def from_edge_list(cls, node_count: int, text: str) -> GraphSpec:
        """Parse ``"0-1, 1-2"`` style edge lists (commas or whitespace separate pairs)."""
        edges = set()
        for token in re.split(r"[,\s]+", text.strip()):
            if not token:
                continue
            match = re.fullmatch(r"(\d+)-(\d+)", token)
            if match is None:
                raise TopologyError(f"malformed edge {token!r}, expected 'm-p'")
            pair = (int(match.group(1)), int(match.group(2)))
            key = (min(pair), max(pair))
            if key in edges:
                raise TopologyError(f"duplicate edge {token!r}")
            edges.add(pair)
        return cls(node_count, frozenset(edges))

    @classmethod
    def from_preset(
        cls, name: str, node_count: int, *, edge_prob: float = 0.3, seed: int = 0, edges: str = ""
    ) -> GraphSpec:
        if name == "ring":
            return cls.ring(node_count)
        if name == "path":
            return cls.path(node_count)
        if name == "complete":
            return cls.complete(node_count)
        if name == "random":
            return cls.random_connected(node_count, edge_prob, seed)
        if name == "edges":
            return cls.from_edge_list(node_count, edges)
        raise TopologyError(f"unknown graph preset {name!r}")

    def neighbors(self) -> list[list[int]]:
        adjacency: list[list[int]] = [[] for _ in range(self.node_count)]
        for m, p in sorted(self.edges):
            adjacency[m].append(p)
            adjacency[p].append(m)
        return adjacency

    def unreachable_nodes(self) -> list[int]:
        adjacency = self.neighbors()
        seen = {0}
        queue = deque([0])
        while queue:
            node = queue.popleft()
            for other in adjacency[node]:
                if other not in seen:
                    seen.add(other)
                    queue.append(other)
        return [p for p in range(self.node_count) if p not in seen]

    def is_connected(self) -> bool:
        return not self.unreachable_nodes()


@dataclass(frozen=True, eq=False)
class CombinationMatrix:
    """Symmetric doubly-stochastic mixing weights; ``weights[m, p]`` is a_mp."""

    weights: np.ndarray
    spectral_gap: float

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_weights(cls, weights) -> CombinationMatrix:
        weights = np.asarray(weights, dtype=float)
        return cls(weights, spectral_gap(weights))


def build_combination_matrix(spec: GraphSpec, rule: str = "metropolis") -> CombinationMatrix:
    """Metropolis–Hastings weights for a connected graph.

    ``rule="uniform"`` gives a_mp = 1/P and is only accepted for complete graphs.
    """
    missing = spec.unreachable_nodes()
    if missing:
        raise TopologyError(
            f"graph is disconnected: node {missing[0]} is unreachable from node 0"
        )
    size = spec.node_count
    if rule == "uniform":
        if len(spec.edges) != size * (size - 1) // 2:
            raise TopologyError("uniform weights require a complete graph")
        weights = np.full((size, size), 1.0 / size)
    elif rule == "metropolis":
        degree = np.zeros(size, dtype=int)
        for m, p in spec.edges:
            degree[m] += 1
            degree[p] += 1
        weights = np.zeros((size, size))
        for m, p in spec.edges:
            weights[m, p] = weights[p, m] = 1.0 / (1 + max(degree[m], degree[p]))
        np.fill_diagonal(weights, 1.0 - weights.sum(axis=1))
    else:
        raise TopologyError(f"unknown weight rule {rule!r}")
    return CombinationMatrix(weights, spectral_gap(weights))


def spectral_gap(weights, tol: float = 1e-10) -> float:
    """Spectral radius of ``A - (1/P) 11^T`` for symmetric ``A``."""
    weights = np.asarray(getattr(weights, "weights", weights), dtype=float)
    size = weights.shape[0]
    deflated = weights - 1.0 / size
    if size <= EIGEN_SOLVE_LIMIT:
        return float(np.max(np.abs(np.linalg.eigvalsh(deflated))))
    return _power_iteration(deflated, tol)


def _power_iteration(matrix: np.ndarray, tol: float, max_iter: int = 100_000) -> float:
    # iterate on matrix^2 so that +/- eigenvalue pairs cannot stall convergence
    vector = stream(0, StreamKind.PROBE).standard_normal(matrix.shape[0])
    vector /= np.linalg.norm(vector)
    estimate = 0.0
    for _ in range(max_iter):
        image = matrix @ (matrix @ vector)
        norm = np.linalg.norm(image)
        if norm == 0.0:
            return 0.0
        vector = image / norm
        previous, estimate = estimate, float(np.sqrt(norm))
        if abs(estimate - previous) <= tol:
            break
    return estimate


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    residual: float


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def __getitem__(self, name: str) -> Check:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def format(self) -> str:
        lines = [
            f"{check.name:<20} {'PASS' if check.passed else 'FAIL'}  residual={check.residual:.3e}"
            for check in self.checks
        ]
        return "\n".join(lines)


def validate(matrix, tol: float = 1e-12) -> ValidationReport:
    """Check the mixing-matrix conditions, collecting failures instead of raising."""
    weights = np.asarray(getattr(matrix, "weights", matrix), dtype=float)
    asymmetry = float(np.max(np.abs(weights - weights.T)))
    stochastic = float(
        max(np.max(np.abs(weights.sum(axis=1) - 1.0)), np.max(np.abs(weights.sum(axis=0) - 1.0)))
    )
    negativity = float(max(0.0, -weights.min()))
    diagonal = np.diag(weights)
    gap = spectral_gap(weights)
    checks = (
        Check("symmetric", asymmetry == 0.0, asymmetry),
        Check("doubly_stochastic", stochastic <= tol, stochastic),
        Check("nonnegative", negativity == 0.0, negativity),
        Check("positive_diagonal", bool(np.all(diagonal > 0)), float(max(0.0, -diagonal.min()))),
        Check("spectral_gap", gap < 1.0 - tol, gap),
    )
    return ValidationReport(checks)
