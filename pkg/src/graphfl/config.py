"""Experiment configuration as sectioned ``key = value`` text.

Every key has a documented default, so an empty file is a complete
configuration. Sections are optional; when present, a key must sit in its
own section. Several assignments may share a line when separated by commas::

    [engine]
    scheme = hybrid, sigma_g = 0.2
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields

from .engine import EngineConfig
from .privacy import SCHEME_NAMES, parse_scheme
from .task import FederatedDataset, generate_synthetic
from .topology import GraphSpec, TopologyError

GRAPH_PRESETS = ("ring", "path", "complete", "random", "edges")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None, text: str = ""):
        location = f"line {line}: " if line is not None else ""
        context = f"\n    {text.strip()}" if text else ""
        super().__init__(f"{location}{message}{context}")
        self.key = key
        self.line = line


def _entry(section: str, key: str, default, doc: str):
    return field(default=default, metadata={"section": section, "key": key, "doc": doc})


@dataclass(frozen=True)
class ExperimentConfig:
    servers: int = _entry("dataset", "P", 10, "number of servers")
    clients: int = _entry("dataset", "K", 50, "clients per server")
    samples: int = _entry("dataset", "N", 100, "samples per client")
    dim: int = _entry("dataset", "M", 2, "feature dimension")
    sigma_h_min: float = _entry("dataset", "sigma_h_min", 0.5, "lower end of per-client feature std")
    sigma_h_max: float = _entry("dataset", "sigma_h_max", 1.5, "upper end of per-client feature std")

    graph: str = _entry("graph", "graph", "ring", "ring | path | complete | random | edges")
    edge_prob: float = _entry("graph", "edge_prob", 0.3, "edge probability for graph = random")
    graph_seed: int = _entry("graph", "graph_seed", 0, "seed for graph = random")
    edges: str = _entry("graph", "edges", "", "edge list 'm-p, ...' for graph = edges")

    mu: float = _entry("engine", "mu", 0.1, "step size")
    sampled_clients: int | None = _entry("engine", "L", None, "clients sampled per server per round (default K)")
    batch_size: int = _entry("engine", "batch_size", 10, "mini-batch size per client")
    iterations: int = _entry("engine", "T", 2000, "number of rounds")
    rho: float = _entry("engine", "rho", 0.01, "l2 regularization weight")
    scheme: str = _entry("engine", "scheme", "hybrid", "none | iid | hybrid (used by 'run')")
    sigma_g: float = _entry("engine", "sigma_g", 0.2, "noise standard deviation")
    mask_scale: float = _entry("engine", "mask_scale", 1.0, "std of pairwise mask secrets")
    seed: int = _entry("engine", "seed", 0, "master seed")

    repetitions: int = _entry("experiment", "R", 10, "independent runs per scheme")
    schemes: tuple[str, ...] = _entry("experiment", "schemes", ("none", "iid", "hybrid"), "schemes for 'compare'")
    window: int = _entry("experiment", "window", 500, "final iterations averaged for plateau MSD (clamped to T + 1)")
    plot: bool = _entry("experiment", "plot", True, "write an SVG of the MSD curves")
    output_dir: str = _entry("experiment", "output_dir", "results", "directory for CSV and figures")

    def __post_init__(self):
        if self.sampled_clients is None:
            object.__setattr__(self, "sampled_clients", self.clients)

    def engine_config(self, scheme: str | None = None) -> EngineConfig:
        return EngineConfig(
            step_size=self.mu,
            sampled_clients=self.sampled_clients,
            batch_size=self.batch_size,
            iterations=self.iterations,
            scheme=parse_scheme(scheme or self.scheme, self.sigma_g, self.mask_scale),
            regularization=self.rho,
            seed=self.seed,
        )

    def make_dataset(self) -> FederatedDataset:
        return generate_synthetic(
            self.servers,
            self.clients,
            self.samples,
            self.dim,
            feature_std=(self.sigma_h_min, self.sigma_h_max),
            seed=self.seed,
        )

    def graph_spec(self) -> GraphSpec:
        return GraphSpec.from_preset(
            self.graph, self.servers, edge_prob=self.edge_prob, seed=self.graph_seed, edges=self.edges
        )


FIELDS = {f.metadata["key"]: f for f in fields(ExperimentConfig)}
SECTIONS = ("dataset", "graph", "engine", "experiment")
_ITEM_SPLIT = re.compile(r",(?=\s*[A-Za-z_][A-Za-z0-9_]*\s*=)")


def _convert(key: str, raw: str, line: int, text: str):
    spec = FIELDS[key]
    kind = spec.type
    value = raw.strip()
    try:
        if key == "schemes":
            return tuple(item.strip() for item in value.split(",") if item.strip())
        if kind == "bool":
            lowered = value.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(value)
        if kind in ("int", "int | None"):
            return int(value)
        if kind == "float":
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {kind}", key, line, text) from None


def _validate(config: ExperimentConfig, lines: dict[str, tuple[int, str]]) -> None:
    def fail(key, message):
        line, text = lines.get(key, (None, ""))
        raise ConfigError(f"{key} = {getattr(config, FIELDS[key].name)!r}: {message}", key, line, text)

    for key in ("P", "K", "N", "M", "batch_size", "R", "window"):
        if getattr(config, FIELDS[key].name) < 1:
            fail(key, "must be at least 1")
    if config.iterations < 1:
        fail("T", "must be at least 1")
    if not 1 <= config.sampled_clients <= config.clients:
        fail("L", f"must satisfy 1 <= L <= K (K = {config.clients})")
    if config.batch_size > config.samples:
        fail("batch_size", f"must not exceed N (N = {config.samples})")
    if not config.sigma_h_min > 0:
        fail("sigma_h_min", "must be positive")
    if config.sigma_h_max < config.sigma_h_min:
        fail("sigma_h_max", "must be at least sigma_h_min")
    if not config.mu > 0:
        fail("mu", "must be positive")
    if not config.rho > 0:
        fail("rho", "must be positive (the optimum oracle needs strong convexity)")
    if not config.sigma_g > 0:
        fail("sigma_g", "must be positive")
    if config.mask_scale < 0:
        fail("mask_scale", "must be nonnegative")
    if config.seed < 0 or config.graph_seed < 0:
        fail("seed" if config.seed < 0 else "graph_seed", "must be nonnegative")
    if config.scheme not in SCHEME_NAMES:
        fail("scheme", f"expected one of {', '.join(SCHEME_NAMES)}")
    if not config.schemes:
        fail("schemes", "needs at least one scheme")
    for name in config.schemes:
        if name not in SCHEME_NAMES:
            fail("schemes", f"unknown scheme {name!r}; expected {', '.join(SCHEME_NAMES)}")
    if len(set(config.schemes)) != len(config.schemes):
        fail("schemes", "lists a scheme twice")
    if config.graph not in GRAPH_PRESETS:
        fail("graph", f"expected one of {', '.join(GRAPH_PRESETS)}")
    if not 0 < config.edge_prob <= 1:
        fail("edge_prob", "must lie in (0, 1]")
    try:
        spec = config.graph_spec()
    except TopologyError as exc:
        fail("edges" if config.graph == "edges" else "graph", str(exc))
    missing = spec.unreachable_nodes()
    if missing:
        fail("edges" if config.graph == "edges" else "graph", f"graph is disconnected: node {missing[0]} is unreachable")


def parse_config(text: str, overrides=()) -> ExperimentConfig:
    """Parse config text; ``overrides`` are ``key=value`` strings applied on top."""
    values: dict[str, object] = {}
    lines: dict[str, tuple[int, str]] = {}
    section = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            match = re.fullmatch(r"\[\s*([A-Za-z_]+)\s*\]", line)
            if match is None or match.group(1) not in SECTIONS:
                raise ConfigError(f"unknown section {line}; expected one of {', '.join(SECTIONS)}", None, number, raw)
            section = match.group(1)
            continue
        for item in _ITEM_SPLIT.split(line):
            key, value = _split_assignment(item, number, raw)
            home = FIELDS[key].metadata["section"]
            if section is not None and section != home:
                raise ConfigError(f"key {key!r} belongs in [{home}], not [{section}]", key, number, raw)
            if key in values:
                raise ConfigError(f"key {key!r} set twice (first on line {lines[key][0]})", key, number, raw)
            values[key] = _convert(key, value, number, raw)
            lines[key] = (number, raw)
    for assignment in overrides:
        key, value = _split_assignment(assignment, None, f"--set {assignment}")
        values[key] = _convert(key, value, None, f"--set {assignment}")
        lines[key] = (None, f"--set {assignment}")
    config = ExperimentConfig(**{FIELDS[key].name: value for key, value in values.items()})
    _validate(config, lines)
    return config


def _split_assignment(item: str, number, raw: str) -> tuple[str, str]:
    key, sep, value = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError("expected 'key = value'", None, number, raw)
    if key not in FIELDS:
        raise ConfigError(f"unknown key {key!r}", key, number, raw)
    return key, value


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: ExperimentConfig) -> str:
    out = []
    for section in SECTIONS:
        if out:
            out.append("")
        out.append(f"[{section}]")
        for f in fields(config):
            if f.metadata["section"] == section:
                out.append(f"{f.metadata['key']} = {_format(getattr(config, f.name))}")
    return "\n".join(out) + "\n"


def load_config(path, overrides=()) -> ExperimentConfig:
    with open(path) as handle:
        return parse_config(handle.read(), overrides)
