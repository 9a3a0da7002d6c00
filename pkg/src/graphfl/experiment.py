"""Scheme comparisons and their file outputs."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, serialize_config
from .engine import Trajectory, run_experiment
from .metrics import gradient_noise_variance, steady_state_msd, to_db
from .privacy import budget
from .task import FederatedDataset, GlobalOptimum, compute_global_optimum
from .topology import CombinationMatrix, build_combination_matrix

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("scheme", "run", "iteration", "mse", "msd_db", "disagreement")
SUMMARY_COLUMNS = (
    "scheme", "sigma_g", "runs", "diverged_runs", "plateau_msd_db", "gap_to_none_db", "plateau_disagreement",
)
DIVERGENCE_COLUMNS = ("scheme", "run", "iteration", "server")
BUDGET_COLUMNS = ("i", "delta", "epsilon")

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_DIVERGED = 2


@dataclass(frozen=True, eq=False)
class Setup:
    data: FederatedDataset
    weights: CombinationMatrix
    optimum: GlobalOptimum
    gradient_noise: float


def prepare(config: ExperimentConfig) -> Setup:
    data = config.make_dataset()
    weights = build_combination_matrix(config.graph_spec())
    optimum = compute_global_optimum(data, config.rho)
    return Setup(data, weights, optimum, gradient_noise_variance(data, optimum.w, config.rho))


@dataclass(frozen=True)
class SchemeSummary:
    scheme: str
    sigma_g: float
    runs: int
    diverged_runs: int
    plateau_msd_db: float
    gap_to_none_db: float
    plateau_disagreement: float


@dataclass(eq=False)
class ComparisonResult:
    config: ExperimentConfig
    setup: Setup
    trajectories: dict[str, list[Trajectory]] = field(default_factory=dict)
    summary: list[SchemeSummary] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_DIVERGED if any(s.diverged_runs for s in self.summary) else EXIT_OK

    def plateau(self, scheme: str) -> float:
        return next(s.plateau_msd_db for s in self.summary if s.scheme == scheme)

    def mean_curve(self, scheme: str, attribute: str = "mse") -> np.ndarray:
        """Mean over completed runs, per iteration."""
        complete = [t for t in self.trajectories[scheme] if not t.diverged]
        if not complete:
            return np.array([])
        return np.mean([getattr(t, attribute) for t in complete], axis=0)


def summarize(trajectories: dict[str, list[Trajectory]], config: ExperimentConfig) -> list[SchemeSummary]:
    window = min(config.window, config.iterations + 1)
    plateaus = {}
    rows = []
    for scheme, runs in trajectories.items():
        complete = [t for t in runs if not t.diverged]
        if complete:
            plateau = steady_state_msd(np.mean([t.mse for t in complete], axis=0), window)
            disagreement = float(np.mean([t.disagreement[-window:].mean() for t in complete]))
        else:
            plateau = disagreement = math.nan
        plateaus[scheme] = plateau
        rows.append((scheme, len(runs), len(runs) - len(complete), plateau, disagreement))
    reference = plateaus.get("none", math.nan)
    return [
        SchemeSummary(
            scheme,
            0.0 if scheme == "none" else config.sigma_g,
            runs,
            diverged,
            plateau,
            plateau - reference,
            disagreement,
        )
        for scheme, runs, diverged, plateau, disagreement in rows
    ]


def run_comparison(
    config: ExperimentConfig,
    output_dir=None,
    schemes=None,
    setup: Setup | None = None,
) -> ComparisonResult:
    """Run every scheme ``config.repetitions`` times on one shared dataset.

    Run ``r`` of every scheme uses the same sampling streams, so schemes
    differ only in their noise. Files are written when ``output_dir`` is set.
    """
    schemes = tuple(schemes or config.schemes)
    setup = setup or prepare(config)
    result = ComparisonResult(config, setup)
    for scheme in schemes:
        engine = config.engine_config(scheme)
        result.trajectories[scheme] = []
        for run in range(config.repetitions):
            trajectory = run_experiment(setup.data, engine, setup.optimum, setup.weights, run=run)
            if trajectory.diverged:
                logger.warning("%s run %d: %s", scheme, run, trajectory.divergence)
            else:
                logger.info("%s run %d: final msd %.2f dB", scheme, run, trajectory.rows[-1].msd_db)
            result.trajectories[scheme].append(trajectory)
    result.summary = summarize(result.trajectories, config)
    if output_dir is not None:
        write_outputs(result, output_dir)
    return result


def _number(value: float) -> str:
    return repr(float(value))


def write_trajectory_csv(path, trajectories: dict[str, list[Trajectory]]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        for scheme, runs in trajectories.items():
            for trajectory in runs:
                for row in trajectory.rows:
                    writer.writerow(
                        [scheme, trajectory.run, row.iteration,
                         _number(row.mse), _number(row.msd_db), _number(row.disagreement)]
                    )


def write_summary_csv(path, summary: list[SchemeSummary]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for s in summary:
            writer.writerow(
                [s.scheme, _number(s.sigma_g), s.runs, s.diverged_runs,
                 _number(s.plateau_msd_db), _number(s.gap_to_none_db), _number(s.plateau_disagreement)]
            )


def write_divergence_csv(path, trajectories: dict[str, list[Trajectory]]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(DIVERGENCE_COLUMNS)
        for scheme, runs in trajectories.items():
            for t in runs:
                if t.diverged:
                    writer.writerow([scheme, t.run, t.divergence.iteration, t.divergence.server])


def write_outputs(result: ComparisonResult, output_dir) -> Path:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(serialize_config(result.config))
    write_trajectory_csv(out / "trajectory.csv", result.trajectories)
    write_summary_csv(out / "summary.csv", result.summary)
    write_divergence_csv(out / "divergences.csv", result.trajectories)
    if result.config.plot:
        from .plotting import plot_comparison

        plot_comparison(result, out / "msd.svg")
    return out


def budget_rows(mu: float, gradient_bound: float, sigma_g: float, i_max: int) -> list[tuple[int, float, float]]:
    if not (mu > 0 and gradient_bound > 0 and sigma_g > 0) or i_max < 0:
        raise ValueError("mu, gradient_bound and sigma_g must be positive and i_max nonnegative")
    rows = []
    for i in range(i_max + 1):
        entry = budget(mu, gradient_bound, sigma_g, i)
        rows.append((i, entry.sensitivity, entry.epsilon))
    return rows


def emit_budget_table(mu: float, gradient_bound: float, sigma_g: float, i_max: int, path=None):
    """Sensitivity and epsilon for iterations ``0..i_max``; written as CSV when ``path`` is given."""
    rows = budget_rows(mu, gradient_bound, sigma_g, i_max)
    if path is not None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(BUDGET_COLUMNS)
            for i, delta, epsilon in rows:
                writer.writerow([i, _number(delta), _number(epsilon)])
    return rows


def format_summary(result: ComparisonResult) -> str:
    lines = [
        f"optimum w° = {np.array2string(result.setup.optimum.w, precision=6)}"
        f"  (|w°|² = {to_db(float(result.setup.optimum.w @ result.setup.optimum.w)):.2f} dB,"
        f" gradient noise variance {result.setup.gradient_noise:.4g})",
        f"{'scheme':<8} {'sigma_g':>8} {'runs':>5} {'diverged':>8} {'plateau dB':>11} {'gap dB':>8}",
    ]
    for s in result.summary:
        lines.append(
            f"{s.scheme:<8} {s.sigma_g:>8.3g} {s.runs:>5} {s.diverged_runs:>8} "
            f"{s.plateau_msd_db:>11.2f} {s.gap_to_none_db:>8.2f}"
        )
    return "\n".join(lines)
