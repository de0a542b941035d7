"""
Solver dispatch shared by the train/bench steps and the stability trials.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

from psm_ranker import batch_solver, online_solver
from psm_ranker.batch_solver import BatchConfig
from psm_ranker.cs_ranker_model import Discriminant, ModelParams
from psm_ranker.errors import ConfigError
from psm_ranker.online_solver import OnlineConfig, ProgressRow
from psm_ranker.psm_dataset import Dataset

SOLVERS: Tuple[str, ...] = ("online", "batch")


@dataclass(frozen=True)
class SolverSettings:
    """Which solver to run and the configuration of each."""

    solver: str = "online"
    online: OnlineConfig = field(default_factory=OnlineConfig)
    batch: BatchConfig = field(default_factory=BatchConfig)

    def __post_init__(self) -> None:
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver '{self.solver}' (expected one of {', '.join(SOLVERS)})")

    def with_seed(self, seed: int) -> "SolverSettings":
        return replace(self, online=replace(self.online, seed=seed), batch=replace(self.batch, seed=seed))

    def with_solver(self, solver: str) -> "SolverSettings":
        return replace(self, solver=solver)


def train_model(
    d: Dataset,
    p: ModelParams,
    settings: SolverSettings = SolverSettings(),
    progress: Optional[Callable[[ProgressRow], None]] = None,
) -> Tuple[Discriminant, float]:
    """
    Trains on the training split of `d`.

    Returns the discriminant and the wall time of the solver call alone
    (monotonic clock, no I/O).
    """
    logging.info(f"Training with the {settings.solver} solver on {len(d.train_indices)} PSMs")
    start = time.perf_counter()
    if settings.solver == "online":
        f = online_solver.run(d, p, settings.online, progress=progress)
    else:
        f = batch_solver.cccp_solve(d, p, settings.batch)
    seconds = time.perf_counter() - start
    logging.info(f"{settings.solver} solver finished in {seconds:.3f}s with {len(f)} support vectors")
    return f, seconds
