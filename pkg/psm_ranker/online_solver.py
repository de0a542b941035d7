"""
Online solver: one randomly chosen training PSM enters the active set per
round, followed by an eta/bound refresh, PROCESS, REPROCESS until the
tau-KKT condition holds, and a periodic CLEAN of zero coefficients.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, TypedDict

import numpy as np

from psm_ranker.cs_ranker_model import (
    Discriminant,
    DualState,
    ModelParams,
    SolverReport,
    apply_bounds,
    coordinate_step,
    expansion_from_state,
    gradient_drift,
    kkt_extremes,
    max_kkt_violation,
    refresh_gradient,
    reset_coordinates,
    update_eta,
)
from psm_ranker.errors import ConfigError, DataError
from psm_ranker.kernel_engine import DEFAULT_CACHE_CAPACITY, KernelCache
from psm_ranker.psm_dataset import Dataset

GRADIENT_DRIFT_LIMIT = 1e-8


@dataclass(frozen=True)
class OnlineConfig:
    M: int = 200
    tau: float = 1e-3
    clean_period: int = 500
    m: int = 300
    finishing_sweeps: int = 0  # 0 -> 10 * |S|
    seed: int = 0
    epochs: int = 1
    clean_by_abs_gradient: bool = False
    cache_capacity: int = DEFAULT_CACHE_CAPACITY
    debug_gradients: bool = False
    progress_every: int = 0
    # Candidate-selection thresholds: accepted, not used by any step.
    mu_safe: Optional[float] = None
    mu_safe_target: Optional[float] = None

    def __post_init__(self) -> None:
        if self.M < 0:
            raise ConfigError(f"M must be >= 0, got {self.M}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.clean_period < 1:
            raise ConfigError(f"clean_period must be >= 1, got {self.clean_period}")
        if self.m < 0:
            raise ConfigError(f"m must be >= 0, got {self.m}")
        if self.finishing_sweeps < 0:
            raise ConfigError(f"finishing_sweeps must be >= 0, got {self.finishing_sweeps}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


class ProgressRow(TypedDict):
    round: int
    active: int
    eta_active: int
    kkt_violation: float
    kernel_evaluations: int


@dataclass
class ActiveSetState:
    """The dual state over the active set plus per-round bookkeeping."""

    dual: DualState
    insertions: int = 0
    reset_log: List[int] = field(default_factory=list)
    reprocess_calls: int = 0

    @property
    def version(self) -> int:
        return self.dual.version


def process(st: ActiveSetState, i0: Optional[int] = None) -> ActiveSetState:
    """
    Restores feasibility after an insertion and eta refresh: alpha of the new
    index and of every index whose box changed this round is set to 0, their
    old contributions are removed from g, and g is recomputed directly for
    the new and reset positions.
    """
    dual = st.dual
    positions = np.asarray(st.reset_log, dtype=np.intp)
    reset_coordinates(dual, positions)
    fresh = list(st.reset_log)
    if i0 is not None:
        pos0 = int(np.flatnonzero(dual.active == i0)[0])
        dual.alpha[pos0] = 0.0
        fresh.append(pos0)
    refresh_gradient(dual, np.asarray(fresh, dtype=np.intp))
    st.reset_log = []
    return st


def reprocess(st: ActiveSetState, tau: float) -> int:
    """
    One direction search on the most violating coordinate.
    Returns 1 when max(g_j, -g_i) <= tau (nothing to do), else 0.
    """
    dual = st.dual
    if len(dual) == 0:
        return 1
    i, j = kkt_extremes(dual)
    down = -dual.grad[i] if i is not None else -np.inf
    up = dual.grad[j] if j is not None else -np.inf
    if max(up, down) <= tau:
        return 1
    if down > tau and (up < tau or down > up):
        t = i
    else:
        t = j
    coordinate_step(dual, t)
    st.reprocess_calls += 1
    return 0


def clean(st: ActiveSetState, m: int, by_abs_gradient: bool = False) -> ActiveSetState:
    """
    Removes non-support vectors (alpha = 0) from S: all of them when there
    are at most m, otherwise the m with the largest gradient.
    """
    dual = st.dual
    candidates = np.flatnonzero(dual.alpha == 0.0)
    if candidates.size == 0 or m == 0:
        return st
    if candidates.size > m:
        key = np.abs(dual.grad[candidates]) if by_abs_gradient else dual.grad[candidates]
        order = np.argsort(-key, kind="stable")
        candidates = np.sort(candidates[order[:m]])
    dual.remove(candidates)
    logging.debug(f"CLEAN removed {candidates.size} non-support vectors; |S|={len(dual)}")
    return st


def refresh_eta(st: ActiveSetState, p: ModelParams, cfg: OnlineConfig) -> int:
    """eta and box refresh over S; flipped positions join the round's reset log."""
    flipped = update_eta(st.dual, p, min_active=cfg.M, online=True)
    apply_bounds(st.dual, p, flipped)
    st.reset_log.extend(int(v) for v in flipped)
    return int(flipped.size)


def _check_gradients(st: ActiveSetState, where: str) -> None:
    drift = gradient_drift(st.dual)
    if drift > GRADIENT_DRIFT_LIMIT:
        raise RuntimeError(f"gradient drift {drift:.3g} after {where} (round {st.insertions})")


def run(
    d: Dataset,
    p: ModelParams,
    cfg: OnlineConfig = OnlineConfig(),
    progress: Optional[Callable[[ProgressRow], None]] = None,
) -> Discriminant:
    """
    Trains on the training split of `d`, visiting training PSMs in a seeded
    random order (one pass per epoch), then runs the finishing phase: one
    more eta refresh and up to `finishing_sweeps` REPROCESS calls.
    """
    train = d.train_indices
    if len(train) == 0:
        raise DataError("training split is empty")
    x = d.weighted_features()[train]
    cache = KernelCache(x, p.kernel, capacity=cfg.cache_capacity)
    st = ActiveSetState(dual=DualState.empty(x, d.labels[train], cache))
    rng = np.random.default_rng(cfg.seed)
    report = SolverReport(solver="online")
    in_active = np.zeros(len(train), dtype=bool)

    for epoch in range(cfg.epochs):
        for i0 in rng.permutation(len(train)):
            # membership changes only through insert and CLEAN
            if not in_active[i0]:
                st.dual.insert(int(i0), p)
                in_active[i0] = True
                st.insertions += 1
                new_index: Optional[int] = int(i0)
                # g for i0 so that f(x_i0) is known to the eta refresh
                refresh_gradient(st.dual, np.array([len(st.dual) - 1]))
            else:
                new_index = None
            report.eta_flips.append(refresh_eta(st, p, cfg))
            process(st, new_index)
            if cfg.debug_gradients:
                _check_gradients(st, "PROCESS")
            while reprocess(st, cfg.tau) == 0:
                pass
            report.iterations += 1

            if new_index is not None and st.insertions % cfg.clean_period == 0:
                clean(st, cfg.m, cfg.clean_by_abs_gradient)
                in_active[:] = False
                in_active[st.dual.active] = True
                if cfg.debug_gradients:
                    _check_gradients(st, "CLEAN")

            if progress is not None and cfg.progress_every and report.iterations % cfg.progress_every == 0:
                progress(_progress_row(st, report.iterations))
        logging.info(
            f"Epoch {epoch + 1}/{cfg.epochs}: |S|={len(st.dual)}, "
            f"eta=1 for {int(st.dual.eta.sum())}, {st.reprocess_calls} REPROCESS steps so far"
        )

    # Finishing phase.
    refresh_eta(st, p, cfg)
    process(st)
    budget = cfg.finishing_sweeps or 10 * max(1, len(st.dual))
    for _ in range(budget):
        if reprocess(st, cfg.tau) == 1:
            break
    if cfg.debug_gradients:
        _check_gradients(st, "finishing")

    report.kkt_violation = max_kkt_violation(st.dual)
    report.converged = report.kkt_violation <= cfg.tau
    report.kernel_evaluations = cache.kernel_evaluations
    if progress is not None and cfg.progress_every:
        progress(_progress_row(st, report.iterations))
    if not report.converged:
        logging.warning(f"Online solver finished with KKT violation {report.kkt_violation:.3g} > tau={cfg.tau}")
    logging.info(
        f"Online solver: {report.iterations} rounds, |S|={len(st.dual)}, "
        f"KKT violation {report.kkt_violation:.3g}, {cache.kernel_evaluations} kernel evaluations"
    )
    return expansion_from_state(st.dual, train, d, p, report)


def _progress_row(st: ActiveSetState, rounds: int) -> ProgressRow:
    return ProgressRow(
        round=rounds,
        active=len(st.dual),
        eta_active=int(st.dual.eta.sum()),
        kkt_violation=max_kkt_violation(st.dual),
        kernel_evaluations=int(st.dual.kernel.kernel_evaluations),
    )
