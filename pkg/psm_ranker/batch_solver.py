"""
Batch solver: CCCP outer loop over eta with a dual coordinate ascent QP inside,
plus a dense projected-gradient oracle for tests.
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from psm_ranker.cs_ranker_model import (
    Discriminant,
    DualState,
    ModelParams,
    SolverReport,
    apply_bounds,
    coordinate_step,
    dc_parts,
    expansion_from_state,
    max_kkt_violation,
    primal_from_gradient,
    reset_coordinates,
    update_eta,
)
from psm_ranker.errors import ConfigError, DataError
from psm_ranker.kernel_engine import DEFAULT_CACHE_CAPACITY, DenseKernel, KernelCache
from psm_ranker.psm_dataset import Dataset


@dataclass(frozen=True)
class BatchConfig:
    tol_inner: float = 1e-3
    max_outer: int = 20
    max_inner_sweeps: int = 0  # 0 -> 10 * n
    seed: int = 0
    cache_capacity: int = DEFAULT_CACHE_CAPACITY
    dense_kernel_limit: int = 5000
    track_objective: bool = True

    def __post_init__(self) -> None:
        if not self.tol_inner > 0:
            raise ConfigError(f"tol_inner must be positive, got {self.tol_inner}")
        if self.max_outer < 1:
            raise ConfigError(f"max_outer must be >= 1, got {self.max_outer}")
        if self.max_inner_sweeps < 0:
            raise ConfigError(f"max_inner_sweeps must be >= 0, got {self.max_inner_sweeps}")

    def sweep_cap(self, n: int) -> int:
        return self.max_inner_sweeps or 10 * max(1, n)


def solve_inner_qp(st: DualState, cfg: BatchConfig, rng: Optional[np.random.Generator] = None) -> bool:
    """
    Cyclic coordinate ascent on G(alpha) with the current boxes, one seeded
    permutation per sweep. Stops when the KKT violation is <= tol_inner.

    Returns True when converged, False when the sweep cap was hit.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    n = len(st)
    cap = cfg.sweep_cap(n)
    for sweep in range(cap):
        violation = max_kkt_violation(st)
        if violation <= cfg.tol_inner:
            logging.debug(f"Inner QP converged after {sweep} sweeps (violation={violation:.3g})")
            return True
        for pos in rng.permutation(n):
            coordinate_step(st, pos)
    violation = max_kkt_violation(st)
    if violation <= cfg.tol_inner:
        return True
    logging.warning(f"Inner QP hit the sweep cap ({cap}) with KKT violation {violation:.3g}")
    return False


def _kernel_for(x: np.ndarray, p: ModelParams, cfg: BatchConfig):
    if len(x) <= cfg.dense_kernel_limit:
        return DenseKernel(x, p.kernel)
    logging.info(f"{len(x)} training PSMs exceed dense_kernel_limit={cfg.dense_kernel_limit}; using the row cache")
    return KernelCache(x, p.kernel, capacity=cfg.cache_capacity)


def cccp_solve(d: Dataset, p: ModelParams, cfg: BatchConfig = BatchConfig()) -> Discriminant:
    """
    Alternates the inner QP with eta/bound updates until eta reaches a fixed
    point (the QP is then solved twice with identical boxes) or max_outer.
    Coordinates whose box changed restart from alpha = 0.
    """
    train = d.train_indices
    if len(train) == 0:
        raise DataError("training split is empty")
    x = d.weighted_features()[train]
    kernel = _kernel_for(x, p, cfg)
    st = DualState.full(x, d.labels[train], kernel, p)
    rng = np.random.default_rng(cfg.seed)
    report = SolverReport(solver="batch")

    inner_ok = True
    flipped = None
    for k in range(cfg.max_outer):
        inner_ok = solve_inner_qp(st, cfg, rng)
        report.iterations = k + 1
        if cfg.track_objective:
            report.objective_trace.append(primal_from_gradient(st, p))
            if logging.getLogger().isEnabledFor(logging.DEBUG):
                y = st.active_y
                f = y - st.grad
                j_vex, j_cav = dc_parts(y * f, y, float(st.alpha @ f), p)
                logging.debug(f"CCCP iteration {k + 1}: J_vex={j_vex:.6f} J_cav={j_cav:.6f}")
        if flipped is not None and flipped.size == 0:
            report.converged = inner_ok
            break
        if k == cfg.max_outer - 1:
            logging.warning(f"CCCP stopped at max_outer={cfg.max_outer} before eta reached a fixed point")
            break
        flipped = update_eta(st, p, online=False)
        report.eta_flips.append(int(flipped.size))
        logging.info(
            f"CCCP iteration {k + 1}: {flipped.size} eta flips, {int(st.eta.sum())} targets in the ramp region"
        )
        apply_bounds(st, p, flipped)
        reset_coordinates(st, flipped)

    report.kkt_violation = max_kkt_violation(st)
    report.kernel_evaluations = kernel.kernel_evaluations
    return expansion_from_state(st, train, d, p, report)


def brute_qp_oracle(st: DualState, iters: int = 20000, tol: float = 1e-14) -> DualState:
    """
    Projected gradient ascent on G with fixed step 1/trace(K), on a dense Gram
    matrix. Reference solution for small problems (n <= 200).
    """
    n = len(st)
    if n > 200:
        raise ValueError(f"brute_qp_oracle is limited to 200 coordinates, got {n}")
    gram = st.active_gram()
    y = st.active_y
    step = 1.0 / max(float(np.trace(gram)), 1e-12)
    alpha = np.clip(st.alpha.copy(), st.lower, st.upper)
    for _ in range(iters):
        updated = np.clip(alpha + step * (y - gram @ alpha), st.lower, st.upper)
        change = float(np.max(np.abs(updated - alpha))) if n else 0.0
        alpha = updated
        if change <= tol:
            break
    return replace(
        st,
        alpha=alpha,
        grad=y - gram @ alpha,
        lower=st.lower.copy(),
        upper=st.upper.copy(),
        eta=st.eta.copy(),
        active=st.active.copy(),
    )
