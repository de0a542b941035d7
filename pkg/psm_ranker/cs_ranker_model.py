"""
The cost-sensitive ranker model shared by the batch and online solvers.

Training minimizes
    1/2 ||w||^2 + C1 * sum_{decoys} hinge(y f(x)) + C2 * sum_{targets} ramp_s(y f(x))
with f(x) = sum_j alpha_j k(x_j, x) (no offset) and s = 1 - lambda / C2.

The ramp loss is hinge - H_s, so each CCCP step is a box-constrained dual QP
    max G(alpha) = -1/2 alpha' K alpha + <alpha, y> + C2 * s * sum_{targets} eta_i
with decoy boxes [-C1, 0] and target boxes [-C2 eta_i, C2 (1 - eta_i)].
Solvers keep the gradient g = y - K alpha over their index set, which also
gives f(x_i) = y_i - g_i without touching the kernel.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Tuple, Union

import numpy as np
import pandas as pd

from psm_ranker.errors import ConfigError, TsvParseError
from psm_ranker.kernel_engine import KernelParams, cross_kernel, gram_matrix
from psm_ranker.psm_dataset import DECOY, FEATURES, Dataset

MODEL_FORMAT_VERSION = 1
MODEL_MAGIC = "# psm_ranker discriminant"

# eta_i in {0, 1} per target of the index set (always 0 for decoys).
EtaVector = np.ndarray


@dataclass(frozen=True)
class ModelParams:
    C1: float = 2.0
    C2: float = 1.0
    lam: float = 0.5
    kernel: KernelParams = field(default_factory=KernelParams)
    allow_negative_s: bool = False

    def __post_init__(self) -> None:
        if not self.C2 > 0:
            raise ConfigError(f"C2 must be positive, got {self.C2}")
        if not self.C1 >= self.C2:
            raise ConfigError(f"C1 must be >= C2 (decoy losses weigh at least as much), got C1={self.C1}, C2={self.C2}")
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.lam > self.C2 and not self.allow_negative_s:
            raise ConfigError(
                f"lambda={self.lam} exceeds C2={self.C2} (s would be negative); set allow_negative_s to permit it"
            )

    @property
    def s(self) -> float:
        return 1.0 - self.lam / self.C2


class KernelRows(Protocol):
    params: KernelParams

    def row(self, i: int, index_set: Optional[np.ndarray], version: object = 0) -> np.ndarray: ...

    def diagonal(self, i: int) -> float: ...


@dataclass
class SolverReport:
    solver: str
    converged: bool = False
    iterations: int = 0
    kkt_violation: float = float("inf")
    active_size: int = 0
    support_size: int = 0
    kernel_evaluations: int = 0
    objective_trace: List[float] = field(default_factory=list)
    eta_flips: List[int] = field(default_factory=list)


# --- Losses ---

def hinge(t):
    """max(0, 1 - t)."""
    return np.maximum(0.0, 1.0 - np.asarray(t, dtype=np.float64))


def h_s(t, s: float):
    """max(0, s - t)."""
    return np.maximum(0.0, s - np.asarray(t, dtype=np.float64))


def ramp(t, s: float):
    """min(1 - s, max(0, 1 - t)), bounded in [0, 1 - s]."""
    if not s < 1:
        raise ValueError(f"ramp parameter s must be < 1, got {s}")
    return np.minimum(1.0 - s, hinge(t))


def dc_parts(margins: np.ndarray, y: np.ndarray, norm2: float, p: ModelParams) -> Tuple[float, float]:
    """(J_vex, J_cav) of the primal at margins t_i = y_i f(x_i)."""
    targets = y > 0
    j_vex = 0.5 * norm2 + p.C1 * float(hinge(margins[~targets]).sum()) + p.C2 * float(hinge(margins[targets]).sum())
    j_cav = -p.C2 * float(h_s(margins[targets], p.s).sum())
    return j_vex, j_cav


def _primal(margins: np.ndarray, y: np.ndarray, norm2: float, p: ModelParams) -> float:
    targets = y > 0
    return float(
        0.5 * norm2
        + p.C1 * hinge(margins[~targets]).sum()
        + p.C2 * ramp(margins[targets], p.s).sum()
    )


# --- Bounds and dual state ---

def compute_bounds(y_i: int, eta_i: int, p: ModelParams) -> Tuple[float, float]:
    if y_i == DECOY:
        return -p.C1, 0.0
    return -p.C2 * eta_i, p.C2 * (1 - eta_i)


def bound_arrays(y: np.ndarray, eta: np.ndarray, p: ModelParams) -> Tuple[np.ndarray, np.ndarray]:
    decoy = y < 0
    lower = np.where(decoy, -p.C1, -p.C2 * eta)
    upper = np.where(decoy, 0.0, p.C2 * (1 - eta))
    return lower.astype(np.float64), upper.astype(np.float64)


@dataclass
class DualState:
    """
    Dual variables over an index set S of a candidate pool.

    `active` holds pool positions; alpha, lower, upper, grad and eta are
    aligned with it. `version` counts membership changes of S.
    """

    x: np.ndarray
    y: np.ndarray
    kernel: KernelRows
    active: np.ndarray
    alpha: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    grad: np.ndarray
    eta: EtaVector
    version: int = 0
    full_pool: bool = False

    @classmethod
    def empty(cls, x: np.ndarray, y: np.ndarray, kernel: KernelRows) -> "DualState":
        z = np.zeros(0)
        return cls(x=x, y=np.asarray(y, dtype=np.float64), kernel=kernel,
                   active=np.zeros(0, dtype=np.intp), alpha=z.copy(), lower=z.copy(),
                   upper=z.copy(), grad=z.copy(), eta=np.zeros(0, dtype=np.int8))

    @classmethod
    def full(cls, x: np.ndarray, y: np.ndarray, kernel: KernelRows, p: ModelParams) -> "DualState":
        """Every pool index active, alpha = 0, eta = 0 (so g = y)."""
        y = np.asarray(y, dtype=np.float64)
        n = len(y)
        eta = np.zeros(n, dtype=np.int8)
        lower, upper = bound_arrays(y, eta, p)
        return cls(x=x, y=y, kernel=kernel, active=np.arange(n, dtype=np.intp),
                   alpha=np.zeros(n), lower=lower, upper=upper, grad=y.copy(), eta=eta,
                   full_pool=True)

    def __len__(self) -> int:
        return len(self.active)

    @property
    def active_y(self) -> np.ndarray:
        return self.y[self.active]

    def row(self, pos: int) -> np.ndarray:
        """
        k(x_t, x_s) for s in S, t the index at position `pos`.

        Rows are cached against the whole pool, which never changes, and S is
        gathered from them; membership changes therefore leave the cache warm.
        """
        pool_row = self.kernel.row(int(self.active[pos]), None)
        return pool_row if self.full_pool else pool_row[self.active]

    def diagonal(self, pos: int) -> float:
        return self.kernel.diagonal(int(self.active[pos]))

    def insert(self, i: int, p: ModelParams) -> int:
        """Adds pool index i with alpha = 0 and eta = 0; returns its position."""
        lower, upper = compute_bounds(int(self.y[i]), 0, p)
        self.active = np.append(self.active, np.intp(i))
        self.alpha = np.append(self.alpha, 0.0)
        self.lower = np.append(self.lower, lower)
        self.upper = np.append(self.upper, upper)
        self.grad = np.append(self.grad, self.y[i])
        self.eta = np.append(self.eta, np.int8(0))
        self.version += 1
        self.full_pool = False
        return len(self.active) - 1

    def remove(self, positions: np.ndarray) -> None:
        keep = np.ones(len(self.active), dtype=bool)
        keep[positions] = False
        for name in ("active", "alpha", "lower", "upper", "grad", "eta"):
            setattr(self, name, getattr(self, name)[keep])
        self.version += 1
        self.full_pool = False

    def active_gram(self) -> np.ndarray:
        return gram_matrix(self.x[self.active], self.kernel.params)


def update_eta(st: DualState, p: ModelParams, min_active: int = 0, online: bool = False) -> np.ndarray:
    """
    eta_j <- 1 iff y_j f(x_j) < s for every target j in S, using f = y - g.
    Online, eta is forced to 0 while |S| <= min_active.

    Returns the positions whose eta flipped.
    """
    y = st.active_y
    targets = y > 0
    margins = y * (y - st.grad)
    new_eta = (targets & (margins < p.s)).astype(np.int8)
    if online and len(st) <= min_active:
        new_eta[:] = 0
    flipped = np.flatnonzero(new_eta != st.eta)
    st.eta[flipped] = new_eta[flipped]
    return flipped


def apply_bounds(st: DualState, p: ModelParams, positions: np.ndarray) -> None:
    lower, upper = bound_arrays(st.active_y[positions], st.eta[positions], p)
    st.lower[positions] = lower
    st.upper[positions] = upper


def reset_coordinates(st: DualState, positions: np.ndarray) -> None:
    """alpha_j <- 0 for the given positions, removing their contribution from g."""
    for pos in positions:
        a = st.alpha[pos]
        if a != 0.0:
            st.grad += a * st.row(pos)
            st.alpha[pos] = 0.0


def refresh_gradient(st: DualState, positions: np.ndarray) -> None:
    """g_j <- y_j - sum_s alpha_s k(x_j, x_s), computed directly."""
    for pos in positions:
        st.grad[pos] = st.y[st.active[pos]] - float(np.dot(st.row(pos), st.alpha))


def coordinate_step(st: DualState, pos: int) -> float:
    """
    Exact line search on one coordinate of the concave dual, clipped to its box.
    Returns the step taken.
    """
    a = st.alpha[pos]
    target = a + st.grad[pos] / st.diagonal(pos)
    new = min(max(target, st.lower[pos]), st.upper[pos])
    step = new - a
    if step != 0.0:
        st.grad -= step * st.row(pos)
        st.alpha[pos] = new
    return step


def kkt_extremes(st: DualState) -> Tuple[Optional[int], Optional[int]]:
    """
    (i, j): i = argmin g over alpha > lower, j = argmax g over alpha < upper,
    None where no index is movable in that direction.
    """
    down = np.flatnonzero(st.alpha > st.lower)
    up = np.flatnonzero(st.alpha < st.upper)
    i = int(down[np.argmin(st.grad[down])]) if down.size else None
    j = int(up[np.argmax(st.grad[up])]) if up.size else None
    return i, j


def max_kkt_violation(st: DualState) -> float:
    """max(g_j, -g_i) over movable coordinates, floored at 0."""
    i, j = kkt_extremes(st)
    worst = 0.0
    if i is not None:
        worst = max(worst, -st.grad[i])
    if j is not None:
        worst = max(worst, st.grad[j])
    return float(worst)


def gradient_drift(st: DualState) -> float:
    """max |g - (y - K alpha)| over S against a full recomputation."""
    if len(st) == 0:
        return 0.0
    exact = st.active_y - st.active_gram() @ st.alpha
    return float(np.max(np.abs(st.grad - exact)))


def dual_objective(st: DualState, p: ModelParams) -> float:
    """G(alpha), including the constant C2 * s * sum(eta) over targets."""
    if len(st) == 0:
        return 0.0
    quad = float(st.alpha @ st.active_gram() @ st.alpha)
    constant = p.C2 * p.s * float(st.eta[st.active_y > 0].sum())
    return -0.5 * quad + float(st.alpha @ st.active_y) + constant


def primal_from_gradient(st: DualState, p: ModelParams) -> float:
    """Primal value over S using f = y - g and ||w||^2 = sum alpha (y - g)."""
    y = st.active_y
    f = y - st.grad
    return _primal(y * f, y, float(st.alpha @ f), p)


# --- Discriminant ---

@dataclass(frozen=True, eq=False)
class Discriminant:
    """
    f(x) = sum_j alpha_j k(x_j, x) over the support vectors (offset fixed at 0).

    `support` holds record indices of the training dataset; `vectors` the
    weighted normalized feature rows, so scoring needs no training data.
    """

    support: np.ndarray
    alpha: np.ndarray
    vectors: np.ndarray
    kernel: KernelParams
    params: Optional[ModelParams] = None
    feature_means: Optional[np.ndarray] = None
    feature_stds: Optional[np.ndarray] = None
    feature_weights: Optional[np.ndarray] = None
    report: Optional[SolverReport] = None

    def __len__(self) -> int:
        return len(self.alpha)

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if len(self.alpha) == 0:
            return np.zeros(len(x))
        return cross_kernel(x, self.vectors, self.kernel) @ self.alpha

    def transform(self, raw: np.ndarray) -> np.ndarray:
        """Raw feature rows -> the weighted normalized space the model was trained in."""
        if self.feature_means is None:
            raise ConfigError("model carries no normalization statistics")
        return self.feature_weights * ((np.asarray(raw, dtype=np.float64) - self.feature_means) / self.feature_stds)


def evaluate_f(f: Discriminant, x: np.ndarray) -> Union[float, np.ndarray]:
    """f(x) for one vector (returns a float) or for rows of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    values = f.decision_function(x)
    return float(values[0]) if x.ndim == 1 else values


def expansion_from_state(
    st: DualState,
    record_index: np.ndarray,
    d: Dataset,
    p: ModelParams,
    report: Optional[SolverReport] = None,
) -> Discriminant:
    """Builds the discriminant from the nonzero coefficients of a dual state."""
    nonzero = np.flatnonzero(st.alpha != 0.0)
    pool = st.active[nonzero]
    order = np.argsort(record_index[pool], kind="stable")
    pool, nonzero = pool[order], nonzero[order]
    if report is not None:
        report.active_size = len(st)
        report.support_size = len(nonzero)
    return Discriminant(
        support=record_index[pool].copy(),
        alpha=st.alpha[nonzero].copy(),
        vectors=st.x[pool].copy(),
        kernel=p.kernel,
        params=p,
        feature_means=d.feature_means,
        feature_stds=d.feature_stds,
        feature_weights=d.feature_weights,
        report=report,
    )


def primal_objective(d: Dataset, f: Discriminant, p: ModelParams) -> float:
    """Primal objective over the training split of `d` (all records when unsplit)."""
    rows = d.train_indices if d.is_split else np.arange(len(d))
    x = d.weighted_features()[rows]
    y = d.labels[rows].astype(np.float64)
    norm2 = 0.0
    if len(f):
        norm2 = float(f.alpha @ gram_matrix(f.vectors, f.kernel) @ f.alpha)
    return _primal(y * f.decision_function(x), y, norm2, p)


# --- Serialization ---

def _join(values: Optional[np.ndarray]) -> str:
    return ",".join(f"{v:.17g}" for v in values)


def save_discriminant(f: Discriminant, path: Union[str, Path]) -> Path:
    """Versioned TSV: `# key=value` header lines, then `index alpha <features>` rows."""
    path = Path(path)
    header: Dict[str, str] = {
        "format_version": str(MODEL_FORMAT_VERSION),
        "sigma": f"{f.kernel.sigma:.17g}",
    }
    if f.params is not None:
        header.update({
            "C1": f"{f.params.C1:.17g}",
            "C2": f"{f.params.C2:.17g}",
            "lambda": f"{f.params.lam:.17g}",
            "s": f"{f.params.s:.17g}",
            "allow_negative_s": str(f.params.allow_negative_s).lower(),
        })
    if f.feature_means is not None:
        header["feature_means"] = _join(f.feature_means)
        header["feature_stds"] = _join(f.feature_stds)
        header["feature_weights"] = _join(f.feature_weights)

    frame = pd.DataFrame({"index": f.support.astype(np.int64), "alpha": f.alpha})
    for q, name in enumerate(FEATURES):
        frame[name] = f.vectors[:, q] if len(f) else np.zeros(0)

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(MODEL_MAGIC + "\n")
        for key, value in header.items():
            handle.write(f"# {key}={value}\n")
        frame.to_csv(handle, sep="\t", index=False, float_format="%.17g", lineterminator="\n")
    logging.info(f"Saved discriminant with {len(f)} support vectors to {path}")
    return path


def load_discriminant(path: Union[str, Path]) -> Discriminant:
    path = Path(path)
    if not path.is_file():
        raise TsvParseError(f"model file not found: {path}")
    header: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines or lines[0].strip() != MODEL_MAGIC:
        raise TsvParseError(f"{path} is not a psm_ranker model file", line=1)
    n_header = 1
    for number, line in enumerate(lines[1:], start=2):
        if not line.startswith("#"):
            break
        key, sep, value = line[1:].strip().partition("=")
        if not sep:
            raise TsvParseError(f"malformed header line {line!r}", line=number)
        header[key.strip()] = value.strip()
        n_header += 1

    version = header.get("format_version")
    if version != str(MODEL_FORMAT_VERSION):
        raise TsvParseError(f"unsupported model format_version {version!r}")
    try:
        kernel = KernelParams(sigma=float(header["sigma"]))
        params = None
        if "C1" in header:
            params = ModelParams(
                C1=float(header["C1"]),
                C2=float(header["C2"]),
                lam=float(header["lambda"]),
                kernel=kernel,
                allow_negative_s=header.get("allow_negative_s", "false") == "true",
            )
        stats = {}
        for key in ("feature_means", "feature_stds", "feature_weights"):
            if key in header:
                stats[key] = np.array([float(v) for v in header[key].split(",")])
                if stats[key].shape != (len(FEATURES),):
                    raise TsvParseError(f"{key} must list {len(FEATURES)} values")
    except (KeyError, ValueError, ConfigError) as e:
        raise TsvParseError(f"invalid model header: {e}")

    try:
        frame = pd.read_csv(path, sep="\t", skiprows=n_header, dtype=np.float64,
                            float_precision="round_trip", encoding="utf-8")
    except (ValueError, pd.errors.ParserError) as e:
        raise TsvParseError(f"invalid model body: {e}", line=n_header + 1)
    missing = [c for c in ("index", "alpha", *FEATURES) if c not in frame.columns]
    if missing:
        raise TsvParseError(f"missing column(s): {', '.join(missing)}", line=n_header + 1)
    return Discriminant(
        support=frame["index"].to_numpy(dtype=np.int64),
        alpha=frame["alpha"].to_numpy(dtype=np.float64),
        vectors=frame[list(FEATURES)].to_numpy(dtype=np.float64).reshape(len(frame), len(FEATURES)),
        kernel=kernel,
        params=params,
        feature_means=stats.get("feature_means"),
        feature_stds=stats.get("feature_stds"),
        feature_weights=stats.get("feature_weights"),
    )
