"""
Scoring and target-decoy evaluation: FDR thresholds, q-values, ROC curves,
test/total ratios, overlaps of accepted sets and repeated-run stability.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd
from sklearn import metrics

from psm_ranker.cs_ranker_model import Discriminant, ModelParams
from psm_ranker.errors import ConfigError, DataError, TsvParseError
from psm_ranker.psm_dataset import (
    BOOL_TOKENS,
    LABEL_NAMES,
    LABEL_TOKENS,
    TARGET,
    TEST,
    TRAIN,
    Dataset,
    normalize_and_weight,
    parse_floats,
    split_train_test,
)
from psm_ranker.training import SolverSettings, train_model

PathLike = Union[str, Path]

# FDR level used for the `accepted` column of score files.
SCORE_FILE_FDR = 0.05
NO_SPLIT = "none"


# --- Scores ---

def score_from_decision(f: np.ndarray) -> np.ndarray:
    """(2/pi) * arctan(f), in (-1, 1) and strictly increasing in f."""
    return np.arctan(np.asarray(f, dtype=np.float64)) / (np.pi / 2.0)


@dataclass(frozen=True, eq=False)
class ScoreTable:
    ids: np.ndarray
    labels: np.ndarray
    scores: np.ndarray
    split: Optional[np.ndarray] = None
    oracle_correct: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        n = len(self.ids)
        if self.labels.shape != (n,) or self.scores.shape != (n,):
            raise DataError("score table columns differ in length")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def is_target(self) -> np.ndarray:
        return self.labels == TARGET

    def rows(self, split: Optional[str] = None) -> np.ndarray:
        """Row mask of one split (all rows for None)."""
        if split is None:
            return np.ones(len(self), dtype=bool)
        if self.split is None:
            raise DataError("score table has no split column")
        return self.split == split


def score_all(d: Dataset, f: Discriminant) -> ScoreTable:
    """Scores every PSM of `d` (both splits) with the model's own normalization."""
    if f.vectors.ndim == 2 and len(f) and f.vectors.shape[1] != d.features.shape[1]:
        raise DataError(f"model has {f.vectors.shape[1]} features, data has {d.features.shape[1]}")
    if f.feature_means is not None:
        if len(f.feature_means) != d.features.shape[1]:
            raise DataError(f"model normalization covers {len(f.feature_means)} features, data has {d.features.shape[1]}")
        x = f.transform(d.features)
    else:
        x = d.weighted_features()
    return ScoreTable(
        ids=d.ids,
        labels=d.labels,
        scores=score_from_decision(f.decision_function(x)),
        split=d.split,
        oracle_correct=d.oracle_correct,
    )


# --- FDR ---

@dataclass
class FdrResult:
    target_fdr: float
    threshold: float
    accepted_targets: int
    accepted_decoys: int
    estimated_fdr: float
    accepted: np.ndarray
    split: Optional[str] = None
    empty: bool = False
    split_targets: Dict[str, int] = field(default_factory=dict)
    split_decoys: Dict[str, int] = field(default_factory=dict)


def _fdr_curve(scores: np.ndarray, is_target: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Distinct thresholds (descending) with the targets/decoys scoring >= each
    one, and the monotonized FDR (running minimum from the bottom).
    """
    thresholds = np.unique(scores)[::-1]
    target_sorted = np.sort(scores[is_target])
    decoy_sorted = np.sort(scores[~is_target])
    n_t = len(target_sorted) - np.searchsorted(target_sorted, thresholds, side="left")
    n_d = len(decoy_sorted) - np.searchsorted(decoy_sorted, thresholds, side="left")
    raw = n_d / np.maximum(1, n_t)
    q = np.minimum.accumulate(raw[::-1])[::-1]
    return thresholds, n_t, n_d, q


def fdr_threshold(t: ScoreTable, target_fdr: float, split: Optional[str] = None) -> FdrResult:
    """
    Largest accepted set (score >= threshold) whose monotonized decoy/target
    ratio is <= target_fdr. Tied scores are accepted or rejected together.
    With `split`, only that split's rows are counted and accepted.
    """
    if not 0.0 <= target_fdr < 1.0:
        raise ConfigError(f"target FDR must be in [0, 1), got {target_fdr}")
    rows = t.rows(split)
    if not rows.any():
        raise DataError("score table is empty" if split is None else f"no PSMs in the '{split}' split")
    scores = t.scores[rows]
    thresholds, n_t, n_d, q = _fdr_curve(scores, t.is_target[rows])

    passing = np.flatnonzero(q <= target_fdr)
    if passing.size == 0:
        logging.warning(f"No score threshold reaches FDR <= {target_fdr}; accepting nothing")
        result = FdrResult(target_fdr=target_fdr, threshold=float("inf"), accepted_targets=0,
                           accepted_decoys=0, estimated_fdr=0.0, accepted=np.zeros(len(t), dtype=bool),
                           split=split, empty=True)
    else:
        k = int(passing[-1])
        result = FdrResult(
            target_fdr=target_fdr,
            threshold=float(thresholds[k]),
            accepted_targets=int(n_t[k]),
            accepted_decoys=int(n_d[k]),
            estimated_fdr=float(n_d[k] / max(1, n_t[k])),
            accepted=rows & (t.scores >= thresholds[k]),
            split=split,
        )
    accepted = result.accepted
    if t.split is not None:
        for name in (TRAIN, TEST):
            in_split = accepted & (t.split == name)
            result.split_targets[name] = int(np.sum(in_split & t.is_target))
            result.split_decoys[name] = int(np.sum(in_split & ~t.is_target))
    logging.debug(
        f"FDR {target_fdr}: threshold {result.threshold:.6f}, {result.accepted_targets} targets, "
        f"{result.accepted_decoys} decoys"
    )
    return result


def q_values(t: ScoreTable) -> np.ndarray:
    """Per-PSM monotonized FDR at the PSM's own score."""
    if len(t) == 0:
        return np.zeros(0)
    thresholds, _, _, q = _fdr_curve(t.scores, t.is_target)
    # thresholds are descending; locate each score by searching the ascending copy
    ascending = thresholds[::-1]
    pos = len(thresholds) - 1 - np.searchsorted(ascending, t.scores)
    return q[pos]


def test_total_ratio(r: FdrResult) -> float:
    """Accepted test targets / accepted targets; NaN (with a warning) when nothing was accepted."""
    if not r.split_targets:
        raise DataError("test/total ratio needs a score table with train and test splits")
    total = sum(r.split_targets.values())
    if total == 0:
        logging.warning(f"Test/total ratio undefined at FDR {r.target_fdr}: no accepted targets")
        return float("nan")
    return r.split_targets[TEST] / total


# keep pytest from collecting this function where tests import it by name
test_total_ratio.__test__ = False


def accepted_target_ids(t: ScoreTable, r: FdrResult) -> Set[str]:
    return {str(v) for v in t.ids[r.accepted & t.is_target]}


def oracle_false_fraction(t: ScoreTable, r: FdrResult) -> float:
    """Share of accepted targets that are truly incorrect (synthetic data only)."""
    if t.oracle_correct is None:
        raise DataError("score table carries no oracle truth")
    targets = r.accepted & t.is_target
    n = int(targets.sum())
    if n == 0:
        return 0.0
    return float(np.sum(targets & ~t.oracle_correct) / n)


# --- ROC ---

@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def __len__(self) -> int:
        return len(self.fpr)


def roc_curve(t: ScoreTable, positive: Optional[np.ndarray] = None,
              negative: Optional[np.ndarray] = None) -> RocCurve:
    """
    ROC over all distinct thresholds, from (0, 0) at +inf to (1, 1).
    Positives default to targets and negatives to the remaining rows (decoys).
    """
    if positive is None:
        positive = t.is_target
    if negative is None:
        negative = ~positive
    n_pos, n_neg = int(positive.sum()), int(negative.sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError(f"ROC needs both classes (got {n_pos} positives, {n_neg} negatives)")

    rows = positive | negative
    fpr, tpr, thresholds = metrics.roc_curve(positive[rows], t.scores[rows], drop_intermediate=False)
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=float(metrics.auc(fpr, tpr)))


def oracle_roc(t: ScoreTable) -> RocCurve:
    """Oracle-correct targets against every oracle-incorrect record."""
    if t.oracle_correct is None:
        raise DataError("score table carries no oracle truth")
    positive = t.is_target & t.oracle_correct
    return roc_curve(t, positive=positive, negative=~positive)


# --- Overlap ---

@dataclass(frozen=True)
class Overlap:
    a: int
    b: int
    ab: int
    c: Optional[int] = None
    ac: Optional[int] = None
    bc: Optional[int] = None
    abc: Optional[int] = None

    def as_rows(self) -> List[Tuple[str, int]]:
        rows = [("a", self.a), ("b", self.b), ("a&b", self.ab)]
        if self.c is not None:
            rows += [("c", self.c), ("a&c", self.ac), ("b&c", self.bc), ("a&b&c", self.abc)]
        return rows


def overlap(a: Set[str], b: Set[str], c: Optional[Set[str]] = None) -> Overlap:
    if c is None:
        return Overlap(a=len(a), b=len(b), ab=len(a & b))
    return Overlap(a=len(a), b=len(b), ab=len(a & b), c=len(c),
                   ac=len(a & c), bc=len(b & c), abc=len(a & b & c))


# --- Repeated runs ---

@dataclass
class StabilityReport:
    solver: str
    seeds: List[int]
    accepted: List[int]
    seconds: List[float]
    target_fdr: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted else float("nan")

    @property
    def minimum(self) -> int:
        return int(min(self.accepted))

    @property
    def maximum(self) -> int:
        return int(max(self.accepted))

    @property
    def spread(self) -> float:
        """(max - min) / mean."""
        mean = self.mean
        return (self.maximum - self.minimum) / mean if mean > 0 else 0.0


def primary_fdr(levels: Sequence[float]) -> float:
    """The FDR level single-number summaries use: 0.05 when requested, else the first level."""
    return SCORE_FILE_FDR if SCORE_FILE_FDR in levels else float(levels[0])


def trial_seeds(seed: int, trials: int) -> List[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(trials)]


def _resplit(d: Dataset, ratio: Tuple[int, int], seed: int) -> Dataset:
    return normalize_and_weight(split_train_test(d, ratio, seed), d.feature_weights)


def _run_trial(args: Tuple[Dataset, ModelParams, SolverSettings, int, float, bool, Tuple[int, int]]) -> Tuple[int, float]:
    d, p, settings, seed, target_fdr, vary_split, ratio = args
    if vary_split:
        d = _resplit(d, ratio, seed)
    f, seconds = train_model(d, p, settings.with_seed(seed))
    result = fdr_threshold(score_all(d, f), target_fdr)
    return result.accepted_targets, seconds


def stability_trials(
    d: Dataset,
    p: ModelParams,
    settings: SolverSettings,
    trials: int,
    target_fdr: float = SCORE_FILE_FDR,
    seed: int = 0,
    vary_split: bool = False,
    split_ratio: Tuple[int, int] = (2, 1),
    workers: int = 1,
) -> StabilityReport:
    """
    Independent seeded training runs; each trial's seed drives the solver's
    sample order (and the split when `vary_split`). Trials run in a process
    pool when workers > 1; results keep trial order.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    if vary_split and not d.is_normalized:
        raise DataError("vary_split needs a normalized dataset to take feature weights from")
    if trials == 1:
        logging.warning("A single stability trial has no dispersion to report")
    seeds = trial_seeds(seed, trials)
    jobs = [(d, p, settings, s, target_fdr, vary_split, split_ratio) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_trial, jobs))
    else:
        outcomes = [_run_trial(job) for job in jobs]

    report = StabilityReport(
        solver=settings.solver,
        seeds=seeds,
        accepted=[a for a, _ in outcomes],
        seconds=[s for _, s in outcomes],
        target_fdr=target_fdr,
    )
    logging.info(
        f"{settings.solver}: {trials} trials, accepted mean {report.mean:.1f} "
        f"[{report.minimum}, {report.maximum}], spread {report.spread:.4f}"
    )
    return report


def subset_average_scores(
    d: Dataset,
    p: ModelParams,
    settings: SolverSettings,
    n_subsets: int = 5,
    subset_size: int = 16000,
    seed: int = 0,
) -> Tuple[ScoreTable, List[float]]:
    """
    Trains on `n_subsets` random subsets of the training split and scores
    every PSM with the mean of the per-subset scores.

    Returns the averaged table and the per-subset training times.
    """
    if n_subsets < 1 or subset_size < 1:
        raise ConfigError(f"n_subsets and subset_size must be >= 1, got {n_subsets}, {subset_size}")
    train = d.train_indices
    size = min(subset_size, len(train))
    if size < subset_size:
        logging.warning(f"Training split has only {len(train)} PSMs; subsets use all of them")
    rng = np.random.default_rng(seed)
    total = np.zeros(len(d))
    seconds: List[float] = []
    for k, subset_seed in enumerate(trial_seeds(seed, n_subsets)):
        chosen = np.sort(rng.choice(train, size=size, replace=False))
        f, elapsed = train_model(d.subset(chosen), p, settings.with_seed(subset_seed))
        total += score_all(d, f).scores
        seconds.append(elapsed)
        logging.info(f"Subset {k + 1}/{n_subsets}: {size} PSMs trained in {elapsed:.3f}s")
    return (
        ScoreTable(ids=d.ids, labels=d.labels, scores=total / n_subsets,
                   split=d.split, oracle_correct=d.oracle_correct),
        seconds,
    )


# --- TSV I/O ---

def write_scores(t: ScoreTable, path: PathLike, accepted: Optional[np.ndarray] = None) -> Path:
    """`id label split score accepted` (+ `oracle_correct` when known)."""
    path = Path(path)
    if accepted is None:
        accepted = fdr_threshold(t, SCORE_FILE_FDR).accepted
    frame = pd.DataFrame({
        "id": t.ids,
        "label": [LABEL_NAMES[int(v)] for v in t.labels],
        "split": t.split if t.split is not None else NO_SPLIT,
        "score": t.scores,
        "accepted": np.where(accepted, "true", "false"),
    })
    if t.oracle_correct is not None:
        frame["oracle_correct"] = np.where(t.oracle_correct, "true", "false")
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, sep="\t", index=False, float_format="%.17g", lineterminator="\n", encoding="utf-8")
    return path


def read_scores(path: PathLike) -> ScoreTable:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"score file not found: {path}")
    try:
        frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise TsvParseError(f"{path} is empty", line=1)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise TsvParseError(f"{path} is not a valid score file: {e}")
    missing = [c for c in ("id", "label", "score") if c not in frame.columns]
    if missing:
        raise TsvParseError(f"missing column(s): {', '.join(missing)}", line=1)

    scores = parse_floats(frame["score"])
    bad = np.flatnonzero(~np.isfinite(scores) | (np.abs(scores) > 1.0))
    if bad.size:
        row = int(bad[0])
        raise TsvParseError(f"invalid score {frame['score'].iat[row]!r}", line=row + 2, column="score")
    labels = _tokens(frame, "label", LABEL_TOKENS).astype(np.int8)

    split = None
    if "split" in frame.columns and not (frame["split"] == NO_SPLIT).all():
        split = _tokens(frame, "split", {TRAIN: TRAIN, TEST: TEST}).astype(str)
    oracle = None
    if "oracle_correct" in frame.columns:
        oracle = _tokens(frame, "oracle_correct", BOOL_TOKENS).astype(bool)
    return ScoreTable(ids=frame["id"].to_numpy(dtype=object), labels=labels, scores=scores,
                      split=split, oracle_correct=oracle)


def _tokens(frame: pd.DataFrame, column: str, tokens: Dict[str, object]) -> np.ndarray:
    values = frame[column].str.strip().str.lower()
    known = values.isin(list(tokens))
    if not known.all():
        row = int(np.flatnonzero(~known.to_numpy())[0])
        raise TsvParseError(f"unknown token {frame[column].iat[row]!r}", line=row + 2, column=column)
    return values.map(tokens).to_numpy()


def fdr_report_frame(t: ScoreTable, target_fdrs: Sequence[float]) -> pd.DataFrame:
    """One row per requested FDR level."""
    rows = []
    for level in target_fdrs:
        r = fdr_threshold(t, level)
        row = {
            "target_fdr": level,
            "threshold": r.threshold,
            "accepted_targets": r.accepted_targets,
            "accepted_decoys": r.accepted_decoys,
            "estimated_fdr": r.estimated_fdr,
            "test_total_ratio": test_total_ratio(r) if t.split is not None else float("nan"),
            "empty": str(r.empty).lower(),
        }
        if t.oracle_correct is not None:
            row["oracle_false_fraction"] = oracle_false_fraction(t, r)
        rows.append(row)
    return pd.DataFrame(rows)


def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, sep="\t", index=False, float_format="%.17g", lineterminator="\n", encoding="utf-8")
    return path


def roc_frame(curve: RocCurve) -> pd.DataFrame:
    return pd.DataFrame({"threshold": curve.thresholds, "fpr": curve.fpr, "tpr": curve.tpr})


def stability_frame(reports: Sequence[StabilityReport]) -> pd.DataFrame:
    return pd.DataFrame([
        {"solver": r.solver, "trial": k + 1, "seed": seed, "accepted_total": accepted}
        for r in reports
        for k, (seed, accepted) in enumerate(zip(r.seeds, r.accepted))
    ])


def timing_frame(reports: Sequence[StabilityReport]) -> pd.DataFrame:
    return pd.DataFrame([
        {"solver": r.solver, "trial": k + 1, "train_seconds": seconds}
        for r in reports
        for k, seconds in enumerate(r.seconds)
    ])
