"""
PSM feature data: TSV ingest/export, train/test split, normalization and the
synthetic generator used for desk-scale experiments.

A dataset is stored column-wise (numpy arrays) and frozen after construction;
every transformation returns a new Dataset.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from psm_ranker.errors import ConfigError, DataError, TsvParseError

# --- Constants ---
FEATURES: Tuple[str, ...] = (
    "xcorr",
    "deltacn",
    "sprank",
    "ions",
    "hit_mass",
    "enzN",
    "enzC",
    "numProt",
    "deltacnR",
)
N_FEATURES = len(FEATURES)
DEFAULT_WEIGHTS: Tuple[float, ...] = (1.0, 1.0) + (0.5,) * (N_FEATURES - 2)

TARGET, DECOY = 1, -1
LABEL_TOKENS = {"target": TARGET, "decoy": DECOY}
LABEL_NAMES = {TARGET: "target", DECOY: "decoy"}
TRAIN, TEST = "train", "test"
BOOL_TOKENS = {"true": True, "false": False}

# Raw location/scale per feature; synthetic columns are location + scale * z.
SYNTH_LOCATION = np.array([1.5, 0.12, 50.0, 0.35, 1800.0, 0.5, 0.5, 1.5, 0.1])
SYNTH_SCALE = np.array([0.6, 0.08, 40.0, 0.15, 600.0, 0.5, 0.5, 1.0, 0.08])

SYNTH_PRESETS: Dict[str, Dict[str, float]] = {
    "normal": {"pi_correct": 0.45, "separation": 4.0},
    "hard": {"pi_correct": 0.065, "separation": 4.0},
}

PathLike = Union[str, Path]


@dataclass(frozen=True)
class PsmRecord:
    """One labeled peptide-spectrum match."""

    id: str
    label: int
    features: Tuple[float, ...]
    oracle_correct: Optional[bool] = None

    def __post_init__(self) -> None:
        if self.label not in (TARGET, DECOY):
            raise DataError(f"PSM '{self.id}': label must be +1 or -1, got {self.label}")
        if len(self.features) != N_FEATURES:
            raise DataError(f"PSM '{self.id}': expected {N_FEATURES} features, got {len(self.features)}")
        if not all(math.isfinite(v) for v in self.features):
            raise DataError(f"PSM '{self.id}': non-finite feature value")
        if self.label == DECOY and self.oracle_correct:
            raise DataError(f"PSM '{self.id}': a decoy cannot be oracle-correct")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic PSM population."""

    n_target: int
    n_decoy: int
    pi_correct: float
    separation: float
    seed: int

    def __post_init__(self) -> None:
        if self.n_target <= 0 or self.n_decoy <= 0:
            raise ConfigError(f"synthetic counts must be positive (n_target={self.n_target}, n_decoy={self.n_decoy})")
        if not 0.0 <= self.pi_correct <= 1.0:
            raise ConfigError(f"pi_correct must lie in [0, 1], got {self.pi_correct}")
        if self.separation < 0.0:
            raise ConfigError(f"separation must be >= 0, got {self.separation}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Immutable PSM table.

    `features` always holds the raw values; `weighted_features()` gives the
    normalized-weighted vectors the kernel works on once statistics are set.
    """

    ids: np.ndarray
    labels: np.ndarray
    features: np.ndarray
    oracle_correct: Optional[np.ndarray] = None
    split: Optional[np.ndarray] = None
    feature_means: Optional[np.ndarray] = None
    feature_stds: Optional[np.ndarray] = None
    feature_weights: Optional[np.ndarray] = None
    source: str = field(default="memory", compare=False)

    def __post_init__(self) -> None:
        n = len(self.ids)
        for name in ("ids", "labels", "features", "oracle_correct", "split",
                     "feature_means", "feature_stds", "feature_weights"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _frozen(value))
        if self.features.shape != (n, N_FEATURES):
            raise DataError(f"feature matrix has shape {self.features.shape}, expected ({n}, {N_FEATURES})")
        if self.labels.shape != (n,) or not np.isin(self.labels, (TARGET, DECOY)).all():
            raise DataError("labels must be a vector of +1/-1 values, one per record")
        if not np.isfinite(self.features).all():
            raise DataError("feature matrix contains non-finite values")
        if self.oracle_correct is not None and (self.oracle_correct & (self.labels == DECOY)).any():
            raise DataError("decoy records cannot be oracle-correct")
        if self.split is not None and not np.isin(self.split, (TRAIN, TEST)).all():
            raise DataError("split tags must be 'train' or 'test'")
        stats = (self.feature_means, self.feature_stds, self.feature_weights)
        if any(s is not None for s in stats):
            if any(s is None or s.shape != (N_FEATURES,) for s in stats):
                raise DataError("normalization needs means, stds and weights of length 9")
            if not (self.feature_stds > 0).all():
                raise DataError("feature standard deviations must be strictly positive")

    @classmethod
    def from_records(cls, records: Sequence[PsmRecord], source: str = "memory") -> "Dataset":
        oracle = [r.oracle_correct for r in records]
        has_oracle = len(records) > 0 and all(o is not None for o in oracle)
        return cls(
            ids=np.array([r.id for r in records], dtype=object),
            labels=np.array([r.label for r in records], dtype=np.int8),
            features=np.array([r.features for r in records], dtype=np.float64).reshape(len(records), N_FEATURES),
            oracle_correct=np.array(oracle, dtype=bool) if has_oracle else None,
            source=source,
        )

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def records(self) -> List[PsmRecord]:
        oracle = self.oracle_correct
        return [
            PsmRecord(
                id=str(self.ids[i]),
                label=int(self.labels[i]),
                features=tuple(float(v) for v in self.features[i]),
                oracle_correct=None if oracle is None else bool(oracle[i]),
            )
            for i in range(len(self))
        ]

    @property
    def is_split(self) -> bool:
        return self.split is not None

    @property
    def is_normalized(self) -> bool:
        return self.feature_means is not None

    @property
    def train_indices(self) -> np.ndarray:
        self._require_split()
        return np.flatnonzero(self.split == TRAIN)

    @property
    def test_indices(self) -> np.ndarray:
        self._require_split()
        return np.flatnonzero(self.split == TEST)

    def _require_split(self) -> None:
        if self.split is None:
            raise DataError("dataset has no train/test split assigned")

    def transform(self, raw: np.ndarray) -> np.ndarray:
        """Apply this dataset's normalization and weights to raw feature rows."""
        if not self.is_normalized:
            raise DataError("dataset is not normalized; call normalize_and_weight first")
        return normalize_rows(raw, self.feature_means, self.feature_stds, self.feature_weights)

    def weighted_features(self) -> np.ndarray:
        return self.transform(self.features)

    def counts(self) -> Dict[str, int]:
        counts = {
            "total": len(self),
            "targets": int(np.sum(self.labels == TARGET)),
            "decoys": int(np.sum(self.labels == DECOY)),
        }
        if self.split is not None:
            counts["train"] = int(np.sum(self.split == TRAIN))
            counts["test"] = int(np.sum(self.split == TEST))
        if self.oracle_correct is not None:
            counts["oracle_correct"] = int(self.oracle_correct.sum())
        return counts

    def subset(self, indices: Iterable[int]) -> "Dataset":
        idx = np.asarray(list(indices), dtype=np.intp)
        return replace(
            self,
            ids=self.ids[idx],
            labels=self.labels[idx],
            features=self.features[idx],
            oracle_correct=None if self.oracle_correct is None else self.oracle_correct[idx],
            split=None if self.split is None else self.split[idx],
        )


def normalize_rows(raw: np.ndarray, means: np.ndarray, stds: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """v_q = weight_q * (raw_q - mean_q) / std_q, row-wise."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != len(means):
        raise DataError(f"expected rows of {len(means)} features, got shape {raw.shape}")
    return weights * ((raw - means) / stds)


# --- TSV I/O ---

def parse_floats(values: pd.Series) -> np.ndarray:
    """
    Decimal text -> float64 with correct rounding, so `%.17g` output reads
    back bit for bit. Unparseable entries become NaN.
    """
    def one(text: str) -> float:
        try:
            return float(text)
        except ValueError:
            return np.nan

    return np.fromiter((one(v) for v in values), dtype=np.float64, count=len(values))


def load_tsv(path: PathLike) -> Dataset:
    """
    Reads a PSM table.

    Required columns are `id`, `label` and the nine features; `split` and
    `oracle_correct` are picked up when present. Row order is preserved.

    Raises:
        TsvParseError: on a missing column, a non-numeric feature or an unknown token.
        DataError: if the file cannot be read.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"PSM file not found: {path}")
    try:
        frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise TsvParseError(f"{path} is empty", line=1)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise TsvParseError(f"{path} is not a valid UTF-8 TSV file: {e}")

    missing = [c for c in ("id", "label", *FEATURES) if c not in frame.columns]
    if missing:
        raise TsvParseError(f"missing column(s): {', '.join(missing)}", line=1)
    if frame.empty:
        raise TsvParseError(f"{path} has a header but no data rows", line=2)

    features = np.empty((len(frame), N_FEATURES), dtype=np.float64)
    for q, name in enumerate(FEATURES):
        column = parse_floats(frame[name])
        bad = np.flatnonzero(~np.isfinite(column))
        if bad.size:
            row = int(bad[0])
            raise TsvParseError(f"non-numeric feature value {frame[name].iat[row]!r}", line=row + 2, column=name)
        features[:, q] = column

    labels = _parse_tokens(frame, "label", LABEL_TOKENS).astype(np.int8)
    split = None
    if "split" in frame.columns:
        split = _parse_tokens(frame, "split", {TRAIN: TRAIN, TEST: TEST}).astype(str)
    oracle = None
    if "oracle_correct" in frame.columns:
        oracle = _parse_tokens(frame, "oracle_correct", BOOL_TOKENS).astype(bool)

    try:
        dataset = Dataset(
            ids=frame["id"].to_numpy(dtype=object),
            labels=labels,
            features=features,
            oracle_correct=oracle,
            split=split,
            source=str(path),
        )
    except DataError as e:
        raise TsvParseError(str(e))
    logging.info(f"Loaded {len(dataset)} PSMs from {path}: {dataset.counts()}")
    return dataset


def _parse_tokens(frame: pd.DataFrame, column: str, tokens: Dict[str, object]) -> np.ndarray:
    values = frame[column].str.strip().str.lower()
    known = values.isin(list(tokens))
    if not known.all():
        row = int(np.flatnonzero(~known.to_numpy())[0])
        raise TsvParseError(
            f"unknown token {frame[column].iat[row]!r} (expected one of {sorted(tokens)})",
            line=row + 2,
            column=column,
        )
    return values.map(tokens).to_numpy()


def write_tsv(d: Dataset, path: PathLike) -> Path:
    """Writes `d` in the format `load_tsv` reads, with exact float round trip."""
    path = Path(path)
    frame = pd.DataFrame({"id": d.ids, "label": [LABEL_NAMES[int(v)] for v in d.labels]})
    for q, name in enumerate(FEATURES):
        frame[name] = d.features[:, q]
    if d.split is not None:
        frame["split"] = d.split
    if d.oracle_correct is not None:
        frame["oracle_correct"] = np.where(d.oracle_correct, "true", "false")
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, sep="\t", index=False, float_format="%.17g", lineterminator="\n", encoding="utf-8")
    return path


# --- Split and normalization ---

def split_train_test(d: Dataset, ratio: Tuple[int, int] = (2, 1), seed: int = 0) -> Dataset:
    """
    Seeded shuffle; the first ceil(n * train/(train+test)) shuffled records train.

    Any previous normalization is dropped since it belonged to another split.
    """
    train_parts, test_parts = ratio
    if train_parts <= 0 or test_parts <= 0:
        raise ConfigError(f"split ratio parts must be positive, got {train_parts}:{test_parts}")
    n = len(d)
    if n < train_parts + test_parts:
        raise DataError(f"cannot split {n} records with ratio {train_parts}:{test_parts}")
    n_train = math.ceil(n * train_parts / (train_parts + test_parts))
    order = np.random.default_rng(seed).permutation(n)
    split = np.full(n, TEST, dtype="<U5")
    split[order[:n_train]] = TRAIN
    logging.debug(f"Split {n} records into {n_train} train / {n - n_train} test (seed={seed})")
    return replace(d, split=split, feature_means=None, feature_stds=None, feature_weights=None)


def normalize_and_weight(d: Dataset, weights: Optional[Sequence[float]] = None) -> Dataset:
    """
    Stores z-score statistics of the training split plus per-feature weights.

    Population std (divide by n). A constant training column gets std 1.0 and
    therefore becomes 0 after centering.
    """
    if weights is None:
        weights = DEFAULT_WEIGHTS
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (N_FEATURES,) or not np.isfinite(weights).all():
        raise ConfigError(f"feature_weights must be {N_FEATURES} finite numbers")
    train = d.features[d.train_indices]
    if len(train) == 0:
        raise DataError("training split is empty")
    means = train.mean(axis=0)
    stds = train.std(axis=0)
    constant = np.ptp(train, axis=0) == 0
    if constant.any():
        logging.warning(f"Constant training column(s) {[FEATURES[q] for q in np.flatnonzero(constant)]}; using std 1.0")
    stds = np.where(constant | (stds == 0), 1.0, stds)
    return replace(d, feature_means=means, feature_stds=stds, feature_weights=weights)


# --- Synthetic data ---

def synth_spec_from_preset(
    preset: Optional[str],
    n_target: int,
    n_decoy: int,
    seed: int,
    pi_correct: Optional[float] = None,
    separation: Optional[float] = None,
) -> SynthSpec:
    """Builds a SynthSpec; explicit values override the preset's."""
    base = SYNTH_PRESETS.get(preset or "normal")
    if base is None:
        raise ConfigError(f"unknown synth preset '{preset}' (expected one of {sorted(SYNTH_PRESETS)})")
    return SynthSpec(
        n_target=n_target,
        n_decoy=n_decoy,
        pi_correct=base["pi_correct"] if pi_correct is None else pi_correct,
        separation=base["separation"] if separation is None else separation,
        seed=seed,
    )


def weighted_separation(spec: SynthSpec) -> float:
    """
    Gap between the class means on xcorr after the z-score. The pooled std
    of the mixture, sqrt(1 + q(1 - q) separation^2) for a correct fraction q
    of all PSMs, divides the generation-unit gap.
    """
    q = int(round(spec.pi_correct * spec.n_target)) / (spec.n_target + spec.n_decoy)
    return spec.separation / math.sqrt(1.0 + q * (1.0 - q) * spec.separation ** 2)


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """
    Draws decoys and incorrect targets from N(-separation/2 * e_1, I) and the
    round(pi_correct * n_target) correct targets from N(+separation/2 * e_1, I),
    in generation units, then maps them to raw feature scales.

    `separation` is measured before normalization; `weighted_separation`
    gives the gap the solvers see.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_target + spec.n_decoy
    n_correct = int(round(spec.pi_correct * spec.n_target))

    labels = np.concatenate([np.full(spec.n_target, TARGET), np.full(spec.n_decoy, DECOY)]).astype(np.int8)
    correct = np.zeros(n, dtype=bool)
    correct[:n_correct] = True

    z = rng.standard_normal((n, N_FEATURES))
    z[:, 0] += np.where(correct, spec.separation / 2.0, -spec.separation / 2.0)

    order = rng.permutation(n)
    dataset = Dataset(
        ids=np.array([f"synth_{i:07d}" for i in range(n)], dtype=object),
        labels=labels[order],
        features=SYNTH_LOCATION + SYNTH_SCALE * z[order],
        oracle_correct=correct[order],
        source=f"synthetic(seed={spec.seed})",
    )
    logging.info(
        f"Generated synthetic PSMs: {spec.n_target} targets ({n_correct} correct), "
        f"{spec.n_decoy} decoys, separation={spec.separation} (about {weighted_separation(spec):.2f} after normalization)"
    )
    return dataset
