import numpy as np
import pytest

from psm_ranker.psm_dataset import (
    Dataset,
    SynthSpec,
    generate_synthetic,
    normalize_and_weight,
    split_train_test,
)


def make_dataset(n_target: int = 60, n_decoy: int = 60, pi_correct: float = 0.5,
                 separation: float = 4.0, seed: int = 7, split_seed: int = 3) -> Dataset:
    """Seeded synthetic set, split 2:1 and normalized with the default weights."""
    d = generate_synthetic(SynthSpec(n_target=n_target, n_decoy=n_decoy, pi_correct=pi_correct,
                                     separation=separation, seed=seed))
    return normalize_and_weight(split_train_test(d, (2, 1), seed=split_seed))


def make_single_record(label: int, features=None) -> Dataset:
    """One training record with identity normalization."""
    features = np.zeros((1, 9)) if features is None else np.atleast_2d(features)
    return Dataset(
        ids=np.array(["only"], dtype=object),
        labels=np.array([label], dtype=np.int8),
        features=features,
        split=np.array(["train"]),
        feature_means=np.zeros(9),
        feature_stds=np.ones(9),
        feature_weights=np.ones(9),
    )


@pytest.fixture
def small_dataset() -> Dataset:
    return make_dataset()
