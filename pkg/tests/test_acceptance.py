"""
Statistical checks on larger synthetic sets. Deselected by default; run with
`pytest -m slow`.
"""

import numpy as np
import pytest

from conftest import make_dataset
from psm_ranker import evaluation
from psm_ranker.batch_solver import BatchConfig
from psm_ranker.cs_ranker_model import DualState, ModelParams, gradient_drift, refresh_gradient
from psm_ranker.evaluation import fdr_threshold, oracle_false_fraction, score_all, stability_trials
from psm_ranker.kernel_engine import KernelCache
from psm_ranker.online_solver import ActiveSetState, OnlineConfig, clean, process, refresh_eta, reprocess, run
from psm_ranker.psm_dataset import DECOY, SYNTH_PRESETS, TARGET
from psm_ranker.training import SolverSettings, train_model

pytestmark = pytest.mark.slow

SEEDS = range(10)
NORMAL = SYNTH_PRESETS["normal"]
HARD = SYNTH_PRESETS["hard"]


def _normal_set(seed, n=3000):
    return make_dataset(n_target=n // 2, n_decoy=n // 2, pi_correct=NORMAL["pi_correct"],
                        separation=NORMAL["separation"], seed=seed, split_seed=seed + 1000)


def _accepted_at(d, f, level=0.05):
    return fdr_threshold(score_all(d, f), level)


def test_online_and_batch_accept_similar_counts():
    p = ModelParams()
    gaps = []
    for seed in SEEDS:
        d = _normal_set(seed)
        online, _ = train_model(d, p, SolverSettings(solver="online").with_seed(seed))
        batch, _ = train_model(d, p, SolverSettings(solver="batch").with_seed(seed))
        a = _accepted_at(d, online).accepted_targets
        b = _accepted_at(d, batch).accepted_targets
        gaps.append(abs(a - b) / max(1, b))

    assert np.median(gaps) <= 0.02


def test_online_training_is_faster_than_batch():
    # above dense_kernel_limit, so the batch side runs on the row cache
    d = _normal_set(0, n=16000)
    p = ModelParams()

    _, online_seconds = train_model(d, p, SolverSettings(solver="online"))
    _, batch_seconds = train_model(d, p, SolverSettings(solver="batch"))

    assert online_seconds * 5.0 <= batch_seconds


def test_online_runs_meet_tau_on_every_seed():
    for seed in SEEDS:
        f = run(_normal_set(seed), ModelParams(), OnlineConfig(seed=seed, tau=1e-3))
        assert f.report.kkt_violation <= 1e-3


def test_test_share_of_accepted_targets_tracks_the_split():
    ratios = []
    for seed in SEEDS:
        d = _normal_set(seed)
        f, _ = train_model(d, ModelParams(), SolverSettings().with_seed(seed))
        ratios.append(evaluation.test_total_ratio(_accepted_at(d, f)))

    assert 0.30 <= np.median(ratios) <= 0.37


def test_decoy_estimate_bounds_oracle_false_fraction():
    fractions = []
    for seed in SEEDS:
        d = _normal_set(seed)
        f, _ = train_model(d, ModelParams(), SolverSettings().with_seed(seed))
        t = score_all(d, f)
        fractions.append(oracle_false_fraction(t, fdr_threshold(t, 0.05)))

    assert np.mean(fractions) <= 0.10


def test_higher_decoy_cost_lowers_false_acceptance_on_hard_data():
    wins = 0
    for seed in SEEDS:
        d = make_dataset(n_target=3000, n_decoy=3000, pi_correct=HARD["pi_correct"],
                         separation=HARD["separation"], seed=seed, split_seed=seed + 1000)
        fractions = []
        for c1 in (4.0, 1.0):
            f, _ = train_model(d, ModelParams(C1=c1, C2=1.0, lam=0.5), SolverSettings().with_seed(seed))
            t = score_all(d, f)
            fractions.append(oracle_false_fraction(t, fdr_threshold(t, 0.05)))
        wins += fractions[0] <= fractions[1]

    assert wins >= 7


def test_sample_order_barely_matters_on_separable_data():
    d = make_dataset(n_target=500, n_decoy=500, pi_correct=1.0, separation=10.0, seed=1)

    report = stability_trials(d, ModelParams(), SolverSettings(solver="online"), trials=5, seed=3)

    assert report.spread <= 0.01


def test_long_random_operation_sequence_keeps_gradients_exact():
    p = ModelParams()
    cfg = OnlineConfig(M=20, tau=1e-4)
    rng = np.random.default_rng(11)
    n = 300
    x = rng.normal(scale=0.6, size=(n, 9))
    y = np.where(rng.random(n) < 0.5, TARGET, DECOY)
    st = ActiveSetState(dual=DualState.empty(x, y, KernelCache(x, p.kernel, capacity=n)))
    checkpoints = set(rng.choice(100_000, size=100, replace=False).tolist())

    for step in range(100_000):
        op = rng.integers(0, 4)
        outside = np.setdiff1d(np.arange(n), st.dual.active)
        if op == 0 and outside.size:
            i0 = int(rng.choice(outside))
            st.dual.insert(i0, p)
            refresh_gradient(st.dual, np.array([len(st.dual) - 1]))
            refresh_eta(st, p, cfg)
            process(st, i0)
        elif op == 1:
            refresh_eta(st, p, cfg)
            process(st)
        elif op == 2:
            reprocess(st, cfg.tau)
        else:
            clean(st, m=int(rng.integers(0, 10)))
        if step in checkpoints:
            assert gradient_drift(st.dual) <= 1e-8
            assert np.all(st.dual.alpha >= st.dual.lower) and np.all(st.dual.alpha <= st.dual.upper)


def test_batch_cache_path_converges_on_a_mid_sized_set():
    d = _normal_set(2, n=1500)

    f, _ = train_model(d, ModelParams(), SolverSettings(solver="batch", batch=BatchConfig(dense_kernel_limit=0)))

    assert f.report.converged
