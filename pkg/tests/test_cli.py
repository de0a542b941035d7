import json

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from main import main
from psm_ranker.errors import EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_UNCONVERGED
from psm_ranker.evaluation import read_scores
from psm_ranker.psm_dataset import load_tsv
from utils.manifest import file_digest, load_manifest

SMALL_RUN = """\
n_target: 45
n_decoy: 45
seed: 11
M: 10
trials: 2
solvers: [online, batch]
target_fdr: [0.01, 0.05, 0.1]
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.yml"
    path.write_text(SMALL_RUN, encoding="utf-8")
    return path


def _run(*argv):
    return main([str(a) for a in argv])


def _trained(tmp_path, config_file, name="train"):
    out = tmp_path / name
    assert _run("train", "--config", config_file, "--out", out) == EXIT_OK
    return out


def test_synth_writes_dataset_and_manifest(tmp_path, config_file):
    out = tmp_path / "synth"

    assert _run("synth", "--config", config_file, "--out", out) == EXIT_OK

    d = load_tsv(out / "dataset.tsv")
    assert d.counts()["targets"] == 45
    assert d.oracle_correct is not None
    manifest = load_manifest(out / "manifest.json")
    assert manifest["command"] == "synth"
    assert manifest["outputs"]["dataset.tsv"] == file_digest(out / "dataset.tsv")
    assert manifest["seeds"] == {"synth": 11}
    assert manifest["notes"]["pi_correct"] == 0.45


def test_synth_hard_preset(tmp_path):
    config = tmp_path / "hard.yml"
    config.write_text("synth_preset: hard\nn_target: 200\nn_decoy: 100\n", encoding="utf-8")
    out = tmp_path / "hard"

    assert _run("synth", "--config", config, "--out", out) == EXIT_OK

    assert load_tsv(out / "dataset.tsv").counts()["oracle_correct"] == 13


def test_synth_is_byte_identical_per_seed(tmp_path, config_file):
    for name in ("a", "b"):
        assert _run("synth", "--config", config_file, "--out", tmp_path / name, "--seed", 3) == EXIT_OK

    first = load_manifest(tmp_path / "a" / "manifest.json")["outputs"]
    second = load_manifest(tmp_path / "b" / "manifest.json")["outputs"]
    assert first == second


def test_train_writes_model_scores_and_manifest(tmp_path, config_file):
    out = _trained(tmp_path, config_file)

    for name in ("model.tsv", "dataset.tsv", "scores.tsv", "manifest.json"):
        assert (out / name).is_file()
    manifest = load_manifest(out / "manifest.json")
    assert manifest["converged"] is True
    assert manifest["kkt_violation"] <= 1e-3
    assert set(manifest["timings"]) == {"load", "train", "total"}
    assert manifest["notes"]["solver"] == "online"
    scores = read_scores(out / "scores.tsv")
    assert len(scores) == 90
    assert set(scores.split) == {"train", "test"}


def test_train_is_deterministic(tmp_path, config_file):
    first = _trained(tmp_path, config_file, "first")
    second = _trained(tmp_path, config_file, "second")

    for name in ("model.tsv", "dataset.tsv", "scores.tsv"):
        assert file_digest(first / name) == file_digest(second / name)


def test_train_with_batch_solver_and_progress(tmp_path, config_file):
    out = tmp_path / "batch"

    assert _run("train", "--config", config_file, "--out", out, "--solver", "batch") == EXIT_OK

    manifest = load_manifest(out / "manifest.json")
    assert manifest["notes"]["solver"] == "batch"
    assert manifest["notes"]["objective_trace"]


def test_train_records_online_progress(tmp_path):
    config = tmp_path / "progress.yml"
    config.write_text(SMALL_RUN + "progress_every: 10\n", encoding="utf-8")
    out = tmp_path / "progress"

    assert _run("train", "--config", config, "--out", out) == EXIT_OK

    progress = pd.read_csv(out / "progress.tsv", sep="\t")
    assert list(progress.columns) == ["round", "active", "eta_active", "kkt_violation", "kernel_evaluations"]
    assert len(progress) == 60 // 10 + 1


def test_train_reports_unconverged_batch_run(tmp_path):
    config = tmp_path / "short.yml"
    config.write_text(SMALL_RUN + "solver: batch\nmax_outer: 1\n", encoding="utf-8")
    out = tmp_path / "short"

    assert _run("train", "--config", config, "--out", out) == EXIT_UNCONVERGED

    assert load_manifest(out / "manifest.json")["converged"] is False
    assert (out / "model.tsv").is_file()


def test_train_on_a_synthesized_file(tmp_path, config_file):
    synth = tmp_path / "synth"
    assert _run("synth", "--config", config_file, "--out", synth) == EXIT_OK
    out = tmp_path / "from_file"

    assert _run("train", "--config", config_file, "--out", out, "--data", synth / "dataset.tsv") == EXIT_OK

    assert load_manifest(out / "manifest.json")["config"]["data_path"] == str(synth / "dataset.tsv")


def test_missing_data_file_exits_with_data_code(tmp_path, config_file):
    code = _run("train", "--config", config_file, "--out", tmp_path / "x", "--data", tmp_path / "absent.tsv")

    assert code == EXIT_DATA


def test_config_errors_exit_with_config_code(tmp_path):
    bad = tmp_path / "bad.yml"
    bad.write_text("n_target: 10\nkernel_width: 2\n", encoding="utf-8")

    assert _run("synth", "--config", bad, "--out", tmp_path / "x") == EXIT_CONFIG
    assert _run("synth", "--config", tmp_path / "absent.yml") == EXIT_CONFIG
    assert _run("eval", "--config", bad, tmp_path / "scores.tsv") == EXIT_CONFIG


def test_score_reproduces_training_scores(tmp_path, config_file):
    trained = _trained(tmp_path, config_file)
    out = tmp_path / "score"

    code = _run("score", "--config", config_file, "--out", out,
                "--model", trained / "model.tsv", "--data", trained / "dataset.tsv")

    assert code == EXIT_OK
    rescored = read_scores(out / "scores.tsv")
    original = read_scores(trained / "scores.tsv")
    assert_allclose(rescored.scores, original.scores, rtol=0, atol=1e-12)
    assert list(rescored.ids) == list(original.ids)


def test_score_after_train_writes_an_identical_scores_file(tmp_path, config_file):
    trained = _trained(tmp_path, config_file)
    out = tmp_path / "score"

    assert _run("score", "--config", config_file, "--out", out,
                "--model", trained / "model.tsv", "--data", trained / "dataset.tsv") == EXIT_OK

    assert file_digest(out / "scores.tsv") == file_digest(trained / "scores.tsv")


def test_score_eval_and_bench_are_byte_identical_on_repeat(tmp_path, config_file):
    trained = _trained(tmp_path, config_file)
    runs = {
        "score": ["--model", trained / "model.tsv", "--data", trained / "dataset.tsv"],
        "eval": [trained / "scores.tsv"],
        "bench": [],
    }
    for command, extra in runs.items():
        digests = []
        for name in ("a", "b"):
            out = tmp_path / f"{command}_{name}"
            assert _run(command, "--config", config_file, "--out", out, *extra) == EXIT_OK
            manifest = load_manifest(out / "manifest.json")
            digests.append({k: v for k, v in manifest["outputs"].items() if k not in manifest["nondeterministic"]})
        assert digests[0] == digests[1]
        assert digests[0]


def test_score_rejects_a_foreign_model_file(tmp_path, config_file):
    trained = _trained(tmp_path, config_file)

    code = _run("score", "--config", config_file, "--out", tmp_path / "x",
                "--model", trained / "scores.tsv", "--data", trained / "dataset.tsv")

    assert code == EXIT_DATA


def test_eval_single_score_file(tmp_path, config_file):
    trained = _trained(tmp_path, config_file)
    out = tmp_path / "eval"

    assert _run("eval", "--config", config_file, "--out", out, trained / "scores.tsv") == EXIT_OK

    report = pd.read_csv(out / "fdr_report.tsv", sep="\t")
    assert list(report["target_fdr"]) == [0.01, 0.05, 0.1]
    assert (out / "roc.tsv").is_file()
    assert (out / "roc_oracle.tsv").is_file()
    assert not (out / "overlap.tsv").exists()
    roc = pd.read_csv(out / "roc.tsv", sep="\t")
    assert (roc["fpr"].iloc[0], roc["tpr"].iloc[0]) == (0.0, 0.0)
    assert (roc["fpr"].iloc[-1], roc["tpr"].iloc[-1]) == (1.0, 1.0)


def test_eval_fdr_flag_overrides_levels(tmp_path, config_file):
    trained = _trained(tmp_path, config_file)
    out = tmp_path / "eval"

    assert _run("eval", "--config", config_file, "--out", out, "--fdr", "0.05,0.2", trained / "scores.tsv") == EXIT_OK

    assert list(pd.read_csv(out / "fdr_report.tsv", sep="\t")["target_fdr"]) == [0.05, 0.2]


def test_eval_identical_files_overlap_fully(tmp_path, config_file):
    trained = _trained(tmp_path, config_file)
    out = tmp_path / "eval"
    scores = trained / "scores.tsv"

    assert _run("eval", "--config", config_file, "--out", out, scores, scores) == EXIT_OK

    assert (out / "fdr_report_1.tsv").is_file() and (out / "fdr_report_2.tsv").is_file()
    overlap = pd.read_csv(out / "overlap.tsv", sep="\t")
    for _, rows in overlap.groupby("target_fdr"):
        counts = dict(zip(rows["region"], rows["count"]))
        assert counts["a"] == counts["b"] == counts["a&b"]


def test_eval_rejects_more_than_three_files(tmp_path, config_file):
    trained = _trained(tmp_path, config_file)
    scores = trained / "scores.tsv"

    code = _run("eval", "--config", config_file, "--out", tmp_path / "x", scores, scores, scores, scores)

    assert code == EXIT_DATA


def test_eval_flags_empty_acceptance_at_zero_fdr(tmp_path, config_file):
    path = tmp_path / "scores.tsv"
    path.write_text("id\tlabel\tscore\na\tdecoy\t0.9\nb\ttarget\t0.5\nc\tdecoy\t0.1\n", encoding="utf-8")
    out = tmp_path / "eval"

    assert _run("eval", "--config", config_file, "--out", out, "--fdr", "0", path) == EXIT_OK

    report = pd.read_csv(out / "fdr_report.tsv", sep="\t")
    assert bool(report["empty"].iloc[0]) is True
    assert report["accepted_targets"].iloc[0] == 0


def test_bench_writes_stability_and_timing(tmp_path, config_file):
    out = tmp_path / "bench"

    assert _run("bench", "--config", config_file, "--out", out) == EXIT_OK

    stability = pd.read_csv(out / "stability.tsv", sep="\t")
    assert len(stability) == 4
    assert list(stability["solver"]) == ["online", "online", "batch", "batch"]
    assert len(pd.read_csv(out / "timing.tsv", sep="\t")) == 4
    manifest = load_manifest(out / "manifest.json")
    assert manifest["nondeterministic"] == ["timing.tsv"]
    assert set(manifest["notes"]["stability"]) == {"online", "batch"}


def test_bench_subset_mode(tmp_path):
    config = tmp_path / "subset.yml"
    config.write_text(SMALL_RUN + "subset_mode: true\nn_subsets: 2\nsubset_size: 30\n",
                      encoding="utf-8")
    out = tmp_path / "bench"

    assert _run("bench", "--config", config, "--out", out, "--trials", 1) == EXIT_OK

    assert len(read_scores(out / "subset_scores.tsv")) == 90
    manifest = load_manifest(out / "manifest.json")
    assert manifest["notes"]["subsets"]["n_subsets"] == 2
    assert "subset_train" in manifest["timings"]


def test_log_file_receives_step_messages(tmp_path, config_file):
    log = tmp_path / "run.log"

    assert _run("synth", "--config", config_file, "--out", tmp_path / "synth", "--log-file", log) == EXIT_OK

    text = log.read_text(encoding="utf-8")
    assert "Step 1" in text
    assert " - INFO - " in text


def test_manifest_is_valid_json_with_resolved_config(tmp_path, config_file):
    out = tmp_path / "synth"
    _run("synth", "--config", config_file, "--out", out, "--seed", 99)

    with open(out / "manifest.json", encoding="utf-8") as handle:
        manifest = json.load(handle)

    assert manifest["config"]["seed"] == 99
    assert manifest["config"]["out_dir"] == str(out)
    assert np.isclose(manifest["config"]["C1"], 2.0)
