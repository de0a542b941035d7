import logging
import time
from pathlib import Path
from typing import List

import pandas as pd

from psm_ranker.cs_ranker_model import save_discriminant
from psm_ranker.errors import EXIT_OK, EXIT_UNCONVERGED
from psm_ranker.evaluation import score_all, write_frame, write_scores
from psm_ranker.online_solver import ProgressRow
from psm_ranker.psm_dataset import (
    Dataset,
    generate_synthetic,
    load_tsv,
    normalize_and_weight,
    split_train_test,
    write_tsv,
)
from psm_ranker.training import train_model
from utils.manifest import RunManifest
from utils.parser import RunConfig

MODEL_NAME = "model.tsv"
DATASET_NAME = "dataset.tsv"
SCORES_NAME = "scores.tsv"
PROGRESS_NAME = "progress.tsv"


def prepare_dataset(config: RunConfig) -> Dataset:
    """
    Loads `data_path` (or synthesizes from the config when it is null),
    splits it unless the file already carries a split, and normalizes with
    training-split statistics.
    """
    if config["data_path"] is not None:
        d = load_tsv(config["data_path"])
    else:
        d = generate_synthetic(config.synth_spec())
    if not d.is_split:
        d = split_train_test(d, config.split_ratio, config["seed"])
    else:
        logging.info("Using the train/test split stored in the data file")
    return normalize_and_weight(d, config["feature_weights"])


def cmd_train(config: RunConfig) -> int:
    logging.info("📄 Step 2: Train")
    started = time.perf_counter()
    d = prepare_dataset(config)
    load_seconds = time.perf_counter() - started
    p = config.model_params()
    settings = config.solver_settings()

    progress_rows: List[ProgressRow] = []
    f, train_seconds = train_model(d, p, settings, progress=progress_rows.append)
    report = f.report

    out_dir = Path(config["out_dir"])
    manifest = RunManifest(command="train", config=config.as_dict(), seeds={"split": config["seed"], "solver": config["seed"]})
    manifest.add_output(save_discriminant(f, out_dir / MODEL_NAME))
    manifest.add_output(write_tsv(d, out_dir / DATASET_NAME))
    manifest.add_output(write_scores(score_all(d, f), out_dir / SCORES_NAME))
    if progress_rows:
        manifest.add_output(write_frame(pd.DataFrame(progress_rows), out_dir / PROGRESS_NAME))

    manifest.timings = {"load": load_seconds, "train": train_seconds, "total": time.perf_counter() - started}
    manifest.kkt_violation = report.kkt_violation
    manifest.converged = report.converged
    manifest.notes.update({
        "solver": settings.solver,
        "iterations": report.iterations,
        "active_size": report.active_size,
        "support_size": report.support_size,
        "kernel_evaluations": report.kernel_evaluations,
        "objective_trace": report.objective_trace,
        "eta_flips_total": int(sum(report.eta_flips)),
        "counts": d.counts(),
    })
    manifest.write(out_dir)

    if not report.converged:
        logging.warning(f"⚠️ Step 2: {settings.solver} solver did not converge (KKT violation {report.kkt_violation:.3g})")
        return EXIT_UNCONVERGED
    logging.info(f"✅ Step 2 completed: {len(f)} support vectors in {train_seconds:.3f}s")
    return EXIT_OK
