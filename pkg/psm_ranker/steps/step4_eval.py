import logging
from pathlib import Path
from typing import List, Sequence, Union

import pandas as pd

from psm_ranker.errors import EXIT_OK, DataError
from psm_ranker.evaluation import (
    ScoreTable,
    accepted_target_ids,
    fdr_report_frame,
    fdr_threshold,
    oracle_roc,
    overlap,
    read_scores,
    roc_curve,
    roc_frame,
    write_frame,
)
from utils.manifest import RunManifest
from utils.parser import RunConfig


def _name(stem: str, k: int, n: int) -> str:
    return f"{stem}.tsv" if n == 1 else f"{stem}_{k + 1}.tsv"


def _overlap_frame(tables: Sequence[ScoreTable], levels: Sequence[float]) -> pd.DataFrame:
    rows = []
    for level in levels:
        sets = [accepted_target_ids(t, fdr_threshold(t, level)) for t in tables]
        counts = overlap(*sets)
        rows.extend({"target_fdr": level, "region": region, "count": count} for region, count in counts.as_rows())
    return pd.DataFrame(rows)


def cmd_eval(config: RunConfig, score_paths: Sequence[Union[str, Path]]) -> int:
    """FDR report and ROC per score file, plus the overlap of accepted targets for 2-3 files."""
    logging.info("📄 Step 4: Evaluate")
    if not 1 <= len(score_paths) <= 3:
        raise DataError(f"eval takes one to three score files, got {len(score_paths)}")
    levels: List[float] = config["target_fdr"]
    tables = [read_scores(p) for p in score_paths]

    out_dir = Path(config["out_dir"])
    manifest = RunManifest(command="eval", config=config.as_dict())
    manifest.notes["score_files"] = [str(p) for p in score_paths]
    n = len(tables)
    for k, table in enumerate(tables):
        report = fdr_report_frame(table, levels)
        manifest.add_output(write_frame(report, out_dir / _name("fdr_report", k, n)))
        for row in report.itertuples(index=False):
            logging.info(
                f"{score_paths[k]} @ FDR {row.target_fdr}: {row.accepted_targets} targets, "
                f"{row.accepted_decoys} decoys (estimated FDR {row.estimated_fdr:.4f})"
            )
            if row.empty == "true":
                logging.warning(f"⚠️ No PSMs accepted at FDR {row.target_fdr} in {score_paths[k]}")

        curve = roc_curve(table)
        manifest.add_output(write_frame(roc_frame(curve), out_dir / _name("roc", k, n)))
        manifest.notes[f"auc_{k + 1}"] = curve.auc
        if table.oracle_correct is not None:
            oracle = oracle_roc(table)
            manifest.add_output(write_frame(roc_frame(oracle), out_dir / _name("roc_oracle", k, n)))
            manifest.notes[f"oracle_auc_{k + 1}"] = oracle.auc

    if n > 1:
        manifest.add_output(write_frame(_overlap_frame(tables, levels), out_dir / "overlap.tsv"))
    manifest.write(out_dir)
    logging.info(f"✅ Step 4 completed: {n} score file(s) evaluated at {len(levels)} FDR level(s)")
    return EXIT_OK
