import logging
from pathlib import Path
from typing import Union

from psm_ranker.cs_ranker_model import load_discriminant
from psm_ranker.errors import EXIT_OK
from psm_ranker.evaluation import score_all, write_scores
from psm_ranker.psm_dataset import load_tsv
from utils.manifest import RunManifest
from utils.parser import RunConfig

SCORES_NAME = "scores.tsv"


def cmd_score(config: RunConfig, model_path: Union[str, Path], data_path: Union[str, Path]) -> int:
    """Scores every PSM of a data file with a saved model."""
    logging.info("📄 Step 3: Score")
    f = load_discriminant(model_path)
    d = load_tsv(data_path)
    table = score_all(d, f)

    out_dir = Path(config["out_dir"])
    manifest = RunManifest(command="score", config=config.as_dict())
    manifest.notes.update({"model": str(model_path), "data": str(data_path)})
    manifest.add_output(write_scores(table, out_dir / SCORES_NAME))
    manifest.write(out_dir)
    logging.info(f"✅ Step 3 completed: {len(table)} PSMs scored with {len(f)} support vectors")
    return EXIT_OK
