import logging
from pathlib import Path

from psm_ranker.errors import EXIT_OK
from psm_ranker.psm_dataset import generate_synthetic, write_tsv
from utils.manifest import RunManifest
from utils.parser import RunConfig

DATASET_NAME = "dataset.tsv"


def cmd_synth(config: RunConfig) -> int:
    """Writes a synthetic PSM dataset (with oracle truth) and its manifest."""
    logging.info("📄 Step 1: Synthetic dataset")
    spec = config.synth_spec()
    d = generate_synthetic(spec)

    out_dir = Path(config["out_dir"])
    path = write_tsv(d, out_dir / DATASET_NAME)
    manifest = RunManifest(command="synth", config=config.as_dict(), seeds={"synth": spec.seed})
    manifest.notes.update({
        "synth_preset": config["synth_preset"],
        "pi_correct": spec.pi_correct,
        "separation": spec.separation,
        "counts": d.counts(),
    })
    manifest.add_output(path)
    manifest.write(out_dir)
    logging.info(f"✅ Step 1 completed: {len(d)} PSMs written to {path}")
    return EXIT_OK
