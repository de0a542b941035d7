"""
Main entry point for psm_ranker.

Sub-commands wire the pipeline steps together: synthesize a dataset, train a
model (online or batch solver), score PSMs, evaluate score files at target
FDR levels and benchmark repeated runs.
"""

import argparse
import logging
import sys
from typing import Any, Callable, Dict, List, Optional

from psm_ranker import __version__
from psm_ranker.errors import EXIT_CONFIG, EXIT_DATA, EXIT_FAILURE, ConfigError, DataError
from psm_ranker.steps.step1_synth import cmd_synth
from psm_ranker.steps.step2_train import cmd_train
from psm_ranker.steps.step3_score import cmd_score
from psm_ranker.steps.step4_eval import cmd_eval
from psm_ranker.steps.step5_bench import cmd_bench
from utils.parser import RunConfig, load_config

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def configure_logging(log_file: Optional[str] = None, verbose: bool = False) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


def run_step(step_fn: Callable[[], int], step_name: str) -> int:
    """
    Runs one sub-command with logging and error handling.

    Returns:
        The step's exit code, 2 for a configuration error, 3 for a data
        error and 1 for anything unexpected.
    """
    logging.info(f"--- Starting: {step_name} ---")
    try:
        code = step_fn()
    except ConfigError as e:
        logging.error(f"❌ Configuration error in {step_name}: {e}")
        return EXIT_CONFIG
    except DataError as e:
        logging.error(f"❌ Data error in {step_name}: {e}")
        return EXIT_DATA
    except Exception as e:
        logging.critical(f"An unexpected exception occurred in {step_name}: {e}", exc_info=True)
        return EXIT_FAILURE
    logging.info(f"--- Completed: {step_name} (exit code {code}) ---")
    return code


def parse_fdr_list(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--fdr expects a comma-separated list of numbers, got {text!r}")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, Any] = {
        "seed": args.seed,
        "out_dir": args.out,
        "solver": args.solver,
        "target_fdr": parse_fdr_list(args.fdr),
        "trials": args.trials,
    }
    if getattr(args, "data", None) is not None and args.command in ("train", "bench"):
        overrides["data_path"] = args.data
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML run configuration (default: config/run.yml)")
    common.add_argument("--seed", type=int, default=None, help="seed for synthesis, split and sample order")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--solver", choices=["online", "batch"], default=None)
    common.add_argument("--fdr", default=None, help="comma-separated target FDR levels")
    common.add_argument("--trials", type=int, default=None, help="stability trials per solver")
    common.add_argument("--log-file", default=None, help="also write the log to this file")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="psm_ranker", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate a synthetic PSM dataset")
    train = sub.add_parser("train", parents=[common], help="train a model")
    train.add_argument("--data", default=None, help="PSM TSV (overrides data_path)")
    score = sub.add_parser("score", parents=[common], help="score PSMs with a saved model")
    score.add_argument("--model", required=True, help="model.tsv written by train")
    score.add_argument("--data", required=True, help="PSM TSV to score")
    evaluate = sub.add_parser("eval", parents=[common], help="FDR, ROC and overlap reports")
    evaluate.add_argument("scores", nargs="+", help="one to three score TSVs")
    bench = sub.add_parser("bench", parents=[common], help="stability and timing benchmark")
    bench.add_argument("--data", default=None, help="PSM TSV (overrides data_path)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_file, args.verbose)

    commands: Dict[str, Callable[[RunConfig], int]] = {
        "synth": cmd_synth,
        "train": cmd_train,
        "score": lambda config: cmd_score(config, args.model, args.data),
        "eval": lambda config: cmd_eval(config, args.scores),
        "bench": cmd_bench,
    }
    command = commands[args.command]
    return run_step(lambda: command(resolve_config(args)), args.command)


if __name__ == "__main__":
    sys.exit(main())
