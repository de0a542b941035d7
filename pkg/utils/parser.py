"""
Handles loading and validation of the YAML run configuration.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple, Union

import yaml

from psm_ranker.batch_solver import BatchConfig
from psm_ranker.cs_ranker_model import ModelParams
from psm_ranker.errors import ConfigError
from psm_ranker.kernel_engine import KernelParams
from psm_ranker.online_solver import OnlineConfig
from psm_ranker.psm_dataset import N_FEATURES, SYNTH_PRESETS, SynthSpec, synth_spec_from_preset
from psm_ranker.training import SOLVERS, SolverSettings

CONFIG_PATH = Path(__file__).parent.parent / "config" / "run.yml"


@dataclass(frozen=True)
class Key:
    kind: str  # int | float | bool | str | floats | strs
    default: Any
    check: Optional[Callable[[Any], bool]] = None
    rule: str = ""
    nullable: bool = False


def _positive(v) -> bool:
    return v > 0


def _non_negative(v) -> bool:
    return v >= 0


SCHEMA: Dict[str, Key] = {
    # data
    "data_path": Key("str", None, nullable=True),
    "synth_preset": Key("str", "normal", lambda v: v in ("none", *SYNTH_PRESETS), "one of none, normal, hard"),
    "n_target": Key("int", 2000, _positive, "> 0"),
    "n_decoy": Key("int", 2000, _positive, "> 0"),
    "pi_correct": Key("float", None, lambda v: 0.0 <= v <= 1.0, "in [0, 1]", nullable=True),
    "separation": Key("float", None, _non_negative, ">= 0", nullable=True),
    # model
    "C1": Key("float", 2.0, _positive, "> 0"),
    "C2": Key("float", 1.0, _positive, "> 0"),
    "lambda": Key("float", 0.5, _positive, "> 0"),
    "sigma": Key("float", 1.0, _positive, "> 0"),
    "allow_negative_s": Key("bool", False),
    "feature_weights": Key("floats", None, lambda v: len(v) == N_FEATURES, f"a list of {N_FEATURES} numbers",
                           nullable=True),
    # split and seeds
    "train_parts": Key("int", 2, _positive, "> 0"),
    "test_parts": Key("int", 1, _positive, "> 0"),
    "seed": Key("int", 20190101, lambda v: 0 <= v < 2**64, "in [0, 2^64)"),
    # solver
    "solver": Key("str", "online", lambda v: v in SOLVERS, "one of online, batch"),
    "cache_capacity": Key("int", 512, _positive, "> 0"),
    "dense_kernel_limit": Key("int", 5000, _non_negative, ">= 0"),
    # batch
    "tol_inner": Key("float", 1e-3, _positive, "> 0"),
    "max_outer": Key("int", 20, _positive, "> 0"),
    "max_inner_sweeps": Key("int", 0, _non_negative, ">= 0"),
    # online
    "M": Key("int", 200, _non_negative, ">= 0"),
    "tau": Key("float", 1e-3, _positive, "> 0"),
    "clean_period": Key("int", 500, _positive, "> 0"),
    "m": Key("int", 300, _non_negative, ">= 0"),
    "finishing_sweeps": Key("int", 0, _non_negative, ">= 0"),
    "epochs": Key("int", 1, _positive, "> 0"),
    "clean_by_abs_gradient": Key("bool", False),
    "mu_safe": Key("float", None, nullable=True),
    "mu_safe_target": Key("float", None, nullable=True),
    "progress_every": Key("int", 0, _non_negative, ">= 0"),
    "debug_gradients": Key("bool", False),
    # evaluation
    "target_fdr": Key("floats", [0.01, 0.02, 0.05, 0.1],
                      lambda v: len(v) > 0 and all(0.0 <= x < 1.0 for x in v), "a non-empty list in [0, 1)"),
    # bench
    "trials": Key("int", 30, _positive, "> 0"),
    "solvers": Key("strs", ["online", "batch"],
                   lambda v: len(v) > 0 and all(s in SOLVERS for s in v), "a non-empty list of online/batch"),
    "workers": Key("int", 1, _positive, "> 0"),
    "vary_split": Key("bool", False),
    "subset_mode": Key("bool", False),
    "n_subsets": Key("int", 5, _positive, "> 0"),
    "subset_size": Key("int", 16000, _positive, "> 0"),
    # output
    "out_dir": Key("str", "out"),
}


def _coerce(name: str, key: Key, value: Any, line: Optional[int]) -> Any:
    if value is None:
        if key.nullable:
            return None
        raise ConfigError(f"'{name}' may not be null", line=line)

    def number(v: Any, kind: str) -> Union[int, float]:
        if isinstance(v, bool):
            raise ConfigError(f"'{name}' expects {kind}, got a boolean", line=line)
        if kind == "int":
            if not isinstance(v, int):
                raise ConfigError(f"'{name}' expects an integer, got {v!r}", line=line)
            return v
        if isinstance(v, str):
            # YAML 1.1 reads exponents without a dot (1e-3) as strings
            try:
                v = float(v)
            except ValueError:
                raise ConfigError(f"'{name}' expects a number, got {v!r}", line=line)
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"'{name}' expects a finite number, got {v!r}", line=line)
        return float(v)

    if key.kind in ("int", "float"):
        coerced: Any = number(value, key.kind)
    elif key.kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"'{name}' expects true or false, got {value!r}", line=line)
        coerced = value
    elif key.kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"'{name}' expects a string, got {value!r}", line=line)
        coerced = value
    elif key.kind == "floats":
        if not isinstance(value, list):
            raise ConfigError(f"'{name}' expects a list of numbers", line=line)
        coerced = [number(v, "float") for v in value]
    else:
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"'{name}' expects a list of strings", line=line)
        coerced = list(value)

    if key.check is not None and not key.check(coerced):
        raise ConfigError(f"'{name}' must be {key.rule}, got {value!r}", line=line)
    return coerced


@dataclass
class RunConfig:
    """Resolved configuration: schema defaults < config file < command-line overrides."""

    values: Dict[str, Any]
    source: Optional[str] = None
    lines: Dict[str, int] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Any:
        return self.values[name]

    def get(self, name: str, default: Any = None) -> Any:
        return self.values.get(name, default)

    def as_dict(self) -> Dict[str, Any]:
        return dict(self.values)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        values = dict(self.values)
        for name, value in overrides.items():
            if value is None:
                continue
            if name not in SCHEMA:
                raise ConfigError(f"unknown configuration key '{name}'")
            values[name] = _coerce(name, SCHEMA[name], value, None)
        return RunConfig(values=values, source=self.source, lines=dict(self.lines))

    @property
    def split_ratio(self) -> Tuple[int, int]:
        return self["train_parts"], self["test_parts"]

    def model_params(self) -> ModelParams:
        return ModelParams(
            C1=self["C1"],
            C2=self["C2"],
            lam=self["lambda"],
            kernel=KernelParams(sigma=self["sigma"]),
            allow_negative_s=self["allow_negative_s"],
        )

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(
            solver=self["solver"],
            online=OnlineConfig(
                M=self["M"],
                tau=self["tau"],
                clean_period=self["clean_period"],
                m=self["m"],
                finishing_sweeps=self["finishing_sweeps"],
                seed=self["seed"],
                epochs=self["epochs"],
                clean_by_abs_gradient=self["clean_by_abs_gradient"],
                cache_capacity=self["cache_capacity"],
                debug_gradients=self["debug_gradients"],
                progress_every=self["progress_every"],
                mu_safe=self["mu_safe"],
                mu_safe_target=self["mu_safe_target"],
            ),
            batch=BatchConfig(
                tol_inner=self["tol_inner"],
                max_outer=self["max_outer"],
                max_inner_sweeps=self["max_inner_sweeps"],
                seed=self["seed"],
                cache_capacity=self["cache_capacity"],
                dense_kernel_limit=self["dense_kernel_limit"],
            ),
        )

    def synth_spec(self) -> SynthSpec:
        preset = self["synth_preset"]
        if preset == "none" and (self["pi_correct"] is None or self["separation"] is None):
            raise ConfigError("synth_preset 'none' needs explicit pi_correct and separation",
                              line=self.lines.get("synth_preset"))
        return synth_spec_from_preset(
            None if preset == "none" else preset,
            n_target=self["n_target"],
            n_decoy=self["n_decoy"],
            seed=self["seed"],
            pi_correct=self["pi_correct"],
            separation=self["separation"],
        )


def defaults() -> RunConfig:
    return RunConfig(values={name: key.default for name, key in SCHEMA.items()})


def parse_config(text: str, source: Optional[str] = None) -> RunConfig:
    """Validates YAML text against SCHEMA. Every failure is a ConfigError."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        problem = getattr(e, "problem", None) or str(e)
        raise ConfigError(f"malformed YAML: {problem}", line=mark.line + 1 if mark is not None else None)

    config = defaults()
    config.source = source
    if node is None:
        return config
    if not isinstance(node, yaml.MappingNode) or not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping of key: value pairs", line=node.start_mark.line + 1)

    lines: Dict[str, int] = {}
    for key_node, _ in node.value:
        name = str(key_node.value)
        line = key_node.start_mark.line + 1
        if name in lines:
            raise ConfigError(f"duplicate key '{name}' (first on line {lines[name]})", line=line)
        lines[name] = line

    for name, value in data.items():
        name = str(name)
        line = lines.get(name)
        if name not in SCHEMA:
            raise ConfigError(f"unknown configuration key '{name}'", line=line)
        config.values[name] = _coerce(name, SCHEMA[name], value, line)
    config.lines = lines
    return config


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Loads the configuration from a YAML file (config/run.yml by default).

    Args:
        path: Configuration file; None selects the shipped config/run.yml.
        overrides: Command-line values, applied last; None entries are skipped.

    Returns:
        RunConfig: The validated configuration.

    Raises:
        ConfigError: If the file is missing, malformed or fails validation.
    """
    path = Path(path) if path is not None else CONFIG_PATH
    if not path.is_file():
        raise ConfigError(f"Configuration file not found at {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read {path}: {e}")
    config = parse_config(text, source=str(path))
    return config.with_overrides(overrides or {})