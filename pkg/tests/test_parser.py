import numpy as np
import pytest

from psm_ranker.errors import ConfigError
from utils.parser import CONFIG_PATH, SCHEMA, defaults, load_config, parse_config


def test_shipped_config_matches_schema_defaults():
    shipped = load_config()

    assert shipped.as_dict() == defaults().as_dict()
    assert shipped.source == str(CONFIG_PATH)
    assert set(shipped.lines) == set(SCHEMA)


def test_values_override_defaults():
    config = parse_config("C1: 3.0\nsolver: batch\ntarget_fdr: [0.05]\n")

    assert config["C1"] == 3.0
    assert config["solver"] == "batch"
    assert config["target_fdr"] == [0.05]
    assert config["C2"] == 1.0
    assert config.lines == {"C1": 1, "solver": 2, "target_fdr": 3}


def test_integer_is_accepted_for_float_keys():
    config = parse_config("sigma: 2\n")

    assert config["sigma"] == 2.0
    assert isinstance(config["sigma"], float)


def test_exponent_without_dot_is_read_as_a_number():
    config = parse_config("tau: 1e-3\ntol_inner: 5E-4\ntarget_fdr: [1e-2, 0.05]\n")

    assert config["tau"] == 0.001
    assert config["tol_inner"] == 0.0005
    assert config["target_fdr"] == [0.01, 0.05]
    with pytest.raises(ConfigError) as info:
        parse_config("C1: 2.0\nsigma: wide\n")
    assert info.value.line == 2
    with pytest.raises(ConfigError):
        parse_config("tau: nan\n")


def test_unknown_key_reports_its_line():
    with pytest.raises(ConfigError) as info:
        parse_config("C1: 2.0\n\nkernel_width: 3\n")

    assert info.value.line == 3
    assert "kernel_width" in str(info.value)
    assert str(info.value).startswith("line 3:")


@pytest.mark.parametrize("text, line", [
    ("n_target: 2.5\n", 1),
    ("C2: 1.0\nsigma: -1\n", 2),
    ("solver: svm\n", 1),
    ("allow_negative_s: 1\n", 1),
    ("n_target: true\n", 1),
    ("target_fdr: [0.05, 1.0]\n", 1),
    ("target_fdr: []\n", 1),
    ("feature_weights: [1, 2, 3]\n", 1),
    ("solvers: [online, lasvm]\n", 1),
    ("tau: .nan\n", 1),
    ("out_dir: null\n", 1),
])
def test_invalid_values_are_rejected_with_line(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)

    assert info.value.line == line


def test_malformed_yaml_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_config("C1: 2.0\nC2: [1.0\nsigma: 1.0\n")

    assert "malformed YAML" in str(info.value)
    assert info.value.line is not None


def test_duplicate_key_is_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config("seed: 1\nC1: 2.0\nseed: 2\n")

    assert info.value.line == 3
    assert "first on line 1" in str(info.value)


def test_non_mapping_document_is_rejected():
    with pytest.raises(ConfigError):
        parse_config("- C1\n- C2\n")


def test_empty_document_gives_defaults():
    assert parse_config("").as_dict() == defaults().as_dict()
    assert parse_config("# only a comment\n").as_dict() == defaults().as_dict()


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.yml")


def test_overrides_apply_last_and_skip_none(tmp_path):
    path = tmp_path / "run.yml"
    path.write_text("seed: 5\ntrials: 4\n", encoding="utf-8")

    config = load_config(path, {"seed": 9, "trials": None, "out_dir": str(tmp_path)})

    assert config["seed"] == 9
    assert config["trials"] == 4
    assert config["out_dir"] == str(tmp_path)
    with pytest.raises(ConfigError):
        config.with_overrides({"trials": 0})
    with pytest.raises(ConfigError):
        config.with_overrides({"no_such_key": 1})


def test_builders_carry_values_into_solver_settings():
    config = parse_config("C1: 4.0\nC2: 2.0\nlambda: 1.0\nsigma: 0.7\nM: 7\ntau: 0.01\n"
                          "tol_inner: 0.0001\nseed: 12\nsolver: batch\n")

    p = config.model_params()
    settings = config.solver_settings()

    assert (p.C1, p.C2, p.lam, p.s) == (4.0, 2.0, 1.0, 0.5)
    assert p.kernel.sigma == 0.7
    assert settings.solver == "batch"
    assert (settings.online.M, settings.online.tau, settings.online.seed) == (7, 0.01, 12)
    assert (settings.batch.tol_inner, settings.batch.seed) == (0.0001, 12)
    assert config.split_ratio == (2, 1)


def test_cross_field_rules_surface_as_config_errors():
    with pytest.raises(ConfigError):
        parse_config("C1: 0.5\nC2: 1.0\n").model_params()
    with pytest.raises(ConfigError):
        parse_config("lambda: 2.0\n").model_params()
    assert parse_config("lambda: 2.0\nallow_negative_s: true\n").model_params().s == -1.0


def test_synth_spec_from_presets():
    assert parse_config("synth_preset: hard\n").synth_spec().pi_correct == 0.065
    spec = parse_config("synth_preset: normal\npi_correct: 0.3\nn_target: 10\nseed: 4\n").synth_spec()
    assert (spec.pi_correct, spec.n_target, spec.seed) == (0.3, 10, 4)
    with pytest.raises(ConfigError) as info:
        parse_config("pi_correct: 0.2\nsynth_preset: none\n").synth_spec()
    assert info.value.line == 2
    spec = parse_config("synth_preset: none\npi_correct: 0.2\nseparation: 1.5\n").synth_spec()
    assert (spec.pi_correct, spec.separation) == (0.2, 1.5)


def test_random_documents_only_raise_config_errors():
    rng = np.random.default_rng(0)
    alphabet = list("abcM:_- \n[]{},.0123456789#!&*'\"|>%@`\t") + ["C1", "seed", "true", "null", "1e3"]
    for _ in range(2000):
        text = "".join(rng.choice(alphabet, size=int(rng.integers(0, 40))))
        try:
            parse_config(text)
        except ConfigError:
            pass
