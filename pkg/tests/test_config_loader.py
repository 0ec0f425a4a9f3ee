"""Tests for starpath.config_loader module."""

from pathlib import Path

import numpy as np
import pytest

from starpath.config_loader import (
    _coerce,
    _parse_ini,
    _parse_value,
    build_problem,
    build_x0,
    load_experiment,
)
from starpath.errors import ConfigError
from starpath.model import MlpProblem
from starpath.problems import ConsistentLeastSquares

from tests.conftest import LEAST_SQUARES_INI


BLOBS_INI = """\
[problem]
family = mlp

[mlp]
layer_sizes = 4, 5, 3
activation = tanh
loss = mse
init_seed = 2
batch_size = 3

[data]
source = blobs
n_per_class = 4
classes = 3
d_in = 4
seed = 9

[run]
seed = 1
"""


class TestParseValue:
    """Unit tests for the _parse_value helper."""

    def test_integers(self):
        assert _parse_value("42") == 42
        assert _parse_value("-5") == -5

    def test_float(self):
        assert _parse_value("1e-3") == 1e-3

    def test_quoted_string_keeps_hash(self):
        assert _parse_value('"runs #2"') == "runs #2"

    def test_inline_comment_stripped(self):
        assert _parse_value("0.5 # step size") == 0.5

    def test_booleans(self):
        assert _parse_value("True") is True
        assert _parse_value("false") is False

    def test_comma_list(self):
        assert _parse_value("784, 256, 10") == [784, 256, 10]

    def test_bracketed_list(self):
        assert _parse_value("[60, 80]") == [60, 80]
        assert _parse_value("[]") == []

    def test_bare_string(self):
        assert _parse_value("least_squares") == "least_squares"


class TestParseIni:
    """Tests for the section parser."""

    def test_sections_and_comments(self, tmp_path):
        path = tmp_path / "x.ini"
        path.write_text("# header\n[run]\neta = 0.1\n; note\nepochs = 3\n", encoding="utf-8")
        assert _parse_ini(path) == {"run": {"eta": 0.1, "epochs": 3}}

    def test_line_without_equals(self, tmp_path):
        path = tmp_path / "x.ini"
        path.write_text("[run]\neta\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="line 2"):
            _parse_ini(path)

    def test_key_outside_section(self, tmp_path):
        path = tmp_path / "x.ini"
        path.write_text("eta = 1\n", encoding="utf-8")
        with pytest.raises(ConfigError) as exc:
            _parse_ini(path)
        assert exc.value.field == "eta"


class TestCoerce:
    """Type coercion against defaults."""

    def test_integral_float_to_int(self):
        assert _coerce("run.epochs", 100, 5.0) == 5

    def test_rejects_fractional_int(self):
        with pytest.raises(ConfigError, match="integer"):
            _coerce("run.epochs", 100, 5.5)

    def test_int_to_float(self):
        assert _coerce("run.eta", 0.01, 1) == 1.0
        assert isinstance(_coerce("run.eta", 0.01, 1), float)

    def test_bool_from_string(self):
        assert _coerce("analysis.audits", True, "no") is False

    def test_list_to_tuple(self):
        assert _coerce("mlp.layer_sizes", [1, 2], [3, 4]) == (3, 4)
        assert _coerce("analysis.alternate_epochs", [], 7) == (7,)


class TestLoadExperiment:
    """Loading, validation and environment overrides."""

    def test_least_squares(self, ls_config):
        cfg = load_experiment(ls_config)
        assert cfg.problem.family == "least_squares"
        assert (cfg.problem.n, cfg.problem.d, cfg.problem.seed) == (6, 10, 3)
        assert cfg.run.eta == 0.02
        assert cfg.analysis.reference_mode.kind == "planted"
        assert cfg.analysis.alternate_epochs == ()
        rc = cfg.run_config()
        assert rc.record_policy.m == 4
        assert rc.seed == 11

    def test_defaults_fill_missing_sections(self, ls_config):
        cfg = load_experiment(ls_config)
        assert cfg.mlp.layer_sizes == (784, 256, 10)
        assert cfg.output.trace_path.as_posix() == "runs/trace.spth"
        assert cfg.output.report_dir.as_posix() == "runs/trace-report"

    def test_missing_file(self, tmp_env):
        with pytest.raises(ConfigError) as exc:
            load_experiment(tmp_env / "nope.ini")
        assert exc.value.field == "config"

    def test_unknown_key(self, write_config, tmp_env):
        path = write_config(LEAST_SQUARES_INI + "learning_rate = 0.1\n")
        with pytest.raises(ConfigError) as exc:
            load_experiment(path)
        assert exc.value.field == "analysis.learning_rate"

    def test_unknown_section(self, write_config, tmp_env):
        path = write_config(LEAST_SQUARES_INI + "[optimizer]\nmomentum = 0.9\n")
        with pytest.raises(ConfigError, match="unknown section"):
            load_experiment(path)

    def test_run_seed_required(self, write_config, tmp_env):
        path = write_config(LEAST_SQUARES_INI.replace("seed = 11\n", ""))
        with pytest.raises(ConfigError) as exc:
            load_experiment(path)
        assert exc.value.field == "run.seed"

    def test_problem_seed_required(self, write_config, tmp_env):
        path = write_config(LEAST_SQUARES_INI.replace("seed = 3\n", ""))
        with pytest.raises(ConfigError) as exc:
            load_experiment(path)
        assert exc.value.field == "problem.seed"

    @pytest.mark.parametrize("seed", [2 ** 63, 2 ** 64 + 5, -1])
    def test_run_seed_out_of_range(self, write_config, tmp_env, seed):
        path = write_config(LEAST_SQUARES_INI.replace("seed = 11\n", f"seed = {seed}\n"))
        with pytest.raises(ConfigError, match=r"\[0, 2\*\*63\)") as exc:
            load_experiment(path)
        assert exc.value.field == "run.seed"

    def test_largest_run_seed_accepted(self, write_config, tmp_env):
        path = write_config(LEAST_SQUARES_INI.replace("seed = 11\n", f"seed = {2 ** 63 - 1}\n"))
        assert load_experiment(path).run.seed == 2 ** 63 - 1

    def test_problem_seed_out_of_range(self, write_config, tmp_env):
        path = write_config(LEAST_SQUARES_INI.replace("seed = 3\n", f"seed = {2 ** 63}\n"))
        with pytest.raises(ConfigError) as exc:
            load_experiment(path)
        assert exc.value.field == "problem.seed"

    def test_mlp_requires_init_seed(self, write_config, tmp_env):
        path = write_config(BLOBS_INI.replace("init_seed = 2\n", ""))
        with pytest.raises(ConfigError) as exc:
            load_experiment(path)
        assert exc.value.field == "mlp.init_seed"

    def test_bad_family(self, write_config, tmp_env):
        path = write_config(LEAST_SQUARES_INI.replace("least_squares", "logistic"))
        with pytest.raises(ConfigError, match="must be one of"):
            load_experiment(path)

    def test_nonpositive_eta(self, write_config, tmp_env):
        path = write_config(LEAST_SQUARES_INI.replace("eta = 0.02", "eta = 0"))
        with pytest.raises(ConfigError) as exc:
            load_experiment(path)
        assert exc.value.field == "run.eta"

    def test_env_override(self, ls_config, monkeypatch):
        monkeypatch.setenv("STARPATH_RUN_EPOCHS", "5")
        monkeypatch.setenv("STARPATH_ANALYSIS_AUDITS", "false")
        cfg = load_experiment(ls_config)
        assert cfg.run.epochs == 5
        assert cfg.analysis.audits is False

    def test_env_output_dir(self, ls_config, monkeypatch, tmp_path):
        monkeypatch.setenv("STARPATH_OUT", str(tmp_path / "elsewhere"))
        cfg = load_experiment(ls_config)
        assert cfg.output.trace_path == tmp_path / "elsewhere" / "trace.spth"

    def test_bad_env_value(self, ls_config, monkeypatch):
        monkeypatch.setenv("STARPATH_RUN_EPOCHS", "many")
        with pytest.raises(ConfigError) as exc:
            load_experiment(ls_config)
        assert exc.value.field == "STARPATH_RUN_EPOCHS"


class TestBuild:
    """Problem and starting-point construction."""

    def test_least_squares_problem(self, ls_config):
        p = build_problem(load_experiment(ls_config))
        assert isinstance(p, ConsistentLeastSquares)
        assert (p.n, p.d) == (6, 10)

    def test_same_config_same_fingerprint(self, ls_config):
        cfg = load_experiment(ls_config)
        assert build_problem(cfg).fingerprint == build_problem(cfg).fingerprint

    def test_blobs_mlp(self, write_config, tmp_env):
        cfg = load_experiment(write_config(BLOBS_INI))
        p = build_problem(cfg)
        assert isinstance(p, MlpProblem)
        assert p.n == 4
        x0 = build_x0(cfg, p)
        assert x0.shape == (p.d,)
        assert np.any(x0 != 0.0)

    def test_batch_size_must_divide(self, write_config, tmp_env):
        cfg = load_experiment(write_config(BLOBS_INI.replace("batch_size = 3", "batch_size = 5")))
        with pytest.raises(ConfigError) as exc:
            build_problem(cfg)
        assert exc.value.field == "mlp.batch_size"

    def test_layer_width_mismatch(self, write_config, tmp_env):
        cfg = load_experiment(write_config(BLOBS_INI.replace("4, 5, 3", "6, 5, 3")))
        with pytest.raises(ConfigError) as exc:
            build_problem(cfg)
        assert exc.value.field == "mlp.layer_sizes"

    def test_missing_mnist_file(self, write_config, tmp_env):
        text = BLOBS_INI.replace("source = blobs", f"source = mnist\nimages = {tmp_env / 'none'}\n"
                                                   f"labels = {tmp_env / 'none'}")
        cfg = load_experiment(write_config(text))
        with pytest.raises(ConfigError) as exc:
            build_problem(cfg)
        assert exc.value.field == "data.images"

    def test_mnist_path_required(self, write_config, tmp_env):
        cfg = load_experiment(write_config(BLOBS_INI.replace("source = blobs", "source = mnist")))
        with pytest.raises(ConfigError) as exc:
            build_problem(cfg)
        assert exc.value.field == "data.images"

    def test_x0_zeros_for_least_squares(self, ls_config):
        cfg = load_experiment(ls_config)
        p = build_problem(cfg)
        assert not np.any(build_x0(cfg, p))

    def test_x0_normal_seeded(self, write_config, tmp_env):
        text = LEAST_SQUARES_INI.replace("seed = 11\n", "seed = 11\nx0 = normal\nx0_seed = 4\n")
        cfg = load_experiment(write_config(text))
        p = build_problem(cfg)
        np.testing.assert_array_equal(build_x0(cfg, p), build_x0(cfg, p))

    def test_x0_init_rejected_for_least_squares(self, write_config, tmp_env):
        text = LEAST_SQUARES_INI.replace("seed = 11\n", "seed = 11\nx0 = init\n")
        with pytest.raises(ConfigError) as exc:
            load_experiment(write_config(text))
        assert exc.value.field == "run.x0"


class TestShippedConfigs:
    """Example configs under configs/ stay loadable."""

    CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

    @pytest.mark.parametrize("name", ["least_squares.ini", "phase_retrieval.ini", "blobs_mlp.ini",
                                      "mnist_mlp.ini"])
    def test_loads(self, name, tmp_env):
        cfg = load_experiment(self.CONFIG_DIR / name)
        assert cfg.output.name == name[:-4]

    @pytest.mark.parametrize("name", ["least_squares.ini", "phase_retrieval.ini", "blobs_mlp.ini"])
    def test_synthetic_problems_build(self, name, tmp_env):
        cfg = load_experiment(self.CONFIG_DIR / name)
        p = build_problem(cfg)
        assert build_x0(cfg, p).shape == (p.d,)

    def test_least_squares_step_below_inverse_lipschitz(self, tmp_env):
        cfg = load_experiment(self.CONFIG_DIR / "least_squares.ini")
        assert cfg.run.eta * build_problem(cfg).lipschitz_bound < 1.0
