"""Starpath experiment configuration loader.

Reads an INI-style experiment file (``[section]`` headers, ``key = value``
lines, ``#`` comments), merges it over built-in defaults, and applies
environment overrides.

Environment variables follow the pattern STARPATH_<SECTION>_<KEY> in
upper-case, e.g. STARPATH_RUN_EPOCHS=50. STARPATH_OUT overrides
``output.dir``.

Seeds have no defaults: every seed a run consumes must be written in the
file (or set through the environment), so a config fully determines its
trace.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from starpath.constants import (
    DEFAULT_EPS_LOSS,
    DEFAULT_RECORD_EVERY,
    ENV_MNIST_DIR,
    ENV_OUTPUT_DIR,
    ENV_PREFIX,
    SEED_LIMIT,
    TRACE_SUFFIX,
)
from starpath.dataio import Dataset, load_idx, make_blobs, subset
from starpath.errors import ConfigError, DimensionMismatchError, IdxFormatError
from starpath.model import MlpProblem, MlpSpec, init_params
from starpath.numcore import ParamVector, zeros
from starpath.problems import FiniteSumProblem, make_consistent_least_squares, make_phase_retrieval
from starpath.sgdrun import RecordPolicy, ReferenceMode, RunConfig

logger = logging.getLogger("starpath")

FAMILIES = ("least_squares", "phase_retrieval", "mlp")
DATA_SOURCES = ("mnist", "blobs")
X0_KINDS = ("auto", "zeros", "normal", "init")

MNIST_IMAGES = "train-images-idx3-ubyte"
MNIST_LABELS = "train-labels-idx1-ubyte"

# None marks a value with no default (seeds); its type is int.
_DEFAULTS: Dict[str, Dict[str, object]] = {
    "problem": {
        "family": "least_squares",
        "n": 50,
        "d": 100,
        "seed": None,
    },
    "mlp": {
        "layer_sizes": [784, 256, 10],
        "activation": "relu",
        "loss": "softmax_crossentropy",
        "init_seed": None,
        "batch_size": 20,
    },
    "data": {
        "source": "mnist",
        "images": "",
        "labels": "",
        "subset": 0,
        "balanced": False,
        "subset_seed": None,
        "n_per_class": 20,
        "classes": 3,
        "d_in": 20,
        "separation": 10.0,
        "seed": None,
    },
    "run": {
        "eta": 0.01,
        "epochs": 100,
        "seed": None,
        "record": "every_mth",
        "record_every": DEFAULT_RECORD_EVERY,
        "x0": "auto",
        "x0_scale": 1.0,
        "x0_seed": None,
    },
    "analysis": {
        "reference": "final_iterate",
        "reference_epoch": 0,
        "eps_loss": DEFAULT_EPS_LOSS,
        "audits": True,
        "subsequences": True,
        "alternate_epochs": [],
        "lipschitz_trials": 3,
        "workers": 1,
    },
    "output": {
        "dir": "runs",
        "name": "trace",
    },
}


# ── Frozen dataclass hierarchy ────────────────────────────────────────

@dataclass(frozen=True)
class ProblemSection:
    family: str
    n: int
    d: int
    seed: Optional[int]


@dataclass(frozen=True)
class MlpSection:
    layer_sizes: Tuple[int, ...]
    activation: str
    loss: str
    init_seed: Optional[int]
    batch_size: int


@dataclass(frozen=True)
class DataSection:
    source: str
    images: str
    labels: str
    subset: int
    balanced: bool
    subset_seed: Optional[int]
    n_per_class: int
    classes: int
    d_in: int
    separation: float
    seed: Optional[int]


@dataclass(frozen=True)
class RunSection:
    eta: float
    epochs: int
    seed: int
    record: str
    record_every: int
    x0: str
    x0_scale: float
    x0_seed: Optional[int]


@dataclass(frozen=True)
class AnalysisSection:
    reference: str
    reference_epoch: int
    eps_loss: float
    audits: bool
    subsequences: bool
    alternate_epochs: Tuple[int, ...]
    lipschitz_trials: int
    workers: int

    @property
    def reference_mode(self) -> ReferenceMode:
        return ReferenceMode(self.reference, self.reference_epoch)


@dataclass(frozen=True)
class OutputSection:
    dir: str
    name: str

    @property
    def trace_path(self) -> Path:
        return Path(self.dir) / f"{self.name}{TRACE_SUFFIX}"

    @property
    def report_dir(self) -> Path:
        return Path(self.dir) / f"{self.name}-report"


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSection
    mlp: MlpSection
    data: DataSection
    run: RunSection
    analysis: AnalysisSection
    output: OutputSection
    source: Optional[Path] = None

    def run_config(self) -> RunConfig:
        return RunConfig(
            eta=self.run.eta,
            epochs=self.run.epochs,
            seed=self.run.seed,
            record_policy=RecordPolicy(self.run.record, self.run.record_every),
            reference_mode=self.analysis.reference_mode,
        )


# ── Parser (INI / TOML subset) ────────────────────────────────────────

Value = Union[str, int, float, bool, List[object]]


def _parse_scalar(token: str) -> Value:
    if token.lower() == "true":
        return True
    if token.lower() == "false":
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        logger.debug("Could not parse %r as a number, treating as string", token)
    return token


def _parse_value(raw: str) -> Value:
    """Parse a value with type detection.

    Handles quoted strings (preserving ``#`` inside), booleans, integers
    (including negative), floats, comma-separated lists with optional
    brackets, and bare strings.
    """
    stripped = raw.strip()

    # Quoted string: contents verbatim, no comment stripping
    if len(stripped) >= 2:
        if (stripped[0] == '"' and stripped[-1] == '"') or \
           (stripped[0] == "'" and stripped[-1] == "'"):
            return stripped[1:-1]

    if "#" in stripped:
        stripped = stripped[:stripped.index("#")].rstrip()

    bracketed = stripped.startswith("[") and stripped.endswith("]")
    if bracketed:
        stripped = stripped[1:-1].strip()
    if bracketed or "," in stripped:
        return [_parse_scalar(part.strip()) for part in stripped.split(",") if part.strip()]

    return _parse_scalar(stripped)


def _parse_ini(path: Path) -> Dict[str, Dict[str, Value]]:
    result: Dict[str, Dict[str, Value]] = {}
    current: Optional[Dict[str, Value]] = None

    for lineno, raw_line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue

        if line.startswith("[") and line.endswith("]"):
            current = result.setdefault(line[1:-1].strip(), {})
            continue

        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw_line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        if current is None:
            raise ConfigError(key, f"line {lineno} is outside any [section]")
        current[key] = _parse_value(raw_value)

    return result


# ── Type coercion ─────────────────────────────────────────────────────

def _coerce(name: str, default: object, value: object) -> object:
    """Coerce *value* to the type of *default*; None defaults are ints."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("1", "true", "yes", "0", "false", "no"):
            return value.lower() in ("1", "true", "yes")
        raise ConfigError(name, f"expected a boolean, got {value!r}")
    if default is None or isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(name, f"expected an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, bool):
            raise ConfigError(name, f"expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(name, f"expected a number, got {value!r}") from None
    if isinstance(default, list):
        items = value if isinstance(value, list) else _parse_value(str(value))
        items = items if isinstance(items, list) else [items]
        return tuple(_coerce(name, 0, item) for item in items)
    if isinstance(value, (list, bool)):
        raise ConfigError(name, f"expected a string, got {value!r}")
    return str(value)


def _apply_env_overrides(merged: Dict[str, Dict[str, object]]) -> None:
    """Apply STARPATH_<SECTION>_<KEY> environment variables."""
    for section_name, section_dict in merged.items():
        for key in list(section_dict.keys()):
            env_name = f"{ENV_PREFIX}_{section_name.upper()}_{key.upper()}"
            env_val = os.environ.get(env_name)
            if env_val is not None:
                default = _DEFAULTS[section_name][key]
                section_dict[key] = _coerce(env_name, default, _parse_value(env_val)
                                            if not isinstance(default, str) else env_val)
    out_dir = os.environ.get(ENV_OUTPUT_DIR)
    if out_dir:
        merged["output"]["dir"] = out_dir


# ── Validation ────────────────────────────────────────────────────────

def _require(value: object, field: str, why: str) -> None:
    if value is None:
        raise ConfigError(field, f"required {why}")


def _require_seed(value: Optional[int], field: str, why: str) -> None:
    _require(value, field, why)
    if not 0 <= value < SEED_LIMIT:
        raise ConfigError(field, f"must lie in [0, 2**63); got {value}")


def _one_of(value: str, choices: Tuple[str, ...], field: str) -> None:
    if value not in choices:
        raise ConfigError(field, f"must be one of {', '.join(choices)}; got {value!r}")


def _validate(cfg: ExperimentConfig) -> None:
    _one_of(cfg.problem.family, FAMILIES, "problem.family")
    _require_seed(cfg.run.seed, "run.seed", "(the epoch permutations are keyed by it)")
    _one_of(cfg.run.record, ("epoch_boundaries", "every_mth", "full"), "run.record")
    _one_of(cfg.run.x0, X0_KINDS, "run.x0")
    _one_of(cfg.analysis.reference, ("final_iterate", "planted", "epoch_end"), "analysis.reference")
    if cfg.run.eta <= 0:
        raise ConfigError("run.eta", "must be positive")
    if cfg.run.epochs < 1:
        raise ConfigError("run.epochs", "must be >= 1")
    if cfg.run.record_every < 1:
        raise ConfigError("run.record_every", "must be >= 1")
    if cfg.run.x0 == "normal":
        _require_seed(cfg.run.x0_seed, "run.x0_seed", "when run.x0 = normal")
    if cfg.analysis.reference == "epoch_end" and cfg.analysis.reference_epoch > cfg.run.epochs:
        raise ConfigError("analysis.reference_epoch", f"exceeds run.epochs = {cfg.run.epochs}")
    for e in cfg.analysis.alternate_epochs:
        if not 0 <= e <= cfg.run.epochs:
            raise ConfigError("analysis.alternate_epochs", f"epoch {e} outside [0, {cfg.run.epochs}]")
    if cfg.analysis.workers < 1:
        raise ConfigError("analysis.workers", "must be >= 1")

    if cfg.problem.family != "mlp":
        _require_seed(cfg.problem.seed, "problem.seed", f"for family {cfg.problem.family}")
        if cfg.run.x0 == "init":
            raise ConfigError("run.x0", "init applies only to family = mlp")
        return

    _require_seed(cfg.mlp.init_seed, "mlp.init_seed", "for family = mlp")
    _one_of(cfg.mlp.activation, ("relu", "tanh"), "mlp.activation")
    _one_of(cfg.mlp.loss, ("mse", "softmax_crossentropy"), "mlp.loss")
    if len(cfg.mlp.layer_sizes) < 2:
        raise ConfigError("mlp.layer_sizes", "needs at least input and output sizes")
    _one_of(cfg.data.source, DATA_SOURCES, "data.source")
    if cfg.data.source == "blobs":
        _require_seed(cfg.data.seed, "data.seed", "for data.source = blobs")
    if cfg.data.subset:
        _require_seed(cfg.data.subset_seed, "data.subset_seed", "when data.subset is set")


# ── Public API ────────────────────────────────────────────────────────

def load_experiment(path: Union[str, Path]) -> ExperimentConfig:
    """Load and validate an experiment config.

    Priority (highest wins):
    1. Environment variables (STARPATH_RUN_EPOCHS etc., STARPATH_OUT)
    2. The config file
    3. Built-in defaults
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file not found: {path}")

    merged: Dict[str, Dict[str, object]] = {section: dict(values) for section, values in _DEFAULTS.items()}
    for section, values in _parse_ini(path).items():
        if section not in _DEFAULTS:
            raise ConfigError(section, "unknown section")
        for key, value in values.items():
            name = f"{section}.{key}"
            if key not in _DEFAULTS[section]:
                raise ConfigError(name, "unknown key")
            merged[section][key] = _coerce(name, _DEFAULTS[section][key], value)

    _apply_env_overrides(merged)
    for section in ("mlp", "analysis"):
        for key, default in _DEFAULTS[section].items():
            if isinstance(default, list) and not isinstance(merged[section][key], tuple):
                merged[section][key] = tuple(default)

    cfg = ExperimentConfig(
        problem=ProblemSection(**merged["problem"]),
        mlp=MlpSection(**merged["mlp"]),
        data=DataSection(**merged["data"]),
        run=RunSection(**merged["run"]),
        analysis=AnalysisSection(**merged["analysis"]),
        output=OutputSection(**merged["output"]),
        source=path,
    )
    _validate(cfg)
    logger.debug("Loaded experiment config %s (family %s)", path, cfg.problem.family)
    return cfg


def _mnist_paths(data: DataSection) -> Tuple[Path, Path]:
    images, labels = data.images, data.labels
    mnist_dir = os.environ.get(ENV_MNIST_DIR)
    if mnist_dir:
        root = Path(mnist_dir)
        images = images or str(root / MNIST_IMAGES)
        labels = labels or str(root / MNIST_LABELS)
    for value, field in ((images, "data.images"), (labels, "data.labels")):
        if not value:
            raise ConfigError(field, f"required for data.source = mnist (or set {ENV_MNIST_DIR})")
    resolved = []
    for value, field in ((images, "data.images"), (labels, "data.labels")):
        candidate = Path(value)
        if not candidate.is_file() and Path(value + ".gz").is_file():
            candidate = Path(value + ".gz")
        if not candidate.is_file():
            raise ConfigError(field, f"file not found: {value}")
        resolved.append(candidate)
    return resolved[0], resolved[1]


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    data = cfg.data
    if data.source == "blobs":
        ds = make_blobs(data.n_per_class, data.classes, data.d_in, data.separation, data.seed)
    else:
        images, labels = _mnist_paths(data)
        try:
            ds = load_idx(images, labels)
        except IdxFormatError as exc:
            raise ConfigError("data.images", str(exc)) from exc
    if data.subset:
        try:
            ds = subset(ds, data.subset, data.subset_seed, balanced=data.balanced)
        except ValueError as exc:
            raise ConfigError("data.subset", str(exc)) from exc
    return ds


def mlp_spec(cfg: ExperimentConfig) -> MlpSpec:
    return MlpSpec(
        layer_sizes=cfg.mlp.layer_sizes,
        activation=cfg.mlp.activation,
        loss_kind=cfg.mlp.loss,
        init_seed=cfg.mlp.init_seed,
    )


def build_problem(cfg: ExperimentConfig) -> FiniteSumProblem:
    """Instantiate the finite-sum problem the config describes."""
    family = cfg.problem.family
    if family == "least_squares":
        try:
            return make_consistent_least_squares(cfg.problem.n, cfg.problem.d, cfg.problem.seed)
        except ValueError as exc:
            raise ConfigError("problem.d", str(exc)) from exc
    if family == "phase_retrieval":
        return make_phase_retrieval(cfg.problem.n, cfg.problem.d, cfg.problem.seed)
    dataset = build_dataset(cfg)
    try:
        return MlpProblem(mlp_spec(cfg), dataset, cfg.mlp.batch_size)
    except DimensionMismatchError as exc:
        raise ConfigError("mlp.layer_sizes", str(exc)) from exc
    except ValueError as exc:
        field = "mlp.batch_size" if "batch_size" in str(exc) else "mlp.layer_sizes"
        raise ConfigError(field, str(exc)) from exc


def build_x0(cfg: ExperimentConfig, problem: FiniteSumProblem) -> ParamVector:
    kind = cfg.run.x0
    if kind == "auto":
        kind = "init" if isinstance(problem, MlpProblem) else "zeros"
    if kind == "zeros":
        return zeros(problem.d)
    if kind == "normal":
        rng = np.random.default_rng(cfg.run.x0_seed)
        return rng.normal(0.0, cfg.run.x0_scale, size=problem.d)
    if not isinstance(problem, MlpProblem):
        raise ConfigError("run.x0", "init applies only to family = mlp")
    return init_params(problem.spec)
