"""Shared fixtures for starpath tests."""

import os
import sys
from pathlib import Path

_src_dir = str(Path(__file__).resolve().parent.parent / "src")
if _src_dir not in sys.path:
    sys.path.insert(0, _src_dir)

import numpy as np
import pytest

from starpath.problems import QuadraticProblem, make_consistent_least_squares
from starpath.sgdrun import RecordPolicy, RunConfig, run


@pytest.fixture
def tmp_env(tmp_path, monkeypatch):
    """Provide a temporary directory and clean environment for tests.

    Sets CWD to tmp_path and clears every STARPATH_ env var.
    """
    monkeypatch.chdir(tmp_path)
    for name in list(os.environ):
        if name.startswith("STARPATH_"):
            monkeypatch.delenv(name, raising=False)
    return tmp_path


@pytest.fixture
def write_config(tmp_path):
    """Write an experiment config file and return its path."""

    def _write(content: str, name: str = "experiment.ini") -> Path:
        path = tmp_path / name
        path.write_text(content, encoding="utf-8")
        return path

    return _write


@pytest.fixture
def quad1d():
    """l(x) = x^2 / 2, a single 1-D component minimized at 0."""
    return QuadraticProblem([1.0], [[0.0]])


@pytest.fixture
def ls_small():
    return make_consistent_least_squares(6, 10, seed=3)


@pytest.fixture
def ls_trace(ls_small):
    """Fully recorded 15-epoch run on ``ls_small`` with eta = 0.5 / L."""
    cfg = RunConfig(
        eta=0.5 / ls_small.lipschitz_bound,
        epochs=15,
        seed=11,
        record_policy=RecordPolicy("full"),
    )
    return run(ls_small, np.zeros(ls_small.d), cfg)


LEAST_SQUARES_INI = """\
[problem]
family = least_squares
n = 6
d = 10
seed = 3

[run]
eta = 0.02
epochs = 12
seed = 11
record = every_mth
record_every = 4

[analysis]
reference = planted
"""


@pytest.fixture
def ls_config(write_config, tmp_env):
    """Least-squares config writing into ``tmp_env/runs``."""
    return write_config(LEAST_SQUARES_INI)
