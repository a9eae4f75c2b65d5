"""Pytest configuration and shared fixtures."""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from curvatlas.curves import CurveConfig, PolyCurve
from curvatlas.generators import gen_fixture
from curvatlas.storage import SQLiteStorage


@pytest.fixture
def storage():
    """Create a temporary storage instance for testing.

    This is the base fixture for all storage-dependent tests.
    Use this when you need an empty database.
    """
    with tempfile.TemporaryDirectory() as tmpdir:
        db_path = Path(tmpdir) / "test.db"
        yield SQLiteStorage(db_path)


@pytest.fixture
def unit_segment():
    """The segment (0,0)-(1,0) as a single leg."""
    return PolyCurve([[0.0, 0.0], [1.0, 0.0]])


@pytest.fixture
def koch6():
    """Koch curve of depth 6 (4096 legs of length 3^-6)."""
    return gen_fixture("koch", 6)


@pytest.fixture
def koch7():
    """Koch curve of depth 7."""
    return gen_fixture("koch", 7)


@pytest.fixture
def hairpin_config():
    """Hairpin doubling back at width 2^-4, refined to cutoff 2^-8."""
    return CurveConfig.from_curves([gen_fixture("hairpin")], 2.0**-8)


@pytest.fixture
def random_polylines():
    """Small random polylines in the unit square, seeded."""
    rng = np.random.default_rng(2024)
    curves = []
    for _ in range(40):
        n = int(rng.integers(3, 11))
        curves.append(PolyCurve.from_points(rng.random((n, 2))))
    return curves


@pytest.fixture
def write_ini(tmp_path):
    """Write an experiment config file and return its path."""

    def _write(text: str, name: str = "experiment.ini") -> Path:
        path = tmp_path / name
        path.write_text(text)
        return path

    return _write


@pytest.fixture
def line_lambda_ini(write_ini, tmp_path):
    """lambda_scan config over a horizontal line through the box center."""
    return write_ini(
        f"""
[experiment]
kind = lambda_scan
trials = 2
seed = 7
output = {tmp_path / "lambda.csv"}

[generator]
kind = fixture
fixture = line
start = 0, 0.5
end = 1, 0.5
depth = 4

[scales]
ratios = 0.25, 0.5, 0.75
k = 2
outer = 0.4
"""
    )
