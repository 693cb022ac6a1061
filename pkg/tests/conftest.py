import logging
from typing import Optional

import pytest

from fractal_penergy.services.disparity_service import DisparityService
from fractal_penergy.services.homogeneity_service import HomogeneityService
from fractal_penergy.services.measure_service import SelfSimilarMeasure
from fractal_penergy.services.partition_service import PartitionService, builtin_scheme
from fractal_penergy.services.penergy_service import PEnergyService, PLaplaceSolver


class Stack:
    """Services wired without a result store, small restart counts."""

    def __init__(self, name: str, mode: Optional[str] = None, ring_levels=(1, 2), disparity_depth: int = 1):
        self.scheme = builtin_scheme(name, mode)
        self.partition = PartitionService(self.scheme)
        self.measure = SelfSimilarMeasure(self.scheme)
        self.solver = PLaplaceSolver()
        self.penergy = PEnergyService(self.partition, self.solver)
        self.disparity = DisparityService(self.partition, self.measure, restarts=8, seed=0)
        self.homogeneity = HomogeneityService(
            self.penergy,
            self.disparity,
            self.measure,
            ring_levels=ring_levels,
            disparity_depth=disparity_depth,
        )


@pytest.fixture
def interval():
    return Stack("interval2", ring_levels=(3,))


@pytest.fixture
def square():
    return Stack("square2", ring_levels=(3,))


@pytest.fixture
def carpet():
    return Stack("sierpinski-carpet")


@pytest.fixture
def shallow_carpet():
    return Stack("sierpinski-carpet", ring_levels=(1,))


@pytest.fixture
def cli_env(tmp_path, monkeypatch):
    """Point every data directory of a CLI run into tmp_path."""
    monkeypatch.setenv("DATA_DIR", str(tmp_path))
    monkeypatch.delenv("CACHE_DIR", raising=False)
    monkeypatch.delenv("OUT_DIR", raising=False)
    monkeypatch.setenv("LOG_TO_FILE", "false")
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield tmp_path
    root.handlers[:] = handlers
    root.setLevel(level)
