import os

for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

from pathlib import Path

import numpy as np
import pytest

from harmfilt.grid_model import (
    Branch,
    Bus,
    NetworkCase,
    StudyCase,
    StudyConfig,
    attach_harmonic_config,
    parse_cdf,
)

DATA = Path(__file__).parent / "data"
REPO_DATA = Path(__file__).resolve().parents[1] / "data"


@pytest.fixture(scope="session")
def case118():
    return parse_cdf((REPO_DATA / "case118.cdf").read_bytes())


@pytest.fixture(scope="session")
def study118(case118):
    return attach_harmonic_config(case118, StudyConfig())


def make_two_bus(p_load=100.0, q_load=0.0, x=0.1, r=0.0, shunt_b2=0.0):
    """Slack feeding one PQ bus over a single line."""
    buses = (
        Bus(1, "slack", 138.0, "slack", 0, 0, 0, 0, 0.0, 0.0, 1.0),
        Bus(2, "load", 138.0, "PQ", p_load, q_load, 0, 0, 0.0, shunt_b2, 1.0),
    )
    branches = (Branch(1, 2, r, x, 0.0),)
    return NetworkCase("two-bus", 100.0, buses, branches)


def make_study(case, **config_kwargs) -> StudyCase:
    return attach_harmonic_config(case, StudyConfig(**config_kwargs))


THREE_BUS_CDF = """\
 08/10/26 HARMFILT TEST        100.00 2026 S THREE BUS FIXTURE
BUS DATA FOLLOWS                            3 ITEMS
   1 SLACK ONE     1  1  3  1.02      0        0         0       0       0     138   1.02       0       0       0       0    0
   2 MID TWO       1  1  0     1      0       60      22.5       0       0     138      1       0       0       0  0.125    0
   3 END THREE     1  1  0     1      0       45        18       0       0     138      1       0       0       0       0    0
-999
BRANCH DATA FOLLOWS                         2 ITEMS
   1    2  1  1 1 0   0.02      0.08      0.024    0                                 0      0       0       0      0       0       0
   2    3  1  1 1 0   0.025       0.1       0.03    0                                 0      0       0       0      0       0       0
-999
END OF DATA
"""


@pytest.fixture(scope="session")
def three_bus_case():
    return parse_cdf(THREE_BUS_CDF)


@pytest.fixture(scope="session")
def three_bus_study(three_bus_case):
    return attach_harmonic_config(three_bus_case, StudyConfig())


def make_five_bus() -> NetworkCase:
    """Meshed 5-bus case with 3 loads; used by the moment/MCS oracles."""
    buses = (
        Bus(1, "gen", 138.0, "slack", 0, 0, 0, 0, 0.0, 0.0, 1.01),
        Bus(2, "ld-a", 138.0, "PQ", 80.0, 30.0, 0, 0, 0.0, 0.0, 1.0),
        Bus(3, "ld-b", 138.0, "PQ", 50.0, 15.0, 0, 0, 0.0, 0.15, 1.0),
        Bus(4, "sta", 138.0, "PQ", 0.0, 0.0, 0, 0, 0.0, 0.20, 1.0),
        Bus(5, "ld-c", 138.0, "PQ", 35.0, 12.0, 0, 0, 0.0, 0.0, 1.0),
    )
    branches = (
        Branch(1, 2, 0.01, 0.06, 0.02),
        Branch(2, 3, 0.02, 0.09, 0.03),
        Branch(1, 4, 0.015, 0.07, 0.02),
        Branch(4, 5, 0.02, 0.11, 0.025),
        Branch(3, 5, 0.025, 0.12, 0.03),
        Branch(2, 4, 0.02, 0.08, 0.02),
    )
    return NetworkCase("five-bus", 100.0, buses, branches)


@pytest.fixture(scope="session")
def five_bus_study():
    return make_study(make_five_bus())


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(42)
