from pathlib import Path

import numpy as np
import pytest

from app.core.config import settings
from app.services.grid import GridCase, dc_jacobian, load_case, parse_case

CASE14_PATH = Path(settings.CASES_DIR) / "ieee14.case"

ADVERSARY_14 = [
    "inj:1", "inj:3", "inj:4", "inj:5",
    "flow:1:2", "flow:2:1", "flow:1:5", "flow:5:1", "flow:2:5",
    "flow:5:2", "flow:2:4", "flow:4:2", "flow:4:3", "flow:3:4",
]
OBSERVED_14 = ADVERSARY_14 + ["inj:2", "flow:4:5", "flow:3:2", "flow:5:6", "flow:4:7", "flow:4:9"]

FRAMING_ADVERSARY_14 = ["inj:4", "flow:1:5", "flow:5:1", "flow:5:2", "flow:4:2", "flow:4:3", "flow:3:4"]
FRAMED_14 = ["inj:1", "inj:3", "inj:5", "flow:1:2", "flow:2:1", "flow:2:5", "flow:2:4"]
FRAMING_OBSERVED_14 = [
    "inj:2", "inj:4", "flow:1:5", "flow:5:1", "flow:5:2", "flow:4:2", "flow:3:4",
    "flow:4:3", "flow:4:5", "flow:3:2", "flow:5:6", "flow:4:7", "flow:4:9",
]

CRITICAL_118 = ["inj:114", "inj:115", "inj:27", "flow:114:115", "flow:115:114", "flow:27:115", "flow:115:27"]
OBSERVED_118 = CRITICAL_118 + ["flow:32:114", "flow:27:32", "flow:27:25", "flow:27:28"]

RING_CASE = """
# four-bus ring
bus 1 1.00 0.00
bus 2 1.00 -0.02
bus 3 1.00 -0.04
bus 4 1.00 -0.01
ref 1
line 1 2 0.01 0.10 1
line 2 3 0.02 0.20 1
line 3 4 0.01 0.15 1
line 4 1 0.02 0.25 1
sensor inj 1
sensor flow 1 2
sensor flow 2 3
sensor inj 3
sensor flow 3 4
sensor flow 4 1
"""


@pytest.fixture(scope="session")
def case14() -> GridCase:
    return load_case(CASE14_PATH)


@pytest.fixture(scope="session")
def H14(case14):
    return dc_jacobian(case14)


@pytest.fixture(scope="session")
def ring_case() -> GridCase:
    return parse_case(RING_CASE, name="ring")


@pytest.fixture(scope="session")
def case118() -> GridCase:
    pytest.importorskip("pypower")
    return load_case("pypower:case118").with_reference(27)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
