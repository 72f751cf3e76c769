import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from floodgrid.toys import symmetric_case, symmetric_scenarios, toy_case, toy_scenarios  # noqa: E402


@pytest.fixture
def toy():
    return toy_case()


@pytest.fixture
def toy_sc():
    return toy_scenarios()


@pytest.fixture
def sym():
    return symmetric_case(), symmetric_scenarios()
