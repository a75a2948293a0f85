import os

# progress bars off before settings is imported anywhere
os.environ.setdefault("LOCALTIME_PROGRESS", "0")

import numpy as np
import pytest

from walk_models import get_law


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def simple():
    return get_law("simple")


@pytest.fixture
def lazy():
    return get_law("lazy")


@pytest.fixture
def wide4():
    return get_law("wide4")
