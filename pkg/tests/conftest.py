import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rdcc import DiscreteMeasure, MetricAlphabet  # noqa: E402


@pytest.fixture
def line():
    return MetricAlphabet.euclidean(1)


@pytest.fixture
def bern02():
    return DiscreteMeasure([0, 1], [0.8, 0.2], MetricAlphabet.finite(2))
