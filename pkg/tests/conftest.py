import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: list[str] = []


def random_mask(rng, shape, density=None):
    """Blobby random mask: thresholded smoothed noise, occasionally sparse speckle."""
    from scipy import ndimage

    if density is not None:
        return rng.random(shape) < density
    field = ndimage.gaussian_filter(rng.normal(size=shape), sigma=rng.uniform(1.0, 4.0))
    return field > rng.uniform(-0.3, 0.3) * field.std()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
