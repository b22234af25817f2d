import numpy as np
import pytest

from relight.imaging import UNIT, ImageTensor


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_unit_image(rng, height=16, width=16):
    return ImageTensor(
        rng.random((3, height, width), dtype=np.float32), UNIT
    )


def constant_image(value, height=16, width=16, range_tag=UNIT):
    data = np.full((3, height, width), value, dtype=np.float32)
    return ImageTensor(data, range_tag)
