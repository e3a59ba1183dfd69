import numpy as np
import pytest

from marf.images import ImageBuffer, save_image


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_image(array) -> ImageBuffer:
    return ImageBuffer.from_array(np.asarray(array, dtype=np.float32))


def write_png(path, array) -> str:
    save_image(make_image(array), path)
    return str(path)


def tinted_noise(rng, size, tint, lo=0.3, hi=1.0):
    """Value-noise frame: a flat color scaled by per-pixel brightness.

    Brightness scaling leaves per-pixel saturation constant, which keeps the
    histogram filter statistics of constructed corpora controllable.
    """
    brightness = rng.uniform(lo, hi, (size, size))
    return np.clip(brightness[:, :, None] * np.asarray(tint)[None, None, :], 0, 1)
