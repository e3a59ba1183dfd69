"""Image buffers and codecs shared by the whole pipeline.

All pixel data lives in float32 arrays normalized to [0, 1]; 8-bit files are
mapped by division with 255 on load. Buffers are frozen after construction so
they can be shared read-only across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, FormatError

# Rec. 601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)

_SUPPORTED_MODES = {
    "L": "L",
    "LA": "L",
    "I;16": None,  # rejected: 16-bit rasters are out of scope
    "P": "RGB",
    "RGB": "RGB",
    "RGBA": "RGB",
}


@dataclass(frozen=True)
class ImageBuffer:
    """H×W×C float32 pixel array with intensities in [0, 1], C in {1, 3}."""

    width: int
    height: int
    channels: int
    data: np.ndarray  # shape (H, W, C), row-major

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise FormatError(f"channel count must be 1 or 3, got {self.channels}")
        expected = (self.height, self.width, self.channels)
        if self.data.shape != expected:
            raise FormatError(f"data shape {self.data.shape} != {expected}")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise FormatError("intensities must lie in [0, 1]")

    @classmethod
    def from_array(cls, data: np.ndarray) -> "ImageBuffer":
        """Wrap an (H, W) or (H, W, C) array, copying to frozen float32."""
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, data=arr)

    @property
    def pixel_count(self) -> int:
        return self.width * self.height


def load_image(path) -> ImageBuffer:
    """Decode a PNG or JPEG file into a normalized buffer.

    Alpha channels are dropped; palette images are expanded to RGB.
    Raises DecodeError for unreadable files and FormatError for unsupported
    channel layouts.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            mode = im.mode
            target = _SUPPORTED_MODES.get(mode)
            if target is None:
                raise FormatError(f"unsupported channel layout {mode!r} in {path}")
            if mode != target:
                im = im.convert(target)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except FormatError:
        raise
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    return ImageBuffer.from_array(arr)


def save_image(img: ImageBuffer, path) -> None:
    """Write a buffer as an 8-bit PNG; round-trips within 1/255 per channel."""
    path = Path(path)
    quantized = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    if img.channels == 1:
        pil = Image.fromarray(quantized[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(quantized, mode="RGB")
    try:
        pil.save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def to_grayscale(img: ImageBuffer) -> ImageBuffer:
    """Collapse RGB to luma (0.299, 0.587, 0.114); identity for 1-channel."""
    if img.channels == 1:
        return ImageBuffer.from_array(img.data.copy())
    gray = img.data.astype(np.float64) @ LUMA_WEIGHTS
    return ImageBuffer.from_array(np.clip(gray, 0.0, 1.0))
