"""PNG import/export for images and masks.

Images live in [-1, 1] as (3, H, W) arrays and are quantised with a
round-half-up mapping to 0..255 so that exports are bit-exact and
reproducible. Masks are single-channel: exports write 0 or 255, imports
binarise at 128.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def image_to_bytes(image: np.ndarray) -> np.ndarray:
    """Map a [-1, 1] image channel-first array to uint8 HWC."""
    clipped = np.clip(image, -1.0, 1.0)
    scaled = (clipped + 1.0) * 0.5 * 255.0
    quantised = np.floor(scaled + 0.5).astype(np.uint8)  # round half up
    return np.transpose(quantised, (1, 2, 0))


def bytes_to_image(pixels: np.ndarray) -> np.ndarray:
    """Inverse of image_to_bytes up to quantisation."""
    chw = np.transpose(pixels.astype(np.float64), (2, 0, 1))
    return chw / 255.0 * 2.0 - 1.0


def save_image(image: np.ndarray, path) -> None:
    Image.fromarray(image_to_bytes(image), mode="RGB").save(Path(path))


def load_image(path) -> np.ndarray:
    pixels = np.asarray(Image.open(Path(path)).convert("RGB"))
    return bytes_to_image(pixels)


def save_mask(grid: np.ndarray, path) -> None:
    """Write a binary mask as an 8-bit grayscale PNG (0 or 255)."""
    data = np.where(np.asarray(grid) >= 0.5, 255, 0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(Path(path))


def load_mask(path) -> np.ndarray:
    """Read an 8-bit grayscale PNG, binarising at 128."""
    data = np.asarray(Image.open(Path(path)).convert("L"))
    return (data >= 128).astype(np.float64)
