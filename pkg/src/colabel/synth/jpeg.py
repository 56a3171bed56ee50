"""
JPEG round-trips used as the compression ensemble perturbation.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from colabel.utils.exceptions import DatasetError


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    """
    Encode an H×W×3 uint8 image as baseline JPEG at ``quality`` and decode it.

    Raises:
        DatasetError: If quality is outside [1, 100] or the codec fails
    """
    if not 1 <= quality <= 100:
        raise DatasetError("JPEG quality must be in [1, 100]", context={"quality": quality})
    buffer = io.BytesIO()
    try:
        Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buffer, format="JPEG", quality=quality)
        buffer.seek(0)
        with Image.open(buffer) as decoded:
            return np.asarray(decoded.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, ValueError) as e:
        raise DatasetError(
            "JPEG codec failure",
            context={"quality": quality, "shape": np.shape(image)},
            original_error=e,
        ) from e


def psnr(reference: np.ndarray, distorted: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for 8-bit images; ``inf`` when identical."""
    mse = np.mean((reference.astype(np.float64) - distorted.astype(np.float64)) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(255.0**2 / mse))
