"""8-bit grayscale image export/import (PGM or PNG, chosen by suffix)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_gray(path: str | Path, img: np.ndarray, normalize: bool = False) -> Path:
    path = Path(path)
    data = np.asarray(img, dtype=float)
    if normalize and data.max() > 0:
        data = data / data.max()
    Image.fromarray(to_uint8(data), mode="L").save(path)
    return path


def read_gray(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=float) / 255.0
