"""Image and mask files: PNG/PPM colour images, PGM/PNG masks thresholded at 128."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .core import ComposerError

MASK_THRESHOLD = 128


class ImageFileError(ComposerError, OSError):
    pass


def _open(path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
        return img
    except FileNotFoundError:
        raise ImageFileError(f"no such file: {path}") from None
    except OSError as e:
        raise ImageFileError(f"cannot read image {path}: {e}") from None


def read_image(path) -> np.ndarray:
    """``(H, W, 3)`` float64 in [0, 1]."""
    return np.asarray(_open(path).convert("RGB"), dtype=np.float64) / 255.0


def read_mask(path) -> np.ndarray:
    return np.asarray(_open(path).convert("L")) >= MASK_THRESHOLD


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and quantise; this is the only place values get clamped."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pnm") else "PNG"
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format=fmt)


def write_gray(path, arr: np.ndarray) -> None:
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".pgm", ".pnm") else "PNG"
    Image.fromarray(to_uint8(arr), mode="L").save(path, format=fmt)


def write_mask(path, mask: np.ndarray) -> None:
    write_gray(path, np.asarray(mask, dtype=np.float64))
