"""Exactly invertible stand-ins for a VAE encoder/decoder."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import ConfigError, DimensionError, downsample_mask


@dataclass(frozen=True)
class CodecConfig:
    kind: str = "identity"  # identity | patchify
    patch_factor: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("identity", "patchify"):
            raise ConfigError(f"unknown codec kind {self.kind!r}")
        if self.kind == "patchify" and self.patch_factor < 1:
            raise ConfigError("patch_factor must be >= 1")

    @property
    def factor(self) -> int:
        return 1 if self.kind == "identity" else self.patch_factor

    @property
    def channel_out(self) -> int:
        return 3 * self.factor**2


@lru_cache(maxsize=16)
def rotation(channels: int, seed: int) -> np.ndarray:
    """Seeded orthonormal ``channels x channels`` matrix (QR of a Gaussian draw)."""
    g = np.random.default_rng(seed).standard_normal((channels, channels))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    q.setflags(write=False)
    return q


def encode(img: np.ndarray, cfg: CodecConfig = CodecConfig()) -> np.ndarray:
    """Pixel image ``(H, W, 3)`` in [0, 1] -> latent ``(C, H/f, W/f)`` in roughly [-1, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected an (H, W, 3) image, got {img.shape}")
    x = 2.0 * img - 1.0
    if cfg.kind == "identity":
        return np.ascontiguousarray(x.transpose(2, 0, 1))
    f = cfg.factor
    h, w, _ = x.shape
    if h % f or w % f:
        raise DimensionError(f"image {h}x{w} not divisible by patch factor {f}")
    blocks = x.reshape(h // f, f, w // f, f, 3).transpose(0, 2, 1, 3, 4).reshape(h // f, w // f, -1)
    z = blocks @ rotation(cfg.channel_out, cfg.seed).T
    return np.ascontiguousarray(z.transpose(2, 0, 1))


def decode(z: np.ndarray, cfg: CodecConfig = CodecConfig()) -> np.ndarray:
    """Inverse of :func:`encode`. The result is not clamped."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3 or z.shape[0] != cfg.channel_out:
        raise DimensionError(f"latent {z.shape} does not match codec with {cfg.channel_out} channels")
    if cfg.kind == "identity":
        x = z.transpose(1, 2, 0)
    else:
        f = cfg.factor
        c, hl, wl = z.shape
        blocks = z.transpose(1, 2, 0) @ rotation(c, cfg.seed)
        x = blocks.reshape(hl, wl, f, f, 3).transpose(0, 2, 1, 3, 4).reshape(hl * f, wl * f, 3)
    return np.ascontiguousarray((x + 1.0) / 2.0)


def latent_mask(pixel_mask: np.ndarray, cfg: CodecConfig = CodecConfig()) -> np.ndarray:
    return downsample_mask(pixel_mask, cfg.factor)
