"""Shared mask geometry and the mapping between spatial grids and attention tokens.

Latents are ``(C, H, W)`` float arrays, pixel images ``(H, W, 3)`` arrays in
[0, 1], and masks ``(H, W)`` boolean arrays. Flattening is row-major
everywhere, so token ``i`` of a level is cell ``divmod(i, W)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ComposerError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ComposerError, ValueError):
    pass


class ConfigError(ComposerError, ValueError):
    pass


class EmptyObjectError(ComposerError, ValueError):
    pass


class PlanError(ComposerError, IndexError):
    pass


class SequencingError(ComposerError, RuntimeError):
    pass


def as_mask(mask) -> np.ndarray:
    """Coerce ``mask`` to a 2-D boolean array, rejecting non-binary values."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise DimensionError(f"mask must be 2-D, got shape {m.shape}")
    if m.dtype != bool:
        if not np.isin(m, (0, 1)).all():
            raise DimensionError("mask cells must be exactly 0 or 1")
        m = m.astype(bool)
    return m


def check_containment(m_obj, m_fg) -> None:
    m_obj, m_fg = as_mask(m_obj), as_mask(m_fg)
    if m_obj.shape != m_fg.shape:
        raise DimensionError(f"mask shapes differ: M_obj {m_obj.shape} vs M_fg {m_fg.shape}")
    if np.any(m_obj & ~m_fg):
        raise DimensionError("mask containment violated: M_obj is not contained in M_fg")


def downsample_mask(mask, factor: int) -> np.ndarray:
    """OR-pool ``mask`` by ``factor``: a coarse cell is set if any covered cell is."""
    m = as_mask(mask)
    h, w = m.shape
    if factor < 1 or h % factor or w % factor:
        raise DimensionError(f"factor {factor} does not divide mask shape {m.shape}")
    if factor == 1:
        return m.copy()
    return m.reshape(h // factor, factor, w // factor, factor).any(axis=(1, 3))


@dataclass(frozen=True)
class TokenIndexMap:
    """Flattened positions of the object at one attention resolution."""

    resolution: tuple[int, int]
    object_positions: np.ndarray

    @classmethod
    def from_mask(cls, mask) -> "TokenIndexMap":
        m = as_mask(mask)
        pos = np.flatnonzero(m.ravel())
        pos.setflags(write=False)
        return cls(resolution=m.shape, object_positions=pos)

    @property
    def n(self) -> int:
        return int(self.object_positions.size)

    @property
    def num_tokens(self) -> int:
        return self.resolution[0] * self.resolution[1]

    def background_positions(self) -> np.ndarray:
        keep = np.ones(self.num_tokens, dtype=bool)
        keep[self.object_positions] = False
        return np.flatnonzero(keep)


def token_maps(mask, sizes) -> dict[int, TokenIndexMap]:
    """Build a :class:`TokenIndexMap` for each spatial size in ``sizes``.

    ``mask`` is at latent resolution; every size must divide it evenly.
    """
    m = as_mask(mask)
    out = {}
    for size in sizes:
        if m.shape[0] % size or m.shape[1] != m.shape[0]:
            raise DimensionError(f"cannot pool a {m.shape} mask to {size}x{size}")
        out[size] = TokenIndexMap.from_mask(downsample_mask(m, m.shape[0] // size))
    return out


def segment(z: np.ndarray, mask) -> np.ndarray:
    """Channel vectors of ``z`` at the mask's set cells, shape ``(n, C)``."""
    m = as_mask(mask)
    if z.ndim != 3 or z.shape[1:] != m.shape:
        raise DimensionError(f"latent {z.shape} does not match mask {m.shape}")
    return z.reshape(z.shape[0], -1)[:, m.ravel()].T.copy()


def scatter(values: np.ndarray, mask, base: np.ndarray) -> np.ndarray:
    """Inverse of :func:`segment`: write ``values`` into a copy of ``base``."""
    m = as_mask(mask)
    values = np.asarray(values)
    if base.ndim != 3 or base.shape[1:] != m.shape:
        raise DimensionError(f"latent {base.shape} does not match mask {m.shape}")
    n = int(m.sum())
    if values.shape != (n, base.shape[0]):
        raise DimensionError(f"slice shape {values.shape} != ({n}, {base.shape[0]})")
    out = base.copy()
    flat = out.reshape(base.shape[0], -1)
    flat[:, m.ravel()] = values.T
    return out
