"""Classifier-free guidance over two or four conditioning branches, and saliency maps."""
from __future__ import annotations

import numpy as np

from .core import ComposerError, DimensionError


def _check(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise DimensionError(f"branch shapes differ: {shape} vs {np.shape(a)}")


def standard_cfg(eps_null, eps_c, s: float):
    _check(eps_null, eps_c)
    return eps_null + s * (eps_c - eps_null)


def extended_cfg(eps_null, eps_cf, eps_f, eps_c, s: float):
    """``eps(0) + s * [(eps(c,f) - eps(f)) + (eps(c,f) - eps(c))]``.

    Branches are: null context without infusion, caption with infusion,
    infusion alone, caption alone.
    """
    _check(eps_null, eps_cf, eps_f, eps_c)
    return eps_null + s * ((eps_cf - eps_f) + (eps_cf - eps_c))


def saliency_map(eps_cf, eps_c) -> np.ndarray:
    """Per-cell L2 norm over channels of ``eps(c,f) - eps(c)`` for ``(C, H, W)`` inputs."""
    _check(eps_cf, eps_c)
    diff = np.asarray(eps_cf) - np.asarray(eps_c)
    return np.sqrt((diff**2).sum(axis=0))


def average_saliency(maps) -> np.ndarray:
    maps = list(maps)
    if not maps:
        raise ComposerError("no steered steps to average saliency over")
    return np.mean(maps, axis=0)


def normalize01(m: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Min-max rescale to [0, 1]; constant maps become all zeros."""
    lo, hi = float(m.min()), float(m.max())
    if hi == lo:
        return np.zeros_like(m, dtype=np.float64), lo, hi
    return (m - lo) / (hi - lo), lo, hi
