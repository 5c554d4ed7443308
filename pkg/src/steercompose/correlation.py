"""Correlation extractor: prior self-attention between the composite scene and the synthesized object.

Queries come from the pixel composite of the noisy object and background
canvases, keys from the current denoising latent gathered at object
positions. The resulting ``(h*w) x n`` map is split row-wise into the
scene-to-object block (``a_cross``) and the object-to-object block
(``a_obj``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionError, EmptyObjectError, TokenIndexMap, as_mask
from .denoiser import CostCounter, Denoiser, LayerId, softmax


def pixel_composite(z_fg: np.ndarray, z_bg: np.ndarray, m_obj) -> np.ndarray:
    """``z_fg`` inside the object mask, ``z_bg`` elsewhere (a selection, not a blend)."""
    m = as_mask(m_obj)
    if z_fg.shape != z_bg.shape or z_fg.shape[1:] != m.shape:
        raise DimensionError(f"cannot composite {z_fg.shape} and {z_bg.shape} under mask {m.shape}")
    return np.where(m[None], z_fg, z_bg)


@dataclass(frozen=True)
class LayerPrior:
    size: int  # spatial side of the layer's token grid
    a_cross: np.ndarray  # (heads, h*w - n, n)
    a_obj: np.ndarray  # (heads, n, n)


@dataclass(frozen=True)
class PriorAttentionBundle:
    layers: dict[LayerId, LayerPrior]
    stage: str  # pre (logits) | post (softmax over the n object keys)
    t: int


def split_rows(amap: np.ndarray, tmap: TokenIndexMap) -> tuple[np.ndarray, np.ndarray]:
    """Partition rows of a ``(heads, h*w, n)`` map into (background rows, object rows)."""
    return amap[:, tmap.background_positions()], amap[:, tmap.object_positions]


def reassemble(prior: LayerPrior, tmap: TokenIndexMap) -> np.ndarray:
    heads, _, n = prior.a_obj.shape
    out = np.empty((heads, tmap.num_tokens, n))
    out[:, tmap.background_positions()] = prior.a_cross
    out[:, tmap.object_positions] = prior.a_obj
    return out


def extract_prior_attention(denoiser: Denoiser, z_prev: np.ndarray, z_pc: np.ndarray, t: int,
                            ctx: np.ndarray, maps: dict[int, TokenIndexMap],
                            counters: CostCounter | None = None, stage: str = "pre",
                            key_source: str = "gather", m_obj=None) -> PriorAttentionBundle:
    """Run the two read-only forwards and build the per-layer prior maps.

    ``maps`` is keyed by level side length. With ``key_source="masked"`` the
    key forward sees ``z_prev`` zeroed outside ``m_obj`` (latent resolution)
    instead of the full latent.
    """
    if z_prev.shape != z_pc.shape:
        raise DimensionError(f"latents differ in shape: {z_prev.shape} vs {z_pc.shape}")
    if stage not in ("pre", "post"):
        raise ValueError(f"unknown stage {stage!r}")
    if all(maps[denoiser.level_size(l)].n == 0 for l in denoiser.self_attention_layers):
        raise EmptyObjectError("object mask is empty at every attention level")
    key_input = z_prev
    if key_source == "masked":
        key_input = np.where(as_mask(m_obj)[None], z_prev, 0.0)
    elif key_source != "gather":
        raise ValueError(f"unknown key source {key_source!r}")

    _, rec_q = denoiser.forward(z_pc, t, ctx, counters=counters, record=True)
    _, rec_k = denoiser.forward(key_input, t, ctx, counters=counters, record=True)
    if counters is not None:
        counters.cd_forwards += 2

    layers = {}
    for lid in denoiser.self_attention_layers:
        size = denoiser.level_size(lid)
        tmap = maps[size]
        q = rec_q[lid]["q"]  # (heads, h*w, d)
        k = rec_k[lid]["k"][:, tmap.object_positions]  # (heads, n, d)
        amap = q @ k.transpose(0, 2, 1) / np.sqrt(q.shape[-1])
        if stage == "post" and tmap.n:
            amap = softmax(amap, np)
        a_cross, a_obj = split_rows(amap, tmap)
        layers[lid] = LayerPrior(size, a_cross, a_obj)
    return PriorAttentionBundle(layers, stage, int(t))
