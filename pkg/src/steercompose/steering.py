"""Infusion of prior attention into the generator and region-constrained cross-attention."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, PlanError, TokenIndexMap, as_mask, downsample_mask
from .correlation import PriorAttentionBundle
from .denoiser import CrossAttentionTap, Denoiser, LayerId, PlanBlock, SelfAttentionTap, rectify_logits


@dataclass(frozen=True)
class SteeringPolicy:
    alpha: float
    cross_infusion_layers: frozenset[LayerId]
    obj_infusion_layers: frozenset[LayerId]
    stage: str = "pre"
    rca_enabled: bool = True
    window: str = "prefix"  # prefix | suffix

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha {self.alpha} outside [0, 1]")
        if self.stage not in ("pre", "post"):
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.window not in ("prefix", "suffix"):
            raise ConfigError(f"unknown window mode {self.window!r}")
        outside = [str(l) for l in self.obj_infusion_layers if not l.is_decoder]
        if outside:
            raise ConfigError(f"object infusion restricted to decoder layers, got {outside}")

    @classmethod
    def for_denoiser(cls, denoiser: Denoiser, alpha: float = 0.2, stage: str = "pre",
                     rca_enabled: bool = True, window: str = "prefix",
                     cross_infusion: bool = True, obj_infusion: bool = True) -> "SteeringPolicy":
        sa = denoiser.self_attention_layers
        return cls(
            alpha=alpha,
            cross_infusion_layers=frozenset(sa if cross_infusion else ()),
            obj_infusion_layers=frozenset(l for l in sa if l.is_decoder and obj_infusion),
            stage=stage, rca_enabled=rca_enabled, window=window,
        )

    def in_window(self, step_index: int, total_steps: int) -> bool:
        return infusion_window(step_index, total_steps, self.alpha, self.window)


def infusion_window(step_index: int, total_steps: int, alpha: float, mode: str = "prefix") -> bool:
    """Whether denoising iteration ``step_index`` (0 = noisiest) is steered.

    ``prefix`` steers the first ``ceil(alpha * total)`` iterations; ``suffix``
    steers the same number of final iterations.
    """
    if not 0 <= step_index < total_steps:
        raise ConfigError(f"step {step_index} outside [0, {total_steps})")
    # round before ceil so 0.2 * 20 counts as 4, not 5
    k = math.ceil(round(alpha * total_steps, 9))
    if mode == "prefix":
        return step_index < k
    return step_index >= total_steps - k


def build_infusion_plan(bundle: PriorAttentionBundle, maps: dict[int, TokenIndexMap],
                        policy: SteeringPolicy) -> dict[LayerId, SelfAttentionTap]:
    """Turn a prior bundle into self-attention taps.

    Object-key columns of background rows come from ``a_cross`` on every
    layer in ``policy.cross_infusion_layers``; object-key columns of object
    rows come from ``a_obj`` only on ``policy.obj_infusion_layers``.
    """
    if bundle.stage != policy.stage:
        raise PlanError(f"bundle stage {bundle.stage!r} does not match policy stage {policy.stage!r}")
    taps = {}
    for lid, prior in bundle.layers.items():
        tmap = maps.get(prior.size)
        if tmap is None or prior.a_obj.shape[-1] != tmap.n:
            raise PlanError(f"{lid}: prior does not match the token map of level size {prior.size}")
        blocks = []
        if tmap.n:
            cols = tmap.object_positions
            rows = tmap.background_positions()
            if lid in policy.cross_infusion_layers and rows.size:
                blocks.append(PlanBlock(rows, cols, prior.a_cross, "cross"))
            if lid in policy.obj_infusion_layers:
                blocks.append(PlanBlock(cols, cols, prior.a_obj, "obj"))
        taps[lid] = SelfAttentionTap(tuple(blocks), policy.stage)
    return taps


def rectify_cross_attention(logits: np.ndarray, m_obj, object_token_indices) -> np.ndarray:
    """Return a copy of ``(..., h*w, p)`` logits with object tokens confined to ``m_obj``."""
    logits = np.array(logits, dtype=np.float64)
    mask = as_mask(m_obj).ravel()
    if mask.size != logits.shape[-2]:
        raise PlanError(f"mask has {mask.size} cells, map has {logits.shape[-2]} rows")
    p = logits.shape[-1]
    bad = [k for k in object_token_indices if not 0 <= k < p]
    if bad:
        raise PlanError(f"object token indices {bad} outside [0, {p})")
    return rectify_logits(logits, mask, object_token_indices)


def build_rca_taps(denoiser: Denoiser, m_obj_latent, object_token_indices) -> dict[LayerId, CrossAttentionTap]:
    """One rectifying tap per cross-attention block, mask OR-pooled to the block's level."""
    m = as_mask(m_obj_latent)
    idx = tuple(sorted(object_token_indices))
    taps = {}
    for lid in denoiser.cross_attention_layers:
        size = denoiser.level_size(lid)
        pooled = downsample_mask(m, m.shape[0] // size)
        taps[lid] = CrossAttentionTap(pooled.ravel(), idx)
    return taps
