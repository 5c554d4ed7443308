"""End-to-end composition: dual inversion, composite initial noise, steered denoising
with per-step background combining, and decoding.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import codec as codec_mod
from .codec import CodecConfig
from .config import RunConfig
from .core import (ComposerError, DimensionError, EmptyObjectError, as_mask, check_containment,
                   token_maps)
from .correlation import extract_prior_attention, pixel_composite, reassemble
from .denoiser import CostCounter, Denoiser, DenoiserConfig
from .guidance import average_saliency, extended_cfg, saliency_map, standard_cfg
from .prompt import PromptSpec, embed
from .scheduler import SolverState, add_noise, build_schedule, solver_step
from .steering import SteeringPolicy, build_infusion_plan, build_rca_taps

log = logging.getLogger(__name__)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of an ``(H, W, C)`` array with edge clamping."""

    def weights(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        m = np.zeros((n_out, n_in))
        m[np.arange(n_out), lo] += 1.0 - frac
        m[np.arange(n_out), hi] += frac
        return m

    img = np.asarray(img, dtype=np.float64)
    if img.shape[:2] == (out_h, out_w):
        return img.copy()
    return np.einsum("ih,hwc,jw->ijc", weights(img.shape[0], out_h), img, weights(img.shape[1], out_w))


def place_object(obj: np.ndarray, m_obj, canvas_hw: tuple[int, int], fill: float = 0.5) -> np.ndarray:
    """Resize ``obj`` to the bounding box of ``m_obj`` and paste it on a gray canvas."""
    m = as_mask(m_obj)
    if m.shape != tuple(canvas_hw):
        raise DimensionError(f"mask {m.shape} does not match canvas {canvas_hw}")
    rows, cols = np.flatnonzero(m.any(axis=1)), np.flatnonzero(m.any(axis=0))
    if rows.size == 0:
        raise EmptyObjectError("object mask is empty")
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    canvas = np.full((*canvas_hw, 3), fill)
    canvas[r0:r1, c0:c1] = bilinear_resize(obj, r1 - r0, c1 - c0)
    return canvas


def initial_noise(z_fg_T: np.ndarray, z_bg_T: np.ndarray, m_obj, m_fg, seed: int,
                  mode: str = "replace") -> np.ndarray:
    """Composite starting latent with Gaussian noise on the ring ``m_fg XOR m_obj``.

    ``replace``: object latent inside ``m_obj``, background outside ``m_fg``,
    noise on the ring. ``additive``: object latent on all of ``m_fg`` with the
    noise added on the ring.
    """
    m_obj, m_fg = as_mask(m_obj), as_mask(m_fg)
    ring = (m_fg ^ m_obj)[None]
    g = np.random.default_rng(seed).standard_normal(z_fg_T.shape)
    if mode == "replace":
        return np.where(m_obj[None], z_fg_T, np.where(ring, g, z_bg_T))
    if mode == "additive":
        return np.where(m_fg[None], z_fg_T, z_bg_T) + np.where(ring, g, 0.0)
    raise ValueError(f"unknown init mode {mode!r}")


@dataclass
class CompositionRequest:
    background: np.ndarray  # (H, W, 3) in [0, 1]
    obj: np.ndarray  # (h, w, 3) in [0, 1]
    m_obj: np.ndarray  # (H, W) pixel mask
    m_fg: np.ndarray
    prompt: PromptSpec
    config: RunConfig = field(default_factory=RunConfig)

    def validate(self):
        m_obj, m_fg = as_mask(self.m_obj), as_mask(self.m_fg)
        if self.background.ndim != 3 or self.background.shape[2] != 3:
            raise DimensionError(f"background must be (H, W, 3), got {self.background.shape}")
        if m_obj.shape != self.background.shape[:2]:
            raise DimensionError(f"masks {m_obj.shape} do not match background {self.background.shape[:2]}")
        check_containment(m_obj, m_fg)
        if self.config.place == "canvas" and self.obj.shape != self.background.shape:
            raise DimensionError("place=canvas needs an object image the size of the background")


@dataclass
class TrajectoryStore:
    """Inverted latents per grid level; level 0 holds the encodings themselves."""

    bg: dict[int, np.ndarray]
    fg: dict[int, np.ndarray]


@dataclass
class Diagnostics:
    counters: CostCounter
    steered_steps: list[int]
    saliency: np.ndarray | None = None
    saliency_steps: list[np.ndarray] = field(default_factory=list)
    attention: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)
    latent: np.ndarray | None = None
    trajectory: dict[int, np.ndarray] = field(default_factory=dict)  # post-combine latent per level
    out_of_range: float = 0.0

    def ledger(self, num_steps: int) -> dict:
        led = self.counters.ledger()
        led["composition_forwards"] = led["denoiser_forwards"] - led["inversion_forwards"]
        led["steered_steps"] = len(self.steered_steps)
        led["solver_steps"] = num_steps
        return led


def expected_forwards(num_steps: int, steered: int, samplers: int = 2) -> int:
    """Closed-form composition forward count (inversion excluded)."""
    per_steered = 2 + 4 + (2 if samplers == 4 else 0)
    return steered * per_steered + (num_steps - steered) * 2


class Composer:
    """A denoiser, schedule and codec bound to one :class:`RunConfig`."""

    def __init__(self, config: RunConfig = RunConfig(), denoiser: Denoiser | None = None, image_size: int | None = None):
        self.config = config
        self.codec = CodecConfig(config.codec, config.patch_factor)
        if denoiser is None:
            if config.weights:
                denoiser = Denoiser.from_file(config.weights)
            else:
                size = (image_size or 32) // self.codec.factor
                denoiser = Denoiser(DenoiserConfig(
                    latent_channels=self.codec.channel_out, image_size=size, widths=config.width_tuple,
                    heads=config.heads, d_ctx=config.d_ctx, weight_seed=config.weight_seed))
        if denoiser.cfg.latent_channels != self.codec.channel_out:
            raise DimensionError("denoiser channel count does not match the codec")
        self.denoiser = denoiser
        self.schedule = build_schedule(config.T, config.beta_min, config.beta_max, config.num_solver_steps)
        self.policy = SteeringPolicy.for_denoiser(
            denoiser, alpha=config.alpha, stage=config.stage, rca_enabled=config.rca, window=config.window,
            cross_infusion=config.cross_infusion, obj_infusion=config.obj_infusion)

    # -- pieces ------------------------------------------------------------

    def context(self, prompt: PromptSpec) -> np.ndarray:
        return embed(prompt.tokens, self.denoiser.cfg.d_ctx, self.config.text_seed)

    def object_canvas(self, req: CompositionRequest) -> np.ndarray:
        if self.config.place == "canvas":
            return np.asarray(req.obj, dtype=np.float64)
        if not as_mask(req.m_obj).any():
            return np.full(req.background.shape, 0.5)
        return place_object(req.obj, req.m_obj, req.background.shape[:2])

    def latent_masks(self, req: CompositionRequest) -> tuple[np.ndarray, np.ndarray]:
        return (codec_mod.latent_mask(req.m_obj, self.codec), codec_mod.latent_mask(req.m_fg, self.codec))

    def invert(self, z0: np.ndarray, ctx: np.ndarray, counters: CostCounter) -> dict[int, np.ndarray]:
        state = SolverState(z0, direction="invert")
        out = {int(state.t(self.schedule)): z0}
        while not state.done(self.schedule):
            t = state.t(self.schedule)
            eps, _ = self.denoiser.forward(state.x, t, ctx, counters=counters)
            counters.inversion_forwards += 1
            solver_step(state, eps, self.schedule)
            out[state.t(self.schedule)] = state.x
        return out

    def invert_inputs(self, req: CompositionRequest, counters: CostCounter | None = None) -> TrajectoryStore:
        counters = counters if counters is not None else CostCounter()
        ctx = self.context(req.prompt)
        z_bg = codec_mod.encode(req.background, self.codec)
        z_fg = codec_mod.encode(self.object_canvas(req), self.codec)
        self._check_size(z_bg)
        with counters.phase("inversion"):
            return TrajectoryStore(self.invert(z_bg, ctx, counters), self.invert(z_fg, ctx, counters))

    def _check_size(self, z):
        if z.shape[1] != self.denoiser.cfg.image_size or z.shape[2] != self.denoiser.cfg.image_size:
            raise DimensionError(f"canvas gives a {z.shape[1:]} latent, denoiser expects "
                                 f"{self.denoiser.cfg.image_size}x{self.denoiser.cfg.image_size}")

    def background_levels(self, store: TrajectoryStore) -> dict[int, np.ndarray]:
        """Background latents used when combining after each step."""
        if self.config.bg_noise == "inversion":
            return store.bg
        z0 = store.bg[0]
        eps = np.random.default_rng([self.config.noise_seed, 1]).standard_normal(z0.shape)
        return {t: (z0 if t == 0 else add_noise(z0, t, eps, self.schedule)) for t in store.bg}

    # -- the loop ------------------------------------------------------------

    def compose(self, req: CompositionRequest, store: TrajectoryStore | None = None,
                counters: CostCounter | None = None) -> tuple[np.ndarray, Diagnostics]:
        req.validate()
        cfg = self.config
        den = self.denoiser
        counters = counters if counters is not None else CostCounter()
        if store is None:
            store = self.invert_inputs(req, counters)
        m_obj, m_fg = self.latent_masks(req)
        maps = token_maps(m_obj, den.cfg.level_sizes)
        ctx_c = self.context(req.prompt)
        ctx_null = np.zeros((0, den.cfg.d_ctx))
        obj_tokens = req.prompt.object_token_indices
        rca = build_rca_taps(den, m_obj, obj_tokens) if (cfg.rca and obj_tokens) else {}
        bg_levels = self.background_levels(store)
        # with no object cells there is nothing to steer toward
        steerable = any(tm.n for tm in maps.values())
        if not steerable:
            log.warning("object mask is empty at latent resolution; steering disabled")

        grid = self.schedule.timesteps
        n_steps = self.schedule.num_steps
        diag = Diagnostics(counters, steered_steps=[])
        z = initial_noise(store.fg[cfg.T], store.bg[cfg.T], m_obj, m_fg, cfg.noise_seed, cfg.init)
        state = SolverState(z)
        diag.trajectory[int(grid[0])] = z

        def fwd(x, t, ctx, taps):
            eps, _ = den.forward(x, t, ctx, taps=taps or None, counters=counters)
            return eps

        with counters.phase("composition"):
            for i in range(n_steps):
                t = int(grid[i])
                try:
                    if steerable and self.policy.in_window(i, n_steps):
                        diag.steered_steps.append(i)
                        z_pc = pixel_composite(store.fg[t], store.bg[t], m_obj)
                        bundle = extract_prior_attention(den, state.x, z_pc, t, ctx_c, maps, counters,
                                                         stage=cfg.stage, key_source=cfg.cd_keys, m_obj=m_obj)
                        if cfg.samplers == 4:
                            # ablation: two extra extractor passes, as a multi-sampler design would run
                            fwd(store.bg[t], t, ctx_c, None)
                            fwd(store.fg[t], t, ctx_c, None)
                            counters.cd_forwards += 2
                        plan = build_infusion_plan(bundle, maps, self.policy) if cfg.infusion else {}
                        if cfg.dump_attn:
                            for lid, prior in bundle.layers.items():
                                amap = reassemble(prior, maps[prior.size])
                                diag.attention[(str(lid), i)] = amap.mean(axis=(0, 2)).reshape(prior.size, prior.size)
                        e_null = fwd(state.x, t, ctx_null, None)
                        e_c = fwd(state.x, t, ctx_c, rca)
                        e_f = fwd(state.x, t, ctx_null, plan)
                        e_cf = fwd(state.x, t, ctx_c, {**plan, **rca})
                        counters.cfg_branches += 4
                        eps = extended_cfg(e_null, e_cf, e_f, e_c, cfg.guidance_scale)
                        diag.saliency_steps.append(saliency_map(e_cf, e_c))
                    else:
                        e_null = fwd(state.x, t, ctx_null, None)
                        e_c = fwd(state.x, t, ctx_c, rca)
                        counters.cfg_branches += 2
                        eps = standard_cfg(e_null, e_c, cfg.guidance_scale)
                    solver_step(state, eps, self.schedule)
                except ComposerError as e:
                    raise type(e)(f"step {i} (level {t}): {e}") from e
                t_next = int(grid[i + 1])
                state.x = np.where(m_fg[None], state.x, bg_levels[t_next])
                diag.trajectory[t_next] = state.x

        if diag.saliency_steps:
            diag.saliency = average_saliency(diag.saliency_steps)
        diag.latent = state.x
        image = codec_mod.decode(state.x, self.codec)
        diag.out_of_range = float(max(0.0, -image.min(), image.max() - 1.0))
        log.debug("composition ledger %s", diag.ledger(n_steps))
        return image, diag


def compose(req: CompositionRequest, denoiser: Denoiser | None = None) -> tuple[np.ndarray, Diagnostics]:
    composer = Composer(req.config, denoiser, image_size=req.background.shape[0])
    return composer.compose(req)
