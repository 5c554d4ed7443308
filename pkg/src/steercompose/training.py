"""Optional toy training on procedural colored-shape images (needs ``jax`` and ``optax``).

The gradient runs through the same :func:`~steercompose.denoiser.net_forward`
used for numpy inference, evaluated with ``jax.numpy``.
"""
from __future__ import annotations

import logging

import numpy as np

from .core import ComposerError
from .denoiser import DenoiserConfig, init_weights, net_forward
from .prompt import COLORS, SHAPES, default_vocabulary, embed, tokenize
from .scheduler import NoiseSchedule, build_schedule

log = logging.getLogger(__name__)

PALETTE = {
    "red": (0.9, 0.1, 0.1), "green": (0.1, 0.8, 0.2), "blue": (0.1, 0.2, 0.9), "yellow": (0.95, 0.9, 0.1),
    "cyan": (0.1, 0.85, 0.9), "magenta": (0.9, 0.1, 0.85), "white": (0.95, 0.95, 0.95),
    "black": (0.05, 0.05, 0.05), "orange": (0.95, 0.55, 0.1), "purple": (0.5, 0.15, 0.7),
}
assert set(PALETTE) == set(COLORS)


class TrainingError(ComposerError, RuntimeError):
    pass


def shape_mask(kind: str, size: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = yy - cy, xx - cx
    if kind == "circle":
        return dy**2 + dx**2 <= r**2
    if kind == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if kind == "triangle":
        return (dy <= r) & (dy >= -r) & (np.abs(dx) <= (dy + r) / 2)
    if kind == "stripe":
        return np.abs(dy) <= r / 2.5
    if kind == "ring":
        d2 = dy**2 + dx**2
        return (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)
    raise ValueError(kind)


def render_scene(rng: np.random.Generator, size: int) -> tuple[np.ndarray, list[str], np.ndarray]:
    """One random image, its caption words, and the mask of the captioned shape."""
    bg_name, fg_name = rng.choice(COLORS, size=2, replace=False)
    kind = str(rng.choice(SHAPES))
    shade = np.linspace(-0.08, 0.08, size)[:, None, None] * rng.choice([-1, 1])
    img = np.clip(np.array(PALETTE[bg_name]) + shade + np.zeros((size, size, 3)), 0, 1)
    r = rng.uniform(0.15, 0.3) * size
    cy, cx = rng.uniform(r, size - r, size=2)
    m = shape_mask(kind, size, cy, cx, r)
    img[m] = PALETTE[fg_name]
    img += rng.normal(0, 0.02, img.shape)
    words = ["a", str(fg_name), kind, "on", "a", str(bg_name), "background"]
    return np.clip(img, 0, 1), words, m


def toy_batch(rng: np.random.Generator, n: int, size: int, d_ctx: int, text_seed: int = 0, drop: float = 0.1):
    vocab = default_vocabulary()
    imgs, ctxs = [], []
    for _ in range(n):
        img, words, _ = render_scene(rng, size)
        ctx = embed(tokenize(words, vocab), d_ctx, text_seed)
        if rng.random() < drop:
            ctx = np.zeros_like(ctx)  # zero rows contribute nothing, same as an empty caption
        imgs.append(2 * img - 1)
        ctxs.append(ctx)
    return np.stack(imgs), np.stack(ctxs)


def train_toy(cfg: DenoiserConfig, steps: int, seed: int = 0, batch: int = 16, lr: float = 2e-3,
              sched: NoiseSchedule | None = None, params: dict | None = None, text_seed: int = 0):
    """Train with the standard epsilon-prediction objective.

    Returns ``(params, losses)`` with numpy float64 parameters rounded
    through float32, so they can be saved and reloaded bitwise.
    """
    params = init_weights(cfg) if params is None else params
    if steps == 0:
        return params, []
    import jax
    import jax.numpy as jnp
    import optax

    if cfg.latent_channels != 3:
        raise TrainingError("toy training works in pixel space (3 latent channels)")
    sched = sched or build_schedule()
    abar = jnp.asarray(sched.alpha_bars, dtype=jnp.float32)
    p = {k: jnp.asarray(v, dtype=jnp.float32) for k, v in params.items()}
    opt = optax.chain(optax.clip_by_global_norm(1.0), optax.adamw(optax.cosine_decay_schedule(lr, steps, 0.1), weight_decay=0.0))
    opt_state = opt.init(p)

    def single(pp, x, t, ctx):
        return net_forward(pp, cfg, x, t, ctx, jnp)

    batched = jax.vmap(single, in_axes=(None, 0, 0, 0))

    def loss_fn(pp, x0, t, eps, ctx):
        a = jnp.sqrt(abar[t])[:, None, None, None]
        s = jnp.sqrt(1.0 - abar[t])[:, None, None, None]
        pred = batched(pp, a * x0 + s * eps, t.astype(jnp.float32), ctx)
        return jnp.mean((pred - eps) ** 2)

    @jax.jit
    def update(pp, state, x0, t, eps, ctx):
        loss, grads = jax.value_and_grad(loss_fn)(pp, x0, t, eps, ctx)
        upd, state = opt.update(grads, state, pp)
        return optax.apply_updates(pp, upd), state, loss

    rng = np.random.default_rng(seed)
    losses = []
    for step in range(steps):
        x0, ctx = toy_batch(rng, batch, cfg.image_size, cfg.d_ctx, text_seed)
        t = rng.integers(1, sched.T + 1, size=batch)
        eps = rng.standard_normal(x0.shape)
        p, opt_state, loss = update(p, opt_state, jnp.asarray(x0, jnp.float32), jnp.asarray(t),
                                    jnp.asarray(eps, jnp.float32), jnp.asarray(ctx, jnp.float32))
        loss = float(loss)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}")
        losses.append(loss)
        if step % 200 == 0:
            log.info("step %d loss %.4f", step, loss)
    out = {k: np.asarray(v, dtype=np.float32).astype(np.float64) for k, v in p.items()}
    return out, losses
