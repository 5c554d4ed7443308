"""Toy epsilon-prediction U-Net with addressable attention blocks.

The network is written once against an array namespace ``xp`` so the same
code runs under numpy for inference (where attention taps and recording
live) and under ``jax.numpy`` for :mod:`steercompose.training`.

Layout: latents enter as ``(C, H, W)``; inside the net activations are
``(H, W, C)`` so a level's tokens are ``h.reshape(H * W, C)`` in raster order.
Every resolution level has one self-attention block (index 0) and one
cross-attention block (index 1) in the encoder and decoder halves, and the
coarsest level has the same pair in the middle.
"""
from __future__ import annotations

import hashlib
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import ComposerError, ConfigError, DimensionError, PlanError

NEG_INF = np.finfo(np.float64).min


# ---------------------------------------------------------------------------
# configuration and addressing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DenoiserConfig:
    latent_channels: int = 3
    image_size: int = 32
    widths: tuple[int, ...] = (32, 64)
    heads: int = 1
    d_ctx: int = 16
    temb_dim: int = 32
    weight_seed: int = 0
    zero_out: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths:
            raise ConfigError("need at least one level")
        if self.image_size % (2 ** (len(self.widths) - 1)):
            raise ConfigError(f"image_size {self.image_size} not divisible across {len(self.widths)} levels")
        if any(w % self.heads for w in self.widths):
            raise ConfigError("every width must be divisible by the head count")

    @property
    def level_sizes(self) -> tuple[int, ...]:
        return tuple(self.image_size // 2**i for i in range(len(self.widths)))


@dataclass(frozen=True, order=True)
class LayerId:
    half: str  # encoder | middle | decoder
    level: int
    index: int  # 0 = self-attention, 1 = cross-attention

    @property
    def is_decoder(self) -> bool:
        return self.half == "decoder"

    @property
    def is_self(self) -> bool:
        return self.index == 0

    def __str__(self):
        return f"{self.half}{self.level}{'sa' if self.is_self else 'ca'}"


def layer_ids(cfg: DenoiserConfig) -> list[LayerId]:
    """Attention blocks in execution order."""
    n = len(cfg.widths)
    out = []
    for lvl in range(n):
        out += [LayerId("encoder", lvl, 0), LayerId("encoder", lvl, 1)]
    out += [LayerId("middle", n - 1, 0), LayerId("middle", n - 1, 1)]
    for lvl in reversed(range(n)):
        out += [LayerId("decoder", lvl, 0), LayerId("decoder", lvl, 1)]
    return out


# ---------------------------------------------------------------------------
# attention taps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlanBlock:
    """Overwrite ``map[:, rows][:, :, cols]`` with ``values`` (heads, rows, cols)."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    source: str  # cross | obj

    @property
    def num_cells(self) -> int:
        return int(self.rows.size * self.cols.size)


@dataclass(frozen=True)
class SelfAttentionTap:
    blocks: tuple[PlanBlock, ...] = ()
    stage: str = "pre"  # pre | post (write probabilities, then renormalise rows)

    def __post_init__(self):
        if self.stage not in ("pre", "post"):
            raise ConfigError(f"unknown tap stage {self.stage!r}")

    @property
    def num_cells(self) -> int:
        return sum(b.num_cells for b in self.blocks)

    def validate(self, num_tokens: int, heads: int):
        for b in self.blocks:
            for idx in (b.rows, b.cols):
                if idx.size and (idx.min() < 0 or idx.max() >= num_tokens):
                    raise PlanError(f"plan index outside [0, {num_tokens})")
            if b.values.shape[-2:] != (b.rows.size, b.cols.size) or b.values.shape[0] not in (1, heads):
                raise PlanError(f"plan values {b.values.shape} do not fit {b.rows.size}x{b.cols.size}")

    def apply(self, amap: np.ndarray) -> None:
        for b in self.blocks:
            if b.num_cells:
                amap[:, b.rows[:, None], b.cols[None, :]] = b.values


@dataclass(frozen=True)
class CrossAttentionTap:
    """Region constraint: object-token columns get -inf logits outside ``mask``."""

    mask: np.ndarray  # (num_tokens,) bool, True inside the object
    object_token_indices: tuple[int, ...]

    def validate(self, num_tokens: int, p: int):
        if self.mask.shape != (num_tokens,):
            raise PlanError(f"rectify mask has {self.mask.size} cells, layer has {num_tokens} tokens")
        bad = [k for k in self.object_token_indices if not 0 <= k < p]
        if bad:
            raise PlanError(f"object token indices {bad} outside [0, {p})")


def rectify_logits(logits: np.ndarray, mask: np.ndarray, object_token_indices) -> np.ndarray:
    """In place: ``logits[..., i, k] = -inf`` where ``mask[i]`` is off and ``k`` is an object token."""
    cols = np.asarray(sorted(object_token_indices), dtype=np.int64)
    rows = np.flatnonzero(~np.asarray(mask, dtype=bool))
    if cols.size and rows.size:
        logits[..., rows[:, None], cols[None, :]] = NEG_INF
    return logits


# ---------------------------------------------------------------------------
# instrumentation
# ---------------------------------------------------------------------------

@dataclass
class CostCounter:
    denoiser_forwards: int = 0
    cd_forwards: int = 0
    cfg_branches: int = 0
    inversion_forwards: int = 0
    wall_time: dict = field(default_factory=dict)

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.wall_time[name] = self.wall_time.get(name, 0.0) + time.perf_counter() - start

    def ledger(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "wall_time"}


# ---------------------------------------------------------------------------
# network pieces, generic over xp
# ---------------------------------------------------------------------------

def silu(x, xp):
    return x / (1.0 + xp.exp(-x))


def layer_norm(x, g, b, xp, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / xp.sqrt(var + eps) * g + b


def conv3x3(x, w, b, xp):
    """Zero-padded 3x3 convolution of ``(H, W, Cin)``; ``w`` is ``(9 * Cin, Cout)``."""
    h, wd, _ = x.shape
    p = xp.pad(x, ((1, 1), (1, 1), (0, 0)))
    cols = xp.concatenate([p[i:i + h, j:j + wd] for i in range(3) for j in range(3)], axis=-1)
    return cols @ w + b


def softmax(x, xp):
    m = x.max(axis=-1, keepdims=True)
    e = xp.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def timestep_embedding(t, dim, xp):
    half = dim // 2
    freqs = xp.exp(-np.log(10000.0) * xp.arange(half) / half)
    ang = t * freqs
    return xp.concatenate([xp.sin(ang), xp.cos(ang)])


def param_shapes(cfg: DenoiserConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter tensor, in a fixed order."""
    s: dict[str, tuple[int, ...]] = {}
    c, td, dc = cfg.latent_channels, cfg.temb_dim, cfg.d_ctx
    w = cfg.widths

    def res(name, cin, cout):
        s[f"{name}.n1.g"], s[f"{name}.n1.b"] = (cin,), (cin,)
        s[f"{name}.c1.w"], s[f"{name}.c1.b"] = (9 * cin, cout), (cout,)
        s[f"{name}.t.w"], s[f"{name}.t.b"] = (td, cout), (cout,)
        s[f"{name}.n2.g"], s[f"{name}.n2.b"] = (cout,), (cout,)
        s[f"{name}.c2.w"], s[f"{name}.c2.b"] = (9 * cout, cout), (cout,)
        if cin != cout:
            s[f"{name}.skip.w"] = (cin, cout)

    def attn(lid, width, kv_dim):
        name = str(lid)
        s[f"{name}.n.g"], s[f"{name}.n.b"] = (width,), (width,)
        s[f"{name}.q"] = (width, width)
        s[f"{name}.k"] = (kv_dim, width)
        s[f"{name}.v"] = (kv_dim, width)
        s[f"{name}.o"] = (width, width)

    s["temb.w1"], s["temb.b1"] = (td, td), (td,)
    s["temb.w2"], s["temb.b2"] = (td, td), (td,)
    s["conv_in.w"], s["conv_in.b"] = (9 * c, w[0]), (w[0],)
    n = len(w)
    for i in range(n):
        res(f"encoder{i}.res", w[i], w[i])
        attn(LayerId("encoder", i, 0), w[i], w[i])
        attn(LayerId("encoder", i, 1), w[i], dc)
        if i < n - 1:
            s[f"down{i}.w"] = (w[i], w[i + 1])
    res("middle.res", w[-1], w[-1])
    attn(LayerId("middle", n - 1, 0), w[-1], w[-1])
    attn(LayerId("middle", n - 1, 1), w[-1], dc)
    for i in reversed(range(n)):
        res(f"decoder{i}.res", 2 * w[i], w[i])
        attn(LayerId("decoder", i, 0), w[i], w[i])
        attn(LayerId("decoder", i, 1), w[i], dc)
        if i > 0:
            s[f"up{i}.w"] = (w[i], w[i - 1])
    s["out.n.g"], s["out.n.b"] = (w[0],), (w[0],)
    s["out.w"], s["out.b"] = (9 * w[0], c), (c,)
    return s


class _Hooks:
    """Numpy-side tap application and recording for one forward call."""

    def __init__(self, taps, record):
        self.taps = taps or {}
        self.record = record
        self.records: dict[LayerId, dict] = {}
        self.applied: list[LayerId] = []

    def self_attention(self, lid, feats, q, k, logits, xp):
        tap = self.taps.get(lid)
        if tap is not None:
            if not isinstance(tap, SelfAttentionTap):
                raise PlanError(f"{lid} is a self-attention block, got {type(tap).__name__}")
            tap.validate(logits.shape[-1], logits.shape[0])
            self.applied.append(lid)
            if tap.stage == "pre":
                tap.apply(logits)
        probs = softmax(logits, xp)
        if tap is not None and tap.stage == "post" and tap.blocks:
            tap.apply(probs)
            np.clip(probs, 0.0, None, out=probs)
            probs /= probs.sum(axis=-1, keepdims=True)
        if self.record:
            self.records[lid] = {"features": feats, "q": q, "k": k, "logits": logits, "probs": probs}
        return probs

    def cross_attention(self, lid, logits, xp):
        tap = self.taps.get(lid)
        dead = None
        if tap is not None:
            if not isinstance(tap, CrossAttentionTap):
                raise PlanError(f"{lid} is a cross-attention block, got {type(tap).__name__}")
            tap.validate(logits.shape[1], logits.shape[2])
            self.applied.append(lid)
            if tap.object_token_indices:
                rectify_logits(logits, tap.mask, tap.object_token_indices)
                dead = (logits == NEG_INF).all(axis=-1)
        probs = softmax(logits, xp)
        if dead is not None and dead.any():
            # a position whose every token is masked attends to nothing
            probs[dead] = 0.0
        if self.record:
            self.records[lid] = {"logits": logits, "probs": probs}
        return probs


def _split_heads(x, heads):
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x):
    h, n, d = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * d)


def net_forward(params, cfg: DenoiserConfig, z_hwc, t, ctx, xp=np, hooks: _Hooks | None = None):
    """Epsilon prediction for one ``(H, W, C)`` latent at level ``t``."""
    P = params
    heads = cfg.heads
    temb = timestep_embedding(t, cfg.temb_dim, xp)
    temb = silu(temb @ P["temb.w1"] + P["temb.b1"], xp) @ P["temb.w2"] + P["temb.b2"]
    temb = silu(temb, xp)

    def res(h, name):
        x = silu(layer_norm(h, P[f"{name}.n1.g"], P[f"{name}.n1.b"], xp), xp)
        x = conv3x3(x, P[f"{name}.c1.w"], P[f"{name}.c1.b"], xp) + temb @ P[f"{name}.t.w"] + P[f"{name}.t.b"]
        x = silu(layer_norm(x, P[f"{name}.n2.g"], P[f"{name}.n2.b"], xp), xp)
        x = conv3x3(x, P[f"{name}.c2.w"], P[f"{name}.c2.b"], xp)
        skip = h @ P[f"{name}.skip.w"] if f"{name}.skip.w" in P else h
        return skip + x

    def self_attn(h, lid):
        name = str(lid)
        hh, ww, c = h.shape
        feats = layer_norm(h.reshape(hh * ww, c), P[f"{name}.n.g"], P[f"{name}.n.b"], xp)
        q = _split_heads(feats @ P[f"{name}.q"], heads)
        k = _split_heads(feats @ P[f"{name}.k"], heads)
        v = _split_heads(feats @ P[f"{name}.v"], heads)
        logits = q @ k.transpose(0, 2, 1) / np.sqrt(c // heads)
        probs = softmax(logits, xp) if hooks is None else hooks.self_attention(lid, feats, q, k, logits, xp)
        out = _merge_heads(probs @ v) @ P[f"{name}.o"]
        return h + out.reshape(hh, ww, c)

    def cross_attn(h, lid):
        if ctx.shape[0] == 0:
            return h
        name = str(lid)
        hh, ww, c = h.shape
        feats = layer_norm(h.reshape(hh * ww, c), P[f"{name}.n.g"], P[f"{name}.n.b"], xp)
        q = _split_heads(feats @ P[f"{name}.q"], heads)
        k = _split_heads(ctx @ P[f"{name}.k"], heads)
        v = _split_heads(ctx @ P[f"{name}.v"], heads)
        logits = q @ k.transpose(0, 2, 1) / np.sqrt(c // heads)
        probs = softmax(logits, xp) if hooks is None else hooks.cross_attention(lid, logits, xp)
        out = _merge_heads(probs @ v) @ P[f"{name}.o"]
        return h + out.reshape(hh, ww, c)

    n = len(cfg.widths)
    h = conv3x3(z_hwc, P["conv_in.w"], P["conv_in.b"], xp)
    skips = []
    for i in range(n):
        h = res(h, f"encoder{i}.res")
        h = self_attn(h, LayerId("encoder", i, 0))
        h = cross_attn(h, LayerId("encoder", i, 1))
        skips.append(h)
        if i < n - 1:
            hh, ww, c = h.shape
            h = h.reshape(hh // 2, 2, ww // 2, 2, c).mean(axis=(1, 3)) @ P[f"down{i}.w"]
    h = res(h, "middle.res")
    h = self_attn(h, LayerId("middle", n - 1, 0))
    h = cross_attn(h, LayerId("middle", n - 1, 1))
    for i in reversed(range(n)):
        h = res(xp.concatenate([h, skips[i]], axis=-1), f"decoder{i}.res")
        h = self_attn(h, LayerId("decoder", i, 0))
        h = cross_attn(h, LayerId("decoder", i, 1))
        if i > 0:
            h = xp.repeat(xp.repeat(h, 2, axis=0), 2, axis=1) @ P[f"up{i}.w"]
    h = silu(layer_norm(h, P["out.n.g"], P["out.n.b"], xp), xp)
    return conv3x3(h, P["out.w"], P["out.b"], xp)


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

def init_weights(cfg: DenoiserConfig) -> dict[str, np.ndarray]:
    """Seeded scaled-Gaussian init, rounded through float32 so weight files round-trip bitwise."""
    params = {}
    for i, (name, shape) in enumerate(param_shapes(cfg).items()):
        if name.endswith((".g",)):
            arr = np.ones(shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
        else:
            rng = np.random.default_rng([cfg.weight_seed, i])
            arr = rng.standard_normal(shape) / np.sqrt(shape[0])
        if cfg.zero_out and name.startswith("out.") and name != "out.n.g":
            arr = np.zeros(shape)
        params[name] = arr.astype(np.float32).astype(np.float64)
    return params


class WeightFileError(ComposerError, IOError):
    pass


_CFG_KEYS = ("latent_channels", "image_size", "widths", "heads", "d_ctx", "temb_dim", "weight_seed")


def save_weights(params: dict, cfg: DenoiserConfig, path) -> None:
    """Write ``path`` (little-endian float32, concatenated) and ``path + '.manifest'``."""
    path = Path(path)
    blobs, lines, offset = [], [], 0
    for name, shape in param_shapes(cfg).items():
        arr = np.asarray(params[name], dtype="<f4")
        if arr.shape != shape:
            raise DimensionError(f"{name}: shape {arr.shape} != {shape}")
        blobs.append(arr.tobytes())
        lines.append(f"{name} {'x'.join(map(str, shape))} {offset}")
        offset += arr.nbytes
    data = b"".join(blobs)
    cfg_line = " ".join(
        f"{k}={','.join(map(str, v)) if isinstance(v, tuple) else v}"
        for k, v in ((k, getattr(cfg, k)) for k in _CFG_KEYS)
    )
    header = ["# steercompose weights v1: name shape byte_offset (little-endian float32)",
              f"config {cfg_line}", f"sha256 {hashlib.sha256(data).hexdigest()}"]
    path.write_bytes(data)
    Path(f"{path}.manifest").write_text("\n".join(header + lines) + "\n")


def resolve_weights(path) -> Path:
    """``builtin:<name>`` names a weight file shipped in the package's ``data`` directory."""
    path = str(path)
    if path.startswith("builtin:"):
        return Path(__file__).parent / "data" / f"{path.split(':', 1)[1]}.bin"
    return Path(path)


def load_weights(path) -> tuple[dict[str, np.ndarray], DenoiserConfig]:
    path = resolve_weights(path)
    mpath = Path(f"{path}.manifest")
    try:
        data = path.read_bytes()
        lines = mpath.read_text().splitlines()
    except OSError as e:
        raise WeightFileError(f"cannot read weights {e.filename}: {e.strerror}") from e
    kw, digest, entries = {}, None, []
    for line in lines:
        if not line or line.startswith("#"):
            continue
        head, _, rest = line.partition(" ")
        if head == "config":
            for item in rest.split():
                k, v = item.split("=")
                kw[k] = tuple(int(x) for x in v.split(",")) if k == "widths" else int(v)
        elif head == "sha256":
            digest = rest.strip()
        else:
            shape, off = rest.split()
            entries.append((head, tuple(int(x) for x in shape.split("x")), int(off)))
    if digest is not None and hashlib.sha256(data).hexdigest() != digest:
        raise WeightFileError(f"{path}: checksum mismatch, file is corrupted")
    cfg = DenoiserConfig(**kw)
    expected = param_shapes(cfg)
    params = {}
    for name, shape, off in entries:
        if expected.get(name) != shape:
            raise WeightFileError(f"{path}: unexpected tensor {name} {shape}")
        count = int(np.prod(shape))
        if off + 4 * count > len(data):
            raise WeightFileError(f"{path}: tensor {name} runs past end of file")
        params[name] = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float64)
    missing = set(expected) - set(params)
    if missing:
        raise WeightFileError(f"{path}: missing tensors {sorted(missing)[:3]}")
    return params, cfg


# ---------------------------------------------------------------------------
# the model object
# ---------------------------------------------------------------------------

class Denoiser:
    """Immutable weights plus the instrumented, tap-aware forward pass."""

    def __init__(self, cfg: DenoiserConfig = DenoiserConfig(), params: dict | None = None):
        self.cfg = cfg
        params = init_weights(cfg) if params is None else params
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        for v in self.params.values():
            v.setflags(write=False)
        self.layers = layer_ids(cfg)

    @classmethod
    def from_file(cls, path) -> "Denoiser":
        params, cfg = load_weights(path)
        return cls(cfg, params)

    @property
    def self_attention_layers(self) -> list[LayerId]:
        return [l for l in self.layers if l.is_self]

    @property
    def cross_attention_layers(self) -> list[LayerId]:
        return [l for l in self.layers if not l.is_self]

    def level_size(self, lid: LayerId) -> int:
        return self.cfg.level_sizes[lid.level]

    def forward(self, z: np.ndarray, t: int, ctx: np.ndarray, taps: dict | None = None,
                counters: CostCounter | None = None, record: bool = False):
        """Return ``(eps, records)``; ``records`` maps LayerId to recorded arrays when ``record``."""
        c, h, w = z.shape
        if c != self.cfg.latent_channels or h != self.cfg.image_size or w != self.cfg.image_size:
            raise DimensionError(f"latent {z.shape} does not match denoiser config")
        ctx = np.asarray(ctx, dtype=np.float64).reshape(-1, self.cfg.d_ctx)
        if taps:
            unknown = set(taps) - set(self.layers)
            if unknown:
                raise PlanError(f"taps address unknown layers {sorted(map(str, unknown))}")
        hooks = _Hooks(taps, record)
        eps = net_forward(self.params, self.cfg, z.transpose(1, 2, 0), float(t), ctx, np, hooks)
        if counters is not None:
            counters.denoiser_forwards += 1
        return np.ascontiguousarray(eps.transpose(2, 0, 1)), hooks.records
