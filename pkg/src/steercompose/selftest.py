"""Named property checks on tiny shapes, runnable without pytest (``steercompose selftest``)."""
from __future__ import annotations

import traceback
from dataclasses import dataclass

import numpy as np

from . import codec
from .codec import CodecConfig
from .compositor import Composer, CompositionRequest, expected_forwards
from .config import RunConfig
from .core import downsample_mask, scatter, segment, token_maps
from .correlation import extract_prior_attention, reassemble
from .denoiser import CostCounter, Denoiser, DenoiserConfig, load_weights, softmax
from .guidance import extended_cfg, standard_cfg
from .prompt import PromptSpec, embed, parse_tagged_prompt
from .scheduler import add_noise, build_schedule, run_solver
from .steering import SteeringPolicy, build_infusion_plan, build_rca_taps, infusion_window

TINY = DenoiserConfig(image_size=8, widths=(8, 16), d_ctx=8, weight_seed=3)
CHECKS = []


def check(name):
    def deco(fn):
        CHECKS.append((name, fn))
        return fn
    return deco


def _rng(seed=0):
    return np.random.default_rng(seed)


def _masks(size=8):
    m_obj = np.zeros((size, size), bool)
    m_obj[3:5, 3:5] = True
    m_fg = np.zeros((size, size), bool)
    m_fg[2:6, 2:6] = True
    return m_obj, m_fg


@check("core.segment_scatter_roundtrip")
def _():
    z = _rng().standard_normal((3, 6, 6))
    m = _rng(1).random((6, 6)) < 0.4
    assert np.array_equal(scatter(segment(z, m), m, z), z)


@check("core.downsample_preserves_containment")
def _():
    for seed in range(20):
        a = _rng(seed).random((8, 8)) < 0.2
        b = a | (_rng(seed + 100).random((8, 8)) < 0.3)
        da, db = downsample_mask(a, 2), downsample_mask(b, 2)
        assert np.array_equal(da & db, da)


@check("prompt.tag_parsing_example")
def _():
    words, idx = parse_tagged_prompt("a cartoon animation of a <ref> white fox <ref> in the forest")
    assert idx == {5, 6} and words[5:7] == ["white", "fox"]


@check("prompt.embed_deterministic")
def _():
    assert np.array_equal(embed([1, 2, 3], 8, 4), embed([1, 2, 3], 8, 4))


@check("codec.roundtrip")
def _():
    img = _rng().random((8, 8, 3))
    for cfg in (CodecConfig(), CodecConfig("patchify", 2)):
        assert np.abs(codec.decode(codec.encode(img, cfg), cfg) - img).max() <= 1e-6


@check("codec.rotation_orthonormal")
def _():
    r = codec.rotation(12, 0)
    assert np.abs(r.T @ r - np.eye(12)).max() <= 1e-6


@check("scheduler.alpha_bar_strictly_decreasing")
def _():
    s = build_schedule()
    assert s.alpha_bars[0] == 1.0 and np.all(np.diff(s.alpha_bars) < 0)
    assert len(s.timesteps) == 21 and s.timesteps[0] == 1000 and s.timesteps[-1] == 0


@check("scheduler.invert_denoise_roundtrip")
def _():
    s = build_schedule()
    x0, e = _rng().standard_normal(16), _rng(1).standard_normal(16)
    zt = run_solver(x0, lambda x, t: e, s, "invert")
    assert np.abs(zt - add_noise(x0, s.T, e, s)).max() <= 1e-6
    assert np.abs(run_solver(zt, lambda x, t: e, s) - x0).max() <= 1e-6


@check("denoiser.deterministic")
def _():
    d = Denoiser(TINY)
    z, ctx = _rng().standard_normal((3, 8, 8)), embed([1, 2], 8)
    assert np.array_equal(d.forward(z, 500, ctx)[0], Denoiser(TINY).forward(z, 500, ctx)[0])


@check("denoiser.attention_matches_two_loop_oracle")
def _():
    d = Denoiser(TINY)
    z = _rng().standard_normal((3, 8, 8))
    _, rec = d.forward(z, 300, embed([1], 8), record=True)
    lid = d.self_attention_layers[0]
    f = rec[lid]["features"]
    wq, wk = d.params[f"{lid}.q"], d.params[f"{lid}.k"]
    n = f.shape[0]
    logits = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            logits[i, j] = sum((f[i] @ wq)[c] * (f[j] @ wk)[c] for c in range(wq.shape[1])) / np.sqrt(wq.shape[1])
    assert np.abs(softmax(logits, np) - rec[lid]["probs"][0]).max() <= 1e-5


@check("denoiser.forward_counter_exact")
def _():
    d, c = Denoiser(TINY), CostCounter()
    z = np.zeros((3, 8, 8))
    for _ in range(3):
        d.forward(z, 10, np.zeros((0, 8)), counters=c)
    assert c.denoiser_forwards == 3


@check("correlation.row_partition_reassembles")
def _():
    d = Denoiser(TINY)
    m_obj, _ = _masks()
    maps = token_maps(m_obj, TINY.level_sizes)
    z = _rng().standard_normal((3, 8, 8))
    b = extract_prior_attention(d, z, z * 0.5, 400, embed([1], 8), maps)
    for lid, prior in b.layers.items():
        full = reassemble(prior, maps[prior.size])
        assert full.shape[1:] == (prior.size**2, maps[prior.size].n)


@check("steering.decoder_only_object_infusion")
def _():
    d = Denoiser(TINY)
    m_obj, _ = _masks()
    maps = token_maps(m_obj, TINY.level_sizes)
    z = _rng().standard_normal((3, 8, 8))
    plan = build_infusion_plan(extract_prior_attention(d, z, z, 400, embed([1], 8), maps), maps,
                               SteeringPolicy.for_denoiser(d))
    for lid, tap in plan.items():
        assert lid.is_decoder or all(b.source != "obj" for b in tap.blocks)


@check("steering.infused_rows_stochastic")
def _():
    d = Denoiser(TINY)
    m_obj, _ = _masks()
    maps = token_maps(m_obj, TINY.level_sizes)
    z = _rng().standard_normal((3, 8, 8))
    for stage in ("pre", "post"):
        pol = SteeringPolicy.for_denoiser(d, stage=stage)
        plan = build_infusion_plan(extract_prior_attention(d, z, 0.3 * z, 400, embed([1], 8), maps, stage=stage),
                                   maps, pol)
        _, rec = d.forward(z, 400, embed([1], 8), taps=plan, record=True)
        for lid in d.self_attention_layers:
            p = rec[lid]["probs"]
            assert p.min() >= 0 and np.abs(p.sum(-1) - 1).max() <= 1e-6


@check("steering.rca_confinement")
def _():
    d = Denoiser(TINY)
    m_obj, _ = _masks()
    taps = build_rca_taps(d, m_obj, {1})
    _, rec = d.forward(_rng().standard_normal((3, 8, 8)), 200, embed([4, 5, 6], 8), taps=taps, record=True)
    for lid in d.cross_attention_layers:
        outside = ~taps[lid].mask
        assert np.all(rec[lid]["probs"][:, outside, 1] == 0.0)


@check("steering.window_is_prefix")
def _():
    steered = [i for i in range(20) if infusion_window(i, 20, 0.2)]
    assert steered == [0, 1, 2, 3]


@check("guidance.cfg_algebra")
def _():
    a, b = _rng().standard_normal(5), _rng(1).standard_normal(5)
    assert np.array_equal(extended_cfg(a, a, a, a, 2.5), a)
    assert np.allclose(extended_cfg(a, b, a, b, 5.0), standard_cfg(a, b, 5.0), rtol=0, atol=1e-12)


def _tiny_request(cfg: RunConfig):
    m_obj, m_fg = _masks()
    rng = _rng(7)
    return CompositionRequest(rng.random((8, 8, 3)), rng.random((3, 3, 3)), m_obj, m_fg,
                              PromptSpec.from_text("a <ref> red circle <ref> on a blue background"), cfg)


@check("compositor.background_exact_and_ledger")
def _():
    cfg = RunConfig(num_solver_steps=10, widths="8,16", d_ctx=8)
    req = _tiny_request(cfg)
    img, diag = Composer(cfg, Denoiser(TINY)).compose(req)
    assert np.abs(img - req.background)[~req.m_fg].max() <= 1e-6
    led = diag.ledger(10)
    assert led["composition_forwards"] == expected_forwards(10, 2)


@dataclass
class Result:
    name: str
    ok: bool
    detail: str = ""


def run_checks(weights: str | None = None) -> list[Result]:
    results = []
    checks = list(CHECKS)
    if weights:
        def weights_check():
            params, cfg = load_weights(weights)
            z = np.zeros((cfg.latent_channels, cfg.image_size, cfg.image_size))
            eps, _ = Denoiser(cfg, params).forward(z, 500, np.zeros((0, cfg.d_ctx)))
            assert np.isfinite(eps).all()
        checks.insert(0, ("weights.file_loads_and_verifies", weights_check))
    for name, fn in checks:
        try:
            fn()
            results.append(Result(name, True))
        except Exception as e:  # report and keep going
            detail = f"{type(e).__name__}: {e}" if str(e) else traceback.format_exc(limit=1).strip().splitlines()[-1]
            results.append(Result(name, False, detail))
    return results
