"""Command-line driver: ``compose``, ``bench`` and ``selftest``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
from pathlib import Path

import numpy as np

from . import imageio
from .compositor import Composer, CompositionRequest, expected_forwards
from .config import RunConfig, coerce, read_config, write_config
from .core import ComposerError, DimensionError
from .denoiser import CostCounter
from .guidance import normalize01
from .prompt import PromptSpec, Vocabulary, default_vocabulary

log = logging.getLogger("steercompose")


def _load_config(args) -> RunConfig:
    cfg = read_config(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ComposerError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value
    if getattr(args, "weights", None):
        overrides["weights"] = args.weights
    seed = os.environ.get("PRIME_SEED") or (str(args.seed) if getattr(args, "seed", None) is not None else None)
    if seed is not None:
        overrides["noise_seed"] = seed
    if getattr(args, "dump_attn", False):
        overrides["dump_attn"] = True
    if getattr(args, "dump_saliency", False):
        overrides["dump_saliency"] = True
    return cfg.updated(**coerce(overrides))


def _read_prompt(args, cfg: RunConfig) -> PromptSpec:
    if args.prompt:
        try:
            text = Path(args.prompt).read_text(encoding="utf-8").strip()
        except OSError as e:
            raise imageio.ImageFileError(f"cannot read prompt file {args.prompt}: {e.strerror}") from None
        if "\n" in text:
            raise ComposerError(f"prompt file {args.prompt} must hold a single line")
    else:
        text = args.caption or ""
    vocab = Vocabulary.from_file(cfg.vocab) if cfg.vocab else default_vocabulary()
    return PromptSpec.from_text(text, vocab)


def _write_dumps(out: Path, diag) -> list[Path]:
    written = []
    for (layer, step), grid in sorted(diag.attention.items()):
        img, lo, hi = normalize01(grid)
        p = out.parent / f"attn_L{layer}_t{step}.png"
        imageio.write_gray(p, img)
        p.with_suffix(".txt").write_text(f"min {lo!r}\nmax {hi!r}\n")
        written.append(p)
    if diag.saliency is not None:
        img, lo, hi = normalize01(diag.saliency)
        p = out.parent / "saliency.png"
        imageio.write_gray(p, img)
        p.with_suffix(".txt").write_text(f"min {lo!r}\nmax {hi!r}\nsteps {len(diag.saliency_steps)}\n")
        written.append(p)
    return written


def cmd_compose(args) -> int:
    cfg = _load_config(args)
    background = imageio.read_image(args.background)
    obj = imageio.read_image(args.object)
    m_obj = imageio.read_mask(args.obj_mask)
    m_fg = imageio.read_mask(args.fg_mask)
    if m_obj.shape != m_fg.shape:
        raise DimensionError(f"mask sizes differ: {args.obj_mask} is {m_obj.shape}, {args.fg_mask} is {m_fg.shape}")
    if np.any(m_obj & ~m_fg):
        raise DimensionError(f"mask containment violated: object mask {args.obj_mask} "
                             f"is not contained in foreground mask {args.fg_mask}")
    prompt = _read_prompt(args, cfg)
    req = CompositionRequest(background, obj, m_obj, m_fg, prompt, cfg)
    composer = Composer(cfg, image_size=background.shape[0])
    image, diag = composer.compose(req)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    imageio.write_image(out, image)
    write_config(cfg, out.with_name(out.name + ".config.ini"))
    ledger = diag.ledger(composer.schedule.num_steps)
    ledger["expected_composition_forwards"] = expected_forwards(
        composer.schedule.num_steps, len(diag.steered_steps), cfg.samplers)
    out.with_name(out.name + ".ledger.json").write_text(json.dumps(ledger, indent=2, sort_keys=True) + "\n")
    if cfg.dump_attn or cfg.dump_saliency:
        if not cfg.dump_attn:
            diag.attention.clear()
        if not cfg.dump_saliency:
            diag.saliency = None
        _write_dumps(out, diag)
    print(json.dumps({"ledger": ledger, "wall_time": diag.counters.wall_time,
                      "out_of_range": diag.out_of_range}, indent=2, sort_keys=True))
    return 0


def synthetic_request(cfg: RunConfig, size: int, seed: int) -> CompositionRequest:
    rng = np.random.default_rng(seed)
    m_obj = np.zeros((size, size), bool)
    m_fg = np.zeros((size, size), bool)
    q = size // 4
    m_obj[q + 1:3 * q - 1, q + 1:3 * q - 1] = True
    m_fg[q - 1:3 * q + 1, q - 1:3 * q + 1] = True
    prompt = PromptSpec.from_text("a photo of a <ref> red circle <ref> on a blue background")
    return CompositionRequest(rng.random((size, size, 3)), rng.random((q * 2, q * 2, 3)), m_obj, m_fg, prompt, cfg)


def run_bench(cfg: RunConfig, repeats: int = 10, size: int = 16, seed: int = 0) -> dict:
    """Time the composition phase for the 2-sampler pipeline and the 4-sampler ablation."""
    variants = {"2-sampler": cfg.updated(samplers=2), "4-sampler": cfg.updated(samplers=4)}
    composers = {k: Composer(v, image_size=size) for k, v in variants.items()}
    reqs = {k: synthetic_request(v, size, seed) for k, v in variants.items()}
    stores = {k: composers[k].invert_inputs(reqs[k]) for k in variants}
    times = {k: [] for k in variants}
    forwards = {}
    composers["2-sampler"].compose(reqs["2-sampler"], stores["2-sampler"])  # warm-up
    for _ in range(repeats):
        for k in variants:  # interleaved so drift hits both variants alike
            counters = CostCounter()
            _, diag = composers[k].compose(reqs[k], stores[k], counters)
            times[k].append(counters.wall_time["composition"])
            forwards[k] = diag.ledger(composers[k].schedule.num_steps)["composition_forwards"]
    report = {
        k: {"composition_forwards": forwards[k], "median_s": statistics.median(times[k]),
            "mean_s": statistics.fmean(times[k]), "total_s": sum(times[k])}
        for k in variants
    }
    report["forward_ratio"] = forwards["2-sampler"] / forwards["4-sampler"]
    report["repeats"] = repeats
    return report


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    report = run_bench(cfg, args.repeats, args.size, args.seed or 0)
    print(json.dumps(report, indent=2, sort_keys=True))
    ours, ablation = report["2-sampler"], report["4-sampler"]
    if cfg.alpha > 0 and not ours["composition_forwards"] < ablation["composition_forwards"]:
        print("FAIL: 2-sampler pipeline does not use fewer forwards", file=sys.stderr)
        return 1
    if cfg.alpha == 0 and ours["composition_forwards"] != ablation["composition_forwards"]:
        print("FAIL: variants differ with an empty steering window", file=sys.stderr)
        return 1
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_checks

    results = run_checks(args.weights)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}" + (f": {r.detail}" if r.detail else ""))
    failed = sum(not r.ok for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="steercompose", description="Training-free attention-steered image composition.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value run config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--weights", help="weight file, or builtin:toy16")
        p.add_argument("--seed", type=int, help="noise seed (PRIME_SEED overrides)")

    p = sub.add_parser("compose", help="composite an object into a background")
    p.add_argument("--background", required=True)
    p.add_argument("--object", required=True)
    p.add_argument("--obj-mask", required=True)
    p.add_argument("--fg-mask", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--prompt", help="file holding a single-line caption with <ref> tags")
    group.add_argument("--caption", help="caption text given inline")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-attn", action="store_true", help="write attn_L{layer}_t{step}.png next to --out")
    p.add_argument("--dump-saliency", action="store_true", help="write saliency.png next to --out")
    common(p)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("bench", help="forward counts and wall time, 2-sampler vs 4-sampler")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--size", type=int, default=16)
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("selftest", help="run the built-in property checks")
    p.add_argument("--weights", help="also verify this weight file")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, imageio.ImageFileError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ComposerError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
