"""Run configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .core import ConfigError

SECTION = "run"


@dataclass(frozen=True)
class RunConfig:
    # schedule
    T: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 2e-2
    num_solver_steps: int = 20
    # steering and guidance
    alpha: float = 0.2
    guidance_scale: float = 2.5
    window: str = "prefix"  # prefix | suffix
    stage: str = "pre"  # pre | post
    infusion: bool = True
    cross_infusion: bool = True
    obj_infusion: bool = True
    rca: bool = True
    cd_keys: str = "gather"  # gather | masked
    samplers: int = 2  # 2, or 4 for the extra-extractor ablation
    # initialisation and background
    init: str = "replace"  # replace | additive
    bg_noise: str = "inversion"  # inversion | qsample
    place: str = "bbox"  # bbox | canvas
    # seeds
    weight_seed: int = 0
    noise_seed: int = 0
    text_seed: int = 0
    # model and codec
    codec: str = "identity"  # identity | patchify
    patch_factor: int = 2
    widths: str = "32,64"
    heads: int = 1
    d_ctx: int = 16
    weights: str = ""
    vocab: str = ""
    # outputs
    dump_attn: bool = False
    dump_saliency: bool = False

    def __post_init__(self):
        choices = {"window": ("prefix", "suffix"), "stage": ("pre", "post"), "cd_keys": ("gather", "masked"),
                   "init": ("replace", "additive"), "bg_noise": ("inversion", "qsample"),
                   "place": ("bbox", "canvas"), "codec": ("identity", "patchify")}
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if self.samplers not in (2, 4):
            raise ConfigError("samplers must be 2 or 4")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha {self.alpha} outside [0, 1]")
        if self.guidance_scale <= 0:
            raise ConfigError("guidance_scale must be > 0")

    @property
    def width_tuple(self) -> tuple[int, ...]:
        return tuple(int(w) for w in self.widths.split(","))

    def updated(self, **changes) -> "RunConfig":
        return replace(self, **coerce(changes))


def coerce(values: dict) -> dict:
    """Convert string values to the field types of :class:`RunConfig`."""
    types = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for key, raw in values.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        if not isinstance(raw, str):
            out[key] = raw
            continue
        kind = types[key]
        raw = raw.strip().strip('"')
        try:
            if kind == "bool":
                if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(raw)
                out[key] = raw.lower() in ("true", "1", "yes")
            elif kind == "int":
                out[key] = int(raw)
            elif kind == "float":
                out[key] = float(raw)
            else:
                out[key] = raw
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return out


def read_config(path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    if not text.lstrip().startswith("["):
        text = f"[{SECTION}]\n{text}"
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e
    values = dict(parser[SECTION]) if parser.has_section(SECTION) else {}
    return RunConfig(**coerce(values))


def write_config(cfg: RunConfig, path) -> None:
    """Write every field, so the file alone reproduces the run."""
    lines = [f"[{SECTION}]"]
    for key, value in asdict(cfg).items():
        lines.append(f"{key} = {str(value).lower() if isinstance(value, bool) else value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
