"""Training-free image composition by progressive attention steering over a toy diffusion model."""
from .codec import CodecConfig, decode, encode
from .compositor import Composer, CompositionRequest, Diagnostics, compose, expected_forwards
from .config import RunConfig
from .core import ComposerError, TokenIndexMap, downsample_mask, scatter, segment
from .denoiser import CostCounter, Denoiser, DenoiserConfig, LayerId
from .prompt import PromptSpec, parse_tagged_prompt
from .scheduler import NoiseSchedule, add_noise, build_schedule, solver_step

__version__ = "0.1.0"

__all__ = [
    "CodecConfig", "decode", "encode",
    "Composer", "CompositionRequest", "Diagnostics", "compose", "expected_forwards",
    "RunConfig",
    "ComposerError", "TokenIndexMap", "downsample_mask", "scatter", "segment",
    "CostCounter", "Denoiser", "DenoiserConfig", "LayerId",
    "PromptSpec", "parse_tagged_prompt",
    "NoiseSchedule", "add_noise", "build_schedule", "solver_step",
]
