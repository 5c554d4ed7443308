"""Discrete noise schedule and a deterministic DPM-Solver++(2M) in both directions.

Levels are integers ``t`` in ``[0, T]``. ``alpha_bars[0] == 1`` so level 0 is
the clean signal; ``alpha(t) = sqrt(alpha_bar_t)`` and
``sigma(t) = sqrt(1 - alpha_bar_t)`` are the signal and noise scales and
``lam(t) = log(alpha / sigma)`` is the half log-SNR the solver steps in.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import ConfigError, DimensionError, SequencingError


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray  # betas[t - 1] is the variance added at level t
    alpha_bars: np.ndarray  # length T + 1, alpha_bars[0] == 1
    timesteps: np.ndarray  # strictly decreasing solver grid from T to 0

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def num_steps(self) -> int:
        return len(self.timesteps) - 1

    def alpha(self, t) -> float:
        return float(np.sqrt(self.alpha_bars[t]))

    def sigma(self, t) -> float:
        return float(np.sqrt(1.0 - self.alpha_bars[t]))

    def lam(self, t) -> float:
        s = self.sigma(t)
        return np.inf if s == 0.0 else float(np.log(self.alpha(t)) - np.log(s))

    def with_steps(self, num_solver_steps: int, t_end: int = 0) -> "NoiseSchedule":
        return NoiseSchedule(self.T, self.betas, self.alpha_bars, make_grid(self.T, num_solver_steps, t_end))


def make_grid(T: int, num_steps: int, t_end: int = 0) -> np.ndarray:
    if num_steps < 1 or num_steps > T - t_end:
        raise ConfigError(f"cannot place {num_steps} solver steps between levels {T} and {t_end}")
    grid = np.round(np.linspace(T, t_end, num_steps + 1)).astype(np.int64)
    if np.any(np.diff(grid) >= 0):
        raise ConfigError("solver grid is not strictly decreasing")
    grid.setflags(write=False)
    return grid


def build_schedule(T: int = 1000, beta_min: float = 1e-4, beta_max: float = 2e-2,
                   num_solver_steps: int = 20) -> NoiseSchedule:
    """Linear beta ramp over ``T`` levels with a uniform solver grid."""
    if T < 2 or not (0.0 < beta_min <= beta_max < 1.0):
        raise ConfigError(f"invalid schedule T={T}, beta range [{beta_min}, {beta_max}]")
    if num_solver_steps < 2:
        raise ConfigError("num_solver_steps must be >= 2")
    betas = np.linspace(beta_min, beta_max, T)
    alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    for a in (betas, alpha_bars):
        a.setflags(write=False)
    return NoiseSchedule(T, betas, alpha_bars, make_grid(T, num_solver_steps))


def add_noise(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form forward noising ``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``."""
    if not 0 <= t <= sched.T:
        raise ConfigError(f"level {t} outside [0, {sched.T}]")
    if np.shape(eps) != np.shape(x0):
        raise DimensionError(f"noise shape {np.shape(eps)} != signal shape {np.shape(x0)}")
    return sched.alpha(t) * x0 + sched.sigma(t) * eps


def ddpm_posterior_mean(x_t: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Mean of the ancestral DDPM step ``t -> t-1`` from an epsilon prediction.

    Reference only; the pipeline never samples ancestrally.
    """
    if not 1 <= t <= sched.T:
        raise ConfigError(f"level {t} outside [1, {sched.T}]")
    beta = sched.betas[t - 1]
    return (x_t - beta / np.sqrt(1.0 - sched.alpha_bars[t]) * eps) / np.sqrt(1.0 - beta)


def posterior_mean(x_t: np.ndarray, t: int, s: int, x0: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Mean of ``q(x_s | x_t, x_0)`` for ``s < t``."""
    ab_t, ab_s = sched.alpha_bars[t], sched.alpha_bars[s]
    a_ts = ab_t / ab_s
    return (np.sqrt(ab_s) * (1.0 - a_ts) * x0 + np.sqrt(a_ts) * (1.0 - ab_s) * x_t) / (1.0 - ab_t)


@dataclass
class SolverState:
    """Single-trajectory solver state; mutated in place by :func:`solver_step`."""

    x: np.ndarray
    direction: str = "denoise"  # denoise | invert
    order: int = 2
    step: int = 0
    prev_x0: np.ndarray | None = field(default=None, repr=False)
    prev_h: float | None = None

    def __post_init__(self):
        if self.direction not in ("denoise", "invert"):
            raise ConfigError(f"unknown direction {self.direction!r}")
        if self.order not in (1, 2):
            raise ConfigError("solver order must be 1 or 2")

    def grid(self, sched: NoiseSchedule) -> np.ndarray:
        return sched.timesteps if self.direction == "denoise" else sched.timesteps[::-1]

    def t(self, sched: NoiseSchedule) -> int:
        return int(self.grid(sched)[self.step])

    def done(self, sched: NoiseSchedule) -> bool:
        return self.step >= sched.num_steps


def solver_step(state: SolverState, model_eps: np.ndarray, sched: NoiseSchedule) -> SolverState:
    """Advance ``state`` one grid level using ``model_eps`` evaluated at the current level.

    The epsilon prediction is converted to a data prediction. The first step,
    any step touching the clean level 0, and order-1 states use the
    first-order rule; other steps use the multistep second-order correction.
    """
    if state.done(sched):
        raise SequencingError(f"solver grid exhausted after {state.step} steps")
    if np.shape(model_eps) != np.shape(state.x):
        raise DimensionError(f"model output {np.shape(model_eps)} != latent {np.shape(state.x)}")
    grid = state.grid(sched)
    s, t = int(grid[state.step]), int(grid[state.step + 1])
    a_s, sig_s = sched.alpha(s), sched.sigma(s)
    a_t, sig_t = sched.alpha(t), sched.sigma(t)
    h = sched.lam(t) - sched.lam(s)

    x0 = (state.x - sig_s * model_eps) / a_s
    # first-order rule written so it stays finite when either end has sigma == 0
    x_next = a_t * x0 + sig_t * model_eps
    second = (state.order == 2 and state.prev_x0 is not None and np.isfinite(h)
              and state.prev_h is not None and np.isfinite(state.prev_h))
    if second:
        r = state.prev_h / h
        d1 = (x0 - state.prev_x0) / r
        x_next = x_next - 0.5 * a_t * np.expm1(-h) * d1

    state.x = x_next
    state.prev_x0 = x0
    state.prev_h = h
    state.step += 1
    return state


def run_solver(x: np.ndarray, model: Callable[[np.ndarray, int], np.ndarray], sched: NoiseSchedule,
               direction: str = "denoise", order: int = 2, trajectory: bool = False):
    """Integrate over the whole grid with ``model(x, t) -> eps``.

    Returns the final latent, or every visited latent when ``trajectory``.
    """
    state = SolverState(np.array(x, dtype=np.float64), direction=direction, order=order)
    path = [state.x]
    while not state.done(sched):
        solver_step(state, model(state.x, state.t(sched)), sched)
        path.append(state.x)
    return path if trajectory else state.x
