"""Noise schedules and the forward/reverse denoising-diffusion primitives.

Coordinates flow through these functions as plain (N, 2) float arrays; the
sampler in ``guidance`` wraps them back into Placement values at the end.
Intermediate states are never clamped to the canvas - only the final clean
placement is, with clamp events counted by the caller.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta/alpha tables indexed by timestep t in 0..T.

    Index 0 is the identity sentinel: beta[0] = 0, alpha_bar[0] = 1, so
    ``alpha_bar[t]`` is the cumulative signal fraction after t noising steps.
    """

    kind: str
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        if self.T < 1:
            raise ValidationError("schedule needs at least one step")
        for name in ("beta", "alpha", "alpha_bar"):
            arr = getattr(self, name)
            if arr.shape != (self.T + 1,):
                raise ValidationError(f"{name} table must have length T+1")


def make_schedule(kind: str, T: int) -> NoiseSchedule:
    """Build a noise schedule.

    ``linear`` interpolates beta from 1e-4 to 0.02 across T steps; ``cosine``
    uses the squared-cosine alpha_bar construction with betas clipped to
    (0, 0.999].
    """
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    if kind == "linear":
        beta_core = np.linspace(LINEAR_BETA_START, LINEAR_BETA_END, T)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64)
        f = np.cos((steps / T + s) / (1.0 + s) * np.pi / 2.0) ** 2
        alpha_bar_core = f / f[0]
        beta_core = 1.0 - alpha_bar_core[1:] / alpha_bar_core[:-1]
        beta_core = np.clip(beta_core, 1e-8, 0.999)
    else:
        raise ValidationError(f"unknown schedule kind {kind!r}")
    beta = np.concatenate([[0.0], beta_core])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(kind=kind, T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _check_t(schedule: NoiseSchedule, t: int, lo: int = 1) -> None:
    if not (lo <= t <= schedule.T):
        raise ValidationError(f"timestep {t} outside [{lo}, {schedule.T}]")


def q_sample(
    x0: np.ndarray, t: int, schedule: NoiseSchedule, noise: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Diffuse clean coordinates straight to step t.

    x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise. Returns
    (x_t, noise); the noise is the regression target during training.
    """
    _check_t(schedule, t, lo=0)
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise ValidationError(f"shape mismatch {x0.shape} vs {noise.shape}")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise, noise


def predict_x0(
    x_t: np.ndarray, t: int, eps_hat: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Invert q_sample at step t given a noise estimate."""
    _check_t(schedule, t, lo=0)
    ab = schedule.alpha_bar[t]
    if ab <= 0:
        raise ValidationError(f"alpha_bar at t={t} is not positive")
    return (np.asarray(x_t) - np.sqrt(1.0 - ab) * np.asarray(eps_hat)) / np.sqrt(ab)


def ddpm_step(
    x_t: np.ndarray,
    t: int,
    eps_hat: np.ndarray,
    schedule: NoiseSchedule,
    noise: np.ndarray | None,
) -> np.ndarray:
    """One ancestral reverse step x_t -> x_{t-1} with fixed variance beta_t.

    The injected noise is suppressed at t = 1 so the final step is
    deterministic; passing ``noise=None`` is only legal there.
    """
    _check_t(schedule, t)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    beta = schedule.beta[t]
    alpha = schedule.alpha[t]
    ab = schedule.alpha_bar[t]
    mean = (x_t - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
    if t == 1:
        return mean
    if noise is None:
        raise ValidationError("ddpm_step needs noise for t > 1")
    return mean + np.sqrt(beta) * np.asarray(noise)


def ddim_step(
    x_t: np.ndarray, t: int, t_prev: int, eps_hat: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Deterministic (eta = 0) strided reverse step x_t -> x_{t_prev}."""
    _check_t(schedule, t)
    if not (0 <= t_prev < t):
        raise ValidationError(f"t_prev={t_prev} must be below t={t}")
    x0_hat = predict_x0(x_t, t, eps_hat, schedule)
    ab_prev = schedule.alpha_bar[t_prev]
    return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * np.asarray(eps_hat)


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Uniform-stride descending timestep ladder T -> 0 with ``steps`` jumps."""
    if steps < 1:
        raise ValidationError("need at least one sampling step")
    ladder = np.unique(np.round(np.linspace(0, T, steps + 1)).astype(int))
    return list(ladder[::-1])


def training_target(
    x0: np.ndarray,
    t: int | None,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Draw one denoising training example (x_t, eps, t).

    When ``t`` is None it is sampled uniformly from 1..T; the returned noise
    is the regression target for the score network.
    """
    if t is None:
        t = int(rng.integers(1, schedule.T + 1))
    _check_t(schedule, t)
    noise = rng.standard_normal(np.asarray(x0).shape)
    x_t, eps = q_sample(x0, t, schedule, noise)
    return x_t, eps, t


def schedule_to_csv(schedule: NoiseSchedule) -> str:
    """CSV dump (t, beta, alpha_bar) for debugging."""
    buf = io.StringIO()
    buf.write("t,beta,alpha_bar\n")
    for t in range(schedule.T + 1):
        buf.write(f"{t},{schedule.beta[t]!r},{schedule.alpha_bar[t]!r}\n")
    return buf.getvalue()
