"""Diffusion noise schedule and the closed-form forward process."""

import math
from dataclasses import dataclass

import numpy as np

ALPHA_MIN = 0.001
ALPHA_MAX = 0.9999


@dataclass(frozen=True)
class NoiseSchedule:
    alpha: np.ndarray  # per-step retention factors, in (0, 1)
    alpha_bar: np.ndarray  # exact cumulative products of alpha

    def __post_init__(self):
        if len(self.alpha) < 2:
            raise ValueError("schedule needs at least 2 steps")

    @property
    def n_steps(self):
        return len(self.alpha)


def make_cosine_schedule(n_steps: int, s: float = 0.008) -> NoiseSchedule:
    """Cosine alpha-bar schedule.

    alpha_bar[k] = cos^2(((k+1)/K + s)/(1+s) * pi/2) / cos^2((s/(1+s)) * pi/2),
    with per-step alphas taken as successive ratios and clamped to
    [0.001, 0.9999].  alpha_bar is then rebuilt as the exact cumulative
    product of the clamped alphas so the construction identity holds.
    """
    if n_steps < 2:
        raise ValueError(f"n_steps must be >= 2, got {n_steps}")
    k = np.arange(n_steps + 1)
    f = np.cos((k / n_steps + s) / (1.0 + s) * math.pi / 2.0) ** 2
    ab = f[1:] / f[0]
    alpha = np.empty(n_steps)
    alpha[0] = ab[0]
    alpha[1:] = ab[1:] / ab[:-1]
    alpha = np.clip(alpha, ALPHA_MIN, ALPHA_MAX)
    return NoiseSchedule(alpha=alpha, alpha_bar=np.cumprod(alpha))


def forward_noise(tau_0, k, epsilon, schedule: NoiseSchedule):
    """Noise a clean segment to step k:  sqrt(ab_k) tau_0 + sqrt(1-ab_k) eps."""
    tau_0 = np.asarray(tau_0, dtype=float)
    epsilon = np.asarray(epsilon, dtype=float)
    if tau_0.shape != epsilon.shape:
        raise ValueError(f"epsilon shape {epsilon.shape} does not match tau_0 shape {tau_0.shape}")
    if not 0 <= int(k) < schedule.n_steps:
        raise ValueError(f"step index {k} outside [0, {schedule.n_steps})")
    ab = schedule.alpha_bar[int(k)]
    return math.sqrt(ab) * tau_0 + math.sqrt(1.0 - ab) * epsilon
