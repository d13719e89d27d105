"""Variance schedule, forward noising and the noise-prediction loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    num_train_timesteps: int
    beta: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        if self.num_train_timesteps <= 0:
            raise InvalidArgumentError("num_train_timesteps must be positive")
        if not (len(beta) == len(alpha_bar) == self.num_train_timesteps):
            raise InvalidArgumentError("beta and alpha_bar must have num_train_timesteps entries")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise InvalidArgumentError("every beta must lie in (0, 1)")
        if np.any(np.diff(alpha_bar) >= 0):
            raise InvalidArgumentError("alpha_bar must be strictly decreasing")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @classmethod
    def from_betas(cls, beta):
        beta = np.asarray(beta, dtype=np.float64)
        return cls(len(beta), beta, np.cumprod(1.0 - beta))

    @classmethod
    def linear(cls, num_train_timesteps=1000, beta_start=1e-4, beta_end=2e-2):
        return cls.from_betas(np.linspace(beta_start, beta_end, num_train_timesteps))

    @classmethod
    def scaled_linear(cls, num_train_timesteps=1000, beta_start=8.5e-4, beta_end=1.2e-2):
        return cls.from_betas(np.linspace(beta_start ** 0.5, beta_end ** 0.5, num_train_timesteps) ** 2)

    def alpha_bar_at(self, t) -> float:
        """``alpha_bar[t]``, with ``t < 0`` meaning the clean end point (1.0)."""
        return 1.0 if t < 0 else float(self.alpha_bar[t])

    def coefficients(self, t):
        """(sqrt(alpha_bar[t]), sqrt(1 - alpha_bar[t])) for scalar or array t."""
        a = self.alpha_bar[np.asarray(t)]
        return np.sqrt(a), np.sqrt(1.0 - a)


def _generator(rng):
    if isinstance(rng, torch.Generator):
        return rng
    if rng is None:
        raise InvalidArgumentError("a seeded generator (or integer seed) is required")
    return torch.Generator().manual_seed(int(rng))


def sample_noise(shape, rng, dtype=torch.float32) -> torch.Tensor:
    """I.i.d. standard-normal tensor; ``rng`` is a torch.Generator or an int seed."""
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise InvalidArgumentError(f"all dimensions must be positive, got {shape}")
    return torch.randn(shape, generator=_generator(rng), dtype=dtype)


def add_noise(latent, noise, t, schedule: NoiseSchedule) -> torch.Tensor:
    """sqrt(alpha_bar[t]) * latent + sqrt(1 - alpha_bar[t]) * noise.

    ``t`` may be an int or a (B,) integer tensor/array for a batched latent.
    """
    latent = torch.as_tensor(latent)
    noise = torch.as_tensor(noise)
    if latent.shape != noise.shape:
        raise InvalidArgumentError(f"latent shape {tuple(latent.shape)} != noise shape {tuple(noise.shape)}")
    t_arr = np.asarray(t.cpu() if isinstance(t, torch.Tensor) else t)
    if not np.issubdtype(t_arr.dtype, np.integer):
        raise InvalidArgumentError("timesteps must be integers")
    if np.any(t_arr < 0) or np.any(t_arr >= schedule.num_train_timesteps):
        raise InvalidArgumentError(f"timestep out of range [0, {schedule.num_train_timesteps})")
    a, b = schedule.coefficients(t_arr)
    a = torch.as_tensor(a, dtype=latent.dtype)
    b = torch.as_tensor(b, dtype=latent.dtype)
    if a.ndim == 1:
        view = (-1,) + (1,) * (latent.ndim - 1)
        a, b = a.view(view), b.view(view)
    return a * latent + b * noise


def training_loss(predicted, true_noise) -> torch.Tensor:
    """Mean squared error over every channel and spatial position."""
    predicted = torch.as_tensor(predicted)
    true_noise = torch.as_tensor(true_noise)
    if predicted.shape != true_noise.shape:
        raise InvalidArgumentError(
            f"predicted shape {tuple(predicted.shape)} != target shape {tuple(true_noise.shape)}")
    return torch.mean((predicted - true_noise) ** 2)
