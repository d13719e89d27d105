"""Reverse-process samplers: strided ancestral (DDPM) and F-PNDM.

Both expose the same session interface: ``timesteps`` lists the timestep at
which the model must be evaluated for each call, and ``step`` consumes the
model output for call ``index`` and returns the next sample.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import InvalidArgumentError, SamplerStateError
from .schedule import NoiseSchedule

METHODS = ("ancestral", "pndm")
PNDM_WARMUP_STEPS = 3


@dataclass
class SamplerConfig:
    method: str = "pndm"
    num_inference_steps: int = 50
    guidance_scale: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"unknown sampler method {self.method!r}")
        if self.num_inference_steps <= 0:
            raise InvalidArgumentError("num_inference_steps must be positive")
        if self.guidance_scale < 0:
            raise InvalidArgumentError("guidance_scale must be non-negative")

    def validate(self, schedule: NoiseSchedule):
        if self.num_inference_steps > schedule.num_train_timesteps:
            raise InvalidArgumentError(
                f"num_inference_steps {self.num_inference_steps} exceeds "
                f"num_train_timesteps {schedule.num_train_timesteps}")
        return self


def inference_grid(schedule: NoiseSchedule, num_inference_steps: int) -> np.ndarray:
    """Descending timesteps ``(N-1)*k, ..., k, 0`` with ``k = T // N``."""
    stride = schedule.num_train_timesteps // num_inference_steps
    return np.arange(num_inference_steps)[::-1] * stride


def transfer(sample, eps, schedule: NoiseSchedule, t, t_prev):
    """Move ``sample`` from timestep t to t_prev along the deterministic
    noise-prediction path (t_prev < 0 is the clean end point)."""
    a_t = schedule.alpha_bar_at(t)
    a_p = schedule.alpha_bar_at(t_prev)
    denom = np.sqrt(a_t) * (np.sqrt((1.0 - a_p) * a_t) + np.sqrt((1.0 - a_t) * a_p))
    return float(np.sqrt(a_p / a_t)) * sample - float((a_p - a_t) / denom) * eps


def _noise_like(sample, generator):
    if isinstance(generator, (list, tuple)):
        if len(generator) != sample.shape[0]:
            raise InvalidArgumentError("need one generator per batch element")
        return torch.stack([torch.randn(sample.shape[1:], generator=g, dtype=sample.dtype) for g in generator])
    return torch.randn(sample.shape, generator=generator, dtype=sample.dtype)


class AncestralSampler:
    def __init__(self, schedule: NoiseSchedule, num_inference_steps: int, generator=None):
        SamplerConfig("ancestral", num_inference_steps).validate(schedule)
        self.schedule = schedule
        self.grid = inference_grid(schedule, num_inference_steps)
        self.timesteps = self.grid.copy()
        self.generator = generator
        self.counter = 0

    def prev_timestep(self, index):
        return int(self.grid[index + 1]) if index + 1 < len(self.grid) else -1

    def step(self, model_output, index, sample, generator=None):
        if not 0 <= index < len(self.timesteps):
            raise InvalidArgumentError(f"step index {index} outside [0, {len(self.timesteps)})")
        generator = self.generator if generator is None else generator
        t, t_prev = int(self.grid[index]), self.prev_timestep(index)
        a_t = self.schedule.alpha_bar_at(t)
        a_p = self.schedule.alpha_bar_at(t_prev)
        beta = 1.0 - a_t / a_p
        x0 = (sample - float(np.sqrt(1.0 - a_t)) * model_output) / float(np.sqrt(a_t))
        c_x0 = float(np.sqrt(a_p) * beta / (1.0 - a_t))
        c_xt = float(np.sqrt(a_t / a_p) * (1.0 - a_p) / (1.0 - a_t))
        mean = c_x0 * x0 + c_xt * sample
        var = (1.0 - a_p) / (1.0 - a_t) * beta
        self.counter = index + 1
        if var <= 0.0:
            return mean
        if generator is None:
            raise SamplerStateError("ancestral sampling needs a generator for the step noise")
        return mean + float(np.sqrt(var)) * _noise_like(sample, generator)


class PNDMSampler:
    """Pseudo-numerical sampler: Runge-Kutta warm-up, then 4-step linear multistep.

    Each warm-up step costs four model evaluations at (t, t_mid, t_mid, t_next);
    later steps cost one. Model outputs at the start of every step form the
    history used by the multistep combination.
    """

    def __init__(self, schedule: NoiseSchedule, num_inference_steps: int, warmup_steps=PNDM_WARMUP_STEPS):
        SamplerConfig("pndm", num_inference_steps).validate(schedule)
        self.schedule = schedule
        self.grid = inference_grid(schedule, num_inference_steps)
        self.warmup = min(warmup_steps, num_inference_steps)
        evals, plan = [], []
        for k, t in enumerate(self.grid):
            t = int(t)
            t_next = int(self.grid[k + 1]) if k + 1 < len(self.grid) else -1
            if k < self.warmup:
                t_mid = (t + t_next) // 2
                for stage, te in enumerate((t, t_mid, t_mid, t_next)):
                    evals.append(max(te, 0))
                    plan.append((k, stage, t, t_mid, t_next))
            else:
                evals.append(t)
                plan.append((k, None, t, None, t_next))
        self.timesteps = np.asarray(evals)
        self._plan = plan
        self.counter = 0
        self.ets = []
        self._x_t = None
        self._acc = None

    def step(self, model_output, index, sample, generator=None):
        if index != self.counter:
            raise SamplerStateError(
                f"PNDM step {index} called out of order (expected {self.counter}); history missing")
        if index >= len(self._plan):
            raise InvalidArgumentError(f"step index {index} beyond the {len(self._plan)}-call grid")
        k, stage, t, t_mid, t_next = self._plan[index]
        self.counter += 1
        if stage is None:
            self.ets.append(model_output)
            e = self.ets
            eps = (55 * e[-1] - 59 * e[-2] + 37 * e[-3] - 9 * e[-4]) / 24
            return transfer(sample, eps, self.schedule, t, t_next)
        if stage == 0:
            self._x_t = sample
            self.ets.append(model_output)
            self._acc = model_output / 6
            return transfer(sample, model_output, self.schedule, t, t_mid)
        if stage == 1:
            self._acc = self._acc + model_output / 3
            return transfer(self._x_t, model_output, self.schedule, t, t_mid)
        if stage == 2:
            self._acc = self._acc + model_output / 3
            return transfer(self._x_t, model_output, self.schedule, t, t_next)
        eps = self._acc + model_output / 6
        x_t, self._x_t, self._acc = self._x_t, None, None
        return transfer(x_t, eps, self.schedule, t, t_next)


def make_sampler(config: SamplerConfig, schedule: NoiseSchedule, generator=None):
    config.validate(schedule)
    if config.method == "pndm":
        return PNDMSampler(schedule, config.num_inference_steps)
    if generator is None:
        generator = torch.Generator().manual_seed(config.seed)
    return AncestralSampler(schedule, config.num_inference_steps, generator)


def denoise_step(noisy, predicted_noise, step_index, config: SamplerConfig, schedule: NoiseSchedule,
                 session=None, generator=None):
    """One reverse update.

    ``session`` (from :func:`make_sampler`) carries sampler state across calls.
    Without one, a throwaway session is created; that is fine for the
    stateless ancestral method but only valid for the first PNDM call.
    """
    if session is None:
        if config.method == "pndm" and step_index != 0:
            raise SamplerStateError(f"PNDM step {step_index} requested without sampler history")
        session = make_sampler(config, schedule, generator)
    return session.step(predicted_noise, step_index, noisy, generator)


def guided_noise(eps_uncond, eps_cond, guidance_scale):
    """Classifier-free guidance combination."""
    return eps_uncond + guidance_scale * (eps_cond - eps_uncond)
