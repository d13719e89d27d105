"""Pipeline handle and guided generation loop."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from ..errors import InvalidArgumentError
from ..nn.layers import parameter_hash
from ..nn.text_encoder import TextEncoder
from ..nn.tokenizer import TokenizerSpec, pad_ids, tokenize
from ..nn.unet import UNet
from ..nn.vae import VAE
from .samplers import SamplerConfig, guided_noise, make_sampler
from .schedule import NoiseSchedule, sample_noise


@dataclass
class ModelPreset:
    image_size: int = 32
    latent_channels: int = 4
    vae_channels: tuple = (16, 32, 64)
    d_text: int = 64
    text_layers: int = 2
    text_heads: int = 4
    max_tokens: int = 77
    unet_channels: tuple = (32, 64)
    temb_dim: int = 128
    num_train_timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    @classmethod
    def tiny(cls):
        """Smallest preset, used for gradient checks and contract tests."""
        return cls(image_size=16, vae_channels=(8, 8), d_text=16, text_layers=1, text_heads=2,
                   unet_channels=(8, 16), temb_dim=16, num_train_timesteps=100)


@dataclass
class Pipeline:
    tokenizer: TokenizerSpec
    text_encoder: TextEncoder
    vae: VAE
    unet: UNet
    schedule: NoiseSchedule
    preset: ModelPreset = field(default_factory=ModelPreset)
    # swapped-in external encoder (see adaptation.plugins); None = built-in encoder
    conditioner: Optional[torch.nn.Module] = None

    @classmethod
    def build(cls, preset: ModelPreset | None = None, seed=0, tokenizer=None):
        preset = preset or ModelPreset()
        tokenizer = tokenizer or TokenizerSpec.default(preset.max_tokens)
        torch.manual_seed(seed)
        text_encoder = TextEncoder(tokenizer.vocab_size, preset.d_text, preset.max_tokens,
                                   preset.text_layers, preset.text_heads)
        vae = VAE(preset.image_size, preset.latent_channels, preset.vae_channels)
        unet = UNet(preset.latent_channels, preset.unet_channels, preset.d_text, preset.temb_dim)
        schedule = NoiseSchedule.linear(preset.num_train_timesteps, preset.beta_start, preset.beta_end)
        pipe = cls(tokenizer, text_encoder, vae, unet, schedule, preset)
        pipe.eval()
        return pipe

    def eval(self):
        for m in self.components().values():
            m.eval()
        return self

    def components(self) -> dict:
        out = {"text_encoder": self.text_encoder, "vae": self.vae, "unet": self.unet}
        if self.conditioner is not None:
            out["conditioner"] = self.conditioner
        return out

    def component_hashes(self) -> dict:
        return {name: parameter_hash(m) for name, m in self.components().items()}

    def copy(self):
        return copy.deepcopy(self)

    def to(self, dtype):
        for m in self.components().values():
            m.to(dtype)
        return self

    @property
    def dtype(self):
        return next(self.unet.parameters()).dtype

    @property
    def latent_shape(self):
        return self.vae.latent_shape

    def prompt_ids(self, prompts) -> torch.Tensor:
        rows = [pad_ids(tokenize(p, self.tokenizer), self.tokenizer) for p in prompts]
        return torch.tensor(rows, dtype=torch.long)

    def encode_prompts(self, prompts, embedding_weight=None) -> torch.Tensor:
        """(B, max_tokens, d_text) conditioning for a list of prompts."""
        if self.conditioner is not None:
            return self.conditioner(list(prompts))
        return self.text_encoder(self.prompt_ids(prompts), embedding_weight=embedding_weight)

    def predict_noise(self, latents, t, context):
        return self.unet(latents, t, context)


def _seeds(config: SamplerConfig, n, seeds):
    if seeds is None:
        return [config.seed + i for i in range(n)]
    if len(seeds) != n:
        raise InvalidArgumentError("need one seed per prompt")
    return list(seeds)


def generate_latents(prompts, model: Pipeline, config: SamplerConfig, seeds=None,
                     callback: Callable | None = None) -> torch.Tensor:
    """Run the guided reverse process; returns final latents (B, C, h, w)."""
    config.validate(model.schedule)
    prompts = list(prompts)
    seeds = _seeds(config, len(prompts), seeds)
    gens = [torch.Generator().manual_seed(int(s)) for s in seeds]
    dtype = model.dtype
    with torch.no_grad():
        cond = model.encode_prompts(prompts)
        guided = config.guidance_scale != 1.0
        if guided:
            uncond = model.encode_prompts([""] * len(prompts))
            context = torch.cat([uncond, cond])
        else:
            context = cond
        latents = torch.stack([sample_noise(model.latent_shape, g, dtype) for g in gens])
        sampler = make_sampler(config, model.schedule)
        for i, t in enumerate(sampler.timesteps):
            t_batch = torch.full((context.shape[0],), int(t), dtype=torch.long)
            model_in = torch.cat([latents, latents]) if guided else latents
            eps = model.predict_noise(model_in, t_batch, context)
            if guided:
                eps_u, eps_c = eps.chunk(2)
                eps = guided_noise(eps_u, eps_c, config.guidance_scale)
            if callback is not None:
                callback(i, int(t), eps)
            latents = sampler.step(eps, i, latents, gens)
    return latents


def generate_batch(prompts, model: Pipeline, config: SamplerConfig, seeds=None, callback=None) -> np.ndarray:
    """Images (B, H, W) in [0, 1]; image ``i`` uses seed ``seeds[i]``
    (default ``config.seed + i``)."""
    latents = generate_latents(prompts, model, config, seeds, callback)
    with torch.no_grad():
        images = model.vae.decode(latents)[:, 0]
    return images.clamp(0.0, 1.0).numpy()


def generate(prompt: str, model: Pipeline, config: SamplerConfig, callback=None) -> np.ndarray:
    """One (H, W) image for ``prompt``; deterministic given ``config.seed``."""
    return generate_batch([prompt], model, config, [config.seed], callback)[0]


def generate_many(prompts, model: Pipeline, config: SamplerConfig, seeds=None, batch_size=128) -> np.ndarray:
    """Chunked :func:`generate_batch` for long prompt lists."""
    prompts = list(prompts)
    seeds = _seeds(config, len(prompts), seeds)
    chunks = []
    for start in range(0, len(prompts), batch_size):
        chunks.append(generate_batch(prompts[start:start + batch_size], model, config,
                                     seeds[start:start + batch_size]))
    if not chunks:
        return np.zeros((0, model.vae.image_size, model.vae.image_size), dtype=np.float32)
    return np.concatenate(chunks)
