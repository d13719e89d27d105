"""External (domain-specific) text encoders and the conditioner that adapts them.

An external encoder is any ``nn.Module`` exposing ``output_dim``,
``max_tokens``, ``count_tokens(text)`` and ``forward(prompts) -> (B, T, output_dim)``.
It is frozen by contract: the conditioner never hands its parameters to an
optimizer and runs it under ``no_grad``.
"""
from __future__ import annotations

import dataclasses

import torch
from torch import nn

from ..errors import ContractError, InvalidArgumentError
from ..nn.text_encoder import TextEncoder
from ..nn.tokenizer import TokenizerSpec, pad_ids, split_words


class ToyDomainEncoder(nn.Module):
    """Frozen randomly-initialised transformer standing in for a pretrained
    domain-specific encoder (RadBERT / SapBERT roles)."""

    def __init__(self, name="radbert-toy", output_dim=48, max_tokens=77, seed=1, tokenizer=None):
        super().__init__()
        self.name = name
        self.output_dim = output_dim
        self.max_tokens = max_tokens
        self.tokenizer = tokenizer or TokenizerSpec.default(max_tokens)
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        self.encoder = TextEncoder(self.tokenizer.vocab_size, output_dim, max_tokens, n_layers=1, heads=4)
        with torch.no_grad():
            self.encoder.token_embedding.weight.normal_(0.0, 1.0)
        torch.random.set_rng_state(gen_state)
        self.calls = 0
        for p in self.parameters():
            p.requires_grad_(False)

    def count_tokens(self, text):
        return len(split_words(text)) + 2

    def forward(self, prompts):
        self.calls += 1
        rows = []
        for text in prompts:
            n = self.count_tokens(text)
            if n > self.max_tokens:
                raise ContractError(f"{self.name}: prompt of {n} tokens exceeds limit {self.max_tokens}")
            body = [self.tokenizer.vocabulary.get(w, self.tokenizer.unk_id) for w in split_words(text)]
            rows.append(pad_ids([self.tokenizer.begin_id, *body, self.tokenizer.end_id], self.tokenizer))
        return self.encoder(torch.tensor(rows, dtype=torch.long))


PLUGINS = {
    "radbert-toy": dict(output_dim=48, seed=11),
    "sapbert-toy": dict(output_dim=64, seed=12),
}


def load_plugin(name, max_tokens=77) -> ToyDomainEncoder:
    if name not in PLUGINS:
        raise InvalidArgumentError(f"unknown text-encoder plugin {name!r}; known: {sorted(PLUGINS)}")
    return ToyDomainEncoder(name, max_tokens=max_tokens, **PLUGINS[name])


class PluginConditioner(nn.Module):
    """External encoder followed by a linear projection head into the U-Net's
    cross-attention space."""

    def __init__(self, plugin: nn.Module, d_text: int, identity_init=True, seed=0):
        super().__init__()
        self.plugin = plugin
        self.head = nn.Linear(plugin.output_dim, d_text)
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            if identity_init and plugin.output_dim == d_text:
                self.head.weight.copy_(torch.eye(d_text))
                self.head.bias.zero_()
            else:
                bound = plugin.output_dim ** -0.5
                self.head.weight.copy_(torch.empty(d_text, plugin.output_dim).uniform_(-bound, bound, generator=g))
                self.head.bias.zero_()
        for p in self.plugin.parameters():
            p.requires_grad_(False)

    def forward(self, prompts):
        with torch.no_grad():
            emb = self.plugin(prompts)
        return self.head(emb.to(self.head.weight.dtype))

    def trainable_parameters(self):
        return dict(self.head.named_parameters(prefix="head"))


def swap_text_encoder(pipeline, plugin, identity_init=True):
    """Return a pipeline conditioned on ``plugin`` (through a projection head).

    The U-Net, VAE and built-in encoder objects are shared with the input
    pipeline; only the conditioning path changes.
    """
    limit = pipeline.tokenizer.max_tokens
    if getattr(plugin, "max_tokens", 0) < limit:
        raise ContractError(
            f"plugin token limit {getattr(plugin, 'max_tokens', None)} is below the pipeline limit {limit}")
    conditioner = PluginConditioner(plugin, pipeline.preset.d_text, identity_init=identity_init)
    conditioner.to(pipeline.dtype)
    return dataclasses.replace(pipeline, conditioner=conditioner)


def restore_text_encoder(pipeline):
    return dataclasses.replace(pipeline, conditioner=None)
