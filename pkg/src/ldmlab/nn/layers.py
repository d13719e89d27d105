"""Shared building blocks and parameter bookkeeping helpers."""
from __future__ import annotations

import hashlib
import math

import torch
from torch import nn
from torch.nn import functional as F


class Attention(nn.Module):
    """Multi-head attention; ``context=None`` gives self-attention."""

    def __init__(self, dim, context_dim=None, heads=4):
        super().__init__()
        context_dim = dim if context_dim is None else context_dim
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(context_dim, dim, bias=False)
        self.to_v = nn.Linear(context_dim, dim, bias=False)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, x, context=None):
        context = x if context is None else context
        b, n, d = x.shape
        h = self.heads
        q = self.to_q(x).view(b, n, h, d // h).transpose(1, 2)
        k = self.to_k(context).view(b, context.shape[1], h, d // h).transpose(1, 2)
        v = self.to_v(context).view(b, context.shape[1], h, d // h).transpose(1, 2)
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d // h), dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, n, d)
        return self.to_out(out)


def timestep_embedding(t, dim, max_period=10000.0):
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def snapshot(module: nn.Module) -> dict:
    return {name: p.detach().clone() for name, p in module.named_parameters()}


def changed_parameters(before: dict, after: dict) -> set:
    """Names whose tensors differ bitwise (or changed shape) between two snapshots."""
    changed = set(before) ^ set(after)
    for name in set(before) & set(after):
        a, b = before[name], after[name]
        if a.shape != b.shape or a.dtype != b.dtype:
            changed.add(name)
        elif a.numpy().tobytes() != b.numpy().tobytes():
            changed.add(name)
    return changed


def parameter_hash(module_or_state) -> str:
    if isinstance(module_or_state, nn.Module):
        state = module_or_state.state_dict()
    else:
        state = module_or_state
    h = hashlib.sha256()
    for name in sorted(state):
        t = state[name].detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
