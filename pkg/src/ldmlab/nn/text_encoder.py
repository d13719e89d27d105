from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from ..errors import InvalidArgumentError
from .layers import Attention


class TransformerBlock(nn.Module):
    def __init__(self, dim, heads=4, mlp_ratio=4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads=heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * mlp_ratio), nn.GELU(), nn.Linear(dim * mlp_ratio, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TextEncoder(nn.Module):
    """Token embedding + learned positions + pre-norm transformer blocks."""

    def __init__(self, vocab_size, d_text=64, max_tokens=77, n_layers=2, heads=4):
        super().__init__()
        self.d_text = d_text
        self.max_tokens = max_tokens
        self.token_embedding = nn.Embedding(vocab_size, d_text)
        self.position_embedding = nn.Parameter(torch.randn(max_tokens, d_text) * 0.02)
        self.blocks = nn.ModuleList(TransformerBlock(d_text, heads) for _ in range(n_layers))
        self.final_norm = nn.LayerNorm(d_text)
        nn.init.normal_(self.token_embedding.weight, std=0.02)

    @property
    def vocab_size(self):
        return self.token_embedding.num_embeddings

    def forward(self, ids, embedding_weight=None):
        """ids: (B, T) int64 -> (B, T, d_text).

        ``embedding_weight`` overrides the token table (used when a single
        new row is trained while the stored table stays frozen).
        """
        weight = self.token_embedding.weight if embedding_weight is None else embedding_weight
        x = F.embedding(ids, weight) + self.position_embedding[: ids.shape[1]]
        for block in self.blocks:
            x = block(x)
        return self.final_norm(x)

    def add_token_row(self, init=None):
        """Grow the token table by one row; returns the new row index."""
        old = self.token_embedding
        new = nn.Embedding(old.num_embeddings + 1, old.embedding_dim)
        new = new.to(dtype=old.weight.dtype)
        with torch.no_grad():
            new.weight[:-1] = old.weight
            new.weight[-1] = old.weight.mean(0) if init is None else init
        self.token_embedding = new
        return new.num_embeddings - 1


def encode_text(tokens, enc: TextEncoder) -> torch.Tensor:
    """Encode one token id sequence to a (token_count, d_text) embedding."""
    ids = torch.as_tensor(list(tokens), dtype=torch.long)
    if ids.numel() == 0:
        raise InvalidArgumentError("empty token sequence")
    if int(ids.max()) >= enc.vocab_size or int(ids.min()) < 0:
        raise InvalidArgumentError(f"token id out of range for vocabulary of {enc.vocab_size}")
    if ids.numel() > enc.max_tokens:
        raise InvalidArgumentError(f"{ids.numel()} tokens exceed encoder limit {enc.max_tokens}")
    with torch.no_grad():
        return enc(ids[None])[0]
