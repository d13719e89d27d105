"""Two-resolution conditional U-Net with one cross-attention block per resolution."""
from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from ..errors import InvalidArgumentError
from .layers import Attention, timestep_embedding


def _groups(ch):
    return 8 if ch % 8 == 0 else 1


class ResBlock(nn.Module):
    def __init__(self, in_ch, out_ch, temb_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.temb = nn.Linear(temb_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class CrossAttentionBlock(nn.Module):
    def __init__(self, ch, context_dim, heads=4):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(ch), ch)
        self.attn = Attention(ch, context_dim, heads=heads)

    def forward(self, x, context):
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)
        out = self.attn(tokens, context).transpose(1, 2).reshape(b, c, h, w)
        return x + out


class UNet(nn.Module):
    def __init__(self, latent_channels=4, channels=(32, 64), context_dim=64, temb_dim=128, heads=4):
        super().__init__()
        c0, c1 = channels
        self.latent_channels = latent_channels
        self.context_dim = context_dim
        self.temb_dim = temb_dim
        self.time_mlp = nn.Sequential(nn.Linear(c0, temb_dim), nn.SiLU(), nn.Linear(temb_dim, temb_dim))
        self.conv_in = nn.Conv2d(latent_channels, c0, 3, padding=1)
        self.down_res = ResBlock(c0, c0, temb_dim)
        self.down_attn = CrossAttentionBlock(c0, context_dim, heads)
        self.downsample = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.mid_res = ResBlock(c1, c1, temb_dim)
        self.mid_attn = CrossAttentionBlock(c1, context_dim, heads)
        self.mid_res2 = ResBlock(c1, c1, temb_dim)
        self.upsample = nn.ConvTranspose2d(c1, c0, 4, stride=2, padding=1)
        self.up_res = ResBlock(2 * c0, c0, temb_dim)
        self.up_attn = CrossAttentionBlock(c0, context_dim, heads)
        self.norm_out = nn.GroupNorm(_groups(c0), c0)
        self.conv_out = nn.Conv2d(c0, latent_channels, 3, padding=1)
        self._c0 = c0

    def forward(self, x, t, context):
        """x: (B, C, h, w); t: (B,) timesteps; context: (B, T, context_dim)."""
        if context.shape[-1] != self.context_dim:
            raise InvalidArgumentError(
                f"context dimension {context.shape[-1]} != cross-attention dimension {self.context_dim}")
        if x.shape[1] != self.latent_channels:
            raise InvalidArgumentError(f"expected {self.latent_channels} latent channels, got {x.shape[1]}")
        t = torch.as_tensor(t).reshape(-1).expand(x.shape[0])
        temb = self.time_mlp(timestep_embedding(t, self._c0).to(x.dtype))
        h0 = self.conv_in(x)
        h0 = self.down_attn(self.down_res(h0, temb), context)
        h1 = self.downsample(h0)
        h1 = self.mid_res(h1, temb)
        h1 = self.mid_attn(h1, context)
        h1 = self.mid_res2(h1, temb)
        up = self.upsample(h1)
        h = self.up_res(torch.cat([up, h0], dim=1), temb)
        h = self.up_attn(h, context)
        return self.conv_out(F.silu(self.norm_out(h)))


def unet_predict(noisy, t, context, unet: UNet) -> torch.Tensor:
    """Noise prediction for one latent (C, h, w) or a batch (B, C, h, w).

    ``context`` is (T, d) for a single latent or (B, T, d) for a batch.
    Gradients flow; wrap in ``torch.no_grad()`` for inference.
    """
    noisy = torch.as_tensor(noisy)
    context = torch.as_tensor(context)
    single = noisy.ndim == 3
    if single:
        noisy = noisy[None]
    if context.ndim == 2:
        context = context[None].expand(noisy.shape[0], -1, -1)
    if context.shape[-1] != unet.context_dim:
        raise InvalidArgumentError(
            f"context dimension {context.shape[-1]} != cross-attention dimension {unet.context_dim}")
    out = unet(noisy, torch.as_tensor(t), context)
    return out[0] if single else out
