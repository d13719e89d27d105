"""Small convolutional VAE mapping (1, H, W) images to (C, H/8, W/8) latents."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..errors import InvalidArgumentError


class VAE(nn.Module):
    def __init__(self, image_size=32, latent_channels=4, channels=(16, 32, 64)):
        super().__init__()
        downsample = 2 ** len(channels)
        if image_size % downsample:
            raise ValueError("image_size must be divisible by the downsampling factor")
        self.image_size = image_size
        self.latent_channels = latent_channels
        self.latent_size = image_size // downsample
        self.register_buffer("scaling_factor", torch.tensor(1.0))

        enc = [nn.Conv2d(1, channels[0], 3, padding=1), nn.SiLU()]
        ch = channels[0]
        for out in channels:
            enc += [nn.Conv2d(ch, out, 4, stride=2, padding=1), nn.SiLU()]
            if out != channels[0]:
                enc += [nn.Conv2d(out, out, 3, padding=1), nn.SiLU()]
            ch = out
        enc.append(nn.Conv2d(ch, 2 * latent_channels, 1))
        self.encoder = nn.Sequential(*enc)

        dec = [nn.Conv2d(latent_channels, ch, 3, padding=1), nn.SiLU()]
        for out in reversed(channels):
            dec += [nn.ConvTranspose2d(ch, out, 4, stride=2, padding=1), nn.SiLU()]
            if out != channels[0]:
                dec += [nn.Conv2d(out, out, 3, padding=1), nn.SiLU()]
            ch = out
        dec.append(nn.Conv2d(ch, 1, 3, padding=1))
        self.decoder = nn.Sequential(*dec)

    @property
    def latent_shape(self):
        return (self.latent_channels, self.latent_size, self.latent_size)

    def encode_dist(self, x):
        """x: (B, 1, H, W) in [0, 1] -> (mean, logvar), unscaled."""
        mean, logvar = self.encoder(x * 2.0 - 1.0).chunk(2, dim=1)
        return mean, logvar.clamp(-20.0, 10.0)

    def decode_raw(self, z):
        return torch.sigmoid(self.decoder(z))

    def forward(self, x, generator=None):
        mean, logvar = self.encode_dist(x)
        eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        z = mean + torch.exp(0.5 * logvar) * eps
        return self.decode_raw(z), mean, logvar

    def encode(self, x):
        """Scaled latent means for a (B, 1, H, W) batch."""
        return self.encode_dist(x)[0] * self.scaling_factor

    def decode(self, latents):
        return self.decode_raw(latents / self.scaling_factor)


def vae_loss(recon, x, mean, logvar, kl_weight=1e-4):
    rec = F.mse_loss(recon, x)
    kl = -0.5 * torch.mean(1 + logvar - mean.pow(2) - logvar.exp())
    return rec + kl_weight * kl, rec


def _as_batch(image, vae: VAE):
    x = torch.as_tensor(np.asarray(image), dtype=next(vae.parameters()).dtype)
    single = x.ndim == 2
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    if tuple(x.shape[-2:]) != (vae.image_size, vae.image_size):
        raise InvalidArgumentError(
            f"image geometry {tuple(x.shape[-2:])} does not match VAE geometry {(vae.image_size, vae.image_size)}")
    return x, single


def vae_encode(image, vae: VAE) -> torch.Tensor:
    """(H, W) -> (C, h, w), or (B, H, W) -> (B, C, h, w)."""
    x, single = _as_batch(image, vae)
    with torch.no_grad():
        z = vae.encode(x)
    return z[0] if single else z


def vae_decode(latent, vae: VAE) -> np.ndarray:
    """(C, h, w) -> (H, W), or (B, C, h, w) -> (B, H, W); pixels in [0, 1]."""
    z = torch.as_tensor(latent, dtype=next(vae.parameters()).dtype)
    single = z.ndim == 3
    if single:
        z = z[None]
    if tuple(z.shape[1:]) != vae.latent_shape:
        raise InvalidArgumentError(f"latent shape {tuple(z.shape[1:])} does not match {vae.latent_shape}")
    with torch.no_grad():
        img = vae.decode(z)[:, 0].numpy()
    return img[0] if single else img


def train_vae(vae: VAE, images, steps=1500, batch_size=64, lr=2e-3, kl_weight=1e-4, seed=0, log_every=0):
    """Fit the VAE on an (N, H, W) array, then set the latent scaling factor so
    encoded training latents have unit standard deviation. Returns the loss list."""
    gen = torch.Generator().manual_seed(seed)
    data = torch.as_tensor(np.asarray(images), dtype=torch.float32)[:, None]
    opt = torch.optim.AdamW(vae.parameters(), lr=lr, weight_decay=0.0)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, steps)
    losses = []
    vae.train()
    for step in range(steps):
        idx = torch.randint(len(data), (batch_size,), generator=gen)
        x = data[idx]
        recon, mean, logvar = vae(x, generator=gen)
        loss, rec = vae_loss(recon, x, mean, logvar, kl_weight)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        losses.append(float(rec.detach()))
        if log_every and step % log_every == 0:
            print(f"vae step {step} rec {float(rec):.5f}")
    vae.eval()
    with torch.no_grad():
        mean = torch.cat([vae.encode_dist(data[i:i + 256])[0] for i in range(0, len(data), 256)])
        vae.scaling_factor.fill_(1.0 / float(mean.std()))
    return losses


def reconstruction_mse(vae: VAE, images) -> float:
    x = np.asarray(images, dtype=np.float32)
    recon = vae_decode(vae_encode(x, vae), vae)
    return float(np.mean((recon - x) ** 2))
