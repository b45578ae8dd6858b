"""Convolutional VAE mapping 3x64x64 images to 4x16x16 latents.

``encode`` returns the posterior mean scaled to roughly unit variance
(the scale is calibrated on the training corpus and stored with the
model), so downstream diffusion can treat latents as standard-normal
sized. Sampling from the posterior happens only inside training.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError
from .rng import randn, stream


@dataclass(frozen=True)
class VaeConfig:
    image_size: int = 64
    image_channels: int = 3
    latent_channels: int = 4
    base_channels: int = 24

    @property
    def latent_size(self) -> int:
        return self.image_size // 4


class GlyphVae(nn.Module):
    def __init__(self, config: VaeConfig = VaeConfig()):
        super().__init__()
        self.config = config
        c, b, z = config.image_channels, config.base_channels, config.latent_channels
        self.encoder = nn.Sequential(
            nn.Conv2d(c, b, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(b, 2 * b, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(2 * b, 2 * b, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(2 * b, 2 * z, 1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(z, 2 * b, 3, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(2 * b, 2 * b, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(2 * b, 2 * b, 3, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(2 * b, b, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(b, c, 3, padding=1),
        )
        self.register_buffer("latent_scale", torch.ones(()))

    def _check_image(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if x.dim() == 3:
            x = x[None]
        if x.dim() != 4 or x.shape[1:] != (cfg.image_channels, cfg.image_size, cfg.image_size):
            raise ContractError(
                f"expected image (*, {cfg.image_channels}, {cfg.image_size}, "
                f"{cfg.image_size}), got {tuple(x.shape)}"
            )
        if not torch.isfinite(x).all():
            raise ContractError("image contains non-finite values")
        return x

    def _check_latent(self, z: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if z.dim() == 3:
            z = z[None]
        if z.dim() != 4 or z.shape[1:] != (cfg.latent_channels, cfg.latent_size, cfg.latent_size):
            raise ContractError(
                f"expected latent (*, {cfg.latent_channels}, {cfg.latent_size}, "
                f"{cfg.latent_size}), got {tuple(z.shape)}"
            )
        if not torch.isfinite(z).all():
            raise ContractError("latent contains non-finite values")
        return z

    def encode_dist(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Raw (unscaled) posterior mean and log-variance."""
        x = self._check_image(x)
        mu, logvar = self.encoder(x).chunk(2, dim=1)
        return mu, logvar

    @torch.no_grad()
    def encode(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        mu, _ = self.encode_dist(x)
        z = mu / self.latent_scale
        return z[0] if squeeze else z

    @torch.no_grad()
    def decode(self, z: torch.Tensor) -> torch.Tensor:
        squeeze = z.dim() == 3
        z = self._check_latent(z)
        x = self.decoder(z * self.latent_scale)
        return x[0] if squeeze else x

    def decode_grad(self, z: torch.Tensor) -> torch.Tensor:
        """Decode with autograd enabled (used by enhancer training)."""
        return self.decoder(self._check_latent(z) * self.latent_scale)


def train_vae(
    images: np.ndarray | torch.Tensor,
    steps: int,
    seed: int,
    config: VaeConfig = VaeConfig(),
    batch_size: int = 16,
    lr: float = 1e-3,
    kl_weight: float = 1e-6,
) -> tuple[GlyphVae, list[float]]:
    """Reconstruction + small-KL training on an image corpus in [-1,1].

    Returns the model in eval mode with its latent scale calibrated, plus
    the per-step loss curve.
    """
    images = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    if images.dim() != 4 or images.shape[0] == 0:
        raise ContractError("corpus must be a non-empty (N,C,H,W) array")
    n = images.shape[0]
    torch.manual_seed(seed)
    model = GlyphVae(config)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    batch_rng = stream(seed, "vae:batches")
    noise_rng = stream(seed, "vae:noise")
    losses: list[float] = []
    model.train()
    for _ in range(steps):
        idx = batch_rng.integers(0, n, size=min(batch_size, n))
        x = images[idx]
        mu, logvar = model.encode_dist(x)
        eps = randn(noise_rng, *mu.shape)
        z = mu + torch.exp(0.5 * logvar) * eps
        recon = model.decoder(z)
        rec_loss = F.mse_loss(recon, x)
        kl = -0.5 * torch.mean(1 + logvar - mu.pow(2) - logvar.exp())
        loss = rec_loss + kl_weight * kl
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    model.eval()
    _calibrate_latent_scale(model, images)
    return model, losses


@torch.no_grad()
def _calibrate_latent_scale(model: GlyphVae, images: torch.Tensor, max_samples: int = 512) -> None:
    sample = images[:max_samples]
    mus = []
    for i in range(0, sample.shape[0], 64):
        mu, _ = model.encode_dist(sample[i : i + 64])
        mus.append(mu)
    std = torch.cat(mus).std()
    model.latent_scale.fill_(max(float(std), 1e-6))
