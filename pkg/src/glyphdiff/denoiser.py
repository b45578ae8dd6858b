"""Noise-prediction UNet over 4x16x16 latents.

Conditioning: a learned embedding of the full-resolution character index
map (area-pooled down to latent resolution), the region-of-interest mask,
and one of a few background-style tokens hashed from the prompt prose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError
from .models import FourierTime, ResBlock

N_CHAR_CLASSES = 96  # 0 = non-text, 1..95 = printable ASCII


@dataclass(frozen=True)
class DenoiserConfig:
    latent_channels: int = 4
    latent_size: int = 16
    image_size: int = 64
    char_embed_dim: int = 8
    base_channels: int = 64
    mid_channels: int = 96
    time_dim: int = 128
    n_styles: int = 8


class LatentDenoiser(nn.Module):
    def __init__(self, config: DenoiserConfig = DenoiserConfig()):
        super().__init__()
        self.config = config
        cfg = config
        self.char_embed = nn.Embedding(N_CHAR_CLASSES, cfg.char_embed_dim)
        self.time_embed = FourierTime(cfg.time_dim)
        self.style_embed = nn.Embedding(cfg.n_styles, cfg.time_dim)
        in_ch = cfg.latent_channels + cfg.char_embed_dim + 1
        self.conv_in = nn.Conv2d(in_ch, cfg.base_channels, 3, padding=1)
        self.block1 = ResBlock(cfg.base_channels, cfg.time_dim)
        self.down = nn.Conv2d(cfg.base_channels, cfg.mid_channels, 3, stride=2, padding=1)
        self.block2 = ResBlock(cfg.mid_channels, cfg.time_dim)
        self.up = nn.ConvTranspose2d(cfg.mid_channels, cfg.base_channels, 4, stride=2, padding=1)
        self.block3 = ResBlock(cfg.base_channels, cfg.time_dim)
        self.conv_out = nn.Conv2d(cfg.base_channels, cfg.latent_channels, 3, padding=1)

    def _pool_factor(self) -> int:
        return self.config.image_size // self.config.latent_size

    def cond_features(self, char_idx: torch.Tensor, region: torch.Tensor) -> torch.Tensor:
        """Embed full-res conditioning down to latent resolution."""
        cfg = self.config
        if char_idx.dim() == 2:
            char_idx = char_idx[None]
        if region.dim() == 2:
            region = region[None]
        if char_idx.shape[-2:] != (cfg.image_size, cfg.image_size):
            raise ContractError(
                f"char map must be {cfg.image_size}x{cfg.image_size}, got {tuple(char_idx.shape)}"
            )
        emb = self.char_embed(char_idx.long())  # (B,H,W,E)
        emb = emb.permute(0, 3, 1, 2)
        k = self._pool_factor()
        char_feat = F.avg_pool2d(emb, k)
        region_feat = F.avg_pool2d(region.to(emb.dtype)[:, None], k)
        return torch.cat([char_feat, region_feat], dim=1)

    def forward(
        self,
        x_t: torch.Tensor,
        t_frac: torch.Tensor,
        char_idx: torch.Tensor,
        region: torch.Tensor,
        style: torch.Tensor,
    ) -> torch.Tensor:
        """Predict the noise component of ``x_t``.

        ``t_frac`` is t/T in [0,1]; ``char_idx`` (B,64,64) long; ``region``
        (B,64,64) in {0,1}; ``style`` (B,) long token ids.
        """
        cfg = self.config
        squeeze = x_t.dim() == 3
        if squeeze:
            x_t = x_t[None]
        if x_t.shape[1:] != (cfg.latent_channels, cfg.latent_size, cfg.latent_size):
            raise ContractError(f"latent shape {tuple(x_t.shape)} unexpected")
        cond = self.cond_features(char_idx, region)
        if cond.shape[0] == 1 and x_t.shape[0] > 1:
            cond = cond.expand(x_t.shape[0], -1, -1, -1)
        temb = self.time_embed(t_frac.reshape(-1).to(x_t.dtype))
        temb = temb + self.style_embed(style.reshape(-1).long())
        h = self.conv_in(torch.cat([x_t, cond], dim=1))
        h1 = self.block1(h, temb)
        h2 = self.block2(self.down(h1), temb)
        h3 = self.block3(self.up(h2) + h1, temb)
        out = self.conv_out(F.silu(h3))
        return out[0] if squeeze else out
