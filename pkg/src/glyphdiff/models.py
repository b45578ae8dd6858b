"""Small shared building blocks for the toy networks."""

from __future__ import annotations

import hashlib
import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


def zero_module(module: nn.Module) -> nn.Module:
    """Zero every parameter so a new branch starts inert."""
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


class FourierTime(nn.Module):
    """Sinusoidal features of a scalar signal followed by a 2-layer MLP."""

    def __init__(self, out_dim: int, n_freqs: int = 16, max_period: float = 1e4):
        super().__init__()
        self.n_freqs = n_freqs
        self.max_period = max_period
        self.mlp = nn.Sequential(
            nn.Linear(2 * n_freqs, out_dim), nn.SiLU(), nn.Linear(out_dim, out_dim)
        )

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.n_freqs
        freqs = torch.exp(
            -math.log(self.max_period)
            * torch.arange(half, dtype=t.dtype, device=t.device)
            / half
        )
        angles = t[:, None] * freqs[None, :] * 1000.0
        feats = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)
        return self.mlp(feats)


class ResBlock(nn.Module):
    """Two 3x3 convs with SiLU and an additive FiLM-style time shift."""

    def __init__(self, channels: int, time_dim: int | None = None):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, channels) if time_dim else None

    def forward(self, x: torch.Tensor, temb: torch.Tensor | None = None) -> torch.Tensor:
        h = self.conv1(F.silu(x))
        if self.time_proj is not None and temb is not None:
            h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(F.silu(h))
        return x + h


def param_checksum(module: nn.Module) -> str:
    """Order-stable sha256 over all parameters and buffers."""
    digest = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        digest.update(name.encode())
        digest.update(state[name].detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
