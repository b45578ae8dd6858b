"""One/few-step consistency decoder with a character-mask control adapter.

The backbone maps (noisy image, noise level, conditioning latent) to a
clean image estimate, with skip/out coefficients that make the boundary
f(z, t_min, l) = z hold exactly for any parameters. The adapter encodes
the character index map into feature pyramids injected through
zero-initialized 1x1 taps on the backbone's up path, so a fresh adapter
is exactly transparent. Training uses the stopgrad consistency loss with
shared noise between adjacent levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .denoiser import N_CHAR_CLASSES
from .errors import ContractError, DomainError
from .models import FourierTime, ResBlock, param_checksum, zero_module
from .rng import randn, stream


@dataclass(frozen=True)
class TimeGrid:
    """Noise levels t_1 < ... < t_N from t_min to t_max."""

    levels: np.ndarray

    def __post_init__(self) -> None:
        levels = np.asarray(self.levels, dtype=np.float64)
        if levels.ndim != 1 or levels.size < 2:
            raise ContractError("grid needs at least two levels")
        object.__setattr__(self, "levels", levels)

    @property
    def n(self) -> int:
        return int(self.levels.size)

    @property
    def t_min(self) -> float:
        return float(self.levels[0])

    @property
    def t_max(self) -> float:
        return float(self.levels[-1])

    @classmethod
    def karras(
        cls, n: int = 18, t_min: float = 0.002, t_max: float = 80.0, rho: float = 7.0
    ) -> "TimeGrid":
        i = np.arange(n, dtype=np.float64)
        inv = t_min ** (1 / rho) + i / (n - 1) * (t_max ** (1 / rho) - t_min ** (1 / rho))
        return cls(levels=inv**rho)

    def to_dict(self) -> dict:
        return {"levels": self.levels.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "TimeGrid":
        return cls(levels=np.asarray(doc["levels"], dtype=np.float64))


@dataclass(frozen=True)
class ConsistencyConfig:
    image_size: int = 64
    image_channels: int = 3
    latent_channels: int = 4
    latent_size: int = 16
    base_channels: int = 16
    mid_channels: int = 32
    deep_channels: int = 48
    time_dim: int = 96
    sigma_data: float = 0.5
    t_min: float = 0.002


class ConsistencyDecoder(nn.Module):
    """UNet trunk with exact-boundary skip/out parameterization.

    Tap points for the adapter sit on the up path at 16x16, 32x32 and
    64x64 feature maps.
    """

    def __init__(self, config: ConsistencyConfig = ConsistencyConfig()):
        super().__init__()
        self.config = config
        cfg = config
        c1, c2, c3 = cfg.base_channels, cfg.mid_channels, cfg.deep_channels
        in_ch = cfg.image_channels + cfg.latent_channels
        self.time_embed = FourierTime(cfg.time_dim)
        self.conv_in = nn.Conv2d(in_ch, c1, 3, padding=1)
        self.down1 = ResBlock(c1, cfg.time_dim)
        self.to2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.down2 = ResBlock(c2, cfg.time_dim)
        self.to3 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)
        self.mid = ResBlock(c3, cfg.time_dim)
        self.up2 = nn.ConvTranspose2d(c3, c2, 4, stride=2, padding=1)
        self.upblock2 = ResBlock(c2, cfg.time_dim)
        self.up1 = nn.ConvTranspose2d(c2, c1, 4, stride=2, padding=1)
        self.upblock1 = ResBlock(c1, cfg.time_dim)
        self.conv_out = nn.Conv2d(c1, cfg.image_channels, 3, padding=1)

    @property
    def tap_channels(self) -> List[int]:
        cfg = self.config
        return [cfg.deep_channels, cfg.mid_channels, cfg.base_channels]

    def coefficients(self, sigma: torch.Tensor) -> tuple[torch.Tensor, ...]:
        """(c_skip, c_out, c_in): boundary-exact preconditioning."""
        sd = self.config.sigma_data
        tmin = self.config.t_min
        c_skip = sd**2 / ((sigma - tmin) ** 2 + sd**2)
        c_out = sd * (sigma - tmin) / torch.sqrt(sigma**2 + sd**2)
        c_in = 1.0 / torch.sqrt(sigma**2 + sd**2)
        return c_skip, c_out, c_in

    def trunk(
        self,
        z_scaled: torch.Tensor,
        l_up: torch.Tensor,
        temb: torch.Tensor,
        taps: Sequence[torch.Tensor] | None,
    ) -> torch.Tensor:
        h1 = self.down1(self.conv_in(torch.cat([z_scaled, l_up], dim=1)), temb)
        h2 = self.down2(self.to2(h1), temb)
        h3 = self.mid(self.to3(h2), temb)
        if taps is not None:
            h3 = h3 + taps[0]
        u2 = self.upblock2(self.up2(h3) + h2, temb)
        if taps is not None:
            u2 = u2 + taps[1]
        u1 = self.upblock1(self.up1(u2) + h1, temb)
        if taps is not None:
            u1 = u1 + taps[2]
        return self.conv_out(F.silu(u1))

    def forward(
        self,
        z_t: torch.Tensor,
        sigma: torch.Tensor,
        latent: torch.Tensor,
        taps: Sequence[torch.Tensor] | None = None,
        adapter: "CharMaskAdapter | None" = None,
        char_idx: torch.Tensor | None = None,
    ) -> torch.Tensor:
        cfg = self.config
        squeeze = z_t.dim() == 3
        if squeeze:
            z_t = z_t[None]
            latent = latent[None] if latent.dim() == 3 else latent
        if z_t.shape[1:] != (cfg.image_channels, cfg.image_size, cfg.image_size):
            raise ContractError(f"noisy image shape {tuple(z_t.shape)} unexpected")
        if latent.shape[1:] != (cfg.latent_channels, cfg.latent_size, cfg.latent_size):
            raise ContractError(f"latent shape {tuple(latent.shape)} unexpected")
        sigma = sigma.reshape(-1).to(z_t.dtype)
        if sigma.numel() == 1 and z_t.shape[0] > 1:
            sigma = sigma.expand(z_t.shape[0])
        c_skip, c_out, c_in = self.coefficients(sigma)
        z_scaled = c_in[:, None, None, None] * z_t
        l_up = F.interpolate(latent, size=z_t.shape[-2:], mode="nearest")
        if adapter is not None:
            taps = adapter(z_scaled, l_up, sigma, char_idx)
        temb = self.time_embed(torch.log(sigma) / 4.0)
        fx = self.trunk(z_scaled, l_up, temb, taps)
        out = c_skip[:, None, None, None] * z_t + c_out[:, None, None, None] * fx
        return out[0] if squeeze else out


class CharMaskAdapter(nn.Module):
    """Trainable copy of the trunk's encoder with a character-mask hint.

    Mirrors the original ControlNet recipe: the adapter processes the
    same preconditioned input as the trunk, adds an embedded character
    map through a zero-gated hint block, and feeds its multi-resolution
    features to the trunk's up path through zero-initialized 1x1 taps,
    so a fresh adapter is exactly transparent.
    """

    def __init__(self, config: ConsistencyConfig = ConsistencyConfig(), embed_dim: int = 8):
        super().__init__()
        self.config = config
        cfg = config
        c1, c2, c3 = cfg.base_channels, cfg.mid_channels, cfg.deep_channels
        in_ch = cfg.image_channels + cfg.latent_channels
        self.embed = nn.Embedding(N_CHAR_CLASSES, embed_dim)
        self.hint = nn.Sequential(
            nn.Conv2d(embed_dim, c1, 3, padding=1),
            nn.SiLU(),
            zero_module(nn.Conv2d(c1, c1, 1)),
        )
        self.time_embed = FourierTime(cfg.time_dim)
        self.conv_in = nn.Conv2d(in_ch, c1, 3, padding=1)
        self.down1 = ResBlock(c1, cfg.time_dim)
        self.to2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.down2 = ResBlock(c2, cfg.time_dim)
        self.to3 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)
        self.mid = ResBlock(c3, cfg.time_dim)
        self.tap_deep = zero_module(nn.Conv2d(c3, c3, 1))
        self.tap_mid = zero_module(nn.Conv2d(c2, c2, 1))
        self.tap_fine = zero_module(nn.Conv2d(c1, c1, 1))

    @classmethod
    def from_backbone(cls, backbone: ConsistencyDecoder, embed_dim: int = 8) -> "CharMaskAdapter":
        """Initialize the encoder copy from the frozen trunk's weights."""
        adapter = cls(backbone.config, embed_dim=embed_dim)
        for name in ("time_embed", "conv_in", "down1", "to2", "down2", "to3", "mid"):
            getattr(adapter, name).load_state_dict(getattr(backbone, name).state_dict())
        return adapter

    def forward(
        self,
        z_scaled: torch.Tensor,
        l_up: torch.Tensor,
        sigma: torch.Tensor,
        char_idx: torch.Tensor,
    ) -> List[torch.Tensor]:
        """Taps ordered deep-to-fine to match the trunk's up path."""
        cfg = self.config
        if char_idx.dim() == 2:
            char_idx = char_idx[None]
        if char_idx.shape[-2:] != (cfg.image_size, cfg.image_size):
            raise ContractError(f"char map shape {tuple(char_idx.shape)} unexpected")
        if char_idx.shape[0] == 1 and z_scaled.shape[0] > 1:
            char_idx = char_idx.expand(z_scaled.shape[0], -1, -1)
        e = self.embed(char_idx.long()).permute(0, 3, 1, 2).to(z_scaled.dtype)
        temb = self.time_embed(torch.log(sigma) / 4.0)
        h1 = self.down1(
            self.conv_in(torch.cat([z_scaled, l_up], dim=1)) + self.hint(e), temb
        )
        h2 = self.down2(self.to2(h1), temb)
        h3 = self.mid(self.to3(h2), temb)
        return [self.tap_deep(h3), self.tap_mid(h2), self.tap_fine(h1)]


def control_forward(
    backbone: ConsistencyDecoder,
    adapter: CharMaskAdapter | None,
    z_t: torch.Tensor,
    sigma: torch.Tensor,
    latent: torch.Tensor,
    char_idx: torch.Tensor | None,
) -> torch.Tensor:
    """Backbone forward with optional adapter guidance."""
    if adapter is not None and char_idx is None:
        raise ContractError("adapter given but no character map")
    return backbone(z_t, sigma, latent, adapter=adapter, char_idx=char_idx)


def consistency_loss(
    backbone: ConsistencyDecoder,
    adapter: CharMaskAdapter | None,
    x: torch.Tensor,
    latent: torch.Tensor,
    char_idx: torch.Tensor | None,
    n: int,
    eps: torch.Tensor,
    grid: TimeGrid,
    weight_fn: Callable[[float], float] | None = None,
) -> torch.Tensor:
    """Stopgrad consistency loss between adjacent noise levels.

    Shares ``eps`` across both levels (z_t = x + t*eps), measures squared
    L2 distance (summed over elements), and evaluates the lower-level
    target under no_grad so only the online branch carries gradient.
    """
    if not 1 <= n < grid.n:
        raise DomainError(f"n={n} outside [1, {grid.n - 1}]")
    if eps.shape != x.shape:
        raise ContractError("eps must match x's shape")
    t_lo = float(grid.levels[n - 1])
    t_hi = float(grid.levels[n])
    z_hi = x + t_hi * eps
    z_lo = x + t_lo * eps
    online = control_forward(
        backbone, adapter, z_hi, torch.tensor([t_hi]), latent, char_idx
    )
    with torch.no_grad():
        target = control_forward(
            backbone, adapter, z_lo, torch.tensor([t_lo]), latent, char_idx
        )
    lam = 1.0 if weight_fn is None else float(weight_fn(t_lo))
    diff = online - target
    return lam * (diff**2).sum()


def gap_weight(grid: TimeGrid) -> Callable[[float], float]:
    """lambda(t_n) = 1/(t_{n+1}-t_n): upweights near-boundary pairs, where
    the target is anchored to data, per the consistency-training
    literature's recommended weighting."""
    levels = grid.levels

    def fn(t_lo: float) -> float:
        n = int(np.searchsorted(levels, t_lo))
        gap = levels[min(n + 1, len(levels) - 1)] - levels[n]
        return float(1.0 / max(gap, 1e-8))

    return fn


def _batched_consistency_step(
    backbone: ConsistencyDecoder,
    adapter: CharMaskAdapter | None,
    x: torch.Tensor,
    latent: torch.Tensor,
    char_idx: torch.Tensor | None,
    ns: np.ndarray,
    eps: torch.Tensor,
    grid: TimeGrid,
    weight_fn: Callable[[float], float] | None = None,
) -> torch.Tensor:
    """Weighted per-sample consistency loss, averaged over the batch."""
    t_lo = torch.tensor(grid.levels[ns - 1], dtype=x.dtype)
    t_hi = torch.tensor(grid.levels[ns], dtype=x.dtype)
    z_hi = x + t_hi[:, None, None, None] * eps
    z_lo = x + t_lo[:, None, None, None] * eps
    online = control_forward(backbone, adapter, z_hi, t_hi, latent, char_idx)
    with torch.no_grad():
        target = control_forward(backbone, adapter, z_lo, t_lo, latent, char_idx)
    per_sample = ((online - target) ** 2).mean(dim=(1, 2, 3))
    if weight_fn is not None:
        lam = torch.tensor([weight_fn(float(t)) for t in t_lo], dtype=x.dtype)
        per_sample = lam * per_sample
    return per_sample.mean()


def pretrain_backbone(
    images: torch.Tensor,
    latents: torch.Tensor,
    grid: TimeGrid,
    steps: int,
    seed: int,
    config: ConsistencyConfig = ConsistencyConfig(),
    batch_size: int = 8,
    lr: float = 1e-3,
    weight_fn: Callable[[float], float] | None = None,
) -> tuple[ConsistencyDecoder, list[float]]:
    """Consistency-train the backbone from data (no adapter, no teacher)."""
    if images.dim() != 4 or images.shape[0] == 0:
        raise ContractError("corpus must be non-empty (N,3,H,W)")
    if latents.shape[0] != images.shape[0]:
        raise ContractError("latents and images disagree in length")
    n = images.shape[0]
    torch.manual_seed(seed)
    model = ConsistencyDecoder(config)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    batch_rng = stream(seed, "cm:batches")
    noise_rng = stream(seed, "cm:noise")
    losses: list[float] = []
    model.train()
    for _ in range(steps):
        idx = batch_rng.integers(0, n, size=min(batch_size, n))
        ns = batch_rng.integers(1, grid.n, size=len(idx))
        x = images[idx]
        eps = randn(noise_rng, *x.shape)
        loss = _batched_consistency_step(
            model, None, x, latents[idx], None, ns, eps, grid, weight_fn
        )
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    model.eval()
    return model, losses


def train_adapter(
    backbone: ConsistencyDecoder,
    images: torch.Tensor,
    latents: torch.Tensor,
    char_maps: torch.Tensor,
    grid: TimeGrid,
    steps: int,
    seed: int,
    batch_size: int = 8,
    lr: float = 1e-3,
    weight_fn: Callable[[float], float] | None = None,
) -> tuple[CharMaskAdapter, list[float]]:
    """Train only the adapter under the same loss; the backbone is frozen."""
    if images.dim() != 4 or images.shape[0] == 0:
        raise ContractError("corpus must be non-empty (N,3,H,W)")
    backbone_sum = param_checksum(backbone)
    for p in backbone.parameters():
        p.requires_grad_(False)
    n = images.shape[0]
    torch.manual_seed(seed)
    adapter = CharMaskAdapter.from_backbone(backbone)
    opt = torch.optim.Adam(adapter.parameters(), lr=lr)
    batch_rng = stream(seed, "adapter:batches")
    noise_rng = stream(seed, "adapter:noise")
    losses: list[float] = []
    adapter.train()
    for _ in range(steps):
        idx = batch_rng.integers(0, n, size=min(batch_size, n))
        ns = batch_rng.integers(1, grid.n, size=len(idx))
        x = images[idx]
        eps = randn(noise_rng, *x.shape)
        loss = _batched_consistency_step(
            backbone, adapter, x, latents[idx], char_maps[idx], ns, eps, grid, weight_fn
        )
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    adapter.eval()
    for p in backbone.parameters():
        p.requires_grad_(True)
    assert param_checksum(backbone) == backbone_sum, "backbone mutated during adapter training"
    return adapter, losses


@torch.no_grad()
def decode_consistent(
    backbone: ConsistencyDecoder,
    adapter: CharMaskAdapter | None,
    latent: torch.Tensor,
    char_idx: torch.Tensor | None,
    n_steps: int = 1,
    seed: int = 0,
    grid: TimeGrid | None = None,
) -> torch.Tensor:
    """Sample a decode: one f-evaluation from t_max, then optional
    re-noise/denoise refinements down the grid."""
    if n_steps < 1:
        raise DomainError("n_steps must be >= 1")
    grid = grid or TimeGrid.karras()
    cfg = backbone.config
    rng = stream(seed, "cm:decode")
    z = randn(rng, cfg.image_channels, cfg.image_size, cfg.image_size) * grid.t_max
    x = control_forward(
        backbone, adapter, z, torch.tensor([grid.t_max]), latent, char_idx
    )
    if n_steps > 1:
        # revisit evenly spaced interior levels, high to low
        picks = np.linspace(grid.n - 2, 1, n_steps - 1).round().astype(int)
        for k in picks:
            t = float(grid.levels[k])
            z = x + t * randn(rng, *x.shape)
            x = control_forward(backbone, adapter, z, torch.tensor([t]), latent, char_idx)
    return x
