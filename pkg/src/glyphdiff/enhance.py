"""Post-decoder refinement for small glyphs: split, enhance, merge.

The decoded image is cropped into 9 overlapping half-size patches,
each upscaled 2x, refined by a residual stack of 1x1 convolutions whose
first and last stages start at zero (so a fresh enhancer is an exact
no-op), then folded back with raised-cosine weights that form a
partition of unity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError
from .models import param_checksum, zero_module
from .rng import randn, stream
from .vae import GlyphVae


@dataclass(frozen=True)
class Patch:
    offset_y: int
    offset_x: int
    tile: torch.Tensor  # (3, H, W) upscaled crop


def patch_offsets(h: int, w: int) -> List[Tuple[int, int]]:
    if h % 4 or w % 4:
        raise ContractError(f"dims {h}x{w} must be divisible by 4")
    return [(oy, ox) for oy in (0, h // 4, h // 2) for ox in (0, w // 4, w // 2)]


def split(decoded: torch.Tensor) -> List[Patch]:
    """Crop 3x3 overlapping half-size patches and upscale each bilinearly."""
    if decoded.dim() != 3:
        raise ContractError(f"expected (C,H,W), got {tuple(decoded.shape)}")
    _, h, w = decoded.shape
    ph, pw = h // 2, w // 2
    patches = []
    for oy, ox in patch_offsets(h, w):
        crop = decoded[:, oy : oy + ph, ox : ox + pw]
        tile = F.interpolate(
            crop[None], size=(h, w), mode="bilinear", align_corners=False
        )[0]
        patches.append(Patch(offset_y=oy, offset_x=ox, tile=tile))
    return patches


class UpscaleEnhancer(nn.Module):
    """Residual refiner: zero 1x1 conv -> SiLU -> 1x1 conv -> SiLU -> zero 1x1 conv.

    SiLU keeps a nonzero derivative at 0 so the zeroed input stage still
    receives gradient on the first update.
    """

    def __init__(self, channels: int = 3, hidden: int = 16):
        super().__init__()
        self.conv_in = zero_module(nn.Conv2d(channels, hidden, 1))
        self.conv_mid = nn.Conv2d(hidden, hidden, 1)
        self.conv_out = zero_module(nn.Conv2d(hidden, channels, 1))

    def forward(self, tile: torch.Tensor) -> torch.Tensor:
        squeeze = tile.dim() == 3
        if squeeze:
            tile = tile[None]
        h = F.silu(self.conv_in(tile))
        h = F.silu(self.conv_mid(h))
        out = self.conv_out(h)
        return out[0] if squeeze else out


def enhance(tile: torch.Tensor, params: UpscaleEnhancer) -> torch.Tensor:
    """Residual for one upscaled tile; identically zero at fresh init."""
    return params(tile)


def center_weight(h: int, w: int) -> torch.Tensor:
    """(9, H, W) merge weights: separable raised-cosine bumps, renormalized.

    Each bump peaks at its patch center, falls to zero at the patch's
    footprint border (evaluated at pixel centers, so strictly positive on
    every footprint pixel), and is zero outside the footprint. Columns
    sum to exactly 1 after normalization.
    """
    offsets = patch_offsets(h, w)
    ph, pw = h // 2, w // 2
    maps = torch.zeros(9, h, w, dtype=torch.float64)
    for i, (oy, ox) in enumerate(offsets):
        ys = torch.arange(oy, oy + ph, dtype=torch.float64) + 0.5
        xs = torch.arange(ox, ox + pw, dtype=torch.float64) + 0.5
        cy, cx = oy + ph / 2, ox + pw / 2
        wy = 0.5 * (1 + torch.cos(2 * torch.pi * (ys - cy) / ph))
        wx = 0.5 * (1 + torch.cos(2 * torch.pi * (xs - cx) / pw))
        maps[i, oy : oy + ph, ox : ox + pw] = wy[:, None] * wx[None, :]
    total = maps.sum(dim=0, keepdim=True)
    return (maps / total).to(torch.float32)


def merge(
    base: torch.Tensor, residuals: Sequence[torch.Tensor], weights: torch.Tensor
) -> torch.Tensor:
    """base + sum_i weight_i * downscale(residual_i) over patch footprints."""
    if base.dim() != 3:
        raise ContractError(f"expected (C,H,W) base, got {tuple(base.shape)}")
    _, h, w = base.shape
    offsets = patch_offsets(h, w)
    if len(residuals) != 9 or weights.shape != (9, h, w):
        raise ContractError("need 9 residuals and (9,H,W) weights")
    ph, pw = h // 2, w // 2
    out = base.clone()
    for i, (oy, ox) in enumerate(offsets):
        res = residuals[i]
        if res.shape != base.shape:
            raise ContractError(f"residual {i} shape {tuple(res.shape)}")
        small = F.avg_pool2d(res[None], 2)[0]
        out[:, oy : oy + ph, ox : ox + pw] += (
            weights[i, oy : oy + ph, ox : ox + pw] * small
        )
    return out


def enhance_image(
    base: torch.Tensor, params: UpscaleEnhancer, weights: torch.Tensor | None = None
) -> torch.Tensor:
    """Full split -> enhance -> merge pass over one decoded image."""
    _, h, w = base.shape
    if weights is None:
        weights = center_weight(h, w)
    patches = split(base)
    residuals = [enhance(p.tile, params) for p in patches]
    return merge(base, residuals, weights)


def _enhance_batch(
    bases: torch.Tensor, params: UpscaleEnhancer, weights: torch.Tensor
) -> torch.Tensor:
    """Batched split/enhance/merge used in training."""
    b, _, h, w = bases.shape
    ph, pw = h // 2, w // 2
    out = bases.clone()
    for i, (oy, ox) in enumerate(patch_offsets(h, w)):
        crop = bases[:, :, oy : oy + ph, ox : ox + pw]
        tiles = F.interpolate(crop, size=(h, w), mode="bilinear", align_corners=False)
        res = params(tiles)
        small = F.avg_pool2d(res, 2)
        out[:, :, oy : oy + ph, ox : ox + pw] = out[
            :, :, oy : oy + ph, ox : ox + pw
        ] + weights[i, oy : oy + ph, ox : ox + pw] * small
    return out


def char_region_mse(
    pred: torch.Tensor, target: torch.Tensor, char_mask: torch.Tensor
) -> torch.Tensor:
    """MSE restricted to pixels whose character index is nonzero."""
    mask = (char_mask > 0).to(pred.dtype)
    if mask.dim() == pred.dim() - 1:
        mask = mask.unsqueeze(-3)
    weighted = ((pred - target) ** 2) * mask
    denom = mask.expand_as(pred).sum()
    if float(denom) == 0.0:
        return torch.zeros((), dtype=pred.dtype)
    return weighted.sum() / denom


def train_enhancer(
    vae: GlyphVae,
    images: torch.Tensor,
    char_masks: torch.Tensor,
    steps: int,
    seed: int,
    batch_size: int = 16,
    lr: float = 2e-3,
    kappa: float = 5.0,
    hidden: int = 16,
) -> tuple[UpscaleEnhancer, list[float]]:
    """Train the refiner against ground truth with char-weighted L2.

    The VAE stays frozen (asserted by checksum); decoded bases are
    precomputed once since they never change.
    """
    if images.dim() != 4 or images.shape[0] == 0:
        raise ContractError("corpus must be non-empty (N,3,H,W)")
    if char_masks.shape[0] != images.shape[0]:
        raise ContractError("corpus and char masks disagree in length")
    vae_sum_before = param_checksum(vae)
    with torch.no_grad():
        bases = torch.cat(
            [
                vae.decode(vae.encode(images[i : i + 64]))
                for i in range(0, images.shape[0], 64)
            ]
        )
    torch.manual_seed(seed)
    params = UpscaleEnhancer(channels=images.shape[1], hidden=hidden)
    opt = torch.optim.Adam(params.parameters(), lr=lr)
    batch_rng = stream(seed, "enhancer:batches")
    weights = center_weight(images.shape[2], images.shape[3])
    n = images.shape[0]
    losses: list[float] = []
    for _ in range(steps):
        idx = batch_rng.integers(0, n, size=min(batch_size, n))
        base = bases[idx]
        gt = images[idx]
        mask = char_masks[idx]
        enhanced = _enhance_batch(base, params, weights)
        loss = F.mse_loss(enhanced, gt) + kappa * char_region_mse(enhanced, gt, mask)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    assert param_checksum(vae) == vae_sum_before, "VAE was mutated during enhancer training"
    params.eval()
    return params, losses
