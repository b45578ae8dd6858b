"""Stage-2 sampling: DDPM loop with conditional-latent blending.

At every step the denoising state is pulled toward a forward-noised
encoding of the conditional mask inside a feathered, time-decaying
weight: strong early (shaping color/type/background), zero by t=0 so
final detail comes from the denoiser alone. A plain DDPM sampler is kept
as an independent reference path for the blending-off identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .denoiser import LatentDenoiser
from .errors import ContractError
from .imgio import chw, to_model_range
from .masks import CharacterMask, ConditionalMask, RegionMask, feather_region
from .rng import randn, stable_hash, stream
from .schedule import NoiseSchedule, forward_noise
from .vae import GlyphVae


@dataclass(frozen=True)
class BlendParams:
    lambda_max: float = 0.85
    gamma: float = 1.0
    feather_radius_px: int = 2

    def __post_init__(self) -> None:
        if not 0.0 <= self.lambda_max <= 1.0:
            raise ValueError("lambda_max must be in [0,1]")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.feather_radius_px < 0:
            raise ValueError("feather_radius_px must be >= 0")


def style_token(prose: str, n_styles: int = 8) -> int:
    """Stable bucket of the prompt prose used as background-style id."""
    return stable_hash(prose, n_styles)


def downsample_area(map2d: np.ndarray, out_hw: int) -> np.ndarray:
    """Area-average a (H,W) map down to (out_hw, out_hw)."""
    h, w = map2d.shape
    if h % out_hw or w % out_hw:
        raise ContractError(f"map {h}x{w} not divisible into {out_hw}x{out_hw}")
    kh, kw = h // out_hw, w // out_hw
    return map2d.reshape(out_hw, kh, out_hw, kw).mean(axis=(1, 3))


def weight_map(
    char_mask: CharacterMask,
    t: int,
    sched: NoiseSchedule,
    params: BlendParams = BlendParams(),
    latent_size: int = 16,
) -> torch.Tensor:
    """Blending weight w_{c,t}: (1, h', w') in [0,1].

    lambda_max * (t/T)^gamma over the feathered box support, area-averaged
    to latent resolution. Identically zero at t=0 and outside the support.
    """
    if not 0 <= t <= sched.T:
        raise ContractError(f"t={t} outside [0, {sched.T}]")
    soft = feather_region(char_mask, params.feather_radius_px)
    spatial = downsample_area(soft, latent_size)
    scale = params.lambda_max * (t / sched.T) ** params.gamma
    w = scale * spatial
    return torch.from_numpy(w[None]).to(torch.float32)


def blend_latents(
    x_t: torch.Tensor, q_cond_t: torch.Tensor, w: torch.Tensor
) -> torch.Tensor:
    """Elementwise convex combination x*(1-w) + q*w, w broadcast over channels."""
    if x_t.shape != q_cond_t.shape:
        raise ContractError(f"x {tuple(x_t.shape)} vs q {tuple(q_cond_t.shape)}")
    if w.shape[-2:] != x_t.shape[-2:]:
        raise ContractError(f"weight {tuple(w.shape)} does not broadcast over {tuple(x_t.shape)}")
    return x_t * (1.0 - w) + q_cond_t * w


def build_cond_latents(
    cond_mask: ConditionalMask,
    vae: GlyphVae,
    sched: NoiseSchedule,
    seed: int,
) -> list[torch.Tensor]:
    """Forward-noise the encoded conditional mask at every timestep.

    Entry t uses its own draw from the (seed, "qcond") stream; entry 0 is
    the clean encoding.
    """
    img = torch.from_numpy(chw(to_model_range(cond_mask.rgb)))
    z0 = vae.encode(img)
    rng = stream(seed, "qcond")
    track = [z0]
    for t in range(1, sched.T + 1):
        eps = randn(rng, *z0.shape)
        track.append(forward_noise(z0, t, eps, sched))
    return track


def _region_latent(region: RegionMask, latent_size: int) -> torch.Tensor:
    r = downsample_area(region.values.astype(np.float64), latent_size)
    return torch.from_numpy(r[None]).to(torch.float32)


def _posterior_step(
    x_t: torch.Tensor,
    eps_hat: torch.Tensor,
    t: int,
    sched: NoiseSchedule,
    noise: torch.Tensor | None,
) -> torch.Tensor:
    beta = float(sched.betas[t - 1])
    alpha = 1.0 - beta
    abar_t = float(sched.alpha_bar[t])
    abar_prev = float(sched.alpha_bar[t - 1])
    mean = (x_t - beta / np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(alpha)
    if t > 1:
        var = beta * (1.0 - abar_prev) / (1.0 - abar_t)
        return mean + np.sqrt(var) * noise
    return mean


def _predict_eps(
    model: LatentDenoiser,
    x: torch.Tensor,
    t: int,
    sched: NoiseSchedule,
    char_idx: torch.Tensor,
    region_full: torch.Tensor,
    style: int,
    guidance_scale: float,
) -> torch.Tensor:
    t_frac = torch.tensor([t / sched.T], dtype=torch.float32)
    style_t = torch.tensor([style])
    eps = model(x[None], t_frac, char_idx[None], region_full[None], style_t)[0]
    if guidance_scale != 1.0:
        blank = torch.zeros_like(char_idx)
        eps_u = model(x[None], t_frac, blank[None], region_full[None], style_t)[0]
        eps = eps_u + guidance_scale * (eps - eps_u)
    return eps


@torch.no_grad()
def ddpm_sample(
    model: LatentDenoiser,
    sched: NoiseSchedule,
    char_mask: CharacterMask,
    region: RegionMask,
    seed: int,
    style: int = 0,
    guidance_scale: float = 1.0,
) -> torch.Tensor:
    """Plain ancestral DDPM sampling (no blending, no in-painting).

    Reference implementation: ``sample`` with lambda_max=0 must match it
    bit for bit given the same seed.
    """
    cfg = model.config
    rng = stream(seed, "sample")
    char_idx = torch.from_numpy(char_mask.index_map.astype(np.int64))
    region_full = torch.from_numpy(region.values.astype(np.float32))
    x = randn(rng, cfg.latent_channels, cfg.latent_size, cfg.latent_size)
    for t in range(sched.T, 0, -1):
        eps_hat = _predict_eps(model, x, t, sched, char_idx, region_full, style, guidance_scale)
        noise = randn(rng, *x.shape) if t > 1 else None
        x = _posterior_step(x, eps_hat, t, sched, noise)
    return x


@torch.no_grad()
def sample(
    char_mask: CharacterMask,
    cond_mask: ConditionalMask,
    region: RegionMask,
    sched: NoiseSchedule,
    params: BlendParams,
    model: LatentDenoiser,
    vae: GlyphVae,
    seed: int,
    init_image: np.ndarray | None = None,
    style: int = 0,
    guidance_scale: float = 1.0,
) -> torch.Tensor:
    """Full conditional sampling loop; returns the clean latent x_0.

    Each step first blends the state with the conditional-latent track
    under ``weight_map``, then takes a DDPM posterior step. With an
    ``init_image`` (uint8 RGB), latents outside the region mask are
    re-imposed from forward-noised encodings of it every step.
    """
    cfg = model.config
    h = char_mask.index_map.shape[0]
    if cond_mask.rgb.shape[:2] != (h, h) or region.values.shape != (h, h):
        raise ContractError("conditioning bundle shapes disagree")
    rng = stream(seed, "sample")
    char_idx = torch.from_numpy(char_mask.index_map.astype(np.int64))
    region_full = torch.from_numpy(region.values.astype(np.float32))

    blending = params.lambda_max > 0.0
    track = build_cond_latents(cond_mask, vae, sched, seed) if blending else None
    weights = (
        {
            t: weight_map(char_mask, t, sched, params, cfg.latent_size)
            for t in range(1, sched.T + 1)
        }
        if blending
        else None
    )

    inpainting = init_image is not None
    if inpainting:
        z_init = vae.encode(torch.from_numpy(chw(to_model_range(init_image))))
        r_lat = _region_latent(region, cfg.latent_size)
        init_rng = stream(seed, "inpaint")

    x = randn(rng, cfg.latent_channels, cfg.latent_size, cfg.latent_size)
    for t in range(sched.T, 0, -1):
        if blending:
            x = blend_latents(x, track[t], weights[t])
        eps_hat = _predict_eps(model, x, t, sched, char_idx, region_full, style, guidance_scale)
        noise = randn(rng, *x.shape) if t > 1 else None
        x = _posterior_step(x, eps_hat, t, sched, noise)
        if inpainting:
            eps_init = randn(init_rng, *x.shape)
            x_known = forward_noise(z_init, t - 1, eps_init, sched)
            x = r_lat * x + (1.0 - r_lat) * x_known
    return x


def train_denoiser(
    latents: torch.Tensor,
    char_maps: torch.Tensor,
    regions: torch.Tensor,
    styles: torch.Tensor,
    sched: NoiseSchedule,
    steps: int,
    seed: int,
    config=None,
    batch_size: int = 32,
    lr: float = 2e-3,
) -> tuple[LatentDenoiser, list[float]]:
    """Standard epsilon-prediction MSE training over encoded latents."""
    from .denoiser import DenoiserConfig

    if latents.dim() != 4 or latents.shape[0] == 0:
        raise ContractError("latents must be non-empty (N,C,h,w)")
    n = latents.shape[0]
    torch.manual_seed(seed)
    model = LatentDenoiser(config or DenoiserConfig())
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    batch_rng = stream(seed, "denoiser:batches")
    noise_rng = stream(seed, "denoiser:noise")
    losses: list[float] = []
    sqrt_abar = torch.tensor(np.sqrt(sched.alpha_bar), dtype=torch.float32)
    sqrt_1m = torch.tensor(np.sqrt(1.0 - sched.alpha_bar), dtype=torch.float32)
    model.train()
    for _ in range(steps):
        idx = batch_rng.integers(0, n, size=min(batch_size, n))
        z0 = latents[idx]
        t = torch.from_numpy(batch_rng.integers(1, sched.T + 1, size=len(idx)))
        eps = randn(noise_rng, *z0.shape)
        z_t = sqrt_abar[t][:, None, None, None] * z0 + sqrt_1m[t][:, None, None, None] * eps
        eps_hat = model(
            z_t,
            t.to(torch.float32) / sched.T,
            char_maps[idx],
            regions[idx],
            styles[idx],
        )
        loss = F.mse_loss(eps_hat, eps)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    model.eval()
    return model, losses
