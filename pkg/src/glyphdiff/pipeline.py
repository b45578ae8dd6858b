"""End-to-end generation: plan -> masks -> blended sampling -> decode.

``ModelHub`` owns the loaded checkpoints (plus their hashes, recorded in
every snapshot for reproducibility). Decoding goes through one of three
routes: the plain VAE decoder, the patch-enhanced decoder, or the
mask-guided consistency decoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .config import PipelineConfig
from .consistency import CharMaskAdapter, ConsistencyDecoder, TimeGrid, decode_consistent
from .denoiser import LatentDenoiser
from .enhance import UpscaleEnhancer, enhance_image
from .errors import ContractError
from .fonts import FontAttributes
from .imgio import chw, from_model_range, hwc, to_model_range
from .layout import LayoutPlan
from .masks import CharacterMask, ConditionalMask, RegionMask, build_char_mask, build_cond_mask
from . import modelio
from .sampler import BlendParams, sample, style_token
from .schedule import NoiseSchedule
from .vae import GlyphVae

DECODERS = ("vanilla", "enhance", "consistency")


class PipelineStageError(RuntimeError):
    """Wraps a failure with the pipeline stage where it happened."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ModelHub:
    config: PipelineConfig
    vae: GlyphVae
    denoiser: LatentDenoiser
    schedule: NoiseSchedule
    enhancer: Optional[UpscaleEnhancer] = None
    cm_backbone: Optional[ConsistencyDecoder] = None
    cm_grid: Optional[TimeGrid] = None
    cm_adapter: Optional[CharMaskAdapter] = None
    checkpoint_hashes: dict = field(default_factory=dict)

    @classmethod
    def from_config(cls, config: PipelineConfig) -> "ModelHub":
        hashes = {}
        vae_path = config.resolve(config.vae_path)
        den_path = config.resolve(config.denoiser_path)
        if vae_path is None or not vae_path.exists():
            raise FileNotFoundError(
                f"VAE checkpoint missing at {vae_path}; run the train-vae subcommand first"
            )
        if den_path is None or not den_path.exists():
            raise FileNotFoundError(
                f"denoiser checkpoint missing at {den_path}; run the train-denoiser subcommand first"
            )
        vae = modelio.load_vae(vae_path)
        hashes["vae"] = modelio.checkpoint_hash(vae_path)
        denoiser, sched = modelio.load_denoiser(den_path)
        hashes["denoiser"] = modelio.checkpoint_hash(den_path)
        hub = cls(config=config, vae=vae, denoiser=denoiser, schedule=sched, checkpoint_hashes=hashes)
        enh_path = config.resolve(config.enhancer_path)
        if enh_path and enh_path.exists():
            hub.enhancer = modelio.load_enhancer(enh_path)
            hashes["enhancer"] = modelio.checkpoint_hash(enh_path)
        bb_path = config.resolve(config.cm_backbone_path)
        if bb_path and bb_path.exists():
            hub.cm_backbone, hub.cm_grid = modelio.load_cm_backbone(bb_path)
            hashes["cm_backbone"] = modelio.checkpoint_hash(bb_path)
        ad_path = config.resolve(config.cm_adapter_path)
        if ad_path and ad_path.exists():
            hub.cm_adapter = modelio.load_cm_adapter(ad_path)
            hashes["cm_adapter"] = modelio.checkpoint_hash(ad_path)
        return hub

    def blend_params(self) -> BlendParams:
        return BlendParams(
            lambda_max=self.config.lambda_max,
            gamma=self.config.gamma,
            feather_radius_px=self.config.feather_radius_px,
        )

    def require_decoder(self, decoder: str) -> None:
        if decoder not in DECODERS:
            raise ContractError(f"unknown decoder {decoder!r}; options: {DECODERS}")
        if decoder == "enhance" and self.enhancer is None:
            raise FileNotFoundError(
                "enhance decoder needs an enhancer checkpoint; run the train-enhancer subcommand"
            )
        if decoder == "consistency" and self.cm_backbone is None:
            raise FileNotFoundError(
                "consistency decoder needs a backbone checkpoint; run the pretrain-cm subcommand"
            )

    @torch.no_grad()
    def decode_latent(
        self,
        latent: torch.Tensor,
        decoder: str,
        char_mask: CharacterMask,
        seed: int = 0,
    ) -> torch.Tensor:
        self.require_decoder(decoder)
        if decoder == "vanilla":
            return self.vae.decode(latent)
        if decoder == "enhance":
            return enhance_image(self.vae.decode(latent), self.enhancer)
        char_idx = torch.from_numpy(char_mask.index_map.astype(np.int64))
        return decode_consistent(
            self.cm_backbone,
            self.cm_adapter,
            latent,
            char_idx,
            n_steps=self.config.cm_decode_steps,
            seed=seed,
            grid=self.cm_grid,
        )


@dataclass(frozen=True)
class GenerationResult:
    image: np.ndarray  # uint8 (H,W,3)
    char_mask: CharacterMask
    cond_mask: ConditionalMask
    region: RegionMask
    plan: LayoutPlan
    seed: int
    decoder: str


def make_reconstruction_decoder(hub: ModelHub, decoder: str):
    """decode_fn for evalkit: ground truth -> encode -> chosen decode route."""
    hub.require_decoder(decoder)

    def decode_fn(
        gt_u8: np.ndarray, char_map_u8: np.ndarray, plan: LayoutPlan, index: int
    ) -> np.ndarray:
        from .masks import char_mask_from_index_map

        latent = hub.vae.encode(torch.from_numpy(chw(to_model_range(gt_u8))))
        char_mask = char_mask_from_index_map(char_map_u8, plan)
        decoded = hub.decode_latent(latent, decoder, char_mask, seed=index)
        return hwc(from_model_range(decoded.numpy()))

    return decode_fn


def generate_from_plan(
    hub: ModelHub,
    plan: LayoutPlan,
    prose: str,
    region: Optional[RegionMask],
    seed: int,
    decoder: str = "vanilla",
    init_image: Optional[np.ndarray] = None,
) -> GenerationResult:
    """Run masks -> sample -> decode for an already-validated plan."""
    hub.require_decoder(decoder)
    try:
        char_mask = build_char_mask(plan)
        cond_mask = build_cond_mask(plan)
    except Exception as e:  # noqa: BLE001 - stage tagging
        raise PipelineStageError("masks", e) from e
    if region is None:
        region = RegionMask.full(plan.canvas_h, plan.canvas_w)
    try:
        latent = sample(
            char_mask,
            cond_mask,
            region,
            hub.schedule,
            hub.blend_params(),
            hub.denoiser,
            hub.vae,
            seed=seed,
            init_image=init_image,
            style=style_token(prose, hub.config.n_styles),
            guidance_scale=hub.config.guidance_scale,
        )
    except Exception as e:  # noqa: BLE001
        raise PipelineStageError("sample", e) from e
    try:
        decoded = hub.decode_latent(latent, decoder, char_mask, seed=seed)
    except Exception as e:  # noqa: BLE001
        raise PipelineStageError("decode", e) from e
    image = hwc(from_model_range(decoded.numpy()))
    return GenerationResult(
        image=image,
        char_mask=char_mask,
        cond_mask=cond_mask,
        region=region,
        plan=plan,
        seed=seed,
        decoder=decoder,
    )
