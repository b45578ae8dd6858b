"""Typed save/load wrappers over the checkpoint container.

Each model kind has a fixed section tag; configs, schedules, and time
grids ride in the header meta so a checkpoint alone reconstructs the
model.
"""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

from .checkpoint import (
    arrays_to_module,
    checkpoint_hash,
    load_section,
    save_model,
)
from .consistency import CharMaskAdapter, ConsistencyConfig, ConsistencyDecoder, TimeGrid
from .denoiser import DenoiserConfig, LatentDenoiser
from .enhance import UpscaleEnhancer
from .schedule import NoiseSchedule
from .vae import GlyphVae, VaeConfig

SECTION_VAE = "vae"
SECTION_DENOISER = "denoiser"
SECTION_ENHANCER = "enhancer"
SECTION_CM_BACKBONE = "cm_backbone"
SECTION_CM_ADAPTER = "cm_adapter"


def save_vae(path: str | Path, model: GlyphVae) -> None:
    save_model(path, SECTION_VAE, model, {"kind": SECTION_VAE, "config": asdict(model.config)})


def load_vae(path: str | Path) -> GlyphVae:
    arrays, meta = load_section(path, SECTION_VAE)
    model = GlyphVae(VaeConfig(**meta["config"]))
    arrays_to_module(model, arrays)
    model.eval()
    return model


def save_denoiser(path: str | Path, model: LatentDenoiser, sched: NoiseSchedule) -> None:
    save_model(
        path,
        SECTION_DENOISER,
        model,
        {"kind": SECTION_DENOISER, "config": asdict(model.config), "schedule": sched.to_dict()},
    )


def load_denoiser(path: str | Path) -> tuple[LatentDenoiser, NoiseSchedule]:
    arrays, meta = load_section(path, SECTION_DENOISER)
    model = LatentDenoiser(DenoiserConfig(**meta["config"]))
    arrays_to_module(model, arrays)
    model.eval()
    return model, NoiseSchedule.from_dict(meta["schedule"])


def save_enhancer(path: str | Path, model: UpscaleEnhancer) -> None:
    meta = {
        "kind": SECTION_ENHANCER,
        "channels": model.conv_in.in_channels,
        "hidden": model.conv_in.out_channels,
    }
    save_model(path, SECTION_ENHANCER, model, meta)


def load_enhancer(path: str | Path) -> UpscaleEnhancer:
    arrays, meta = load_section(path, SECTION_ENHANCER)
    model = UpscaleEnhancer(channels=meta["channels"], hidden=meta["hidden"])
    arrays_to_module(model, arrays)
    model.eval()
    return model


def save_cm_backbone(path: str | Path, model: ConsistencyDecoder, grid: TimeGrid) -> None:
    save_model(
        path,
        SECTION_CM_BACKBONE,
        model,
        {"kind": SECTION_CM_BACKBONE, "config": asdict(model.config), "grid": grid.to_dict()},
    )


def load_cm_backbone(path: str | Path) -> tuple[ConsistencyDecoder, TimeGrid]:
    arrays, meta = load_section(path, SECTION_CM_BACKBONE)
    model = ConsistencyDecoder(ConsistencyConfig(**meta["config"]))
    arrays_to_module(model, arrays)
    model.eval()
    return model, TimeGrid.from_dict(meta["grid"])


def save_cm_adapter(path: str | Path, model: CharMaskAdapter) -> None:
    save_model(
        path,
        SECTION_CM_ADAPTER,
        model,
        {
            "kind": SECTION_CM_ADAPTER,
            "config": asdict(model.config),
            "embed_dim": model.embed.embedding_dim,
        },
    )


def load_cm_adapter(path: str | Path) -> CharMaskAdapter:
    arrays, meta = load_section(path, SECTION_CM_ADAPTER)
    model = CharMaskAdapter(ConsistencyConfig(**meta["config"]), embed_dim=meta["embed_dim"])
    arrays_to_module(model, arrays)
    model.eval()
    return model


__all__ = [
    "checkpoint_hash",
    "save_vae",
    "load_vae",
    "save_denoiser",
    "load_denoiser",
    "save_enhancer",
    "load_enhancer",
    "save_cm_backbone",
    "load_cm_backbone",
    "save_cm_adapter",
    "load_cm_adapter",
]
