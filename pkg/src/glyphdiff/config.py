"""Pipeline configuration: geometry, blending, and checkpoint locations."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional


@dataclass(frozen=True)
class PipelineConfig:
    canvas: int = 64
    latent_size: int = 16
    timesteps: int = 50
    n_styles: int = 8
    lambda_max: float = 0.85
    gamma: float = 1.0
    feather_radius_px: int = 2
    guidance_scale: float = 1.0
    cm_decode_steps: int = 1
    vae_path: str = "checkpoints/vae.ctxt"
    denoiser_path: str = "checkpoints/denoiser.ctxt"
    enhancer_path: Optional[str] = "checkpoints/enhancer.ctxt"
    cm_backbone_path: Optional[str] = "checkpoints/cm_backbone.ctxt"
    cm_adapter_path: Optional[str] = "checkpoints/cm_adapter.ctxt"
    sessions_dir: str = "sessions"
    base_dir: str = "."

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    doc = json.loads(path.read_text())
    cfg = PipelineConfig(**doc)
    if "base_dir" not in doc:
        cfg = replace(cfg, base_dir=str(path.parent))
    return cfg


def save_config(path: str | Path, config: PipelineConfig) -> None:
    Path(path).write_text(json.dumps(asdict(config), indent=2, sort_keys=True) + "\n")
