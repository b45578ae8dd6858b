"""Desk-scale training orchestration: corpus, all five models, eval splits.

``ensure_desk_run`` is incremental: each stage writes its artifact plus a
marker keyed by the run-config hash, so re-running after an interruption
(or from the test suite after the script already ran) skips finished
stages.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, Tuple

import torch

from . import modelio
from .consistency import TimeGrid, pretrain_backbone, train_adapter
from .enhance import train_enhancer
from .evalkit.dataset import DatasetConfig, DatasetManifest, generate_dataset, load_manifest
from .evalkit.evaluate import Corpus, load_corpus
from .sampler import train_denoiser
from .schedule import NoiseSchedule
from .vae import train_vae


@dataclass(frozen=True)
class DeskRunConfig:
    train_count: int = 2000
    heldout_count: int = 100
    small_count: int = 100
    train_seed: int = 101
    heldout_seed: int = 202
    small_seed: int = 303
    vae_steps: int = 2600
    denoiser_steps: int = 2000
    enhancer_steps: int = 1200
    backbone_steps: int = 3200
    adapter_steps: int = 1200
    model_seeds: Tuple[int, ...] = (0, 1, 2)
    timesteps: int = 50
    small_size_min: int = 7
    small_size_max: int = 8

    def run_hash(self) -> str:
        doc = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


@dataclass
class DeskArtifacts:
    root: Path
    config: DeskRunConfig
    train_dir: Path
    heldout_dir: Path
    small_dir: Path
    vae_path: Path
    denoiser_path: Path
    enhancer_paths: Dict[int, Path]
    backbone_path: Path
    adapter_paths: Dict[int, Path]

    def train_manifest(self) -> DatasetManifest:
        return load_manifest(self.train_dir)

    def heldout_manifest(self) -> DatasetManifest:
        return load_manifest(self.heldout_dir)

    def small_manifest(self) -> DatasetManifest:
        return load_manifest(self.small_dir)


def _marker(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".done")


def _stage(path: Path, run_hash: str, build: Callable[[], None], log) -> None:
    marker = _marker(path)
    if path.exists() and marker.exists() and marker.read_text().strip() == run_hash:
        log(f"[skip] {path.name}")
        return
    t0 = time.time()
    build()
    marker.write_text(run_hash)
    log(f"[done] {path.name} in {time.time() - t0:.0f}s")


def ensure_desk_run(
    root: str | Path,
    config: DeskRunConfig = DeskRunConfig(),
    log: Callable[[str], None] = print,
) -> DeskArtifacts:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    h = config.run_hash()
    art = DeskArtifacts(
        root=root,
        config=config,
        train_dir=root / "data_train",
        heldout_dir=root / "data_heldout",
        small_dir=root / "data_small",
        vae_path=root / "vae.ctxt",
        denoiser_path=root / "denoiser.ctxt",
        enhancer_paths={s: root / f"enhancer_s{s}.ctxt" for s in config.model_seeds},
        backbone_path=root / "cm_backbone.ctxt",
        adapter_paths={s: root / f"cm_adapter_s{s}.ctxt" for s in config.model_seeds},
    )

    def gen(dir_path: Path, count: int, seed: int, small_only: bool) -> Callable[[], None]:
        def build():
            cfg = DatasetConfig(count=count)
            if small_only:
                cfg = DatasetConfig(
                    count=count,
                    size_min=config.small_size_min,
                    size_max=config.small_size_max,
                )
            generate_dataset(cfg, seed=seed, out_dir=dir_path)

        return build

    _stage(art.train_dir / "manifest.jsonl", h, gen(art.train_dir, config.train_count, config.train_seed, False), log)
    _stage(art.heldout_dir / "manifest.jsonl", h, gen(art.heldout_dir, config.heldout_count, config.heldout_seed, False), log)
    _stage(art.small_dir / "manifest.jsonl", h, gen(art.small_dir, config.small_count, config.small_seed, True), log)

    corpus_cache: dict = {}

    def corpus() -> Corpus:
        if "train" not in corpus_cache:
            corpus_cache["train"] = load_corpus(art.train_manifest())
        return corpus_cache["train"]

    def build_vae():
        model, _ = train_vae(corpus().images, steps=config.vae_steps, seed=0)
        modelio.save_vae(art.vae_path, model)

    _stage(art.vae_path, h, build_vae, log)

    def latents() -> torch.Tensor:
        if "latents" not in corpus_cache:
            vae = modelio.load_vae(art.vae_path)
            outs = []
            images = corpus().images
            for i in range(0, images.shape[0], 64):
                outs.append(vae.encode(images[i : i + 64]))
            corpus_cache["latents"] = torch.cat(outs)
        return corpus_cache["latents"]

    def build_denoiser():
        c = corpus()
        sched = NoiseSchedule.linear(T=config.timesteps)
        model, _ = train_denoiser(
            latents(),
            c.char_maps,
            c.regions,
            c.styles,
            sched,
            steps=config.denoiser_steps,
            seed=0,
            batch_size=32,
            lr=2e-3,
        )
        modelio.save_denoiser(art.denoiser_path, model, sched)

    _stage(art.denoiser_path, h, build_denoiser, log)

    for s in config.model_seeds:
        def build_enhancer(seed=s):
            c = corpus()
            vae = modelio.load_vae(art.vae_path)
            model, _ = train_enhancer(
                vae,
                c.images,
                c.char_maps,
                steps=config.enhancer_steps,
                seed=seed,
                lr=2e-3,
            )
            modelio.save_enhancer(art.enhancer_paths[seed], model)

        _stage(art.enhancer_paths[s], h, build_enhancer, log)

    def build_backbone():
        c = corpus()
        model, _ = pretrain_backbone(
            c.images,
            latents(),
            TimeGrid.karras(),
            steps=config.backbone_steps,
            seed=0,
        )
        modelio.save_cm_backbone(art.backbone_path, model, TimeGrid.karras())

    _stage(art.backbone_path, h, build_backbone, log)

    for s in config.model_seeds:
        def build_adapter(seed=s):
            c = corpus()
            backbone, grid = modelio.load_cm_backbone(art.backbone_path)
            adapter, _ = train_adapter(
                backbone,
                c.images,
                latents(),
                c.char_maps,
                grid,
                steps=config.adapter_steps,
                seed=seed,
            )
            modelio.save_cm_adapter(art.adapter_paths[seed], adapter)

        _stage(art.adapter_paths[s], h, build_adapter, log)

    return art
