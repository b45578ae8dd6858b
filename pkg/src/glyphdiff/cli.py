"""Command-line entry points for dataset generation, training, generation,
evaluation, reporting, and serving.

Every run that writes an artifact also writes ``<artifact>.runinfo.json``
with the arguments, seeds, and checkpoint hashes involved, so any output
can be reproduced from its record.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from . import __version__, modelio
from .config import PipelineConfig, load_config, save_config
from .consistency import TimeGrid, pretrain_backbone, train_adapter
from .enhance import train_enhancer
from .evalkit.dataset import DatasetConfig, generate_dataset, load_manifest
from .evalkit.evaluate import evaluate_decoder, evaluate_predictions, load_corpus
from .evalkit.report import make_report
from .fonts import FontAttributes
from .imgio import save_png
from .pipeline import ModelHub, make_reconstruction_decoder
from .sampler import train_denoiser
from .schedule import NoiseSchedule
from .service import create_app, new_session, run_generation, SessionStore
from .vae import train_vae


def _write_runinfo(artifact: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    record = {
        "tool": "glyphdiff",
        "version": __version__,
        "command": args.command,
        "args": {k: v for k, v in vars(args).items() if k not in ("func",)},
    }
    if extra:
        record.update(extra)
    path = Path(str(artifact) + ".runinfo.json")
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")


def _encode_latents(vae, images: torch.Tensor) -> torch.Tensor:
    outs = []
    for i in range(0, images.shape[0], 64):
        outs.append(vae.encode(images[i : i + 64]))
    return torch.cat(outs)


def cmd_dataset_gen(args) -> int:
    config = DatasetConfig(
        count=args.count,
        canvas=args.canvas,
        size_min=args.size_min,
        size_max=args.size_max,
    )
    manifest = generate_dataset(config, seed=args.seed, out_dir=args.out)
    _write_runinfo(manifest.manifest_path, args, {"config_hash": config.config_hash()})
    print(f"wrote {len(manifest.entries)} entries under {args.out}")
    return 0


def cmd_train_vae(args) -> int:
    corpus = load_corpus(load_manifest(args.dataset))
    model, losses = train_vae(
        corpus.images, steps=args.steps, seed=args.seed, batch_size=args.batch, lr=args.lr
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    modelio.save_vae(out, model)
    _write_runinfo(
        out,
        args,
        {
            "final_loss": losses[-1],
            "checkpoint_hash": modelio.checkpoint_hash(out),
        },
    )
    print(f"vae -> {out} (final loss {losses[-1]:.5f})")
    return 0


def cmd_train_denoiser(args) -> int:
    corpus = load_corpus(load_manifest(args.dataset))
    vae = modelio.load_vae(args.vae)
    sched = NoiseSchedule.linear(T=args.timesteps)
    latents = _encode_latents(vae, corpus.images)
    model, losses = train_denoiser(
        latents,
        corpus.char_maps,
        corpus.regions,
        corpus.styles,
        sched,
        steps=args.steps,
        seed=args.seed,
        batch_size=args.batch,
        lr=args.lr,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    modelio.save_denoiser(out, model, sched)
    _write_runinfo(
        out,
        args,
        {
            "final_loss": losses[-1],
            "vae_hash": modelio.checkpoint_hash(args.vae),
            "checkpoint_hash": modelio.checkpoint_hash(out),
        },
    )
    print(f"denoiser -> {out} (final loss {losses[-1]:.5f})")
    return 0


def cmd_train_enhancer(args) -> int:
    corpus = load_corpus(load_manifest(args.dataset))
    vae = modelio.load_vae(args.vae)
    model, losses = train_enhancer(
        vae,
        corpus.images,
        corpus.char_maps,
        steps=args.steps,
        seed=args.seed,
        batch_size=args.batch,
        lr=args.lr,
        kappa=args.kappa,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    modelio.save_enhancer(out, model)
    _write_runinfo(
        out,
        args,
        {
            "final_loss": losses[-1],
            "vae_hash": modelio.checkpoint_hash(args.vae),
            "checkpoint_hash": modelio.checkpoint_hash(out),
        },
    )
    print(f"enhancer -> {out} (final loss {losses[-1]:.5f})")
    return 0


def cmd_pretrain_cm(args) -> int:
    corpus = load_corpus(load_manifest(args.dataset))
    vae = modelio.load_vae(args.vae)
    latents = _encode_latents(vae, corpus.images)
    grid = TimeGrid.karras()
    model, losses = pretrain_backbone(
        corpus.images,
        latents,
        grid,
        steps=args.steps,
        seed=args.seed,
        batch_size=args.batch,
        lr=args.lr,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    modelio.save_cm_backbone(out, model, grid)
    _write_runinfo(
        out,
        args,
        {
            "final_loss": losses[-1],
            "vae_hash": modelio.checkpoint_hash(args.vae),
            "checkpoint_hash": modelio.checkpoint_hash(out),
        },
    )
    print(f"cm backbone -> {out} (final loss {losses[-1]:.5f})")
    return 0


def cmd_train_adapter(args) -> int:
    corpus = load_corpus(load_manifest(args.dataset))
    vae = modelio.load_vae(args.vae)
    backbone, grid = modelio.load_cm_backbone(args.backbone)
    latents = _encode_latents(vae, corpus.images)
    adapter, losses = train_adapter(
        backbone,
        corpus.images,
        latents,
        corpus.char_maps,
        grid,
        steps=args.steps,
        seed=args.seed,
        batch_size=args.batch,
        lr=args.lr,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    modelio.save_cm_adapter(out, adapter)
    _write_runinfo(
        out,
        args,
        {
            "final_loss": losses[-1],
            "backbone_hash": modelio.checkpoint_hash(args.backbone),
            "checkpoint_hash": modelio.checkpoint_hash(out),
        },
    )
    print(f"cm adapter -> {out} (final loss {losses[-1]:.5f})")
    return 0


def cmd_generate(args) -> int:
    config = load_config(args.config)
    hub = ModelHub.from_config(config)
    attrs = None
    if args.size or args.font or args.fill or args.background:
        doc = {}
        if args.font:
            doc["font"] = args.font
        if args.size:
            doc["size_px"] = args.size
        if args.fill:
            doc["fill"] = [int(v) for v in args.fill.split(",")]
        if args.background:
            doc["background"] = [int(v) for v in args.background.split(",")]
        attrs = [doc]
    state = new_session(args.prompt, config.canvas, args.seed, attrs)
    store = SessionStore(args.sessions_dir or config.resolve(config.sessions_dir))
    store.append(state, "create")
    state, result = run_generation(hub, store, state, args.decoder, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_png(out, result.image)
    _write_runinfo(
        out,
        args,
        {
            "session_id": state.id,
            "checkpoint_hashes": hub.checkpoint_hashes,
            "snapshot": state.history[-1],
        },
    )
    print(f"image -> {out} (session {state.id})")
    return 0


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.pred_dir:
        row = evaluate_predictions(manifest, args.pred_dir)
        hashes = {}
    else:
        config = load_config(args.config)
        hub = ModelHub.from_config(config)
        decode_fn = make_reconstruction_decoder(hub, args.decoder)
        indices = None
        if args.split == "small":
            indices = [i for i, e in enumerate(manifest.entries) if e.tag == "small"]
        elif args.split == "large":
            indices = [i for i, e in enumerate(manifest.entries) if e.tag == "large"]
        row = evaluate_decoder(manifest, decode_fn, indices)
        hashes = hub.checkpoint_hashes
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = {"row_name": args.row_name, "metrics": row, "manifest": str(args.manifest)}
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _write_runinfo(out, args, {"checkpoint_hashes": hashes})
    print(json.dumps(doc["metrics"], indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    rows = {}
    for path in args.rows:
        doc = json.loads(Path(path).read_text())
        if "row_name" in doc:
            metrics = {
                k: v
                for k, v in doc["metrics"].items()
                if k in ("mse", "psnr_db", "ssim", "precision", "recall", "f1")
            }
            rows[doc["row_name"]] = metrics
        else:
            for name, metrics in doc.items():
                rows[name] = metrics
    report = make_report(rows, dataset_id=args.dataset_id, sample_count=args.n)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.text + "\n")
    if args.json_out:
        Path(args.json_out).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
        )
    _write_runinfo(out, args)
    print(report.text)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    config = load_config(args.config)
    hub = ModelHub.from_config(config)
    app = create_app(hub)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_init_config(args) -> int:
    save_config(args.out, PipelineConfig())
    print(f"config -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glyphdiff",
        description="Attribute-controlled text rendering in toy diffusion images",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset-gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--canvas", type=int, default=64)
    p.add_argument("--size-min", type=int, default=4)
    p.add_argument("--size-max", type=int, default=24)
    p.set_defaults(func=cmd_dataset_gen)

    def train_common(p, needs_vae=True):
        p.add_argument("--dataset", required=True, help="manifest path or dataset dir")
        if needs_vae:
            p.add_argument("--vae", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--steps", type=int, required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--batch", type=int, default=16)
        p.add_argument("--lr", type=float, default=1e-3)

    p = sub.add_parser("train-vae", help="train the image autoencoder")
    train_common(p, needs_vae=False)
    p.set_defaults(func=cmd_train_vae)

    p = sub.add_parser("train-denoiser", help="train the latent denoiser")
    train_common(p)
    p.add_argument("--timesteps", type=int, default=50)
    p.set_defaults(func=cmd_train_denoiser, batch=32, lr=2e-3)

    p = sub.add_parser("train-enhancer", help="train the patch enhancer")
    train_common(p)
    p.add_argument("--kappa", type=float, default=5.0)
    p.set_defaults(func=cmd_train_enhancer, lr=2e-3)

    p = sub.add_parser("pretrain-cm", help="consistency-train the decode backbone")
    train_common(p)
    p.set_defaults(func=cmd_pretrain_cm, batch=8)

    p = sub.add_parser("train-adapter", help="train the mask-guided adapter")
    train_common(p)
    p.add_argument("--backbone", required=True)
    p.set_defaults(func=cmd_train_adapter, batch=8)

    p = sub.add_parser("generate", help="generate one image from a prompt")
    p.add_argument("--config", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--decoder", default="vanilla", choices=("vanilla", "enhance", "consistency"))
    p.add_argument("--font", default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--fill", default=None, help="R,G,B")
    p.add_argument("--background", default=None, help="R,G,B")
    p.add_argument("--sessions-dir", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="evaluate a decode route over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--row-name", default="run")
    p.add_argument("--pred-dir", default=None, help="evaluate externally produced images")
    p.add_argument("--config", default=None)
    p.add_argument("--decoder", default="vanilla", choices=("vanilla", "enhance", "consistency"))
    p.add_argument("--split", default="all", choices=("all", "small", "large"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="combine eval rows into a table")
    p.add_argument("--rows", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--json-out", default=None)
    p.add_argument("--dataset-id", default="")
    p.add_argument("--n", type=int, default=0)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--config", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("init-config", help="write a default config file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_config)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
