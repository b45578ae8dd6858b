"""Batch evaluation over dataset manifests: reconstruction metrics + OCR."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from ..errors import ContractError
from ..imgio import chw, load_png, to_model_range, to_unit_range
from ..layout import LayoutPlan
from ..sampler import style_token
from .dataset import DatasetEntry, DatasetManifest
from .metrics import mse, psnr, ssim
from .ocr import ocr_exact_match, template_ocr


@dataclass
class Corpus:
    """Tensors for training: images in [-1,1], full-res conditioning."""

    images: torch.Tensor  # (N,3,H,W) float32
    char_maps: torch.Tensor  # (N,H,W) int64
    regions: torch.Tensor  # (N,H,W) float32
    styles: torch.Tensor  # (N,) int64
    words: list
    plans: list
    small: np.ndarray  # bool per entry

    def __len__(self) -> int:
        return int(self.images.shape[0])


def load_corpus(manifest: DatasetManifest, n_styles: int = 8) -> Corpus:
    images, chars, regions, styles, words, plans, small = [], [], [], [], [], [], []
    for entry in manifest.entries:
        images.append(chw(to_model_range(manifest.load_image(entry))))
        chars.append(manifest.load_char_map(entry).astype(np.int64))
        regions.append(manifest.load_region(entry).astype(np.float32))
        plan = manifest.load_plan(entry)
        plans.append(plan)
        words.append(list(entry.words))
        prose = entry.prompt.replace("'", "")
        styles.append(style_token(prose, n_styles))
        small.append(entry.tag == "small")
    if not images:
        raise ContractError("manifest has no entries")
    return Corpus(
        images=torch.from_numpy(np.stack(images)),
        char_maps=torch.from_numpy(np.stack(chars)),
        regions=torch.from_numpy(np.stack(regions)),
        styles=torch.tensor(styles, dtype=torch.int64),
        words=words,
        plans=plans,
        small=np.array(small, dtype=bool),
    )


DecodeFn = Callable[[np.ndarray, np.ndarray, LayoutPlan, int], np.ndarray]


def evaluate_decoder(
    manifest: DatasetManifest,
    decode_fn: DecodeFn,
    indices: Optional[Sequence[int]] = None,
) -> dict:
    """Reconstruction metrics + pooled exact-word OCR for one decode route.

    ``decode_fn(gt_u8, char_map_u8, plan, entry_index) -> pred_u8``.
    """
    idxs = list(indices) if indices is not None else list(range(len(manifest.entries)))
    if not idxs:
        raise ContractError("no entries selected")
    mses, psnrs, ssims = [], [], []
    matched = pred_total = gt_total = 0
    char_sq_err = 0.0
    char_px = 0
    for i in idxs:
        entry = manifest.entries[i]
        gt = manifest.load_image(entry)
        char_map = manifest.load_char_map(entry)
        plan = manifest.load_plan(entry)
        pred = decode_fn(gt, char_map, plan, i)
        a, b = to_unit_range(pred), to_unit_range(gt)
        mses.append(mse(a, b))
        psnrs.append(psnr(a, b))
        ssims.append(ssim(a, b))
        on = char_map > 0
        if on.any():
            char_sq_err += float((((a - b) ** 2)[on]).sum())
            char_px += int(on.sum()) * 3
        gt_words = list(entry.words)
        rec = [w.text for w in template_ocr(pred, plan)]
        pool = list(gt_words)
        for w in rec:
            if w in pool:
                pool.remove(w)
                matched += 1
        pred_total += len(rec)
        gt_total += len(gt_words)
    precision = matched / pred_total if pred_total else 0.0
    recall = matched / gt_total if gt_total else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {
        "mse": float(np.mean(mses)),
        "psnr_db": float(np.mean(psnrs)),
        "ssim": float(np.mean(ssims)),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "char_region_mse": char_sq_err / char_px if char_px else 0.0,
        "n": len(idxs),
    }


def evaluate_predictions(manifest: DatasetManifest, pred_dir: str | Path) -> dict:
    """Evaluate externally produced images named like the manifest's."""
    pred_dir = Path(pred_dir)

    def decode_fn(gt, char_map, plan, i):
        return load_png(pred_dir / manifest.entries[i].image_path)

    return evaluate_decoder(manifest, decode_fn)
