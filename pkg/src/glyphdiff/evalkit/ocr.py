"""Template OCR over the closed glyph set, plus exact-word scoring.

Each char box is binarized with Otsu's threshold and matched to the
nearest glyph template by the magnitude of normalized cross-correlation
(polarity-free, so light-on-dark and dark-on-light both work). Words are
read by concatenating their slots; uniform or unmatchable slots read as
spaces.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Mapping, Sequence, Tuple

import numpy as np

from ..fonts import GlyphFont, builtin_fonts, glyph_tile_width, scale_bitmap
from ..layout import LayoutPlan

SPACE_SCORE_CUTOFF = 0.30
LOW_CONFIDENCE = 0.5


@dataclass(frozen=True)
class RecognizedWord:
    text: str
    confidences: Tuple[float, ...]
    flagged: bool  # any slot below the confidence threshold

    @property
    def confidence(self) -> float:
        return min(self.confidences) if self.confidences else 1.0


def otsu_threshold(gray: np.ndarray) -> float:
    """Classic between-class-variance maximizer over a 256-bin histogram.

    Returns the upper edge of the best split bin, so pixels >= threshold
    form the upper class exactly.
    """
    flat = np.clip(gray, 0.0, 1.0).ravel()
    hist, edges = np.histogram(flat, bins=256, range=(0.0, 1.0))
    total = flat.size
    weight_lo = np.cumsum(hist)
    weight_hi = total - weight_lo
    centers = (edges[:-1] + edges[1:]) / 2
    cum_sum = np.cumsum(hist * centers)
    total_sum = cum_sum[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mean_lo = cum_sum / weight_lo
        mean_hi = (total_sum - cum_sum) / weight_hi
        between = weight_lo * weight_hi * (mean_lo - mean_hi) ** 2
    between = np.nan_to_num(between)
    return float(edges[int(np.argmax(between)) + 1])


_TEMPLATE_CACHE: dict = {}


def _slot_templates(font: GlyphFont, slot_w: int, slot_h: int) -> tuple:
    """Binary templates for every non-space glyph placed as the renderer does."""
    key = (font.name, slot_w, slot_h)
    if key in _TEMPLATE_CACHE:
        return _TEMPLATE_CACHE[key]
    tile_w = min(glyph_tile_width(font, slot_h), slot_w)
    entries = []
    for cp in range(33, 127):
        on = scale_bitmap(font.glyph(cp), slot_h, tile_w)
        template = np.zeros((slot_h, slot_w), dtype=np.float64)
        template[:, :tile_w] = on
        centered = template - template.mean()
        norm = np.linalg.norm(centered)
        if norm == 0:
            continue
        entries.append((cp, centered / norm))
    _TEMPLATE_CACHE[key] = tuple(entries)
    return _TEMPLATE_CACHE[key]


def _classify_slot(crop: np.ndarray, font: GlyphFont) -> Tuple[str, float]:
    """Best (character, confidence) for one slot crop in [0,1] grayscale."""
    h, w = crop.shape
    if crop.std() < 1e-6:
        return " ", 1.0
    binary = (crop >= otsu_threshold(crop)).astype(np.float64)
    centered = binary - binary.mean()
    norm = np.linalg.norm(centered)
    if norm == 0:
        return " ", 1.0
    centered /= norm
    best_cp, best_score = 32, 0.0
    for cp, template in _slot_templates(font, w, h):
        score = abs(float(np.sum(centered * template)))
        if score > best_score:
            best_cp, best_score = cp, score
    if best_score < SPACE_SCORE_CUTOFF:
        return " ", 1.0 - best_score
    return chr(best_cp), min(best_score, 1.0)


def template_ocr(
    image: np.ndarray,
    plan: LayoutPlan,
    fonts: Mapping[str, GlyphFont] | None = None,
) -> List[RecognizedWord]:
    """Read every planned word back out of an image.

    ``image`` is (H,W,3) uint8 or float in [0,1]; candidate boxes and the
    glyph set come from the plan.
    """
    registry = fonts if fonts is not None else builtin_fonts()
    img = np.asarray(image, dtype=np.float64)
    if img.max() > 1.5:
        img = img / 255.0
    if img.ndim == 3:
        # ITU-R 601 luminance, matching the contrast criterion renders use
        img = img @ np.array([0.299, 0.587, 0.114])
    words: List[RecognizedWord] = []
    for wp in plan.words:
        attrs = plan.attrs_by_span[wp.span_index]
        font = registry[attrs.font]
        chars = []
        confs = []
        for cb in wp.char_boxes:
            crop = img[cb.y : cb.y2, cb.x : cb.x2]
            ch, conf = _classify_slot(crop, font)
            chars.append(ch)
            confs.append(conf)
        words.append(
            RecognizedWord(
                text="".join(chars),
                confidences=tuple(confs),
                flagged=any(c < LOW_CONFIDENCE for c in confs),
            )
        )
    return words


def ocr_exact_match(
    predicted: Sequence[str], ground_truth: Sequence[str]
) -> Tuple[float, float, float]:
    """Multiset exact-word precision/recall/F1; empty vs empty is perfect."""
    pred = list(predicted)
    gt = list(ground_truth)
    if not pred and not gt:
        return (1.0, 1.0, 1.0)
    matched = 0
    pool = list(gt)
    for word in pred:
        if word in pool:
            pool.remove(word)
            matched += 1
    precision = matched / len(pred) if pred else 0.0
    recall = matched / len(gt) if gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return (precision, recall, f1)
