"""Character and conditional masks, incremental edits, feathered weights.

The character mask stores glyph identity per pixel (0 = non-text, k =
codepoint k+31); the conditional mask is the styled RGB rendering that
gets blended into the denoising latents. Both derive from a LayoutPlan
so they stay aligned with the renderer pixel-for-pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .fonts import (
    FontAttributes,
    GlyphFont,
    builtin_fonts,
    glyph_tile_width,
    render_text_line,
    scale_bitmap,
)
from .layout import Box, LayoutPlan, PromptSpec, allocate_boxes, validate_plan

NEUTRAL_GRAY = (128, 128, 128)
NON_TEXT_INDEX = 0


class PlanContractError(ValueError):
    """Operation received a plan that fails validate_plan."""


def char_index(ch: str) -> int:
    """Printable-ASCII character -> mask index (space=1 .. '~'=95)."""
    cp = ord(ch)
    if not (32 <= cp <= 126):
        raise ValueError(f"character {ch!r} not printable ASCII")
    return cp - 31


def index_char(index: int) -> str:
    if not (1 <= index <= 95):
        raise ValueError(f"index {index} out of range 1..95")
    return chr(index + 31)


@dataclass(frozen=True)
class CharacterMask:
    """Index map of character identity plus the covering box indicator.

    ``box_support`` marks the union of char boxes of the originating plan;
    it drives feathering and is rebuilt from the plan when a mask is
    re-loaded from its PNG form (which stores only the index map).
    """

    index_map: np.ndarray  # uint8 (H, W)
    box_support: np.ndarray  # bool (H, W)

    @property
    def shape(self) -> tuple:
        return self.index_map.shape


@dataclass(frozen=True)
class ConditionalMask:
    rgb: np.ndarray  # uint8 (H, W, 3)


@dataclass(frozen=True)
class RegionMask:
    values: np.ndarray  # uint8 (H, W) in {0,1}; 1 = generate here

    @classmethod
    def full(cls, h: int, w: int) -> "RegionMask":
        return cls(values=np.ones((h, w), dtype=np.uint8))

    @classmethod
    def empty(cls, h: int, w: int) -> "RegionMask":
        return cls(values=np.zeros((h, w), dtype=np.uint8))

    @classmethod
    def from_png_array(cls, arr: np.ndarray) -> "RegionMask":
        if arr.ndim == 3:
            arr = arr[..., 0]
        return cls(values=(arr >= 128).astype(np.uint8))


def _require_valid(plan: LayoutPlan) -> None:
    violations = validate_plan(plan)
    if violations:
        raise PlanContractError(f"invalid plan: {violations[:3]}")


def _fonts_for_plan(
    plan: LayoutPlan, fonts: Mapping[str, GlyphFont] | None
) -> Mapping[str, GlyphFont]:
    return fonts if fonts is not None else builtin_fonts()


def build_char_mask(
    plan: LayoutPlan, fonts: Mapping[str, GlyphFont] | None = None
) -> CharacterMask:
    """Rasterize glyph identity into an index map over the plan's canvas.

    Each char box gets its character's index on the glyph's on-pixels at
    box scale; spaces contribute nothing (their bitmap is all-zero).
    """
    _require_valid(plan)
    fonts = _fonts_for_plan(plan, fonts)
    index_map = np.zeros((plan.canvas_h, plan.canvas_w), dtype=np.uint8)
    support = np.zeros((plan.canvas_h, plan.canvas_w), dtype=bool)
    for wp in plan.words:
        attrs = plan.attrs_by_span[wp.span_index]
        font = fonts[attrs.font]
        for ch, cb in zip(wp.word, wp.char_boxes):
            support[cb.y : cb.y2, cb.x : cb.x2] = True
            if ch == " ":
                continue
            tile_w = min(glyph_tile_width(font, cb.h), cb.w)
            on = scale_bitmap(font.glyph(ord(ch)), cb.h, tile_w)
            region = index_map[cb.y : cb.y2, cb.x : cb.x + tile_w]
            region[on] = char_index(ch)
    return CharacterMask(index_map=index_map, box_support=support)


def char_mask_from_index_map(
    index_map: np.ndarray, plan: LayoutPlan | None = None
) -> CharacterMask:
    """Rebuild a CharacterMask from its persisted index map.

    With a plan, box support is reconstructed exactly; without one it
    falls back to the nonzero indicator.
    """
    if plan is not None:
        support = np.zeros(index_map.shape, dtype=bool)
        for wp in plan.words:
            b = wp.box
            support[b.y : b.y2, b.x : b.x2] = True
    else:
        support = index_map != 0
    return CharacterMask(index_map=index_map.astype(np.uint8), box_support=support)


def build_cond_mask(
    plan: LayoutPlan, fonts: Mapping[str, GlyphFont] | None = None
) -> ConditionalMask:
    """Render every word with its span's attributes over neutral gray."""
    _require_valid(plan)
    fonts = _fonts_for_plan(plan, fonts)
    rgb = np.full((plan.canvas_h, plan.canvas_w, 3), NEUTRAL_GRAY, dtype=np.uint8)
    for wp in plan.words:
        attrs = plan.attrs_by_span[wp.span_index]
        region = render_text_line(fonts[attrs.font], wp.word, wp.box, attrs)
        opaque = region[..., 3] == 255
        target = rgb[wp.box.y : wp.box.y2, wp.box.x : wp.box.x2]
        target[opaque] = region[..., :3][opaque]
    return ConditionalMask(rgb=rgb)


def apply_incremental_edit(
    plan: LayoutPlan, span_index: int, new_text: str
) -> LayoutPlan:
    """Replace a span's text, preserving geometry when possible.

    Same-length edits whose characters all land on existing slots keep
    every box and only swap characters (spaces overwrite to "removed").
    Anything else re-runs allocation with the edited span; other spans
    keep their boxes whenever their own geometry is unaffected.
    """
    if not (0 <= span_index < len(plan.span_texts)):
        raise IndexError(f"span {span_index} out of range")
    old_text = plan.span_texts[span_index]
    if new_text == old_text:
        return plan
    for ch in new_text:
        if not (32 <= ord(ch) <= 126):
            raise ValueError(f"edit character {ch!r} not printable ASCII")

    span_words = [wp for wp in plan.words if wp.span_index == span_index]
    covered = set()
    for wp in span_words:
        covered.update(range(wp.start, wp.start + len(wp.word)))
    in_place = len(new_text) == len(old_text) and all(
        i in covered or new_text[i] == " " for i in range(len(new_text))
    )
    span_texts = tuple(
        new_text if i == span_index else t for i, t in enumerate(plan.span_texts)
    )
    if in_place:
        new_words = tuple(
            replace(wp, word=new_text[wp.start : wp.start + len(wp.word)])
            if wp.span_index == span_index
            else wp
            for wp in plan.words
        )
        return replace(plan, span_texts=span_texts, words=new_words)

    spec = PromptSpec(
        prose="", spans=span_texts, canvas_w=plan.canvas_w, canvas_h=plan.canvas_h
    )
    return allocate_boxes(spec, plan.attrs_by_span)


def _box_blur_3x3(grid: np.ndarray) -> np.ndarray:
    """One 3x3 mean-filter pass with zero padding, summed explicitly.

    Nine shifted adds keep all-ones neighborhoods exactly 1.0, which the
    hard-region contract of feather_region relies on.
    """
    h, w = grid.shape
    padded = np.pad(grid, 1)
    out = np.zeros_like(grid)
    for dy in range(3):
        for dx in range(3):
            out += padded[dy : dy + h, dx : dx + w]
    return np.clip(out / 9.0, 0.0, 1.0)


def feather_region(char_mask: CharacterMask, radius_px: int) -> np.ndarray:
    """Soft [0,1] weight over the mask's box support.

    Applies a 3x3 box blur ``radius_px`` times (zero padding), so values
    decay monotonically across a band of exactly ``radius_px`` pixels on
    each side of the support boundary and stay hard elsewhere.
    """
    if radius_px < 0:
        raise ValueError("radius_px must be >= 0")
    soft = char_mask.box_support.astype(np.float64)
    for _ in range(radius_px):
        soft = _box_blur_3x3(soft)
    return soft
