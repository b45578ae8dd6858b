"""Bitmap-font storage and rasterization of characters and text lines.

Fonts are fixed-cell binary bitmaps covering printable ASCII (32..126).
Rasterization is nearest-neighbor and pure, so rendered glyphs double as
pixel-exact ground truth for masks, template OCR, and loss weighting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Mapping, Optional, Tuple

import numpy as np

PRINTABLE_ASCII = range(32, 127)

RGB = Tuple[int, int, int]


class FontFormatError(ValueError):
    """Font document is structurally malformed."""


class FontCoverageError(ValueError):
    """Font document is missing required codepoints."""


class GlyphDomainError(ValueError):
    """Codepoint outside the supported printable-ASCII range."""


class TextOverflowError(ValueError):
    """Text does not fit the target box; carries the required width."""

    def __init__(self, message: str, required_w: int):
        super().__init__(message)
        self.required_w = required_w


@dataclass(frozen=True)
class GlyphFont:
    """Fixed-cell binary bitmap font over printable ASCII."""

    name: str
    cell_w: int
    cell_h: int
    glyphs: Mapping[int, np.ndarray]  # codepoint -> bool array (cell_h, cell_w)

    def glyph(self, codepoint: int) -> np.ndarray:
        if codepoint not in self.glyphs:
            raise GlyphDomainError(
                f"codepoint {codepoint} not in printable ASCII 32..126"
            )
        return self.glyphs[codepoint]


@dataclass(frozen=True)
class FontAttributes:
    """Per-span styling controls: typeface, scaled cell height, colors.

    ``background=None`` means transparent (only glyph pixels are drawn).
    """

    font: str = "mono5x7"
    size_px: int = 8
    fill: RGB = (0, 0, 0)
    background: Optional[RGB] = None

    def __post_init__(self) -> None:
        if self.size_px < 4:
            raise ValueError(f"size_px must be >= 4, got {self.size_px}")
        for color in (self.fill,) + ((self.background,) if self.background else ()):
            if len(color) != 3 or any(not (0 <= c <= 255) for c in color):
                raise ValueError(f"color {color} out of range [0,255]^3")


def load_font(document: bytes | str) -> GlyphFont:
    """Parse a bitmap-font document (JSON) into a validated GlyphFont.

    Document schema: ``{"name", "cell_w", "cell_h", "glyphs": {"<codepoint>":
    [<cell_h strings of '0'/'1', each cell_w long>]}}``.
    """
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as e:
        raise FontFormatError(f"font document is not valid JSON: {e}") from e
    for key in ("name", "cell_w", "cell_h", "glyphs"):
        if key not in doc:
            raise FontFormatError(f"font document missing field {key!r}")
    name, cell_w, cell_h = doc["name"], int(doc["cell_w"]), int(doc["cell_h"])
    if cell_w <= 0 or cell_h <= 0:
        raise FontFormatError(f"non-positive cell {cell_w}x{cell_h}")

    glyphs: dict[int, np.ndarray] = {}
    for key, rows in doc["glyphs"].items():
        try:
            cp = int(key)
        except ValueError:
            raise FontFormatError(f"glyph key {key!r} is not a codepoint") from None
        if len(rows) != cell_h:
            raise FontFormatError(
                f"codepoint {cp}: expected {cell_h} rows, got {len(rows)}"
            )
        grid = np.zeros((cell_h, cell_w), dtype=bool)
        for r, row in enumerate(rows):
            if len(row) != cell_w or set(row) - {"0", "1"}:
                raise FontFormatError(
                    f"codepoint {cp}: row {r!r} is not {cell_w} chars of 0/1"
                )
            grid[r] = [ch == "1" for ch in row]
        grid.setflags(write=False)
        glyphs[cp] = grid

    missing = [cp for cp in PRINTABLE_ASCII if cp not in glyphs]
    if missing:
        raise FontCoverageError(f"font {name!r} missing codepoints {missing}")
    if glyphs[32].any():
        raise FontFormatError("codepoint 32 (space) must map to an all-zero bitmap")
    return GlyphFont(name=name, cell_w=cell_w, cell_h=cell_h, glyphs=glyphs)


@lru_cache(maxsize=None)
def builtin_fonts() -> Mapping[str, GlyphFont]:
    """Load the fonts shipped as package fixtures, keyed by name."""
    fonts = {}
    base = resources.files("glyphdiff") / "fonts_builtin"
    for entry in sorted(base.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".json"):
            font = load_font(entry.read_bytes())
            fonts[font.name] = font
    return fonts


def get_font(name: str) -> GlyphFont:
    fonts = builtin_fonts()
    if name not in fonts:
        raise KeyError(f"unknown font {name!r}; built-ins: {sorted(fonts)}")
    return fonts[name]


def glyph_tile_width(font: GlyphFont, size_px: int) -> int:
    """Width of a glyph tile scaled so the cell is size_px tall."""
    return max(1, round(size_px * font.cell_w / font.cell_h))


def scale_bitmap(bitmap: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor scale of a binary bitmap (floor source mapping)."""
    src_h, src_w = bitmap.shape
    rows = (np.arange(out_h) * src_h) // out_h
    cols = (np.arange(out_w) * src_w) // out_w
    return bitmap[np.ix_(rows, cols)]


def rasterize_glyph(
    font: GlyphFont, codepoint: int, attrs: FontAttributes
) -> np.ndarray:
    """Render one glyph to an RGBA uint8 tile of shape (size_px, tile_w, 4).

    On-pixels get ``attrs.fill``; off-pixels get ``attrs.background`` at full
    alpha, or alpha 0 when background is None.
    """
    bitmap = font.glyph(codepoint)
    h = attrs.size_px
    w = glyph_tile_width(font, h)
    on = scale_bitmap(bitmap, h, w)
    tile = np.zeros((h, w, 4), dtype=np.uint8)
    if attrs.background is not None:
        tile[..., :3] = attrs.background
        tile[..., 3] = 255
    tile[on, :3] = attrs.fill
    tile[on, 3] = 255
    return tile


def slot_width(size_px: int) -> int:
    """Per-character slot width: square slots, one per character."""
    return size_px


@lru_cache(maxsize=1024)
def _distinct_at(font_name: str, size_px: int) -> bool:
    font = builtin_fonts()[font_name]
    tile_w = min(glyph_tile_width(font, size_px), slot_width(size_px))
    seen = set()
    for cp in range(33, 127):
        key = scale_bitmap(font.glyph(cp), size_px, tile_w).tobytes()
        if key in seen:
            return False
        seen.add(key)
    return True


def distinct_at(font: GlyphFont, size_px: int) -> bool:
    """True when every non-space glyph stays unique after scaling.

    Below the cell size, nearest-neighbor scaling drops rows/columns and
    can merge glyph pairs; renders at such sizes are not reliably
    readable even from clean images.
    """
    if font.name in builtin_fonts():
        return _distinct_at(font.name, size_px)
    tile_w = min(glyph_tile_width(font, size_px), slot_width(size_px))
    seen = set()
    for cp in range(33, 127):
        key = scale_bitmap(font.glyph(cp), size_px, tile_w).tobytes()
        if key in seen:
            return False
        seen.add(key)
    return True


def render_text_line(font: GlyphFont, text: str, box, attrs: FontAttributes) -> np.ndarray:
    """Render ``text`` into an RGBA region of shape (box.h, box.w, 4).

    Characters occupy consecutive equal-width slots from the left edge;
    each glyph tile is drawn top-left-aligned inside its slot. The whole
    box gets the background fill when one is set.
    """
    for ch in text:
        if ord(ch) not in PRINTABLE_ASCII:
            raise GlyphDomainError(f"character {ch!r} not printable ASCII")
    slot = slot_width(attrs.size_px)
    required = len(text) * slot
    if required > box.w:
        raise TextOverflowError(
            f"text {text!r} needs width {required}, box has {box.w}", required_w=required
        )
    region = np.zeros((box.h, box.w, 4), dtype=np.uint8)
    if attrs.background is not None:
        region[..., :3] = attrs.background
        region[..., 3] = 255
    for i, ch in enumerate(text):
        tile = rasterize_glyph(font, ord(ch), attrs)
        th, tw = tile.shape[:2]
        th, tw = min(th, box.h), min(tw, slot)
        x0 = i * slot
        target = region[:th, x0 : x0 + tw]
        opaque = tile[:th, :tw, 3] == 255
        target[opaque] = tile[:th, :tw][opaque]
    return region
