"""Prompt parsing and deterministic box allocation for quoted text spans.

The placer is constraint-based, not learned: words wrap greedily onto
centered lines, spans stack vertically, and every character gets an
equal-width slot inside its word box. It sits behind ``allocate_boxes``
so a predictive model could be swapped in without touching callers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Sequence, Tuple

from .fonts import FontAttributes, slot_width

LINE_LEADING_PX = 2
SPAN_GAP_PX = 4


class PromptParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(message)
        self.position = position


class LayoutOverflowError(ValueError):
    def __init__(self, message: str, span_index: int, required: int | None = None):
        super().__init__(message)
        self.span_index = span_index
        self.required = required


@dataclass(frozen=True)
class Box:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box {self} must have positive size")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    def intersects(self, other: "Box") -> bool:
        return (
            self.x < other.x2
            and other.x < self.x2
            and self.y < other.y2
            and other.y < self.y2
        )

    def contains(self, other: "Box") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )


@dataclass(frozen=True)
class PromptSpec:
    prose: str
    spans: Tuple[str, ...]
    canvas_w: int = 64
    canvas_h: int = 64


@dataclass(frozen=True)
class WordPlacement:
    """One layout unit: a run of characters sharing a word box.

    ``start`` is the unit's character offset inside its span text, which
    in-place edits use to map new characters onto existing slots.
    """

    span_index: int
    word: str
    box: Box
    char_boxes: Tuple[Box, ...]
    start: int = 0


@dataclass(frozen=True)
class LayoutPlan:
    canvas_w: int
    canvas_h: int
    span_texts: Tuple[str, ...]
    attrs_by_span: Tuple[FontAttributes, ...]
    words: Tuple[WordPlacement, ...]

    @property
    def word_boxes(self) -> List[Tuple[int, str, Box]]:
        return [(w.span_index, w.word, w.box) for w in self.words]

    def to_dict(self) -> dict:
        return {
            "canvas_w": self.canvas_w,
            "canvas_h": self.canvas_h,
            "spans": list(self.span_texts),
            "attrs": [
                {
                    "font": a.font,
                    "size_px": a.size_px,
                    "fill": list(a.fill),
                    "background": list(a.background) if a.background else None,
                }
                for a in self.attrs_by_span
            ],
            "words": [
                {
                    "span_index": w.span_index,
                    "word": w.word,
                    "start": w.start,
                    "box": [w.box.x, w.box.y, w.box.w, w.box.h],
                    "char_boxes": [[b.x, b.y, b.w, b.h] for b in w.char_boxes],
                }
                for w in self.words
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LayoutPlan":
        return cls(
            canvas_w=doc["canvas_w"],
            canvas_h=doc["canvas_h"],
            span_texts=tuple(doc["spans"]),
            attrs_by_span=tuple(
                FontAttributes(
                    font=a["font"],
                    size_px=a["size_px"],
                    fill=tuple(a["fill"]),
                    background=tuple(a["background"]) if a["background"] else None,
                )
                for a in doc["attrs"]
            ),
            words=tuple(
                WordPlacement(
                    span_index=w["span_index"],
                    word=w["word"],
                    box=Box(*w["box"]),
                    char_boxes=tuple(Box(*b) for b in w["char_boxes"]),
                    start=w.get("start", 0),
                )
                for w in doc["words"]
            ),
        )


def parse_prompt(prompt: str, canvas_w: int = 64, canvas_h: int = 64) -> PromptSpec:
    """Extract single-quoted spans from a prompt, in order.

    The prose keeps the quoted text in place (quotes stripped) so prompt
    conditioning still sees it.
    """
    if not prompt:
        raise ValueError("prompt must be non-empty")
    positions = [i for i, c in enumerate(prompt) if c == "'"]
    if len(positions) % 2 != 0:
        raise PromptParseError(
            f"unmatched single quote at position {positions[-1]}", positions[-1]
        )
    spans = []
    for a, b in zip(positions[::2], positions[1::2]):
        spans.append(prompt[a + 1 : b])
    for span in spans:
        for ch in span:
            if not (32 <= ord(ch) <= 126):
                raise PromptParseError(
                    f"span character {ch!r} is not printable ASCII", prompt.index(ch)
                )
    prose = prompt.replace("'", "")
    return PromptSpec(prose=prose, spans=tuple(spans), canvas_w=canvas_w, canvas_h=canvas_h)


def _span_units(text: str) -> List[Tuple[int, str]]:
    """Split span text into (offset, word) units, skipping space runs."""
    units = []
    i = 0
    while i < len(text):
        if text[i] == " ":
            i += 1
            continue
        j = i
        while j < len(text) and text[j] != " ":
            j += 1
        units.append((i, text[i:j]))
        i = j
    return units


def _layout_span_lines(
    text: str, attrs: FontAttributes, canvas_w: int, span_index: int
) -> List[List[Tuple[int, str]]]:
    """Greedy word wrap: returns lines, each a list of (offset, word)."""
    slot = slot_width(attrs.size_px)
    units = _span_units(text)
    lines: List[List[Tuple[int, str]]] = []
    current: List[Tuple[int, str]] = []
    current_w = 0
    for start, word in units:
        w = len(word) * slot
        if w > canvas_w:
            raise LayoutOverflowError(
                f"word {word!r} of span {span_index} needs width {w} > canvas {canvas_w}",
                span_index,
                required=w,
            )
        gap = slot if current else 0
        if current and current_w + gap + w > canvas_w:
            lines.append(current)
            current, current_w = [(start, word)], w
        else:
            current.append((start, word))
            current_w += gap + w
    if current:
        lines.append(current)
    return lines


def allocate_boxes(
    spec: PromptSpec, attrs_by_span: Sequence[FontAttributes], seed: int = 0
) -> LayoutPlan:
    """Place every span's words on the canvas.

    Lines are horizontally centered; the full block of spans is vertically
    centered, spans separated by 4px, lines by 2px leading. Deterministic;
    ``seed`` is accepted for interface parity with a sampled placer and is
    unused here.
    """
    del seed
    if len(attrs_by_span) != len(spec.spans):
        raise ValueError(
            f"need one FontAttributes per span: {len(spec.spans)} spans, "
            f"{len(attrs_by_span)} attrs"
        )
    span_lines = [
        _layout_span_lines(text, attrs, spec.canvas_w, i)
        for i, (text, attrs) in enumerate(zip(spec.spans, attrs_by_span))
    ]
    heights = []
    for lines, attrs in zip(span_lines, attrs_by_span):
        n = len(lines)
        heights.append(
            n * attrs.size_px + max(0, n - 1) * LINE_LEADING_PX if n else 0
        )
    total_h = sum(heights) + SPAN_GAP_PX * max(0, sum(1 for h in heights if h) - 1)
    if total_h > spec.canvas_h:
        worst = max(range(len(heights)), key=lambda i: heights[i], default=0)
        raise LayoutOverflowError(
            f"spans need total height {total_h} > canvas {spec.canvas_h}",
            worst,
            required=total_h,
        )

    words: List[WordPlacement] = []
    y = (spec.canvas_h - total_h) // 2
    for span_index, (lines, attrs) in enumerate(zip(span_lines, attrs_by_span)):
        if not lines:
            continue
        slot = slot_width(attrs.size_px)
        for line in lines:
            line_w = sum(len(w) for _, w in line) * slot + (len(line) - 1) * slot
            x = (spec.canvas_w - line_w) // 2
            for start, word in line:
                box = Box(x=x, y=y, w=len(word) * slot, h=attrs.size_px)
                char_boxes = tuple(
                    Box(x=x + k * slot, y=y, w=slot, h=attrs.size_px)
                    for k in range(len(word))
                )
                words.append(
                    WordPlacement(
                        span_index=span_index,
                        word=word,
                        box=box,
                        char_boxes=char_boxes,
                        start=start,
                    )
                )
                x += len(word) * slot + slot
            y += attrs.size_px + LINE_LEADING_PX
        y += SPAN_GAP_PX - LINE_LEADING_PX

    return LayoutPlan(
        canvas_w=spec.canvas_w,
        canvas_h=spec.canvas_h,
        span_texts=tuple(spec.spans),
        attrs_by_span=tuple(attrs_by_span),
        words=tuple(words),
    )


@dataclass(frozen=True)
class Violation:
    kind: str  # "overlap" | "bounds" | "tiling"
    detail: str


def validate_plan(plan: LayoutPlan, canvas_w: int | None = None, canvas_h: int | None = None) -> List[Violation]:
    """Check disjointness, bounds, and exact char-box tiling.

    Returns every violation found; an empty list means the plan is valid.
    """
    cw = canvas_w if canvas_w is not None else plan.canvas_w
    ch = canvas_h if canvas_h is not None else plan.canvas_h
    violations: List[Violation] = []
    canvas = Box(0, 0, cw, ch)
    for i, wp in enumerate(plan.words):
        if not canvas.contains(wp.box):
            violations.append(
                Violation("bounds", f"word {i} ({wp.word!r}) box {wp.box} exceeds canvas {cw}x{ch}")
            )
        for j in range(i + 1, len(plan.words)):
            if wp.box.intersects(plan.words[j].box):
                violations.append(
                    Violation("overlap", f"word {i} ({wp.word!r}) overlaps word {j} ({plan.words[j].word!r})")
                )
        if len(wp.char_boxes) != len(wp.word):
            violations.append(
                Violation("tiling", f"word {i} ({wp.word!r}) has {len(wp.char_boxes)} char boxes")
            )
            continue
        x = wp.box.x
        for k, cb in enumerate(wp.char_boxes):
            expected_w = wp.box.w // max(1, len(wp.word))
            if (cb.x, cb.y, cb.h) != (x, wp.box.y, wp.box.h) or cb.w != expected_w:
                violations.append(
                    Violation("tiling", f"word {i} char {k} box {cb} does not tile {wp.box}")
                )
            x += cb.w
        if x != wp.box.x2:
            violations.append(
                Violation("tiling", f"word {i} char boxes cover width {x - wp.box.x} != {wp.box.w}")
            )
    return violations
