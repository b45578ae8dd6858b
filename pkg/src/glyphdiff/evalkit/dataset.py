"""Synthetic small-font corpus: prompts, styled backgrounds, rendered
text, and the full conditioning bundle per entry.

Generation is deterministic from (config, seed): each entry draws from
its own derived stream, so manifests and all written files are
byte-reproducible and entries could be produced in any order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np

from ..errors import ContractError
from ..fonts import FontAttributes, builtin_fonts, distinct_at, render_text_line
from ..imgio import load_png, save_png
from ..layout import LayoutOverflowError, LayoutPlan, PromptSpec, allocate_boxes
from ..masks import RegionMask, build_char_mask, build_cond_mask
from ..rng import stream

LEXICON = (
    "SAVE OUR PLANET OPEN SALE NOW BIG NEW HOT TOP ART FUN SUN SKY SEA "
    "CAT DOG FOX OWL BEE ANT ELK YAK RAM HEN KIT PUP CUB DEN LAIR NEST "
    "SHOP BOOK CLUB GAME TEAM CITY PARK LAKE HILL ROAD GATE DOOR WALL ROOF "
    "STAR MOON MARS VENUS COMET ORBIT SPACE LIGHT SOUND MUSIC DANCE PARTY "
    "JOIN HERE TODAY ENTER LEARN TEACH BUILD MAKER CRAFT BAKER BREAD CAKE "
    "FRESH LOCAL DAILY WEEKLY ANNUAL GRAND SUPER ULTRA MEGA PRIME FINAL"
).split()

SURFACES = ("poster", "sign", "banner", "cover", "board", "card")


@dataclass(frozen=True)
class DatasetConfig:
    count: int = 200
    canvas: int = 64
    size_min: int = 4
    size_max: int = 24
    fonts: Tuple[str, ...] = ("mono5x7", "mono8x12")
    backgrounds: Tuple[str, ...] = ("solid", "gradient", "noise")
    max_words: int = 2
    small_threshold: int = 8
    max_retries: int = 25

    def config_hash(self) -> str:
        doc = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class DatasetEntry:
    index: int
    prompt: str
    words: Tuple[str, ...]
    size_px: int
    font: str
    tag: str  # "small" | "large"
    image_path: str
    char_mask_path: str
    cond_mask_path: str
    region_path: str
    plan_path: str


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    seed: int
    config: DatasetConfig
    entries: Tuple[DatasetEntry, ...]

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.jsonl"

    def load_plan(self, entry: DatasetEntry) -> LayoutPlan:
        doc = json.loads((self.root / entry.plan_path).read_text())
        return LayoutPlan.from_dict(doc)

    def load_image(self, entry: DatasetEntry) -> np.ndarray:
        return load_png(self.root / entry.image_path)

    def load_char_map(self, entry: DatasetEntry) -> np.ndarray:
        return load_png(self.root / entry.char_mask_path)

    def load_cond_mask(self, entry: DatasetEntry) -> np.ndarray:
        return load_png(self.root / entry.cond_mask_path)

    def load_region(self, entry: DatasetEntry) -> np.ndarray:
        return (load_png(self.root / entry.region_path) >= 128).astype(np.uint8)


def _luminance(color: np.ndarray) -> float:
    r, g, b = (float(c) for c in color)
    return 0.299 * r + 0.587 * g + 0.114 * b


def _contrasting_color(
    rng: np.random.Generator, refs: List[np.ndarray], min_delta: float = 80.0
) -> Tuple[int, int, int]:
    for _ in range(64):
        c = rng.integers(0, 256, size=3)
        if all(abs(_luminance(c) - _luminance(r)) >= min_delta for r in refs):
            return tuple(int(v) for v in c)
    # extreme fallback: black or white, whichever is farther on average
    mean = float(np.mean([_luminance(r) for r in refs]))
    return (0, 0, 0) if mean > 127 else (255, 255, 255)


def _background(
    rng: np.random.Generator, kind: str, canvas: int
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Canvas plus the reference colors text must contrast against.

    Local background variation stays well below the text-contrast floor
    so binarization inside any char slot separates glyph from backdrop.
    """
    base = rng.integers(0, 256, size=3)
    img = np.empty((canvas, canvas, 3), dtype=np.uint8)
    if kind == "solid":
        img[...] = base
        refs = [base]
    elif kind == "gradient":
        other = np.clip(base + rng.integers(-100, 101, size=3), 0, 255)
        ramp = np.linspace(0.0, 1.0, canvas)[:, None]
        grad = (1 - ramp) * base[None, :] + ramp * other[None, :]
        img[...] = np.round(grad).astype(np.uint8)[:, None, :]
        refs = [base, other]
    elif kind == "noise":
        blotch = base[None, None, :] + rng.integers(-25, 26, size=(8, 8, 3))
        up = np.repeat(np.repeat(blotch, canvas // 8, axis=0), canvas // 8, axis=1)
        jitter = rng.normal(0, 8, size=(canvas, canvas, 3))
        img[...] = np.clip(up + jitter, 0, 255).astype(np.uint8)
        refs = [base]
    else:
        raise ContractError(f"unknown background kind {kind!r}")
    return img, refs


def _feasible_pairs(config: DatasetConfig) -> List[Tuple[int, str]]:
    """(size, font) combos whose scaled glyphs stay pairwise distinct.

    Sizes below a font's readability floor (nearest-neighbor scaling
    merges glyphs there) are excluded so clean renders always OCR back.
    """
    registry = builtin_fonts()
    pairs = [
        (size, name)
        for size in range(config.size_min, config.size_max + 1)
        for name in config.fonts
        if distinct_at(registry[name], size)
    ]
    if not pairs:
        raise ContractError("no readable (size, font) combination in config range")
    return pairs


def _sample_entry(rng: np.random.Generator, config: DatasetConfig):
    """Draw (prompt, spec, attrs, background kind) that lays out feasibly."""
    pairs = _feasible_pairs(config)
    for _ in range(config.max_retries):
        size, font = pairs[int(rng.integers(0, len(pairs)))]
        n_words = int(rng.integers(1, config.max_words + 1))
        words = [str(rng.choice(LEXICON)) for _ in range(n_words)]
        text = " ".join(words)
        bg_kind = str(rng.choice(config.backgrounds))
        surface = str(rng.choice(SURFACES))
        prompt = f"A {bg_kind} {surface} that says '{text}'"
        spec = PromptSpec(
            prose=prompt.replace("'", ""),
            spans=(text,),
            canvas_w=config.canvas,
            canvas_h=config.canvas,
        )
        background_rgb, refs = _background(rng, bg_kind, config.canvas)
        fill = _contrasting_color(rng, refs)
        box_bg = None
        if rng.random() < 0.35:
            box_bg = _contrasting_color(rng, [np.array(fill)])
        attrs = FontAttributes(font=font, size_px=size, fill=fill, background=box_bg)
        try:
            plan = allocate_boxes(spec, [attrs])
        except LayoutOverflowError:
            continue
        return prompt, spec, attrs, plan, background_rgb
    raise LayoutOverflowError(
        f"no feasible layout after {config.max_retries} retries", 0
    )


def compose_ground_truth(plan: LayoutPlan, background: np.ndarray) -> np.ndarray:
    """Alpha-composite the rendered words over a background canvas."""
    fonts = builtin_fonts()
    img = background.copy()
    for wp in plan.words:
        attrs = plan.attrs_by_span[wp.span_index]
        region = render_text_line(fonts[attrs.font], wp.word, wp.box, attrs)
        opaque = region[..., 3] == 255
        target = img[wp.box.y : wp.box.y2, wp.box.x : wp.box.x2]
        target[opaque] = region[..., :3][opaque]
    return img


def generate_dataset(config: DatasetConfig, seed: int, out_dir: str | Path) -> DatasetManifest:
    """Write images, masks, plans, and a JSONL manifest under ``out_dir``."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    entries: List[DatasetEntry] = []
    records = [
        {
            "kind": "header",
            "seed": seed,
            "count": config.count,
            "config": asdict(config),
            "config_hash": config.config_hash(),
        }
    ]
    for i in range(config.count):
        rng = stream(seed, f"dataset:{i}")
        prompt, _spec, attrs, plan, background = _sample_entry(rng, config)
        char_mask = build_char_mask(plan)
        cond_mask = build_cond_mask(plan)
        region = RegionMask.full(config.canvas, config.canvas)
        image = compose_ground_truth(plan, background)
        stem = f"{i:05d}"
        paths = {
            "image_path": f"{stem}_image.png",
            "char_mask_path": f"{stem}_char.png",
            "cond_mask_path": f"{stem}_cond.png",
            "region_path": f"{stem}_region.png",
            "plan_path": f"{stem}_plan.json",
        }
        save_png(root / paths["image_path"], image)
        save_png(root / paths["char_mask_path"], char_mask.index_map)
        save_png(root / paths["cond_mask_path"], cond_mask.rgb)
        save_png(root / paths["region_path"], region.values * 255)
        (root / paths["plan_path"]).write_text(
            json.dumps(plan.to_dict(), sort_keys=True, separators=(",", ":"))
        )
        entry = DatasetEntry(
            index=i,
            prompt=prompt,
            words=tuple(wp.word for wp in plan.words),
            size_px=attrs.size_px,
            font=attrs.font,
            tag="small" if attrs.size_px <= config.small_threshold else "large",
            **paths,
        )
        entries.append(entry)
        rec = asdict(entry)
        rec["kind"] = "entry"
        rec["words"] = list(entry.words)
        records.append(rec)
    manifest = DatasetManifest(
        root=root, seed=seed, config=config, entries=tuple(entries)
    )
    with open(manifest.manifest_path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    return manifest


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    root = path.parent if path.is_file() else path
    manifest_file = path if path.is_file() else root / "manifest.jsonl"
    header = None
    entries = []
    with open(manifest_file) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("kind") == "header":
                header = rec
            else:
                rec.pop("kind", None)
                rec["words"] = tuple(rec["words"])
                entries.append(DatasetEntry(**rec))
    if header is None:
        raise ContractError(f"{manifest_file}: missing header record")
    cfg_doc = dict(header["config"])
    cfg_doc["fonts"] = tuple(cfg_doc["fonts"])
    cfg_doc["backgrounds"] = tuple(cfg_doc["backgrounds"])
    config = DatasetConfig(**cfg_doc)
    return DatasetManifest(
        root=root, seed=header["seed"], config=config, entries=tuple(entries)
    )
