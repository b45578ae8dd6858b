#!/usr/bin/env python3
"""Regenerate the built-in bitmap font fixtures.

mono5x7 comes from the classic 5x7 LCD/OLED column table (5 bytes per
character, bit 0 = top row). mono8x12 is extracted from Pillow's default
typeface rendered onto an 8x12 cell with a fixed baseline. Both outputs
are committed as JSON fixtures; rerun this script only to rebuild them.
"""

import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

OUT_DIR = Path(__file__).resolve().parents[1] / "src" / "glyphdiff" / "fonts_builtin"

# Classic 5x7 column font, codepoints 32..126, column-major, LSB = top row.
FONT_5X7_COLUMNS = """
00 00 00 00 00 | 00 00 5F 00 00 | 00 07 00 07 00 | 14 7F 14 7F 14
24 2A 7F 2A 12 | 23 13 08 64 62 | 36 49 55 22 50 | 00 05 03 00 00
00 1C 22 41 00 | 00 41 22 1C 00 | 08 2A 1C 2A 08 | 08 08 3E 08 08
00 50 30 00 00 | 08 08 08 08 08 | 00 60 60 00 00 | 20 10 08 04 02
3E 51 49 45 3E | 00 42 7F 40 00 | 42 61 51 49 46 | 21 41 45 4B 31
18 14 12 7F 10 | 27 45 45 45 39 | 3C 4A 49 49 30 | 01 71 09 05 03
36 49 49 49 36 | 06 49 49 29 1E | 00 36 36 00 00 | 00 56 36 00 00
00 08 14 22 41 | 14 14 14 14 14 | 41 22 14 08 00 | 02 01 51 09 06
32 49 79 41 3E | 7E 11 11 11 7E | 7F 49 49 49 36 | 3E 41 41 41 22
7F 41 41 22 1C | 7F 49 49 49 41 | 7F 09 09 09 01 | 3E 41 49 49 7A
7F 08 08 08 7F | 00 41 7F 41 00 | 20 40 41 3F 01 | 7F 08 14 22 41
7F 40 40 40 40 | 7F 02 0C 02 7F | 7F 04 08 10 7F | 3E 41 41 41 3E
7F 09 09 09 06 | 3E 41 51 21 5E | 7F 09 19 29 46 | 46 49 49 49 31
01 01 7F 01 01 | 3F 40 40 40 3F | 1F 20 40 20 1F | 3F 40 38 40 3F
63 14 08 14 63 | 07 08 70 08 07 | 61 51 49 45 43 | 00 7F 41 41 00
02 04 08 10 20 | 00 41 41 7F 00 | 04 02 01 02 04 | 40 40 40 40 40
00 01 02 04 00 | 20 54 54 54 78 | 7F 48 44 44 38 | 38 44 44 44 20
38 44 44 48 7F | 38 54 54 54 18 | 08 7E 09 01 02 | 0C 52 52 52 3E
7F 08 04 04 78 | 00 44 7D 40 00 | 20 40 44 3D 00 | 7F 10 28 44 00
00 41 7F 40 00 | 7C 04 18 04 78 | 7C 08 04 04 78 | 38 44 44 44 38
7C 14 14 14 08 | 08 14 14 18 7C | 7C 08 04 04 08 | 48 54 54 54 20
04 3F 44 40 20 | 3C 40 40 20 7C | 1C 20 40 20 1C | 3C 40 30 40 3C
44 28 10 28 44 | 0C 50 50 50 3C | 44 64 54 4C 44 | 00 08 36 41 00
00 00 7F 00 00 | 00 41 36 08 00 | 08 04 08 10 08
"""


def build_mono5x7():
    entries = [e.strip() for e in FONT_5X7_COLUMNS.replace("\n", "|").split("|") if e.strip()]
    assert len(entries) == 95, f"expected 95 glyph entries, got {len(entries)}"
    glyphs = {}
    for i, entry in enumerate(entries):
        cp = 32 + i
        cols = [int(b, 16) for b in entry.split()]
        assert len(cols) == 5, f"codepoint {cp}: {entry}"
        grid = np.zeros((7, 5), dtype=np.uint8)
        for x, col in enumerate(cols):
            for y in range(7):
                grid[y, x] = (col >> y) & 1
        glyphs[str(cp)] = ["".join(str(v) for v in row) for row in grid]
    return {"name": "mono5x7", "cell_w": 5, "cell_h": 7, "glyphs": glyphs}


def build_mono8x12(cw=8, ch=12, size=12, baseline=9, thresh=120):
    font = ImageFont.load_default(size=size)
    glyphs = {str(32): ["0" * cw] * ch}
    for cp in range(33, 127):
        c = chr(cp)
        img = Image.new("L", (cw * 3, ch * 3), 0)
        d = ImageDraw.Draw(img)
        adv = d.textlength(c, font=font)
        dx = max(0.0, (cw - adv) / 2)
        d.text((cw + dx, baseline + ch), c, fill=255, font=font, anchor="ls")
        cell = np.asarray(img, dtype=np.float32)[ch : 2 * ch, cw : 2 * cw]
        grid = (cell >= thresh).astype(np.uint8)
        if grid.sum() == 0 and cell.max() > 0:
            grid = (cell >= cell.max() / 2).astype(np.uint8)
        if grid.sum() == 0:
            raise RuntimeError(f"codepoint {cp} rendered empty")
        if cp == 33:  # '!' renders as a bare stem identical to 'I'; punch the gap
            grid[baseline - 2, :] = 0
        glyphs[str(cp)] = ["".join(str(v) for v in row) for row in grid]
    return {"name": "mono8x12", "cell_w": cw, "cell_h": ch, "glyphs": glyphs}


def check(doc):
    name = doc["name"]
    seen = {}
    for key, rows in doc["glyphs"].items():
        flat = "".join(rows)
        if key != "32" and flat in seen:
            raise RuntimeError(f"{name}: glyph {key} duplicates {seen[flat]}")
        seen[flat] = key
    assert len(doc["glyphs"]) == 95, name
    assert set("".join(doc["glyphs"]["32"])) == {"0"}, f"{name}: space not blank"
    print(f"{name}: 95 glyphs, all distinct")


def main():
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    for doc in (build_mono5x7(), build_mono8x12()):
        check(doc)
        path = OUT_DIR / f"{doc['name']}.json"
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        print("wrote", path)


if __name__ == "__main__":
    sys.exit(main())
