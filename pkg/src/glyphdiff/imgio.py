"""PNG and array conversions shared across the pipeline.

All float images live in [-1, 1] (model space) or [0, 1] (metric space);
uint8 arrays are H x W x 3 (RGB) or H x W (index/region maps). PNG writes
go through Pillow with default options, which emit no timestamps, so
files are byte-reproducible.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image


def to_model_range(img_u8: np.ndarray) -> np.ndarray:
    """uint8 [0,255] -> float32 [-1,1]."""
    return (img_u8.astype(np.float32) / 127.5) - 1.0


def from_model_range(img: np.ndarray) -> np.ndarray:
    """float [-1,1] -> uint8, clipped and rounded."""
    return np.clip(np.round((img + 1.0) * 127.5), 0, 255).astype(np.uint8)


def to_unit_range(img_u8: np.ndarray) -> np.ndarray:
    """uint8 [0,255] -> float64 [0,1] for metric computations."""
    return img_u8.astype(np.float64) / 255.0


def chw(img_hwc: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(img_hwc, -1, 0))


def hwc(img_chw: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(img_chw, 0, -1))


def save_png(path: str | Path, array: np.ndarray) -> None:
    """Write an RGB (H,W,3) or single-channel (H,W) uint8 array as PNG."""
    if array.dtype != np.uint8:
        raise ValueError(f"expected uint8 array, got {array.dtype}")
    mode = "L" if array.ndim == 2 else "RGB"
    Image.fromarray(array, mode=mode).save(path, format="PNG")


def png_bytes(array: np.ndarray) -> bytes:
    if array.dtype != np.uint8:
        raise ValueError(f"expected uint8 array, got {array.dtype}")
    mode = "L" if array.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(array, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def load_png(source: str | Path | bytes) -> np.ndarray:
    """Read a PNG into uint8; RGB images come back (H,W,3), grayscale (H,W)."""
    if isinstance(source, bytes):
        img = Image.open(io.BytesIO(source))
    else:
        img = Image.open(source)
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.uint8)
