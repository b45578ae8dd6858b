"""Binary checkpoint container: magic "CTXT", versioned JSON header,
then named float32 little-endian parameter arrays.

Sections group arrays by component (e.g. "vae", "denoiser", "enhancer",
"cm_backbone", "cm_adapter"). Schedules and model configs ride in the
header's meta dict.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

MAGIC = b"CTXT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path: str | Path,
    sections: Mapping[str, Mapping[str, np.ndarray]],
    meta: dict | None = None,
) -> None:
    """Write sections of named arrays plus a JSON meta header."""
    header: dict = {"version": VERSION, "meta": meta or {}, "sections": {}}
    payload = bytearray()
    for sec in sorted(sections):
        header["sections"][sec] = {}
        for name in sorted(sections[sec]):
            arr = np.asarray(sections[sec][name], dtype="<f4")
            header["sections"][sec][name] = list(arr.shape)
            payload.extend(arr.tobytes())
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    """Read back (sections, meta); arrays come out float32."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        sections: dict = {}
        for sec in sorted(header["sections"]):
            sections[sec] = {}
            for name in sorted(header["sections"][sec]):
                shape = tuple(header["sections"][sec][name])
                count = int(np.prod(shape)) if shape else 1
                raw = fh.read(count * 4)
                if len(raw) != count * 4:
                    raise CheckpointError(f"{path}: truncated array {sec}/{name}")
                sections[sec][name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return sections, header.get("meta", {})


def checkpoint_hash(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def module_to_arrays(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {
        name: tensor.detach().cpu().numpy().astype("<f4")
        for name, tensor in module.state_dict().items()
    }


def arrays_to_module(module: torch.nn.Module, arrays: Mapping[str, np.ndarray]) -> None:
    state = {name: torch.from_numpy(np.asarray(arr)) for name, arr in arrays.items()}
    module.load_state_dict(state)


def save_model(path: str | Path, section: str, module: torch.nn.Module, meta: dict) -> None:
    save_checkpoint(path, {section: module_to_arrays(module)}, meta)


def load_section(path: str | Path, section: str) -> tuple[dict[str, np.ndarray], dict]:
    sections, meta = load_checkpoint(path)
    if section not in sections:
        raise CheckpointError(f"{path}: no section {section!r} (has {sorted(sections)})")
    return sections[section], meta
