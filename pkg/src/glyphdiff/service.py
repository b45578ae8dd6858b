"""Session-oriented HTTP service over the generation pipeline.

Sessions persist as append-only JSONL records (full state per record,
snapshots accumulated); images and conditioning bundles live next to
them. Generation runs on a small worker pool with per-session locks, and
every snapshot records seed + checkpoint hashes so images are
reproducible byte for byte.
"""

from __future__ import annotations

import base64
import io
import json
import threading
import uuid
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .config import PipelineConfig
from .errors import ContractError
from .fonts import FontAttributes
from .imgio import load_png, png_bytes, save_png
from .layout import (
    LayoutOverflowError,
    LayoutPlan,
    PromptParseError,
    PromptSpec,
    allocate_boxes,
    parse_prompt,
    validate_plan,
)
from .masks import RegionMask, apply_incremental_edit, build_char_mask, build_cond_mask
from .pipeline import DECODERS, GenerationResult, ModelHub, PipelineStageError, generate_from_plan


def _attrs_to_doc(a: FontAttributes) -> dict:
    return {
        "font": a.font,
        "size_px": a.size_px,
        "fill": list(a.fill),
        "background": list(a.background) if a.background else None,
    }


def _attrs_from_doc(doc: dict) -> FontAttributes:
    return FontAttributes(
        font=doc.get("font", "mono5x7"),
        size_px=doc.get("size_px", 8),
        fill=tuple(doc.get("fill", (0, 0, 0))),
        background=tuple(doc["background"]) if doc.get("background") else None,
    )


@dataclass
class SessionState:
    id: str
    prompt: str
    prose: str
    canvas: int
    seed: int
    spans: List[str]
    attrs: List[FontAttributes]
    plan: LayoutPlan
    region_b64: Optional[str] = None  # PNG; None means full canvas
    decoder: str = "vanilla"
    last_edit: str = "create"
    history: List[dict] = field(default_factory=list)

    def region_mask(self) -> RegionMask:
        if self.region_b64 is None:
            return RegionMask.full(self.canvas, self.canvas)
        return RegionMask.from_png_array(load_png(base64.b64decode(self.region_b64)))

    def to_doc(self, include_history: bool = True) -> dict:
        doc = {
            "id": self.id,
            "prompt": self.prompt,
            "prose": self.prose,
            "canvas": self.canvas,
            "seed": self.seed,
            "spans": list(self.spans),
            "attrs": [_attrs_to_doc(a) for a in self.attrs],
            "plan": self.plan.to_dict(),
            "region_b64": self.region_b64,
            "decoder": self.decoder,
            "last_edit": self.last_edit,
        }
        if include_history:
            doc["history"] = list(self.history)
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "SessionState":
        return cls(
            id=doc["id"],
            prompt=doc["prompt"],
            prose=doc["prose"],
            canvas=doc["canvas"],
            seed=doc["seed"],
            spans=list(doc["spans"]),
            attrs=[_attrs_from_doc(a) for a in doc["attrs"]],
            plan=LayoutPlan.from_dict(doc["plan"]),
            region_b64=doc.get("region_b64"),
            decoder=doc.get("decoder", "vanilla"),
            last_edit=doc.get("last_edit", "create"),
            history=list(doc.get("history", [])),
        )


class SessionStore:
    """Append-only JSONL persistence, one file + asset dir per session."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict = {}
        self._registry_lock = threading.Lock()

    def lock(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(session_id, threading.Lock())

    def _file(self, session_id: str) -> Path:
        return self.root / f"{session_id}.jsonl"

    def asset_dir(self, session_id: str) -> Path:
        d = self.root / session_id
        d.mkdir(parents=True, exist_ok=True)
        return d

    def exists(self, session_id: str) -> bool:
        return self._file(session_id).exists()

    def append(self, state: SessionState, kind: str) -> None:
        record = {"kind": kind, "state": state.to_doc(include_history=False)}
        if kind == "snapshot":
            record["snapshot"] = state.history[-1]
        with open(self._file(state.id), "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def load(self, session_id: str) -> SessionState:
        path = self._file(session_id)
        if not path.exists():
            raise KeyError(session_id)
        state_doc = None
        history: List[dict] = []
        with open(path) as fh:
            for line in fh:
                record = json.loads(line)
                state_doc = record["state"]
                if record["kind"] == "snapshot":
                    history.append(record["snapshot"])
        state = SessionState.from_doc(state_doc)
        state.history = history
        return state


def new_session(
    prompt: str,
    canvas: int,
    seed: int,
    attrs_docs: Optional[List[dict]] = None,
) -> SessionState:
    spec = parse_prompt(prompt, canvas, canvas)
    if attrs_docs is None:
        attrs = [FontAttributes() for _ in spec.spans]
    elif len(attrs_docs) == 1 and len(spec.spans) > 1:
        attrs = [_attrs_from_doc(attrs_docs[0]) for _ in spec.spans]
    else:
        if len(attrs_docs) != len(spec.spans):
            raise LayoutOverflowError(
                f"{len(spec.spans)} spans but {len(attrs_docs)} attribute sets", 0
            )
        attrs = [_attrs_from_doc(d) for d in attrs_docs]
    plan = allocate_boxes(spec, attrs)
    return SessionState(
        id=uuid.uuid4().hex[:12],
        prompt=prompt,
        prose=spec.prose,
        canvas=canvas,
        seed=seed,
        spans=list(spec.spans),
        attrs=attrs,
        plan=plan,
    )


def edit_span(state: SessionState, k: int, body: dict) -> SessionState:
    """Transactional span edit: returns a new state, never mutates input."""
    if not 0 <= k < len(state.spans):
        raise KeyError(f"span {k}")
    new_state = replace(
        state,
        spans=list(state.spans),
        attrs=list(state.attrs),
        history=list(state.history),
    )
    edits = []
    attr = new_state.attrs[k]
    geometry_changed = False
    if "font" in body and body["font"] != attr.font:
        attr = replace(attr, font=body["font"])
        geometry_changed = True
        edits.append("font")
    if "size_px" in body and body["size_px"] != attr.size_px:
        attr = replace(attr, size_px=int(body["size_px"]))
        geometry_changed = True
        edits.append("size")
    if "fill" in body and body["fill"] is not None:
        attr = replace(attr, fill=tuple(body["fill"]))
        edits.append("fill")
    if "background" in body:
        bg = body["background"]
        attr = replace(attr, background=tuple(bg) if bg else None)
        edits.append("background")
    new_state.attrs[k] = attr

    plan = state.plan
    if geometry_changed:
        spec = PromptSpec(
            prose=state.prose,
            spans=tuple(plan.span_texts),
            canvas_w=state.canvas,
            canvas_h=state.canvas,
        )
        plan = allocate_boxes(spec, new_state.attrs)
    else:
        plan = replace(plan, attrs_by_span=tuple(new_state.attrs))

    if "text" in body and body["text"] != plan.span_texts[k]:
        plan = apply_incremental_edit(plan, k, body["text"])
        new_state.spans[k] = body["text"]
        edits.append("text")

    violations = validate_plan(plan)
    if violations:
        raise LayoutOverflowError(f"edit produces invalid plan: {violations[0]}", k)
    new_state.plan = plan
    new_state.last_edit = f"span {k}: {'+'.join(edits) or 'noop'}"
    return new_state


class JobRegistry:
    def __init__(self, workers: int = 2):
        self.pool = ThreadPoolExecutor(max_workers=workers)
        self.jobs: dict = {}
        self.lock = threading.Lock()

    def create(self, session_id: str) -> str:
        job_id = uuid.uuid4().hex[:12]
        with self.lock:
            self.jobs[job_id] = {"job_id": job_id, "session_id": session_id, "status": "queued"}
        return job_id

    def update(self, job_id: str, **fields) -> None:
        with self.lock:
            self.jobs[job_id].update(fields)

    def get(self, job_id: str) -> dict:
        with self.lock:
            if job_id not in self.jobs:
                raise KeyError(job_id)
            return dict(self.jobs[job_id])


def run_generation(
    hub: ModelHub, store: SessionStore, state: SessionState, decoder: str, seed: int
) -> tuple[SessionState, GenerationResult]:
    """Generate, persist image + bundle, append a snapshot record."""
    result = generate_from_plan(
        hub,
        state.plan,
        state.prose,
        state.region_mask(),
        seed=seed,
        decoder=decoder,
    )
    assets = store.asset_dir(state.id)
    index = len(state.history)
    image_rel = f"img_{index:03d}.png"
    bundle_rel = f"bundle_{index:03d}"
    save_png(assets / image_rel, result.image)
    bundle_dir = assets / bundle_rel
    bundle_dir.mkdir(exist_ok=True)
    save_png(bundle_dir / "char_mask.png", result.char_mask.index_map)
    save_png(bundle_dir / "cond_mask.png", result.cond_mask.rgb)
    save_png(bundle_dir / "region.png", result.region.values * 255)
    (bundle_dir / "plan.json").write_text(
        json.dumps(result.plan.to_dict(), sort_keys=True, separators=(",", ":"))
    )
    snapshot = {
        "index": index,
        "edit": state.last_edit,
        "seed": seed,
        "decoder": decoder,
        "image": image_rel,
        "bundle": bundle_rel,
        "checkpoint_hashes": dict(hub.checkpoint_hashes),
    }
    state.history.append(snapshot)
    state.decoder = decoder
    store.append(state, "snapshot")
    return state, result


def bundle_zip_bytes(bundle_dir: Path) -> bytes:
    """Deterministic zip (fixed timestamps, stored entries, sorted names)."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(p.name for p in bundle_dir.iterdir()):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, (bundle_dir / name).read_bytes())
    return buf.getvalue()


def _error(stage: str, code: str, message: str, status: int) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"stage": stage, "code": code, "message": message},
    )


def create_app(hub: ModelHub, sessions_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="glyphdiff gateway")
    store = SessionStore(sessions_dir or hub.config.resolve(hub.config.sessions_dir))
    jobs = JobRegistry()
    app.state.store = store
    app.state.jobs = jobs
    app.state.hub = hub

    @app.exception_handler(PromptParseError)
    async def _parse_err(_req: Request, exc: PromptParseError):
        return _error("parse", "unmatched_quote", str(exc), 422)

    @app.exception_handler(LayoutOverflowError)
    async def _layout_err(_req: Request, exc: LayoutOverflowError):
        return _error("layout", "overflow", str(exc), 409)

    @app.exception_handler(PipelineStageError)
    async def _stage_err(_req: Request, exc: PipelineStageError):
        return _error(exc.stage, "pipeline_failure", str(exc), 500)

    @app.exception_handler(ContractError)
    async def _contract_err(_req: Request, exc: ContractError):
        return _error("request", "contract", str(exc), 422)

    @app.exception_handler(FileNotFoundError)
    async def _missing_model(_req: Request, exc: FileNotFoundError):
        return _error("models", "missing_checkpoint", str(exc), 409)

    @app.exception_handler(KeyError)
    async def _missing(_req: Request, exc: KeyError):
        return _error("lookup", "not_found", str(exc), 404)

    @app.post("/sessions")
    async def create_session(body: dict):
        prompt = body.get("prompt", "")
        canvas = int(body.get("canvas", hub.config.canvas))
        seed = int(body.get("seed", 0))
        state = new_session(prompt, canvas, seed, body.get("attrs"))
        with store.lock(state.id):
            store.append(state, "create")
        return state.to_doc()

    @app.get("/sessions/{session_id}")
    async def get_session(session_id: str):
        with store.lock(session_id):
            return store.load(session_id).to_doc()

    @app.patch("/sessions/{session_id}/spans/{k}")
    async def patch_span(session_id: str, k: int, body: dict):
        with store.lock(session_id):
            state = store.load(session_id)
            new_state = edit_span(state, k, body)
            store.append(new_state, "edit")
            return new_state.to_doc()

    @app.patch("/sessions/{session_id}/region")
    async def patch_region(session_id: str, body: dict):
        with store.lock(session_id):
            state = store.load(session_id)
            if body.get("mode") == "full":
                state.region_b64 = None
            elif body.get("mode") == "empty":
                state.region_b64 = base64.b64encode(
                    png_bytes(np.zeros((state.canvas, state.canvas), dtype=np.uint8))
                ).decode()
            elif "png_base64" in body:
                raw = base64.b64decode(body["png_base64"])
                arr = load_png(raw)
                if arr.shape[:2] != (state.canvas, state.canvas):
                    return _error(
                        "region",
                        "bad_shape",
                        f"region must be {state.canvas}x{state.canvas}",
                        422,
                    )
                state.region_b64 = body["png_base64"]
            else:
                return _error("region", "bad_request", "need mode or png_base64", 422)
            state.last_edit = "region"
            store.append(state, "edit")
            return state.to_doc()

    @app.post("/sessions/{session_id}/generate")
    async def generate(session_id: str, body: dict | None = None):
        body = body or {}
        with store.lock(session_id):
            state = store.load(session_id)
        decoder = body.get("decoder", state.decoder)
        seed = int(body.get("seed", state.seed))
        hub.require_decoder(decoder)
        job_id = jobs.create(session_id)

        def work():
            jobs.update(job_id, status="running")
            try:
                with store.lock(session_id):
                    current = store.load(session_id)
                    updated, _ = run_generation(hub, store, current, decoder, seed)
                jobs.update(
                    job_id, status="done", image_index=updated.history[-1]["index"]
                )
            except Exception as exc:  # noqa: BLE001 - reported via job status
                stage = getattr(exc, "stage", "generate")
                jobs.update(job_id, status="error", error=f"[{stage}] {exc}")

        jobs.pool.submit(work)
        return {"job_id": job_id, "session_id": session_id, "status": "queued"}

    @app.get("/jobs/{job_id}")
    async def job_status(job_id: str):
        return jobs.get(job_id)

    @app.get("/sessions/{session_id}/image/{index}")
    async def get_image(session_id: str, index: int):
        path = store.asset_dir(session_id) / f"img_{index:03d}.png"
        if not path.exists():
            return _error("lookup", "not_found", f"image {index}", 404)
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/sessions/{session_id}/bundle/{index}")
    async def get_bundle(session_id: str, index: int):
        bundle_dir = store.asset_dir(session_id) / f"bundle_{index:03d}"
        if not bundle_dir.exists():
            return _error("lookup", "not_found", f"bundle {index}", 404)
        return Response(
            content=bundle_zip_bytes(bundle_dir), media_type="application/zip"
        )

    return app
