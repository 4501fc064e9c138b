"""HTTP service backing the annotation UI.

Hosts the two-step human workflow: open a session for an item, click to
pick pre-segmented candidate regions, optionally adjust them at block
granularity, assign distortion classes, and submit. Submitted annotations
are appended to the manifest with human provenance; manifest writes are
serialized through a single lock and land atomically (temp then rename).
"""
from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse
from pydantic import BaseModel

from .masks import DistortionClass, RegionMask, rle_encode
from .store import Annotation, DatasetManifest, add_annotation, load_manifest, save_manifest

DEFAULT_BLOCK = 8


class SessionCreate(BaseModel):
    item_id: str
    annotator_id: str


class PickRequest(BaseModel):
    x: int
    y: int


class BlockEdit(BaseModel):
    op: str  # "add" | "remove"
    x: int
    y: int
    size: int = DEFAULT_BLOCK


class AdjustRequest(BaseModel):
    mask: dict
    edits: list[BlockEdit]


class LabelRequest(BaseModel):
    mask: dict
    cls: int


@dataclass
class AnnotationSession:
    session_id: str
    item_id: str
    annotator_id: str
    reference_text: str
    candidates: list[RegionMask]
    working: list[tuple[DistortionClass, RegionMask]] = field(default_factory=list)
    state: str = "open"

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "item_id": self.item_id,
            "annotator_id": self.annotator_id,
            "reference_text": self.reference_text,
            "candidates": [c.to_json() for c in self.candidates],
            "working": [
                {"class": int(cls), "mask": mask.to_json()} for cls, mask in self.working
            ],
            "state": self.state,
        }


class ServiceState:
    def __init__(self, manifest_path: Path, regions_dir: Path):
        self.manifest_path = Path(manifest_path)
        self.regions_dir = Path(regions_dir)
        self.manifest: DatasetManifest = load_manifest(self.manifest_path)
        self.sessions: dict[str, AnnotationSession] = {}
        self.lock = threading.Lock()  # guards manifest + session table mutations

    def candidates_for(self, item_id: str) -> list[RegionMask]:
        path = self.regions_dir / f"{item_id}.json"
        if not path.is_file():
            return []
        with open(path) as f:
            return [RegionMask.from_json(obj) for obj in json.load(f)]


def _apply_block_edits(mask: RegionMask, edits: list[BlockEdit]) -> RegionMask:
    bitmap = np.array(mask.bitmap)
    h, w = bitmap.shape
    for edit in edits:
        if edit.op not in ("add", "remove"):
            raise HTTPException(400, f"unknown edit op {edit.op!r}")
        if edit.size < 1:
            raise HTTPException(400, "edit block size must be >= 1")
        y0, x0 = max(edit.y, 0), max(edit.x, 0)
        y1, x1 = min(edit.y + edit.size, h), min(edit.x + edit.size, w)
        if y0 >= y1 or x0 >= x1:
            continue
        bitmap[y0:y1, x0:x1] = edit.op == "add"
    if not bitmap.any():
        raise HTTPException(400, "edits removed every pixel of the region")
    return rle_encode(bitmap)


def create_app(manifest_path, regions_dir, images_dir=None) -> FastAPI:
    state = ServiceState(Path(manifest_path), Path(regions_dir))
    images_dir = Path(images_dir) if images_dir else state.manifest_path.parent
    app = FastAPI(title="vqg annotation service")
    app.state.service = state

    def get_session(session_id: str, must_be_open: bool = False) -> AnnotationSession:
        session = state.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id}")
        if must_be_open and session.state != "open":
            raise HTTPException(409, "session is already submitted")
        return session

    @app.get("/api/items")
    def list_items(page: int = 1, page_size: int = 50):
        items = state.manifest.items
        start = (page - 1) * page_size
        return {
            "total": len(items),
            "page": page,
            "items": [
                {
                    "item_id": it.item_id,
                    "image": it.image,
                    "source": it.source,
                    "quality_text": it.quality_text,
                    "n_annotations": len(it.annotations),
                }
                for it in items[start : start + page_size]
            ],
        }

    @app.get("/api/items/{item_id}")
    def get_item(item_id: str):
        try:
            item = state.manifest.by_id(item_id)
        except KeyError:
            raise HTTPException(404, f"unknown item {item_id}")
        return item.to_json()

    @app.get("/api/items/{item_id}/image")
    def get_item_image(item_id: str):
        try:
            item = state.manifest.by_id(item_id)
        except KeyError:
            raise HTTPException(404, f"unknown item {item_id}")
        path = images_dir / item.image
        if not path.is_file():
            raise HTTPException(404, f"image file missing for {item_id}")
        return FileResponse(path)

    @app.post("/api/sessions")
    def create_session(req: SessionCreate):
        try:
            item = state.manifest.by_id(req.item_id)
        except KeyError:
            raise HTTPException(404, f"unknown item {req.item_id}")
        with state.lock:
            # one open session per (item, annotator)
            for session in state.sessions.values():
                if (
                    session.item_id == req.item_id
                    and session.annotator_id == req.annotator_id
                    and session.state == "open"
                ):
                    return session.to_json()
            session = AnnotationSession(
                session_id=uuid.uuid4().hex,
                item_id=req.item_id,
                annotator_id=req.annotator_id,
                reference_text=item.quality_text,
                candidates=state.candidates_for(req.item_id),
            )
            state.sessions[session.session_id] = session
        return session.to_json()

    @app.get("/api/sessions/{session_id}")
    def read_session(session_id: str):
        return get_session(session_id).to_json()

    @app.post("/api/sessions/{session_id}/pick")
    def pick(session_id: str, req: PickRequest):
        session = get_session(session_id, must_be_open=True)
        if not session.candidates:
            return {"region": None}
        dims = session.candidates[0].dims
        if not (0 <= req.y < dims.height and 0 <= req.x < dims.width):
            raise HTTPException(400, "click outside image bounds")
        containing = [c for c in session.candidates if c.bitmap[req.y, req.x]]
        if not containing:
            return {"region": None}
        smallest = min(containing, key=lambda c: c.area)
        return {"region": smallest.to_json()}

    @app.post("/api/sessions/{session_id}/adjust")
    def adjust(session_id: str, req: AdjustRequest):
        session = get_session(session_id, must_be_open=True)
        mask = RegionMask.from_json(req.mask)
        adjusted = _apply_block_edits(mask, req.edits)
        return {"region": adjusted.to_json(), "lineage": req.mask}

    @app.post("/api/sessions/{session_id}/label")
    def label(session_id: str, req: LabelRequest):
        session = get_session(session_id, must_be_open=True)
        try:
            cls = DistortionClass(req.cls)
        except ValueError:
            raise HTTPException(400, f"unknown class code {req.cls}")
        mask = RegionMask.from_json(req.mask)
        # relabeling an identical mask replaces its class
        session.working = [(c, m) for c, m in session.working if m != mask]
        session.working.append((cls, mask))
        return session.to_json()

    @app.post("/api/sessions/{session_id}/submit")
    def submit(session_id: str):
        session = get_session(session_id, must_be_open=True)
        annotation = Annotation(
            annotation_id=f"{session.session_id}-human",
            provenance="human",
            annotator_id=session.annotator_id,
            reference_text_id=session.item_id,
            regions=tuple(session.working),
        )
        with state.lock:
            add_annotation(state.manifest, session.item_id, annotation)
            save_manifest(state.manifest, state.manifest_path)
            session.state = "submitted"
        return {"session_id": session.session_id, "annotation_id": annotation.annotation_id}

    return app


def serve(manifest_path, regions_dir, host: str = "127.0.0.1", port: int = 8000, images_dir=None):
    """Run the annotation service with uvicorn (blocking)."""
    import uvicorn

    app = create_app(manifest_path, regions_dir, images_dir=images_dir)
    uvicorn.run(app, host=host, port=port)
