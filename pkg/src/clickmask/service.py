"""Session-oriented inference server.

The contract mirrors interactive use: POST an image once (the expensive
encoder pass happens here and its features are cached), then every click is
answered by the lightweight head alone. Masks always equal a pure replay of
the click history, which is what makes undo correct: it recomputes from the
empty mask instead of trying to invert a nonlinear update.

Images with sides that are not multiples of twice the patch size are
reflect-padded on the bottom/right for the model (the mask head needs an even
token grid for its half-scale level) and un-padded on every response, so click
coordinates and exported masks live in the original pixel frame.
"""

from __future__ import annotations

import base64
import io
import json
import secrets
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image

from .clicksim import Click
from .metrics import iou
from .model import ClickSegmenter, ModelConfig

LATENCY_BUCKETS_MS = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)


def _pad_to_multiple(arr: np.ndarray, p: int) -> np.ndarray:
    h, w = arr.shape[:2]
    pad_h, pad_w = (-h) % p, (-w) % p
    if pad_h == 0 and pad_w == 0:
        return arr
    pads = ((0, pad_h), (0, pad_w)) + ((0, 0),) * (arr.ndim - 2)
    return np.pad(arr, pads, mode="reflect")


def _decode_image(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def _decode_mask(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return (np.asarray(img.convert("L")) >= 128).astype(np.uint8)


def _mask_png(mask: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(buf, "PNG")
    return buf.getvalue()


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=status)


@dataclass
class SessionState:
    id: str
    taps: object
    orig_hw: tuple
    padded_hw: tuple
    clicks: list = field(default_factory=list)
    mask: np.ndarray | None = None  # padded frame
    reference: np.ndarray | None = None  # original frame
    created_at: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def cropped_mask(self) -> np.ndarray:
        h, w = self.orig_hw
        return self.mask[:h, :w]


class LatencyStats:
    def __init__(self):
        self.count = 0
        self.total_ms = 0.0
        self.max_ms = 0.0
        self.buckets = [0] * (len(LATENCY_BUCKETS_MS) + 1)

    def record(self, ms: float) -> None:
        self.count += 1
        self.total_ms += ms
        self.max_ms = max(self.max_ms, ms)
        for k, edge in enumerate(LATENCY_BUCKETS_MS):
            if ms <= edge:
                self.buckets[k] += 1
                return
        self.buckets[-1] += 1

    def as_dict(self) -> dict:
        labels = [f"<={e}" for e in LATENCY_BUCKETS_MS] + [f">{LATENCY_BUCKETS_MS[-1]}"]
        return {
            "count": self.count,
            "mean_ms": round(self.total_ms / self.count, 3) if self.count else None,
            "max_ms": round(self.max_ms, 3),
            "buckets_ms": dict(zip(labels, self.buckets)),
        }


class SessionStore:
    """Insertion-ordered map with LRU eviction at a fixed cap."""

    def __init__(self, cap: int):
        self.cap = cap
        self._lock = threading.Lock()
        self._sessions: dict[str, SessionState] = {}

    def put(self, session: SessionState) -> None:
        with self._lock:
            self._sessions[session.id] = session
            while len(self._sessions) > self.cap:
                oldest = next(iter(self._sessions))
                del self._sessions[oldest]

    def get(self, sid: str) -> SessionState | None:
        with self._lock:
            session = self._sessions.get(sid)
            if session is not None:  # refresh recency
                self._sessions.pop(sid)
                self._sessions[sid] = session
            return session

    def delete(self, sid: str) -> bool:
        with self._lock:
            return self._sessions.pop(sid, None) is not None

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)


def create_app(model: ClickSegmenter | None = None,
               checkpoint_path=None,
               session_cap: int = 8,
               max_side: int = 2048) -> FastAPI:
    """Build the app around a model (or a checkpoint, or a fresh toy model)."""
    if model is None:
        if checkpoint_path is not None:
            from .trainer import load_checkpoint
            model = load_checkpoint(checkpoint_path).model
        else:
            model = ClickSegmenter(ModelConfig.toy())
    patch = model.config.backbone.patch_size
    store = SessionStore(session_cap)
    counters = {"sessions_created": 0, "encode_calls": 0, "head_calls": 0}
    latency = LatencyStats()
    counter_lock = threading.Lock()

    app = FastAPI(title="clickmask", docs_url=None, redoc_url=None)
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    app.state.store = store
    app.state.model = model

    def bump(key: str, n: int = 1) -> None:
        with counter_lock:
            counters[key] += n

    def run_head(session: SessionState, clicks, m_prev) -> np.ndarray:
        t0 = time.perf_counter()
        mask = model.predict(session.taps, clicks, m_prev)
        latency.record((time.perf_counter() - t0) * 1e3)
        bump("head_calls")
        return mask

    def attach_reference(session: SessionState, mask_b64: str):
        try:
            ref = _decode_mask(base64.b64decode(mask_b64))
        except Exception:
            return _error(400, "reference mask is not a decodable image")
        if ref.shape != session.orig_hw:
            return _error(400, f"reference mask {ref.shape} does not match "
                               f"image dims {session.orig_hw}")
        session.reference = ref
        return None

    def click_payload(session: SessionState) -> dict:
        cropped = session.cropped_mask()
        payload = {
            "session_id": session.id,
            "click_count": len(session.clicks),
            "width": session.orig_hw[1],
            "height": session.orig_hw[0],
            "mask_base64": base64.b64encode(_mask_png(cropped)).decode(),
            "iou": None,
        }
        if session.reference is not None:
            payload["iou"] = round(iou(cropped, session.reference), 6)
        return payload

    @app.post("/sessions")
    async def create_session(request: Request):
        content_type = request.headers.get("content-type", "")
        body = await request.body()
        reference_b64 = None
        if content_type.startswith("application/json"):
            try:
                doc = json.loads(body)
                image_bytes = base64.b64decode(doc["image_base64"])
                reference_b64 = doc.get("reference_mask_base64")
            except Exception:
                return _error(400, "body must carry base64 PNG under image_base64")
        else:
            image_bytes = body  # raw PNG/JPEG upload
        try:
            image = _decode_image(image_bytes)
        except Exception:
            return _error(400, "image bytes are not decodable")
        h, w = image.shape[:2]
        if max(h, w) > max_side:
            return _error(413, f"image side {max(h, w)} exceeds limit {max_side}")
        padded = _pad_to_multiple(image, 2 * patch)  # even token grid
        taps = model.encode(padded[None])
        session = SessionState(
            id=secrets.token_hex(16), taps=taps, orig_hw=(h, w),
            padded_hw=padded.shape[:2],
            mask=np.zeros(padded.shape[:2], dtype=np.uint8))
        if reference_b64 is not None:
            err = attach_reference(session, reference_b64)
            if err is not None:
                return err
        store.put(session)
        bump("sessions_created")
        bump("encode_calls")
        gh, gw = session.padded_hw[0] // patch, session.padded_hw[1] // patch
        return {"session_id": session.id, "width": w, "height": h,
                "grid": [gh, gw]}

    @app.post("/sessions/{sid}/clicks")
    async def add_click(sid: str, request: Request):
        session = store.get(sid)
        if session is None:
            return _error(404, f"unknown session {sid}")
        try:
            doc = json.loads(await request.body())
            i, j = int(doc["i"]), int(doc["j"])
            positive = bool(doc["positive"])
        except Exception:
            return _error(400, "click body needs integer i, j and boolean positive")
        h, w = session.orig_hw
        if not (0 <= i < h and 0 <= j < w):
            return _error(400, f"click ({i}, {j}) outside image {h}x{w}")
        with session.lock:
            session.clicks.append(Click(i, j, positive))
            session.mask = run_head(session, session.clicks, session.mask)
            return click_payload(session)

    @app.post("/sessions/{sid}/undo")
    async def undo(sid: str):
        session = store.get(sid)
        if session is None:
            return _error(404, f"unknown session {sid}")
        with session.lock:
            if not session.clicks:
                payload = click_payload(session)
                payload["noop"] = True
                return payload
            session.clicks.pop()
            mask = np.zeros(session.padded_hw, dtype=np.uint8)
            for k in range(len(session.clicks)):  # replay from the empty mask
                mask = run_head(session, session.clicks[: k + 1], mask)
            session.mask = mask
            payload = click_payload(session)
            payload["noop"] = False
            return payload

    @app.post("/sessions/{sid}/reference")
    async def set_reference(sid: str, request: Request):
        session = store.get(sid)
        if session is None:
            return _error(404, f"unknown session {sid}")
        try:
            doc = json.loads(await request.body())
            mask_b64 = doc["mask_base64"]
        except Exception:
            return _error(400, "body needs mask_base64")
        with session.lock:
            err = attach_reference(session, mask_b64)
            if err is not None:
                return err
            return {"attached": True,
                    "iou": round(iou(session.cropped_mask(), session.reference), 6)}

    @app.get("/sessions/{sid}/mask")
    async def export_mask(sid: str, include: str | None = None):
        session = store.get(sid)
        if session is None:
            return _error(404, f"unknown session {sid}")
        with session.lock:
            if include == "history":
                payload = click_payload(session)
                payload["clicks"] = [
                    {"i": c.i, "j": c.j, "positive": c.positive}
                    for c in session.clicks]
                return payload
            return Response(content=_mask_png(session.cropped_mask()),
                            media_type="image/png",
                            headers={"X-Click-Count": str(len(session.clicks))})

    @app.delete("/sessions/{sid}")
    async def delete_session(sid: str):
        if not store.delete(sid):
            return _error(404, f"unknown session {sid}")
        return Response(status_code=204)

    @app.get("/healthz")
    async def healthz():
        back = model.config.backbone
        return {"status": "ok",
                "model": {"d_model": back.d_model, "depth": back.depth,
                          "patch_size": back.patch_size},
                "sessions_active": len(store)}

    @app.get("/metrics")
    async def metrics():
        with counter_lock:
            snapshot = dict(counters)
        snapshot["sessions_active"] = len(store)
        snapshot["click_latency"] = latency.as_dict()
        return snapshot

    return app
