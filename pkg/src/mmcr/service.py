"""HTTP inference and review API.

Two surfaces share one process: a stateless recognize endpoint backed by
up to two loaded classifiers (make-model and color), and the review-queue
endpoints that drive the human annotation loop.  Review mutations pass
through a single lock and are appended to the queue file with fsync
before the response returns, so a crash never loses an acknowledged
verdict.  Recognize never touches that lock.

Response documents are versioned ("schemaVersion": "v1") and fully
determined by the request bytes plus the loaded models.
"""

from __future__ import annotations

import io
import json
import logging
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .errors import DataError
from .manifest import BoundingBox, LabelVocabulary
from .models.network import ClassifierModel, load_model
from .preprocess import crop_and_resize, elliptical_mask, expand_box
from .prune import ReviewItem, load_queue, append_verdict, utc_timestamp

__all__ = ["ServiceConfig", "ReviewState", "create_app", "run"]

SCHEMA_VERSION = "v1"

logger = logging.getLogger("mmcr.service")


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    make_model_model: str | None = None
    color_model: str | None = None
    queue_path: str | None = None
    lease_seconds: float = 300.0
    margin_fraction: float = 0.10
    apply_mask: bool = False
    ui_dir: str | None = None

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ServiceConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(mapping) - known
        if unknown:
            raise DataError(f"unknown service config keys: {sorted(unknown)}")
        kwargs = dict(mapping)
        for key in ("port",):
            if key in kwargs:
                kwargs[key] = int(kwargs[key])
        for key in ("lease_seconds", "margin_fraction"):
            if key in kwargs:
                kwargs[key] = float(kwargs[key])
        if "apply_mask" in kwargs and isinstance(kwargs["apply_mask"], str):
            kwargs["apply_mask"] = kwargs["apply_mask"].lower() in ("1", "true", "yes")
        return cls(**kwargs)


def _error(status: int, code: str, message: str, **extra) -> JSONResponse:
    body = {"error": {"code": code, "message": message}}
    body.update(extra)
    return JSONResponse(status_code=status, content=body)


def _item_document(item: ReviewItem) -> dict:
    return {
        "id": item.id,
        "recordId": item.record_id,
        "path": item.path,
        "proposedLabel": item.proposed_label,
        "granularity": item.granularity,
        "outlierScore": item.outlier_score,
        "status": item.status,
        "verdictLabel": item.verdict_label,
        "annotator": item.annotator,
        "timestamp": item.timestamp,
        "imageUrl": f"/v1/review/image/{item.id}",
    }


class ReviewState:
    """Queue file plus in-memory lease table behind one lock.

    Leases are deliberately memory-only: a restart forgets them and the
    items simply become servable again, while resolved verdicts survive in
    the file.  ``clock`` is injectable so lease expiry is testable.
    """

    def __init__(self, queue_path, lease_seconds: float = 300.0, clock=time.monotonic):
        self.queue_path = Path(queue_path)
        self.lease_seconds = lease_seconds
        self.clock = clock
        self._lock = threading.Lock()
        self._items: dict[str, ReviewItem] = {}
        if self.queue_path.exists():
            for item in load_queue(self.queue_path):
                self._items[item.id] = item
        self._leases: dict[str, float] = {}

    def _purge_expired(self, now: float) -> None:
        for item_id, expiry in list(self._leases.items()):
            if expiry <= now:
                del self._leases[item_id]

    def counts(self) -> dict:
        with self._lock:
            pending = sum(1 for i in self._items.values() if i.status == "pending")
            return {"pending": pending, "total": len(self._items)}

    def next_items(self, count: int) -> list[ReviewItem]:
        with self._lock:
            now = self.clock()
            self._purge_expired(now)
            candidates = [item for item in self._items.values()
                          if item.status == "pending" and item.id not in self._leases]
            candidates.sort(key=lambda item: (-item.outlier_score, item.id))
            served = candidates[:count]
            for item in served:
                self._leases[item.id] = now + self.lease_seconds
            return served

    def submit(self, item_id: str, status: str, verdict_label, annotator,
               vocabulary: LabelVocabulary | None) -> tuple[int, dict]:
        """Returns (http_status, response_body); appends durably on success."""
        with self._lock:
            item = self._items.get(item_id)
            if item is None:
                return 404, {"error": {"code": "unknown_item",
                                       "message": f"no review item {item_id!r}"}}
            if item.status != "pending":
                return 409, {"error": {"code": "verdict_conflict",
                                       "message": f"item {item_id} already resolved"},
                             "item": _item_document(item)}
            if status not in ("accepted", "rejected", "relabeled"):
                return 422, {"error": {"code": "invalid_verdict",
                                       "message": f"status must be accepted, rejected or "
                                                  f"relabeled, got {status!r}"}}
            if not annotator or not isinstance(annotator, str):
                return 422, {"error": {"code": "invalid_verdict",
                                       "message": "annotator is required"}}
            if status == "relabeled":
                if not verdict_label:
                    return 422, {"error": {"code": "invalid_verdict",
                                           "message": "relabeled requires verdict_label"}}
                if vocabulary is None:
                    return 422, {"error": {"code": "invalid_verdict",
                                           "message": f"no vocabulary loaded for "
                                                      f"granularity {item.granularity!r}"}}
                if verdict_label not in vocabulary:
                    return 422, {"error": {"code": "invalid_verdict",
                                           "message": f"label {verdict_label!r} is outside "
                                                      f"the vocabulary"}}
            else:
                verdict_label = None
            resolved = replace(item, status=status, verdict_label=verdict_label,
                               annotator=annotator, timestamp=utc_timestamp())
            append_verdict(self.queue_path, resolved)  # durable before we acknowledge
            self._items[item_id] = resolved
            self._leases.pop(item_id, None)
            return 200, {"item": _item_document(resolved)}

    def get(self, item_id: str) -> ReviewItem | None:
        with self._lock:
            return self._items.get(item_id)


def _decode_image(payload: bytes) -> np.ndarray | None:
    if not payload:
        return None
    try:
        with Image.open(io.BytesIO(payload)) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except Exception:
        return None


def _aligned_input(image: np.ndarray, size: int, config: ServiceConfig,
                   ) -> tuple[np.ndarray, BoundingBox]:
    h, w = image.shape[:2]
    box = expand_box(BoundingBox(0, 0, w, h), config.margin_fraction, w, h)
    aligned = crop_and_resize(image, box, size)
    if config.apply_mask:
        aligned = elliptical_mask(aligned, "black")
    return aligned, box


def _split_make_model(class_name: str) -> tuple[str, str]:
    make, _, rest = class_name.partition(" ")
    return make, rest


class _Models:
    def __init__(self, config: ServiceConfig):
        self.make_model: ClassifierModel | None = None
        self.color: ClassifierModel | None = None
        if config.make_model_model:
            self.make_model = load_model(config.make_model_model)
            if self.make_model.vocabulary.granularity == "color":
                raise DataError("make_model_model has a color vocabulary")
        if config.color_model:
            self.color = load_model(config.color_model)
            if self.color.vocabulary.granularity != "color":
                raise DataError("color_model does not have a color vocabulary")

    def loaded(self) -> bool:
        return self.make_model is not None or self.color is not None

    def digests(self) -> dict:
        digests = {}
        if self.make_model is not None:
            digests["makeModel"] = self.make_model.digest()
        if self.color is not None:
            digests["color"] = self.color.digest()
        return digests

    def vocabulary_for(self, granularity: str) -> LabelVocabulary | None:
        for model in (self.make_model, self.color):
            if model is not None and model.vocabulary.granularity == granularity:
                return model.vocabulary
        return None


def create_app(config: ServiceConfig, clock=time.monotonic) -> FastAPI:
    app = FastAPI(title="vehicle recognition service", docs_url=None, redoc_url=None)
    models = _Models(config)
    review = ReviewState(config.queue_path, config.lease_seconds, clock=clock) \
        if config.queue_path else None
    app.state.models = models
    app.state.review = review

    @app.middleware("http")
    async def log_requests(request: Request, call_next):
        start = time.perf_counter()
        response = await call_next(request)
        logger.info(json.dumps({
            "method": request.method,
            "path": request.url.path,
            "status": response.status_code,
            "durationMs": round((time.perf_counter() - start) * 1000, 3),
        }, sort_keys=True))
        return response

    @app.get("/v1/health")
    def health():
        return {
            "status": "ok",
            "models": {name: digest for name, digest in models.digests().items()},
            "queue": review.counts() if review is not None else None,
        }

    @app.post("/v1/recognize")
    async def recognize(request: Request, top_k: int = Query(5, ge=1)):
        if not models.loaded():
            return _error(503, "model_not_loaded", "no classifier model is loaded")
        payload = await request.body()
        image = _decode_image(payload)
        if image is None:
            return _error(400, "bad_image", "request body is not a decodable image")

        vehicle: dict = {}
        box_used: BoundingBox | None = None
        if models.make_model is not None:
            aligned, box_used = _aligned_input(image, models.make_model.input_size, config)
            probs, _ = models.make_model.forward_images(aligned[np.newaxis])
            ranking = _ranked(probs[0], models.make_model.vocabulary, top_k)
            vehicle["makeModels"] = [
                {"make": make, "model": model, "confidence": conf}
                for (make, model), conf in
                ((_split_make_model(name), conf) for name, conf in ranking)
            ]
        if models.color is not None:
            aligned, box = _aligned_input(image, models.color.input_size, config)
            box_used = box_used or box
            probs, _ = models.color.forward_images(aligned[np.newaxis])
            ranking = _ranked(probs[0], models.color.vocabulary, top_k)
            vehicle["color"] = [{"name": name, "confidence": conf}
                                for name, conf in ranking]
        assert box_used is not None
        vehicle["boundingBox"] = {"xMin": box_used.x_min, "yMin": box_used.y_min,
                                  "xMax": box_used.x_max, "yMax": box_used.y_max}
        return {
            "schemaVersion": SCHEMA_VERSION,
            "vehicles": [vehicle],
            "modelDigests": models.digests(),
        }

    @app.get("/v1/review/next")
    def review_next(count: int = Query(1, ge=1, le=100)):
        if review is None:
            return _error(503, "review_not_configured", "no review queue is configured")
        items = review.next_items(count)
        return {"items": [_item_document(item) for item in items]}

    @app.post("/v1/review/{item_id}/verdict")
    async def review_verdict(item_id: str, request: Request):
        if review is None:
            return _error(503, "review_not_configured", "no review queue is configured")
        try:
            body = json.loads(await request.body())
        except (ValueError, UnicodeDecodeError):
            return _error(422, "invalid_verdict", "body must be a JSON object")
        if not isinstance(body, dict):
            return _error(422, "invalid_verdict", "body must be a JSON object")
        item = review.get(item_id)
        vocabulary = models.vocabulary_for(item.granularity) if item is not None else None
        status, payload = review.submit(
            item_id,
            body.get("status"),
            body.get("verdict_label"),
            body.get("annotator"),
            vocabulary,
        )
        return JSONResponse(status_code=status, content=payload)

    @app.get("/v1/review/image/{item_id}")
    def review_image(item_id: str):
        if review is None:
            return _error(503, "review_not_configured", "no review queue is configured")
        item = review.get(item_id)
        if item is None or not Path(item.path).exists():
            return _error(404, "unknown_item", f"no image for item {item_id!r}")
        return FileResponse(item.path)

    @app.get("/v1/review/vocabulary")
    def review_vocabulary():
        vocabularies = {}
        for model in (models.make_model, models.color):
            if model is not None:
                vocabularies[model.vocabulary.granularity] = {
                    "classes": list(model.vocabulary.classes),
                    "digest": model.vocabulary.digest(),
                }
        return {"vocabularies": vocabularies}

    if config.ui_dir and Path(config.ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=config.ui_dir, html=True), name="ui")

    return app


def _ranked(probs: np.ndarray, vocabulary: LabelVocabulary,
            top_k: int) -> list[tuple[str, float]]:
    order = np.argsort(-probs, kind="stable")[:top_k]
    return [(vocabulary.classes[i], float(probs[i])) for i in order]


def run(config: ServiceConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")
