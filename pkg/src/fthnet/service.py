"""HTTP service: quality scoring plus the annotation backend.

Scoring is read-only over the loaded model weights, so concurrent
requests return exactly the sequential scores. Inference admission is a
bounded in-flight semaphore with a FIFO wait queue; requests past the
queue depth get 429. Annotation state lives in an append-only journal
store shared with the offline aggregation code.
"""

from __future__ import annotations

import io
import threading
import time
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import FileResponse, JSONResponse
from PIL import Image
from pydantic import BaseModel, Field

from . import dataset, store as store_mod
from .checkpoint import load_model
from .model import FTHNet, count_flops, count_params
from .trainer import eval_transform

MIN_IMAGE_SIDE = 64


class InferenceGate:
    """Bounded concurrent inference with a FIFO overflow queue."""

    def __init__(self, max_inflight: int = 4, queue_depth: int = 64):
        self._sem = threading.BoundedSemaphore(max_inflight)
        self._lock = threading.Lock()
        self._waiting = 0
        self.queue_depth = queue_depth

    def __enter__(self):
        with self._lock:
            if self._waiting >= self.queue_depth:
                raise OverflowError("inference queue full")
            self._waiting += 1
        self._sem.acquire()
        with self._lock:
            self._waiting -= 1
        return self

    def __exit__(self, *exc):
        self._sem.release()
        return False


def score_image(model: FTHNet, img: np.ndarray) -> tuple[float, str, float]:
    """Resize, forward, clamp to [0, 100]; returns (score, level, latency_ms)."""
    x = torch.from_numpy(eval_transform(img, model.config.input_size)[None])
    start = time.perf_counter()
    with torch.no_grad():
        raw = float(model(x)[0])
    latency_ms = (time.perf_counter() - start) * 1000.0
    score = float(min(100.0, max(0.0, raw)))
    return score, dataset.level_from_score(score), latency_ms


def bench(model: FTHNet, n_warmup: int = 3, n_trials: int = 20,
          seed: int = 0) -> dict:
    """Single-image latency statistics after warmup, plus model size."""
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    if n_warmup < 0:
        raise ValueError(f"n_warmup must be >= 0, got {n_warmup}")
    rng = np.random.default_rng(seed)
    img = (rng.random((model.config.input_size, model.config.input_size, 3)) * 255).astype(np.uint8)
    for _ in range(n_warmup):
        score_image(model, img)
    times = []
    score = None
    for _ in range(n_trials):
        score, _, ms = score_image(model, img)
        times.append(ms)
    times_arr = np.array(times)
    return {
        "params": count_params(model),
        "params_m": round(count_params(model) / 1e6, 4),
        "flops": count_flops(model.config),
        "flops_g": round(count_flops(model.config) / 1e9, 4),
        "single_test_ms": {
            "mean": float(times_arr.mean()),
            "min": float(times_arr.min()),
            "p95": float(np.percentile(times_arr, 95)),
        },
        "n_trials": n_trials,
        "score": score,
    }


# ---------------------------------------------------------------------------
# request/response schemas


class ProjectCreate(BaseModel):
    name: str
    raters: dict[str, str] = Field(default_factory=dict)  # rater_id -> tier
    is_reference: bool = False


class ImageAdd(BaseModel):
    image_id: str
    path: str
    is_reference: bool = False
    level_hint: str | None = None


class ImagesAdd(BaseModel):
    images: list[ImageAdd]


class RatingCreate(BaseModel):
    project_id: str
    image_id: str
    rater_id: str
    score: int = Field(ge=0, le=100)  # integers only; the scale's minimum gap is 1
    level: str | None = None


def create_app(checkpoints: dict[str, str | Path] | None = None,
               store_dir: str | Path = "annotation_store",
               max_inflight: int = 4, queue_depth: int = 64) -> FastAPI:
    """Build the service; ``checkpoints`` maps model tags (s, l) to paths."""
    app = FastAPI(title="fundus quality service", openapi_url="/v1/openapi.json")
    models: dict[str, FTHNet] = {}
    for tag, path in (checkpoints or {}).items():
        models[tag] = load_model(path)
    annotation_store = store_mod.AnnotationStore(store_dir)
    gate = InferenceGate(max_inflight, queue_depth)
    app.state.models = models
    app.state.store = annotation_store

    @app.post("/v1/score")
    async def score(request: Request, model: str = Query("s")) -> Response:
        if model not in models:
            return JSONResponse({"error": f"model {model!r} not loaded"}, status_code=503)
        body = await request.body()
        try:
            img = Image.open(io.BytesIO(body))
            img = img.convert("RGB")
        except Exception as exc:
            return JSONResponse({"error": f"undecodable image: {exc}"}, status_code=400)
        if img.width < MIN_IMAGE_SIDE or img.height < MIN_IMAGE_SIDE:
            return JSONResponse(
                {"error": f"image {img.width}x{img.height} below minimum {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"},
                status_code=400)
        arr = np.asarray(img)
        try:
            with gate:
                value, level, latency_ms = score_image(models[model], arr)
        except OverflowError:
            return JSONResponse({"error": "inference queue full"}, status_code=429)
        return JSONResponse({"score": value, "level": level,
                             "latency_ms": latency_ms, "model": model})

    # -- annotation backend ----------------------------------------------

    @app.post("/v1/projects")
    def create_project(body: ProjectCreate):
        try:
            project_id = annotation_store.create_project(body.name, body.raters,
                                                         body.is_reference)
        except dataset.AggregationError as exc:
            return JSONResponse({"error": str(exc)}, status_code=422)
        return {"project_id": project_id}

    @app.post("/v1/projects/{project_id}/images")
    def add_images(project_id: str, body: ImagesAdd):
        try:
            for image in body.images:
                annotation_store.add_image(project_id, image.image_id, image.path,
                                           image.is_reference, image.level_hint)
        except store_mod.UnknownProjectError:
            return JSONResponse({"error": f"unknown project {project_id!r}"}, status_code=404)
        return {"added": len(body.images)}

    @app.get("/v1/projects/{project_id}/next")
    def next_image(project_id: str, rater: str = Query(...)):
        try:
            entry = annotation_store.next_unrated(project_id, rater)
        except store_mod.UnknownProjectError:
            return JSONResponse({"error": f"unknown project {project_id!r}"}, status_code=404)
        except store_mod.UnknownRaterError:
            return JSONResponse({"error": f"unknown rater {rater!r}"}, status_code=401)
        if entry is None:
            return Response(status_code=204)
        return {"image_id": entry.image_id, "is_reference": entry.is_reference,
                "level_hint": entry.level_hint,
                "file": f"/v1/projects/{project_id}/images/{entry.image_id}/file"}

    @app.get("/v1/projects/{project_id}/images")
    def list_images(project_id: str):
        try:
            project = annotation_store.project(project_id)
        except store_mod.UnknownProjectError:
            return JSONResponse({"error": f"unknown project {project_id!r}"}, status_code=404)
        return {"images": [
            {"image_id": entry.image_id, "is_reference": entry.is_reference,
             "level_hint": entry.level_hint,
             "file": f"/v1/projects/{project_id}/images/{entry.image_id}/file"}
            for entry in (project.images[i] for i in project.image_order)
        ]}

    @app.get("/v1/projects/{project_id}/images/{image_id}/file")
    def image_file(project_id: str, image_id: str):
        try:
            project = annotation_store.project(project_id)
        except store_mod.UnknownProjectError:
            return JSONResponse({"error": f"unknown project {project_id!r}"}, status_code=404)
        entry = project.images.get(image_id)
        if entry is None or not Path(entry.path).exists():
            return JSONResponse({"error": f"unknown image {image_id!r}"}, status_code=404)
        return FileResponse(entry.path)

    @app.post("/v1/ratings")
    def add_rating(body: RatingCreate):
        try:
            annotation_store.add_rating(body.project_id, body.rater_id,
                                        body.image_id, body.score, body.level)
        except store_mod.UnknownProjectError:
            return JSONResponse({"error": f"unknown project {body.project_id!r}"}, status_code=404)
        except store_mod.UnknownRaterError:
            return JSONResponse({"error": f"unknown rater {body.rater_id!r}"}, status_code=401)
        except store_mod.UnknownImageError:
            return JSONResponse({"error": f"unknown image {body.image_id!r}"}, status_code=404)
        except store_mod.DuplicateRatingError as exc:
            return JSONResponse({"error": str(exc)}, status_code=409)
        except dataset.AggregationError as exc:
            return JSONResponse({"error": str(exc)}, status_code=422)
        return {"accepted": True}

    @app.get("/v1/projects/{project_id}/aggregate")
    def aggregate(project_id: str):
        try:
            return annotation_store.aggregate(project_id)
        except store_mod.UnknownProjectError:
            return JSONResponse({"error": f"unknown project {project_id!r}"}, status_code=404)

    @app.get("/v1/spec")
    def openapi_spec():
        return app.openapi()

    return app
