"""HTTP JSON API behind the labeling console.

Read endpoints serve consistent snapshots of the persisted state; label
submissions are serialized through a single writer lock. The service never
mutates corpora, only appends to the label log.
"""
from __future__ import annotations

import threading

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, Response
from pydantic import BaseModel

from . import runner
from .config import PipelineConfig
from .storage import CorpusStore, LabelEvent


class LabelBody(BaseModel):
    image_id: str
    annotator_id: str
    label: str
    assist_seen: dict = {}


def create_app(store: CorpusStore, config: PipelineConfig) -> FastAPI:
    app = FastAPI(title="profilescan labeling service")
    write_lock = threading.Lock()

    @app.get("/api/queue")
    def queue(n: int = 10):
        return [item.to_json() for item in runner.labeling_queue(store, n)]

    @app.get("/api/images/{image_id}")
    def image(image_id: str):
        path = store.image_path(image_id)
        if path is None or not path.exists():
            raise HTTPException(status_code=404, detail=f"unknown image {image_id}")
        return FileResponse(path, media_type="image/jpeg")

    @app.get("/api/images/{image_id}/composite")
    def composite(image_id: str):
        path = store.composite_path(image_id)
        if not path.exists():
            raise HTTPException(
                status_code=404, detail=f"no composite for image {image_id}"
            )
        meta = store.load_inversion_meta(image_id) or {}
        headers = {
            "X-LPIPS": f"{meta.get('lpips', 0.0):.6f}",
            "X-MSE": f"{meta.get('mse', 0.0):.6f}",
        }
        return Response(
            content=path.read_bytes(), media_type="image/jpeg", headers=headers
        )

    @app.post("/api/labels")
    def submit(body: LabelBody):
        event = LabelEvent(
            image_id=body.image_id,
            annotator_id=body.annotator_id,
            label=body.label,
            assist_seen=body.assist_seen,
        )
        with write_lock:
            try:
                runner.submit_label(store, event)
            except KeyError as exc:
                raise HTTPException(status_code=404, detail=str(exc))
            except ValueError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
        return {"accepted": True}

    @app.get("/api/progress")
    def get_progress():
        return runner.progress(store)

    @app.get("/api/calibration")
    def get_calibration():
        calibration = store.load_calibration()
        if calibration is None:
            raise HTTPException(status_code=404, detail="calibration not computed yet")
        return {"calibration": calibration, "errors": store.load_errors()}

    return app


def serve(store: CorpusStore, config: PipelineConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(store, config), host="127.0.0.1", port=config.port)
