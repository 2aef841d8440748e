"""HTTP JSON API over the workbench."""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, File, Form, UploadFile
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from . import errors
from .store import AnalysisSession
from .workbench import Workbench

_STATUS_BY_CODE = {
    errors.NotFound.code: 404,
    errors.WrongState.code: 409,
    errors.ClientUnreachable.code: 502,
    errors.ClientTimeout.code: 502,
    errors.ProtocolError.code: 502,
    errors.SynthesisFailed.code: 502,
    errors.GenerationFailed.code: 502,
    errors.BackendNoGradients.code: 502,
}


class SpecializedPromptModel(BaseModel):
    system_prompt: str
    notes: str
    required_json_keys: list[str]


class GenerationDigestModel(BaseModel):
    text: str
    token_count: int


class ExplanationModel(BaseModel):
    field: str
    method: str
    index: int
    map_ref: str
    overlay_ref: str
    focus_score: Optional[float] = None


class SessionModel(BaseModel):
    id: str
    created_at: str
    status: str
    query: str
    inpainting_enabled: bool
    image_ref: str
    inpainted_ref: Optional[str] = None
    mask_ref: Optional[str] = None
    specialized_prompt: Optional[SpecializedPromptModel] = None
    report: Optional[dict] = None
    generation: Optional[GenerationDigestModel] = None
    explanations: list[ExplanationModel] = []
    error: Optional[str] = None

    @classmethod
    def from_session(cls, session: AnalysisSession) -> "SessionModel":
        return cls(**session.to_dict())


class SessionSummaryModel(BaseModel):
    id: str
    created_at: str
    status: str
    query: str
    inpainting_enabled: bool


class ExplainRequest(BaseModel):
    field: str
    method: str


class HealthModel(BaseModel):
    status: str
    backend: str


def create_app(workbench: Workbench) -> FastAPI:
    app = FastAPI(title="stainscope", version="0.1.0")

    @app.exception_handler(errors.WorkbenchError)
    async def workbench_error_handler(request, exc: errors.WorkbenchError):
        status = _STATUS_BY_CODE.get(exc.code, 400)
        return JSONResponse(
            status_code=status, content={"error": exc.code, "message": exc.message}
        )

    @app.get("/api/health", response_model=HealthModel)
    def health():
        return HealthModel(status="ok", backend=workbench.backend.descriptor().name)

    @app.post("/api/sessions", response_model=SessionModel)
    def create_session(
        image: UploadFile = File(...),
        query: str = Form(...),
        inpainting: bool = Form(False),
    ):
        data = image.file.read()
        session = workbench.create_session(data, query, inpainting)
        return SessionModel.from_session(session)

    @app.get("/api/sessions", response_model=list[SessionSummaryModel])
    def list_sessions():
        return [SessionSummaryModel(**s) for s in workbench.list_sessions()]

    @app.get("/api/sessions/{session_id}", response_model=SessionModel)
    def get_session(session_id: str):
        return SessionModel.from_session(workbench.get_session(session_id))

    @app.post("/api/sessions/{session_id}/prompt", response_model=SessionModel)
    def run_prompt(session_id: str):
        return SessionModel.from_session(workbench.run_prompt_stage(session_id))

    @app.post("/api/sessions/{session_id}/analyze", response_model=SessionModel)
    def run_analyze(session_id: str):
        return SessionModel.from_session(workbench.run_analysis_stage(session_id))

    @app.post("/api/sessions/{session_id}/explanations", response_model=ExplanationModel)
    def run_explanation(session_id: str, body: ExplainRequest):
        record = workbench.run_explanation(session_id, body.field, body.method)
        return ExplanationModel(**record.to_dict())

    @app.get("/api/sessions/{session_id}/image/{name}")
    def get_image(session_id: str, name: str):
        if name not in ("original.png", "inpainted.png", "mask.png"):
            raise errors.NotFound(f"no such image: {name}")
        data = workbench.store.read_blob(session_id, name)
        return Response(content=data, media_type="image/png")

    @app.get("/api/sessions/{session_id}/heatmaps/{index}.png")
    def get_heatmap_png(session_id: str, index: int):
        data = workbench.store.read_blob(session_id, f"heatmaps/{index}.png")
        return Response(content=data, media_type="image/png")

    @app.get("/api/sessions/{session_id}/heatmaps/{index}.hlmap")
    def get_heatmap_grid(session_id: str, index: int):
        data = workbench.store.read_blob(session_id, f"heatmaps/{index}.hlmap")
        return Response(content=data, media_type="application/octet-stream")

    return app
