"""HTTP surface: the fill-mask wire protocol plus a health endpoint.

POST /fill takes {texts, n_candidates, mask_token} and returns
{results: [[{text, score}]], errors: [null | string]} with one entry per
input text, in input order. A text the engine cannot serve (no mask slot,
slot lost in tokenization) yields an empty candidate list and an error
string; the rest of the batch is served normally. GET /health reports
the model id and readiness.

The model is read-only at serve time, so concurrent requests need no
locking.
"""

from __future__ import annotations

from typing import List, Optional

from fastapi import FastAPI
from pydantic import BaseModel, Field

from .model import FillEngine


class FillRequest(BaseModel):
    texts: List[str] = Field(min_length=1)
    n_candidates: int = Field(ge=1)
    mask_token: str = Field(min_length=1)


class CandidateOut(BaseModel):
    text: str
    score: float


class FillResponse(BaseModel):
    results: List[List[CandidateOut]]
    errors: List[Optional[str]]


def create_app(engine: FillEngine, batch_size: int = 16) -> FastAPI:
    """Wrap the engine in a FastAPI app; requests larger than
    ``batch_size`` are served in sub-batches with order preserved."""
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    app = FastAPI(title="fillmask-service")

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "model_id": engine.model_id, "ready": True}

    @app.post("/fill", response_model=FillResponse)
    def fill(request: FillRequest) -> FillResponse:
        results: List[List[CandidateOut]] = []
        errors: List[Optional[str]] = []
        for start in range(0, len(request.texts), batch_size):
            chunk = request.texts[start : start + batch_size]
            for item in engine.fill(chunk, request.n_candidates, request.mask_token):
                results.append(
                    [CandidateOut(text=c.text, score=c.score) for c in item.candidates]
                )
                errors.append(item.error)
        return FillResponse(results=results, errors=errors)

    return app
