"""HTTP front end over a loaded checkpoint.

Run with ``sttts serve --checkpoint model.sttts`` or
``uvicorn --factory sttts.service.app:app_from_env`` (reads ``STTTS_CHECKPOINT``).
"""

from __future__ import annotations

import os

import numpy as np
from fastapi import FastAPI, HTTPException

from ..corpus import CorpusError
from ..evaluation import pca_project
from ..inference import RequestError, SynthesisRequest, Synthesizer
from ..model import AlignmentError
from .schemas import (AlignRequest, AlignResponse, EmbeddingRow, EmbedRequest, EmbedResponse,
                      HealthResponse, ProjectedPoint, ProjectRequest, ProjectResponse,
                      SynthesizeRequest, SynthesizeResponse)


def _matrix(rows: list[list[float]], mel_dim: int, what: str) -> np.ndarray:
    mel = np.asarray(rows, dtype=np.float32)
    if mel.ndim != 2 or mel.shape[0] == 0 or mel.shape[1] != mel_dim:
        raise HTTPException(422, f"{what} must be a nonempty T x {mel_dim} matrix")
    return mel


def create_app(synth: Synthesizer) -> FastAPI:
    app = FastAPI(title="sttts", version="0.1.0")
    app.state.synth = synth
    mel_dim = synth.config.mel_dim

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", step=synth.checkpoint.step, mel_dim=mel_dim,
                              style_dim=synth.config.style_dim, vocab_size=len(synth.vocab))

    @app.post("/synthesize", response_model=SynthesizeResponse)
    def synthesize(req: SynthesizeRequest):
        try:
            if req.tag is not None:
                request = SynthesisRequest(text=req.text, tag=req.tag)
            else:
                request = SynthesisRequest(text=req.text,
                                           reference_mel=_matrix(req.reference_mel, mel_dim, "reference_mel"))
            result = synth.synthesize(request)
        except (RequestError, CorpusError, ValueError) as exc:
            raise HTTPException(422, str(exc)) from exc
        return SynthesizeResponse(frames=int(result.mel.shape[0]), mel_dim=int(result.mel.shape[1]),
                                  durations=[int(d) for d in result.durations], mel=result.mel.tolist())

    @app.post("/embed", response_model=EmbedResponse)
    def embed(req: EmbedRequest):
        rows = []
        try:
            if req.tags:
                for tag, vec in zip(req.tags, synth.embed_tags(req.tags)):
                    rows.append(EmbeddingRow(label=tag, source="tag", values=vec.tolist()))
            for label, mel in req.references.items():
                vec = synth.embed_reference(_matrix(mel, mel_dim, f"reference {label!r}"))
                rows.append(EmbeddingRow(label=label, source="ref", values=vec.tolist()))
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        return EmbedResponse(rows=rows)

    @app.post("/align", response_model=AlignResponse)
    def align(req: AlignRequest):
        try:
            durations = synth.align(req.text, _matrix(req.mel, mel_dim, "mel"))
        except (AlignmentError, CorpusError, ValueError) as exc:
            raise HTTPException(422, str(exc)) from exc
        return AlignResponse(durations=[int(d) for d in durations])

    @app.post("/project", response_model=ProjectResponse)
    def project(req: ProjectRequest):
        dims = {len(r.values) for r in req.rows}
        if len(dims) != 1:
            raise HTTPException(422, "all rows must have the same number of values")
        coords = pca_project(np.array([r.values for r in req.rows]))
        return ProjectResponse(points=[ProjectedPoint(label=r.label, source=r.source, x=float(x), y=float(y))
                                       for r, (x, y) in zip(req.rows, coords)])

    return app


def app_from_env() -> FastAPI:
    path = os.environ.get("STTTS_CHECKPOINT")
    if not path:
        raise RuntimeError("set STTTS_CHECKPOINT to a checkpoint path")
    return create_app(Synthesizer(path))
