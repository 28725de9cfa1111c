"""Request and response bodies for the synthesis service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator


class SynthesizeRequest(BaseModel):
    text: str = Field(min_length=1)
    tag: Optional[str] = None
    reference_mel: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def one_style_source(self):
        if (self.tag is None) == (self.reference_mel is None):
            raise ValueError("provide exactly one of 'tag' or 'reference_mel'")
        return self


class SynthesizeResponse(BaseModel):
    frames: int
    mel_dim: int
    durations: list[int]
    mel: list[list[float]]


class EmbedRequest(BaseModel):
    tags: list[str] = []
    references: dict[str, list[list[float]]] = {}


class EmbeddingRow(BaseModel):
    label: str
    source: Literal["tag", "ref"]
    values: list[float]


class EmbedResponse(BaseModel):
    rows: list[EmbeddingRow]


class AlignRequest(BaseModel):
    text: str = Field(min_length=1)
    mel: list[list[float]]


class AlignResponse(BaseModel):
    durations: list[int]


class ProjectRequest(BaseModel):
    rows: list[EmbeddingRow] = Field(min_length=3)


class ProjectedPoint(BaseModel):
    label: str
    source: str
    x: float
    y: float


class ProjectResponse(BaseModel):
    points: list[ProjectedPoint]


class HealthResponse(BaseModel):
    status: str
    step: int
    mel_dim: int
    style_dim: int
    vocab_size: int
