"""Text + (style tag | reference mel) -> log-mel, driven by predicted durations."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint, load_checkpoint
from .corpus import CorpusError, read_mel, tokenize, write_mel
from .trainer import model_from_checkpoint


class RequestError(ValueError):
    pass


@dataclass
class SynthesisRequest:
    text: str
    tag: str | None = None
    reference_mel: np.ndarray | None = None
    reference_path: str | None = None
    id: str = ""

    def __post_init__(self):
        sources = [self.tag is not None, self.reference_mel is not None or self.reference_path is not None]
        if sum(sources) != 1:
            raise RequestError("a request needs exactly one style source: a tag or a reference mel")
        if not self.text:
            raise RequestError("text must be nonempty")


@dataclass
class SynthesisResult:
    mel: np.ndarray
    durations: np.ndarray
    style: np.ndarray


class Synthesizer:
    """Frozen model snapshot; safe to share between request handlers."""

    def __init__(self, checkpoint: Checkpoint | str | Path, encoder=None):
        if not isinstance(checkpoint, Checkpoint):
            checkpoint = load_checkpoint(checkpoint)
        self.checkpoint = checkpoint
        self.model, self.vocab = model_from_checkpoint(checkpoint, encoder)
        self.model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)

    @property
    def config(self):
        return self.model.config

    @torch.no_grad()
    def style_embedding(self, request: SynthesisRequest) -> torch.Tensor:
        if request.tag is not None:
            return self.model.encode_tag(request.tag)
        mel = request.reference_mel
        if mel is None:
            mel = read_mel(request.reference_path)
        return self.model.encode_reference(mel)

    @torch.no_grad()
    def embed_tags(self, tags: Sequence[str]) -> np.ndarray:
        if not tags:
            return np.zeros((0, self.config.style_dim))
        return self.model.tag_encoder(list(tags)).cpu().numpy()

    @torch.no_grad()
    def embed_reference(self, mel) -> np.ndarray:
        return self.model.encode_reference(mel).cpu().numpy()

    def synthesize(self, request: SynthesisRequest) -> SynthesisResult:
        tokens = tokenize(request.text, self.vocab)
        style = self.style_embedding(request)
        mel, durations = self.model.infer(tokens, style)
        return SynthesisResult(mel=mel, durations=durations, style=style.cpu().numpy())

    def align(self, text: str, mel) -> np.ndarray:
        return self.model.align(tokenize(text, self.vocab), mel)


def synthesize(request: SynthesisRequest, checkpoint: Checkpoint | str | Path) -> np.ndarray:
    return Synthesizer(checkpoint).synthesize(request).mel


def parse_request_file(path: str | Path) -> list[tuple[str, str, str]]:
    """Rows of ``id<TAB>text<TAB>tag|@mel_path``; a leading ``@`` selects a reference mel."""
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                rows.append((fields[0] if fields else f"line{lineno}", "", f"!line {lineno}: expected 3 fields"))
                continue
            rows.append((fields[0], fields[1], fields[2]))
    return rows


def request_from_row(text: str, style: str, base_dir: Path | None = None) -> SynthesisRequest:
    if style.startswith("!"):
        raise RequestError(style[1:])
    if style.startswith("@"):
        path = Path(style[1:])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return SynthesisRequest(text=text, reference_path=str(path))
    return SynthesisRequest(text=text, tag=style)


def batch_synthesize(requests: Sequence[tuple[str, SynthesisRequest | Exception]], synth: Synthesizer,
                     out_dir: str | Path) -> list[dict]:
    """Synthesize each request to ``<out_dir>/<id>.mel``; failures become error rows in manifest.tsv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for rid, req in requests:
        try:
            if isinstance(req, Exception):
                raise req
            result = synth.synthesize(req)
            path = out / f"{rid}.mel"
            write_mel(path, result.mel)
            manifest.append({"id": rid, "status": "ok", "path": path.name, "frames": int(result.mel.shape[0]),
                             "error": ""})
        except (RequestError, CorpusError, ValueError, OSError) as exc:
            manifest.append({"id": rid, "status": "error", "path": "", "frames": 0,
                             "error": str(exc).replace("\t", " ").replace("\n", " ")})
    with open(out / "manifest.tsv", "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["id", "status", "path", "frames", "error"], delimiter="\t",
                                lineterminator="\n")
        writer.writerows(manifest)
    return manifest


def load_requests(path: str | Path) -> list[tuple[str, SynthesisRequest | Exception]]:
    base = Path(path).parent
    out: list[tuple[str, SynthesisRequest | Exception]] = []
    for rid, text, style in parse_request_file(path):
        try:
            out.append((rid, request_from_row(text, style, base)))
        except RequestError as exc:
            out.append((rid, exc))
    return out
