"""Objective evaluation: reconstruction, duration accuracy and style-space geometry."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .acoustic_model import durations_for_inference
from .corpus import TagFamily, Utterance
from .inference import Synthesizer


@dataclass
class EvalReport:
    mel_mae: float
    duration_mae: float
    tag_retrieval_acc: float
    silhouette_like_margin: float
    aligner_duration_mae: float
    n_utterances: int
    n_held_out_tags: int

    def to_dict(self) -> dict:
        return asdict(self)


def resample_frames(mel: np.ndarray, n_frames: int) -> np.ndarray:
    """Linear interpolation of a (T, D) mel onto ``n_frames`` evenly spaced frames."""
    t = mel.shape[0]
    if t == n_frames:
        return mel
    src = np.linspace(0.0, 1.0, t) if t > 1 else np.zeros(1)
    dst = np.linspace(0.0, 1.0, n_frames)
    return np.stack([np.interp(dst, src, mel[:, d]) for d in range(mel.shape[1])], axis=1)


def mel_distance(a: np.ndarray, b: np.ndarray) -> float:
    """MAE between two mels, after stretching the shorter one to the longer one's length."""
    n = max(a.shape[0], b.shape[0])
    return float(np.abs(resample_frames(a, n) - resample_frames(b, n)).mean())


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


def family_separation(emb: np.ndarray, labels: Sequence[int]) -> dict[int, tuple[float, float]]:
    """Per label: (mean distance to same-label points, mean distance to other-label points)."""
    labels = np.asarray(labels)
    dist = pairwise_distances(np.asarray(emb, dtype=np.float64))
    out = {}
    for lab in np.unique(labels):
        same = labels == lab
        idx = np.where(same)[0]
        if len(idx) < 2 or same.all():
            continue
        block = dist[np.ix_(idx, idx)]
        intra = block[~np.eye(len(idx), dtype=bool)].mean()
        inter = dist[np.ix_(idx, np.where(~same)[0])].mean()
        out[int(lab)] = (float(intra), float(inter))
    return out


def silhouette(emb: np.ndarray, labels: Sequence[int]) -> float:
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        return float("nan")
    dist = pairwise_distances(np.asarray(emb, dtype=np.float64))
    scores = []
    for k in range(len(labels)):
        same = labels == labels[k]
        if same.sum() < 2:
            continue
        a = dist[k, same].sum() / (same.sum() - 1)
        b = min(dist[k, labels == other].mean() for other in uniq if other != labels[k])
        scores.append((b - a) / max(a, b) if max(a, b) > 0 else 0.0)
    return float(np.mean(scores)) if scores else float("nan")


def pca_project(x: np.ndarray, n_components: int = 2) -> np.ndarray:
    """Coordinates on the top principal axes of the mean-centered rows.

    Axis signs are fixed so the largest-magnitude loading of each axis is positive.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 3:
        raise ValueError(f"need at least 3 rows to project, got {x.shape[0]}")
    centered = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axes = vt[:n_components]
    for a in axes:
        if a[np.argmax(np.abs(a))] < 0:
            a *= -1
    coords = centered @ axes.T
    if coords.shape[1] < n_components:
        coords = np.hstack([coords, np.zeros((coords.shape[0], n_components - coords.shape[1]))])
    return coords


def utterance_family(u: Utterance, synth: Synthesizer) -> int | None:
    if u.family_id is not None:
        return u.family_id
    return synth.model.provider.family_of(u.style_tag)


@torch.no_grad()
def reconstruct(synth: Synthesizer, u: Utterance, style: str = "tag") -> np.ndarray:
    """Decode with reference durations (true when known, aligner otherwise) and a tag or reference style."""
    model = synth.model
    durations = u.true_durations if u.true_durations is not None else model.align(u.tokens, u.mel)
    emb = model.encode_tag(u.style_tag) if style == "tag" else model.encode_reference(u.mel)
    return model.mel_from_durations(u.tokens, durations, emb).cpu().numpy()


def tag_retrieval_accuracy(synth: Synthesizer, families: Sequence[TagFamily]) -> tuple[float, int]:
    seen = [(f.family_id, t) for f in families for t in f.surface_forms]
    held = [(f.family_id, t) for f in families for t in f.held_out_forms]
    if not held or not seen:
        return float("nan"), 0
    seen_emb = synth.embed_tags([t for _, t in seen])
    held_emb = synth.embed_tags([t for _, t in held])
    hits = 0
    for (fam, _), e in zip(held, held_emb):
        nearest = int(np.argmin(((seen_emb - e[None]) ** 2).sum(-1)))
        hits += seen[nearest][0] == fam
    return hits / len(held), len(held)


@torch.no_grad()
def evaluate(synth: Synthesizer, test: Sequence[Utterance],
             families: Sequence[TagFamily] | None = None) -> EvalReport:
    if not test:
        raise ValueError("test corpus is empty")
    model = synth.model
    maes, pred_err, align_err = [], [], []
    for u in test:
        maes.append(float(np.abs(reconstruct(synth, u) - u.mel).mean()))
        if u.true_durations is not None:
            style = model.encode_tag(u.style_tag)
            h, _ = model.decoder_inputs(u.tokens)
            pred = durations_for_inference(model.predict_log_durations(h, style).cpu().numpy())
            pred_err.extend(np.abs(pred - u.true_durations))
            align_err.extend(np.abs(model.align(u.tokens, u.mel) - u.true_durations))

    acc, n_held = tag_retrieval_accuracy(synth, families) if families else (float("nan"), 0)
    labels = [utterance_family(u, synth) for u in test]
    keep = [k for k, lab in enumerate(labels) if lab is not None]
    if keep:
        refs = np.stack([synth.embed_reference(test[k].mel) for k in keep])
        margin = silhouette(refs, [labels[k] for k in keep])
    else:
        margin = float("nan")
    return EvalReport(
        mel_mae=float(np.mean(maes)),
        duration_mae=float(np.mean(pred_err)) if pred_err else float("nan"),
        tag_retrieval_acc=acc,
        silhouette_like_margin=margin,
        aligner_duration_mae=float(np.mean(align_err)) if align_err else float("nan"),
        n_utterances=len(test),
        n_held_out_tags=n_held,
    )


# ---------------------------------------------------------------------------
# Embedding CSV files


def write_embeddings(path: str | Path, rows: Sequence[tuple[str, str, np.ndarray]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for label, source, vec in rows:
            w.writerow([label, source, *(repr(float(x)) for x in vec)])


def read_embeddings(path: str | Path) -> list[tuple[str, str, np.ndarray]]:
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, rec in enumerate(csv.reader(f), 1):
            if not rec:
                continue
            if len(rec) < 3:
                raise ValueError(f"{path}:{lineno}: expected label,source,values...")
            rows.append((rec[0], rec[1], np.array([float(x) for x in rec[2:]])))
    return rows


def write_projection(path: str | Path, labels: Sequence[str], sources: Sequence[str], coords: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for lab, src, (x, y) in zip(labels, sources, coords):
            w.writerow([lab, src, repr(float(x)), repr(float(y))])
