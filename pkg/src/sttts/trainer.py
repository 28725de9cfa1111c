"""Single-stage joint training, checkpoint round-tripping and a finite-difference gradient check."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import checkpoint as ckpt_io
from .checkpoint import Checkpoint
from .config import ModelConfig
from .corpus import (DEFAULT_RULES, CorpusSpec, TagFamily, Utterance, Vocabulary, augment_tag,
                     generate_corpus)
from .model import LOSS_NAMES, StyleTaggingTTS, make_batch
from .tag_embedding import ProviderSpec, make_provider

log = logging.getLogger(__name__)

METRIC_FIELDS = ["step", "lr", "mel_loss", "dur_loss", "align_loss", "style_loss", "total"]


class TrainingDivergedError(RuntimeError):
    pass


def noam_lr(step: int, noam_scale: float, warmup: int) -> float:
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    return noam_scale * min(step ** -0.5, step * warmup ** -1.5)


def torch_dtype(config: ModelConfig):
    return torch.float64 if config.precision == "double" else torch.float32


def provider_spec(config: ModelConfig) -> ProviderSpec:
    return ProviderSpec(kind=config.provider_kind, lm_dim=config.lm_dim,
                        family_centroid_scale=config.provider_centroid_scale,
                        within_family_jitter=config.provider_jitter, seed=config.provider_seed)


def build_model(config: ModelConfig, families: Sequence[TagFamily] | None = None,
                encoder=None) -> StyleTaggingTTS:
    """Fresh model with parameters drawn from ``config.seed``."""
    torch.manual_seed(config.seed)
    provider = make_provider(provider_spec(config), families, encoder)
    model = StyleTaggingTTS(config, provider)
    return model.to(torch_dtype(config))


def make_meta(vocab: Vocabulary, families: Sequence[TagFamily] | None) -> dict:
    return {
        "vocab": list(vocab.symbols),
        "families": [asdict(f) for f in families] if families else [],
    }


def model_from_checkpoint(ckpt: Checkpoint, encoder=None) -> tuple[StyleTaggingTTS, Vocabulary]:
    families = [TagFamily(**f) for f in ckpt.meta.get("families", [])]
    model = build_model(ckpt.config, families, encoder)
    model.load_state_dict(ckpt.model_state())
    model.eval()
    return model, Vocabulary(ckpt.meta["vocab"])


def make_optimizer(model: StyleTaggingTTS) -> torch.optim.Adam:
    c = model.config
    return torch.optim.Adam(model.parameters(), lr=noam_lr(1, c.noam_scale, c.warmup_steps),
                            betas=(c.adam_beta1, c.adam_beta2), eps=c.adam_eps, foreach=True)


def sample_batch(sorted_utts: Sequence[Utterance], config: ModelConfig, step: int
                 ) -> tuple[list[Utterance], list[str]]:
    """A window of length-sorted utterances (so padding stays small) chosen from (seed, step)."""
    rng = np.random.default_rng([config.seed, step])
    size = min(config.batch_size, len(sorted_utts))
    start = int(rng.integers(0, len(sorted_utts) - size + 1))
    utts = list(sorted_utts[start:start + size])
    if config.augment_tags:
        tags = [augment_tag(u.style_tag, DEFAULT_RULES, seed=config.seed * 1_000_003 + step * 1009 + k)
                for k, u in enumerate(utts)]
    else:
        tags = [u.style_tag for u in utts]
    return utts, tags


def _check_finite(losses: dict[str, torch.Tensor], total: torch.Tensor, step: int) -> None:
    for name in LOSS_NAMES:
        value = float(losses[name].detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(f"step {step}: {name} loss is {value}")
    if not math.isfinite(float(total.detach())):
        raise TrainingDivergedError(f"step {step}: total loss is {float(total)}")


def train(config: ModelConfig, utterances: Sequence[Utterance], vocab: Vocabulary,
          families: Sequence[TagFamily] | None = None, *, resume: Checkpoint | None = None,
          out_dir: str | Path | None = None, encoder=None,
          on_log: Callable[[dict], None] | None = None) -> tuple[Checkpoint, list[dict]]:
    """Run Adam + Noam for ``config.max_steps`` total steps; returns the final checkpoint and metrics."""
    if not utterances:
        raise ValueError("cannot train on an empty corpus")
    if len(vocab) != config.vocab_size:
        raise ValueError(f"vocabulary has {len(vocab)} symbols but config.vocab_size = {config.vocab_size}")
    for u in utterances:
        if u.n_frames < u.n_tokens:
            raise ValueError(f"utterance {u.id}: {u.n_frames} frames < {u.n_tokens} tokens")

    torch.set_num_threads(1)
    meta = make_meta(vocab, families)
    model = build_model(config, families, encoder)
    optimizer = make_optimizer(model)
    start = 0
    if resume is not None:
        model.load_state_dict(resume.model_state())
        ckpt_io.restore_optimizer(optimizer, model, resume)
        start = resume.step
    model.train()
    dtype = torch_dtype(config)
    sorted_utts = sorted(utterances, key=lambda u: (u.n_frames, u.id))

    metrics: list[dict] = []
    out = Path(out_dir) if out_dir is not None else None
    metrics_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "metrics.csv"
        fresh = resume is None or not path.exists()
        metrics_file = open(path, "w" if fresh else "a", newline="", encoding="utf-8")
        writer = csv.DictWriter(metrics_file, fieldnames=METRIC_FIELDS)
        if fresh:
            writer.writeheader()

    try:
        for step in range(start + 1, config.max_steps + 1):
            lr = noam_lr(step, config.noam_scale, config.warmup_steps)
            for group in optimizer.param_groups:
                group["lr"] = lr
            utts, tags = sample_batch(sorted_utts, config, step)
            result = model.forward_train(make_batch(utts, tags, dtype))
            _check_finite(result.losses, result.total, step)
            optimizer.zero_grad(set_to_none=True)
            result.total.backward()
            optimizer.step()

            if step % config.log_interval == 0 or step == config.max_steps:
                row = {"step": step, "lr": lr, **{f"{k}_loss": float(v.detach()) for k, v in result.losses.items()},
                       "total": float(result.total.detach())}
                metrics.append(row)
                if metrics_file is not None:
                    writer.writerow(row)
                    metrics_file.flush()
                if on_log is not None:
                    on_log(row)
                log.info("step %d lr %.3g total %.4f (mel %.4f dur %.4f align %.4f style %.4f)",
                         step, lr, row["total"], row["mel_loss"], row["dur_loss"], row["align_loss"],
                         row["style_loss"])
            if out is not None and config.checkpoint_interval and step % config.checkpoint_interval == 0:
                ckpt_io.save_checkpoint(out / f"checkpoint_{step:07d}.sttts",
                                        ckpt_io.from_training(model, optimizer, step, meta))
    finally:
        if metrics_file is not None:
            metrics_file.close()

    final = ckpt_io.from_training(model, optimizer, max(start, config.max_steps), meta)
    if out is not None:
        ckpt_io.save_checkpoint(out / "checkpoint.sttts", final)
    return final, metrics


# ---------------------------------------------------------------------------
# Gradient check


def tiny_problem(config: ModelConfig, n_utterances: int = 2, seed: int = 3):
    """Small corpus matching ``config``'s vocabulary and mel sizes."""
    spec = CorpusSpec(seed=seed, vocab_size=config.vocab_size, mel_dim=config.mel_dim,
                      n_families=2, n_utterances=n_utterances, token_base_duration=2,
                      noise_sigma=0.1, duration_spread=1, min_text_len=2, max_text_len=3)
    utts, families = generate_corpus(spec)
    return utts, families


def _perturb(model: torch.nn.Module, scale: float, seed: int) -> None:
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(scale * torch.randn(p.shape, generator=g, dtype=torch.float64).to(p.dtype))


def grad_check(config: ModelConfig, *, h: float = 1e-5, perturb: float = 0.3, seed: int = 0,
               max_entries: int | None = None) -> dict[str, float]:
    """Max relative error between autograd and central differences of the total loss.

    Returns one entry per top-level module plus ``"_overall"``. The error of a group is
    max |analytic - numeric| over its entries divided by max(max |numeric|, 1e-6).
    ``perturb=0`` checks the freshly initialized model (identity flow, zero duration head).
    """
    config = config.replace(precision="double", augment_tags=False)
    utts, families = tiny_problem(config)
    model = build_model(config, families)
    if perturb:
        _perturb(model, perturb, seed)
    model.train()
    batch = make_batch(utts, dtype=torch.float64)

    def loss_value() -> float:
        with torch.no_grad():
            return float(model.forward_train(batch).total)

    model.zero_grad()
    model.forward_train(batch).total.backward()
    rng = np.random.default_rng(seed)
    worst: dict[str, tuple[float, float]] = {}
    for name, p in model.named_parameters():
        group = name.split(".", 1)[0]
        analytic = p.grad.detach().clone().reshape(-1) if p.grad is not None else torch.zeros(p.numel(), dtype=p.dtype)
        flat = p.data.view(-1)
        idx = np.arange(flat.numel())
        if max_entries is not None and len(idx) > max_entries:
            idx = np.sort(rng.choice(idx, max_entries, replace=False))
        err, scale = worst.get(group, (0.0, 0.0))
        for i in idx:
            orig = float(flat[i])
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            down = loss_value()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            err = max(err, abs(float(analytic[i]) - numeric))
            scale = max(scale, abs(numeric))
        worst[group] = (err, scale)

    report = {g: e / max(s, 1e-6) for g, (e, s) in worst.items()}
    report["_overall"] = max(report.values())
    return report
