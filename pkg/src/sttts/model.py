"""The full model: all trainable components wired for joint training and for synthesis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .acoustic_model import (DurationPredictor, MelDecoder, TextEncoder, duration_loss,
                             durations_for_inference, expand_by_duration, mel_loss)
from .aligner import Flow, frame_log_likelihoods, mas_batch
from .config import ModelConfig
from .corpus import Utterance
from .style_encoder import ReferenceEncoder, StyleTagEncoder, style_embedding_loss

LOSS_NAMES = ("mel", "dur", "align", "style")


class AlignmentError(ValueError):
    pass


@dataclass
class Batch:
    ids: list[str]
    tokens: torch.Tensor          # (B, N) long
    token_lengths: torch.Tensor   # (B,)
    mels: torch.Tensor            # (B, D, T)
    frame_lengths: torch.Tensor   # (B,)
    tags: list[str]

    @property
    def text_mask(self):
        n = self.tokens.shape[1]
        return (torch.arange(n)[None, :] < self.token_lengths[:, None]).unsqueeze(1).to(self.mels.dtype)

    @property
    def mel_mask(self):
        t = self.mels.shape[2]
        return (torch.arange(t)[None, :] < self.frame_lengths[:, None]).unsqueeze(1).to(self.mels.dtype)


def make_batch(utterances: Sequence[Utterance], tags: Sequence[str] | None = None,
               dtype=torch.float32) -> Batch:
    for u in utterances:
        if u.n_frames < u.n_tokens:
            raise AlignmentError(f"utterance {u.id}: {u.n_frames} frames < {u.n_tokens} tokens")
    b = len(utterances)
    n_max = max(u.n_tokens for u in utterances)
    t_max = max(u.n_frames for u in utterances)
    d = utterances[0].mel.shape[1]
    tokens = torch.zeros(b, n_max, dtype=torch.long)
    mels = torch.zeros(b, d, t_max, dtype=dtype)
    for k, u in enumerate(utterances):
        tokens[k, :u.n_tokens] = torch.as_tensor(u.tokens)
        mels[k, :, :u.n_frames] = torch.as_tensor(u.mel, dtype=dtype).t()
    return Batch(
        ids=[u.id for u in utterances],
        tokens=tokens,
        token_lengths=torch.tensor([u.n_tokens for u in utterances]),
        mels=mels,
        frame_lengths=torch.tensor([u.n_frames for u in utterances]),
        tags=list(tags) if tags is not None else [u.style_tag for u in utterances],
    )


@dataclass
class TrainOutput:
    total: torch.Tensor
    losses: dict[str, torch.Tensor]
    durations: torch.Tensor       # (B, N) aligner durations, 0 on padding
    mel_pred: torch.Tensor
    style_ref: torch.Tensor
    style_tag: torch.Tensor


class StyleTaggingTTS(nn.Module):
    def __init__(self, config: ModelConfig, provider):
        super().__init__()
        c = config
        self.config = c
        if provider.lm_dim != c.lm_dim:
            raise ValueError(f"provider dim {provider.lm_dim} != config lm_dim {c.lm_dim}")
        self.text_encoder = TextEncoder(c.vocab_size, c.text_hidden, c.text_kernel, c.text_dilations,
                                        c.mel_dim, c.dec_hidden)
        self.duration_predictor = DurationPredictor(c.text_hidden, c.dur_hidden, c.dur_kernel,
                                                    c.dur_dilations, c.style_dim)
        self.mel_decoder = MelDecoder(c.dec_hidden, c.dec_kernel, c.dec_dilations, c.style_dim, c.mel_dim)
        self.flow = Flow(c.mel_dim, c.flow_blocks, c.flow_hidden, c.flow_kernel, c.flow_layers, seed=c.seed)
        self.ref_encoder = ReferenceEncoder(c.mel_dim, c.style_dim, c.ref_channels, c.ref_kernel,
                                            c.ref_min_frames)
        self.tag_encoder = StyleTagEncoder(provider, c.adapt_hidden, c.style_dim)

    @property
    def provider(self):
        return self.tag_encoder.provider

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def weights(self) -> dict[str, float]:
        c = self.config
        return {"mel": c.w_mel, "dur": c.w_dur, "align": c.w_align, "style": c.w_style}

    # -- training -----------------------------------------------------------

    def forward_train(self, batch: Batch) -> TrainOutput:
        c = self.config
        text_mask, mel_mask = batch.text_mask, batch.mel_mask
        h = self.text_encoder(batch.tokens, text_mask)
        mu = self.text_encoder.mu_head(h) * text_mask
        dec_in = self.text_encoder.dec_head(h) * text_mask

        # aligner
        z, logdet = self.flow(batch.mels, mel_mask)
        ll = frame_log_likelihoods(z.transpose(1, 2), mu.transpose(1, 2))  # (B, T, N)
        paths = mas_batch(ll.detach().cpu().numpy(), batch.frame_lengths.numpy(), batch.token_lengths.numpy())
        paths_t = torch.as_tensor(paths)
        attn = torch.zeros_like(ll)
        valid = paths_t >= 0
        bi, ti = valid.nonzero(as_tuple=True)
        attn[bi, ti, paths_t[valid]] = 1.0
        n_elem = batch.frame_lengths.sum() * c.mel_dim
        align = -((ll * attn).sum() + logdet.sum()) / n_elem
        durations = attn.sum(1)

        # style
        style_ref = self.ref_encoder.encode_batch(batch.mels, batch.frame_lengths)
        style_tag = self.tag_encoder(batch.tags)
        style = style_embedding_loss(style_tag, style_ref, c.style_stop_grad_ref)

        # durations and mel
        log_dur = self.duration_predictor(h, text_mask, style_ref)
        dur = duration_loss(log_dur, durations, text_mask.squeeze(1), c.huber_delta)
        expanded = torch.bmm(dec_in, attn.transpose(1, 2))
        mel_pred = self.mel_decoder(expanded, mel_mask, style_ref)
        mel = mel_loss(mel_pred, batch.mels, mel_mask)

        losses = {"mel": mel, "dur": dur, "align": align, "style": style}
        w = self.weights()
        total = sum(w[k] * losses[k] for k in LOSS_NAMES)
        return TrainOutput(total, losses, durations, mel_pred, style_ref, style_tag)

    # -- inference pieces ------------------------------------------------------

    def _tokens(self, tokens):
        t = torch.as_tensor(np.asarray(tokens), dtype=torch.long)
        if t.ndim != 1 or t.numel() == 0:
            raise ValueError("tokens must be a nonempty 1-D sequence")
        return t[None]

    def encode_text(self, tokens):
        """(N,) ids -> (N, text_hidden) trunk output."""
        t = self._tokens(tokens)
        mask = torch.ones(1, 1, t.shape[1], dtype=self.dtype)
        return self.text_encoder(t, mask)[0].t()

    def encode_reference(self, mel):
        return self.ref_encoder(torch.as_tensor(np.asarray(mel), dtype=self.dtype))

    def encode_tag(self, tag: str):
        return self.tag_encoder([tag])[0]

    def predict_log_durations(self, h, style):
        """(N, H) trunk output + (E_s,) style -> (N,) log-durations."""
        mask = torch.ones(1, 1, h.shape[0], dtype=self.dtype)
        return self.duration_predictor(h.t()[None], mask, style[None])[0]

    def decode_mel(self, expanded, style):
        """(T, H_dec) expanded decoder input -> (T, D) mel."""
        if expanded.shape[0] < 1:
            raise ValueError("need at least one frame to decode")
        mask = torch.ones(1, 1, expanded.shape[0], dtype=self.dtype)
        return self.mel_decoder(expanded.t()[None], mask, style[None])[0].t()

    def decoder_inputs(self, tokens):
        t = self._tokens(tokens)
        mask = torch.ones(1, 1, t.shape[1], dtype=self.dtype)
        h = self.text_encoder(t, mask)
        return h[0].t(), self.text_encoder.dec_head(h)[0].t()

    def mel_from_durations(self, tokens, durations, style):
        _, dec_in = self.decoder_inputs(tokens)
        return self.decode_mel(expand_by_duration(dec_in, torch.as_tensor(durations)), style)

    @torch.no_grad()
    def infer(self, tokens, style) -> tuple[np.ndarray, np.ndarray]:
        """Predictor-driven synthesis. Returns ((T', D) mel, (N,) durations)."""
        h, dec_in = self.decoder_inputs(tokens)
        durations = durations_for_inference(self.predict_log_durations(h, style).cpu().numpy())
        expanded = expand_by_duration(dec_in, torch.as_tensor(durations))
        mel = self.decode_mel(expanded, style)
        return mel.cpu().numpy().astype(np.float32), durations

    @torch.no_grad()
    def align(self, tokens, mel) -> np.ndarray:
        """Aligner durations for one utterance."""
        t = self._tokens(tokens)
        mel_t = torch.as_tensor(np.asarray(mel), dtype=self.dtype)
        if mel_t.shape[0] < t.shape[1]:
            raise AlignmentError(f"{mel_t.shape[0]} frames < {t.shape[1]} tokens")
        mask = torch.ones(1, 1, t.shape[1], dtype=self.dtype)
        mu = self.text_encoder.mu_head(self.text_encoder(t, mask))[0].t()
        z, _ = self.flow(mel_t.t()[None])
        ll = frame_log_likelihoods(z[0].t(), mu)
        paths = mas_batch(ll[None].cpu().numpy(), [mel_t.shape[0]], [t.shape[1]])
        return np.bincount(paths[0], minlength=t.shape[1]).astype(np.int64)
