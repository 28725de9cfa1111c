"""Text encoder, duration predictor and mel decoder.

All three are stacks of the same gated residual dilated convolution block. Tensors use
the Conv1d layout ``(batch, channels, length)``; masks are ``(batch, 1, length)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F


@dataclass(frozen=True)
class ResidualBlockSpec:
    kernel: int
    dilation: int
    hidden: int
    gated: bool = True
    style_conditioned: bool = False

    def __post_init__(self):
        if self.kernel % 2 != 1:
            raise ValueError("kernel must be odd for same-length padding")


class ResidualBlock(nn.Module):
    """dilated conv -> (+ style projection) -> tanh*sigmoid gate -> 1x1 residual and skip convs."""

    def __init__(self, spec: ResidualBlockSpec, style_dim: int | None = None):
        super().__init__()
        self.spec = spec
        h = spec.hidden
        out = 2 * h if spec.gated else h
        self.conv = nn.Conv1d(h, out, spec.kernel, dilation=spec.dilation,
                              padding=spec.dilation * (spec.kernel - 1) // 2)
        self.style_proj = None
        if spec.style_conditioned:
            if style_dim is None:
                raise ValueError("style_dim required for a style-conditioned block")
            self.style_proj = nn.Linear(style_dim, out)
        self.res = nn.Conv1d(h, h, 1)
        self.skip = nn.Conv1d(h, h, 1)

    def forward(self, x, mask, style=None):
        y = self.conv(x * mask)
        if self.style_proj is not None:
            y = y + self.style_proj(style).unsqueeze(-1)
        if self.spec.gated:
            a, b = y.chunk(2, dim=1)
            y = torch.tanh(a) * torch.sigmoid(b)
        else:
            y = torch.relu(y)
        return (x + self.res(y)) * mask, self.skip(y) * mask


class ResidualStack(nn.Module):
    """Output is the residual stream plus the sum of every block's skip output."""

    def __init__(self, hidden: int, kernel: int, dilations: Sequence[int],
                 style_dim: int | None = None, gated: bool = True):
        super().__init__()
        conditioned = style_dim is not None
        self.blocks = nn.ModuleList(
            ResidualBlock(ResidualBlockSpec(kernel, d, hidden, gated, conditioned), style_dim)
            for d in dilations)

    def forward(self, x, mask, style=None):
        skips = 0
        for block in self.blocks:
            x, s = block(x, mask, style)
            skips = skips + s
        return (x + skips) * mask


class TextEncoder(nn.Module):
    """Token embedding and residual stack, followed by two linear heads.

    ``mu_head`` projects to the flow's latent space (prior means); ``dec_head`` feeds
    the mel decoder. The trunk output itself goes to the duration predictor.
    """

    def __init__(self, vocab_size, hidden, kernel, dilations, mel_dim, dec_hidden):
        super().__init__()
        self.vocab_size = vocab_size
        self.embed = nn.Embedding(vocab_size, hidden)
        self.stack = ResidualStack(hidden, kernel, dilations)
        self.mu_head = nn.Conv1d(hidden, mel_dim, 1)
        self.dec_head = nn.Conv1d(hidden, dec_hidden, 1)

    def forward(self, tokens, mask):
        if tokens.numel() == 0 or tokens.shape[-1] == 0:
            raise ValueError("empty token sequence")
        if int(tokens.max()) >= self.vocab_size or int(tokens.min()) < 0:
            raise ValueError(f"token id out of range [0, {self.vocab_size})")
        x = self.embed(tokens).transpose(1, 2) * mask
        return self.stack(x, mask)


class DurationPredictor(nn.Module):
    """Log-duration per token from the text trunk output and a style embedding.

    Both inputs are layer-normalized first. The trunk output grows with encoder depth
    while style embeddings stay small, and without rescaling the predictor fits the
    training texts from context alone and ignores style.
    """

    def __init__(self, in_dim, hidden, kernel, dilations, style_dim):
        super().__init__()
        self.inp = nn.Conv1d(in_dim, hidden, 1)
        self.stack = ResidualStack(hidden, kernel, dilations, style_dim=style_dim)
        self.out = nn.Conv1d(hidden, 1, 1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, h, mask, style):
        """Log-durations, shape (batch, N)."""
        h = F.layer_norm(h.transpose(1, 2), (h.shape[1],)).transpose(1, 2)
        style = F.layer_norm(style, (style.shape[-1],))
        x = self.stack(self.inp(h) * mask, mask, style)
        return (self.out(x) * mask).squeeze(1)


class MelDecoder(nn.Module):
    def __init__(self, hidden, kernel, dilations, style_dim, mel_dim):
        super().__init__()
        self.stack = ResidualStack(hidden, kernel, dilations, style_dim=style_dim)
        self.out = nn.Conv1d(hidden, mel_dim, 1)

    def forward(self, expanded, mask, style):
        """(batch, H, T) expanded text -> (batch, D, T) log-mel."""
        return self.out(self.stack(expanded * mask, mask, style)) * mask


# ---------------------------------------------------------------------------
# Length regulation and losses


def expand_by_duration(seq, durations):
    """Repeat row i of ``seq`` (N x H) ``durations[i]`` times."""
    durations = torch.as_tensor(durations, dtype=torch.long)
    if durations.ndim != 1 or durations.shape[0] != seq.shape[0]:
        raise ValueError(f"need {seq.shape[0]} durations, got shape {tuple(durations.shape)}")
    if bool((durations < 1).any()):
        raise ValueError("every duration must be >= 1")
    return torch.repeat_interleave(seq, durations, dim=0)


def durations_to_attention(durations, n_frames: int | None = None):
    """Hard alignment matrix (T x N) for integer durations."""
    durations = torch.as_tensor(durations, dtype=torch.long)
    total = int(durations.sum())
    t = total if n_frames is None else n_frames
    idx = torch.repeat_interleave(torch.arange(len(durations)), durations)
    attn = torch.zeros(t, len(durations))
    attn[torch.arange(total), idx] = 1.0
    return attn


def durations_for_inference(log_durs) -> np.ndarray:
    """max(1, round-half-to-even(exp(log_dur))) per token."""
    log_durs = np.asarray(log_durs, dtype=np.float64)
    if not np.all(np.isfinite(log_durs)):
        raise ValueError("log durations must be finite")
    with np.errstate(over="ignore"):
        d = np.rint(np.exp(log_durs))
    return np.maximum(1, np.minimum(d, np.iinfo(np.int32).max)).astype(np.int64)


def mel_loss(pred, target, mask=None):
    """Mean absolute error over valid (frame, channel) entries."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    if mask is None:
        return (pred - target).abs().mean()
    mask = mask.expand_as(pred)
    return ((pred - target).abs() * mask).sum() / mask.sum()


def duration_loss(pred_log, target_int, mask=None, delta: float = 1.0):
    """Mean Huber loss between predicted log-durations and log of integer targets."""
    if pred_log.shape != target_int.shape:
        raise ValueError(f"length mismatch {tuple(pred_log.shape)} vs {tuple(target_int.shape)}")
    target = torch.log(target_int.detach().to(pred_log.dtype).clamp_min(1))
    loss = F.huber_loss(pred_log, target, reduction="none", delta=delta)
    if mask is None:
        return loss.mean()
    return (loss * mask).sum() / mask.sum()
