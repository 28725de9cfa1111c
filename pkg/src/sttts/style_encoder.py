"""Reference encoder, style tag encoder and the loss tying them into one space."""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn
from torch.nn.utils.parametrizations import weight_norm


class ReferenceEncoder(nn.Module):
    """Strided 2-D conv stack (weight-normalized) + GRU summarizer + linear projection.

    Same topology as a GST reference encoder with batch norm swapped for weight norm
    and no token attention on top.
    """

    def __init__(self, mel_dim: int, style_dim: int, channels: Sequence[int] = (8, 8, 16, 16, 32, 32),
                 kernel: int = 3, min_frames: int = 64):
        super().__init__()
        self.mel_dim = mel_dim
        self.min_frames = min_frames
        convs = []
        in_ch = 1
        for ch in channels:
            convs.append(weight_norm(nn.Conv2d(in_ch, ch, kernel, stride=2, padding=kernel // 2)))
            in_ch = ch
        self.convs = nn.ModuleList(convs)
        freq = mel_dim
        for _ in channels:
            freq = (freq + 2 * (kernel // 2) - kernel) // 2 + 1
        self.gru = nn.GRU(in_ch * freq, style_dim, batch_first=True)
        self.proj = nn.Linear(style_dim, style_dim)

    def pad(self, mel):
        """Right-pad a (T, D) mel with its minimum value up to ``min_frames``."""
        if mel.ndim != 2 or mel.shape[0] == 0:
            raise ValueError("reference mel must be a nonempty (T, D) matrix")
        if mel.shape[1] != self.mel_dim:
            raise ValueError(f"reference mel has {mel.shape[1]} channels, expected {self.mel_dim}")
        short = self.min_frames - mel.shape[0]
        if short > 0:
            mel = torch.cat([mel, mel.min().detach().expand(short, mel.shape[1])], dim=0)
        return mel

    def forward(self, mel):
        """One (T, D) mel -> (style_dim,) embedding."""
        x = self.pad(mel)[None, None]
        for conv in self.convs:
            x = torch.relu(conv(x))
        b, c, t, f = x.shape
        x = x.permute(0, 2, 1, 3).reshape(b, t, c * f)
        _, h = self.gru(x)
        return self.proj(h[-1, 0])

    def encode_batch(self, mels, lengths):
        """(B, D, T) padded mels -> (B, style_dim); each item encoded at its own length."""
        return torch.stack([self(mels[i, :, :int(n)].transpose(0, 1)) for i, n in enumerate(lengths)])


class AdaptationLayers(nn.Module):
    """lm_dim -> hidden -> hidden -> style_dim, ReLU after the first two layers only."""

    def __init__(self, lm_dim: int, hidden: int, style_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(lm_dim, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, style_dim),
        )

    def forward(self, v):
        return self.net(v)


class StyleTagEncoder(nn.Module):
    """Frozen tag provider followed by trainable adaptation layers.

    The provider is a plain attribute, not a submodule, so its state never reaches the
    optimizer or the checkpoint tensors.
    """

    def __init__(self, provider, hidden: int, style_dim: int):
        super().__init__()
        self.provider = provider
        self.adapt = AdaptationLayers(provider.lm_dim, hidden, style_dim)

    def forward(self, tags: Sequence[str]):
        p = next(self.adapt.parameters())
        v = torch.as_tensor(self.provider.embed_tags(list(tags)), dtype=p.dtype, device=p.device)
        return self.adapt(v)


def style_embedding_loss(e_tag, e_ref, stop_grad_ref: bool = False):
    """Mean squared difference over the embedding dimension (and batch, if present)."""
    if e_tag.shape != e_ref.shape:
        raise ValueError(f"style embedding shape mismatch {tuple(e_tag.shape)} vs {tuple(e_ref.shape)}")
    if stop_grad_ref:
        e_ref = e_ref.detach()
    return ((e_tag - e_ref) ** 2).mean()
