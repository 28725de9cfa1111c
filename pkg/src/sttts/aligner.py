"""Flow-based aligner: mel -> latent flow, Gaussian frame likelihoods, monotonic alignment search.

Only used while training. It supplies per-token durations and its own likelihood loss;
synthesis never runs the flow.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .acoustic_model import ResidualStack

LOG_2PI = math.log(2.0 * math.pi)


class ChannelMixer(nn.Module):
    """Fixed random orthogonal channel mixing; |det| = 1 so it adds nothing to the log-det."""

    def __init__(self, channels: int, seed: int):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        q, r = torch.linalg.qr(torch.randn(channels, channels, generator=g, dtype=torch.float64))
        q = q * torch.sign(torch.diagonal(r))[None, :]
        self.register_buffer("weight", q)

    def forward(self, x, reverse=False):
        w = self.weight.t() if reverse else self.weight
        w = w.to(x.dtype)
        return torch.einsum("dc,bct->bdt", w, x)


class AffineCoupling(nn.Module):
    """Transforms one half of the channels with scale/shift predicted from the other half.

    ``flip`` picks which half is transformed. The output projection starts at zero, so
    a fresh coupling is the identity.
    """

    def __init__(self, channels, hidden, kernel, n_layers, flip: bool):
        super().__init__()
        self.flip = flip
        self.n_keep = channels // 2 if not flip else channels - channels // 2
        n_change = channels - self.n_keep
        self.pre = nn.Conv1d(self.n_keep, hidden, 1)
        self.net = ResidualStack(hidden, kernel, [1] * n_layers)
        self.post = nn.Conv1d(hidden, 2 * n_change, 1)
        nn.init.zeros_(self.post.weight)
        nn.init.zeros_(self.post.bias)

    def _split(self, x):
        if self.flip:
            x = x.flip(1)
        return x[:, :self.n_keep], x[:, self.n_keep:]

    def _join(self, a, b):
        x = torch.cat([a, b], dim=1)
        return x.flip(1) if self.flip else x

    def _scale_shift(self, keep, mask):
        h = self.net(self.pre(keep) * mask, mask)
        log_s, t = self.post(h).chunk(2, dim=1)
        return log_s * mask, t * mask

    def forward(self, x, mask, reverse=False):
        keep, change = self._split(x)
        log_s, t = self._scale_shift(keep, mask)
        if not reverse:
            change = (change * torch.exp(log_s) + t) * mask
            logdet = log_s.sum(dim=(1, 2))
        else:
            change = (change - t) * torch.exp(-log_s) * mask
            logdet = -log_s.sum(dim=(1, 2))
        return self._join(keep, change), logdet


class Flow(nn.Module):
    """Maps mels to latents frame-synchronously (no squeezing)."""

    def __init__(self, channels, n_blocks=4, hidden=32, kernel=5, n_layers=4, seed=0):
        super().__init__()
        self.channels = channels
        self.mixers = nn.ModuleList(ChannelMixer(channels, seed * 1000 + i) for i in range(n_blocks))
        self.couplings = nn.ModuleList(
            AffineCoupling(channels, hidden, kernel, n_layers, flip=bool(i % 2)) for i in range(n_blocks))

    def forward(self, x, mask=None):
        """(B, D, T) mel -> (z, logdet per item)."""
        if not bool(torch.isfinite(x).all()):
            raise ValueError("flow input contains non-finite values")
        if mask is None:
            mask = torch.ones_like(x[:, :1])
        logdet = x.new_zeros(x.shape[0])
        z = x * mask
        for mix, coupling in zip(self.mixers, self.couplings):
            z = mix(z)
            z, ld = coupling(z, mask)
            logdet = logdet + ld
        return z, logdet

    def inverse(self, z, mask=None):
        if mask is None:
            mask = torch.ones_like(z[:, :1])
        x = z * mask
        for mix, coupling in zip(reversed(self.mixers), reversed(self.couplings)):
            x, _ = coupling(x, mask, reverse=True)
            x = mix(x, reverse=True)
        return x


def flow_forward(flow: Flow, mel):
    """(T, D) mel -> ((T, D) latent, scalar logdet)."""
    z, logdet = flow(mel.transpose(0, 1)[None])
    return z[0].transpose(0, 1), logdet[0]


def flow_inverse(flow: Flow, z):
    return flow.inverse(z.transpose(0, 1)[None])[0].transpose(0, 1)


def frame_log_likelihoods(z, mu):
    """(T, D) latents and (N, D) means -> (T, N) log N(z_j; mu_i, I)."""
    if z.shape[-1] != mu.shape[-1]:
        raise ValueError(f"latent dim {z.shape[-1]} != mean dim {mu.shape[-1]}")
    d = z.shape[-1]
    diff = z[..., :, None, :] - mu[..., None, :, :]
    return -0.5 * d * LOG_2PI - 0.5 * (diff ** 2).sum(-1)


# ---------------------------------------------------------------------------
# Monotonic alignment search


def mas(loglik) -> np.ndarray:
    """Best monotonic surjective frame->token path for a (T, N) log-likelihood matrix.

    Returns 0-based token indices, length T. Ties prefer staying on the current token.
    """
    loglik = np.asarray(loglik, dtype=np.float64)
    t, n = loglik.shape
    if n < 1 or t < n:
        raise ValueError(f"no monotonic surjective alignment of {t} frames onto {n} tokens")
    return mas_batch(loglik[None], np.array([t]), np.array([n]))[0]


def mas_batch(loglik, frame_lengths, token_lengths) -> np.ndarray:
    """Batched MAS over padded (B, T, N) matrices. Returns (B, T) paths, -1 on padded frames."""
    loglik = np.asarray(loglik, dtype=np.float64)
    b, t_max, n_max = loglik.shape
    frame_lengths = np.asarray(frame_lengths)
    token_lengths = np.asarray(token_lengths)
    if np.any(frame_lengths < token_lengths) or np.any(token_lengths < 1):
        bad = int(np.argmax((frame_lengths < token_lengths) | (token_lengths < 1)))
        raise ValueError(f"batch item {bad}: {frame_lengths[bad]} frames < {token_lengths[bad]} tokens")

    i = np.arange(n_max)[None, :]
    q = np.full((b, t_max, n_max), -np.inf)
    q[:, 0, 0] = loglik[:, 0, 0]
    for j in range(1, t_max):
        prev = q[:, j - 1]
        diag = np.concatenate([np.full((b, 1), -np.inf), prev[:, :-1]], axis=1)
        best = np.where(prev >= diag, prev, diag)
        # feasible cells: i <= j and N-1-i <= T-1-j
        feasible = ((i <= j) & (i < token_lengths[:, None])
                    & ((token_lengths[:, None] - 1 - i) <= (frame_lengths[:, None] - 1 - j)))
        q[:, j] = np.where(feasible, loglik[:, j] + best, -np.inf)

    paths = np.full((b, t_max), -1, dtype=np.int64)
    for k in range(b):
        tk, nk = int(frame_lengths[k]), int(token_lengths[k])
        cur = nk - 1
        paths[k, tk - 1] = cur
        for j in range(tk - 1, 0, -1):
            if cur > 0 and q[k, j - 1, cur - 1] > q[k, j - 1, cur]:
                cur -= 1
            paths[k, j - 1] = cur
    return paths


def extract_durations(path, n_tokens: int) -> np.ndarray:
    """Frames per token for a 0-based path."""
    path = np.asarray(path)
    return np.bincount(path[path >= 0], minlength=n_tokens)[:n_tokens].astype(np.int64)


def path_score(loglik, path) -> float:
    """Sum of loglik[j, path[j]] in frame order."""
    total = 0.0
    for j, i in enumerate(path):
        total += float(loglik[j][i])
    return total


def alignment_loss(flow: Flow, mel, mu):
    """Negative log-likelihood of one (T, D) mel under (N, D) means along the best path, per element.

    Returns (loss, path). The path is searched without gradient.
    """
    z, logdet = flow_forward(flow, mel)
    ll = frame_log_likelihoods(z, mu)
    path = mas(ll.detach().cpu().numpy())
    picked = ll[torch.arange(ll.shape[0]), torch.as_tensor(path)]
    return -(picked.sum() + logdet) / mel.numel(), path
