"""Brute-force references for the aligner tests."""

import itertools

import numpy as np
import torch


def all_monotonic_paths(t, n):
    """Every monotonic surjective frame->token path, as 0-based index lists."""
    for cuts in itertools.combinations(range(1, t), n - 1):
        path, token = [], 0
        for j in range(t):
            if token < n - 1 and j == cuts[token]:
                token += 1
            path.append(token)
        yield path


def score(loglik, path):
    total = 0.0
    for j in range(len(path)):
        total += float(loglik[j, path[j]])
    return total


def brute_force_best(loglik):
    t, n = loglik.shape
    return max(score(loglik, p) for p in all_monotonic_paths(t, n))


def randomize_flow(flow, seed, scale=0.3):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in flow.parameters():
            p.copy_(scale * torch.randn(p.shape, generator=g, dtype=torch.float64).to(p.dtype))


@torch.no_grad()
def numerical_logdet(flow, x, h=1e-6):
    """log|det J| of x -> z with the Jacobian built column by column from central differences."""
    t, d = x.shape
    flat = x.reshape(-1).clone()

    def f(v):
        z, _ = flow(v.reshape(t, d).t()[None])
        return z[0].t().reshape(-1)

    cols = []
    for i in range(flat.numel()):
        e = torch.zeros_like(flat)
        e[i] = h
        cols.append((f(flat + e) - f(flat - e)) / (2 * h))
    jac = torch.stack(cols, dim=1).numpy()
    sign, logabs = np.linalg.slogdet(jac)
    return logabs
