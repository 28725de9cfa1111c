import math

import numpy as np
import pytest
import torch

from alignment_oracles import all_monotonic_paths, brute_force_best, numerical_logdet, randomize_flow, score
from fd import max_rel_error
from sttts.aligner import (Flow, alignment_loss, extract_durations, flow_forward, flow_inverse,
                           frame_log_likelihoods, mas, mas_batch)

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def _flow(d, seed=0, blocks=3, dtype=torch.float64):
    torch.manual_seed(seed)
    return Flow(d, n_blocks=blocks, hidden=8, kernel=3, n_layers=2, seed=seed).to(dtype)


# -- flow --------------------------------------------------------------------------


def test_identity_initialized_flow():
    flow = _flow(4)
    # mixers are orthogonal rotations; with zero couplings the flow is a pure rotation
    for m in flow.mixers:
        m.weight.copy_(torch.eye(4, dtype=torch.float64))
    x = torch.randn(6, 4, dtype=torch.float64)
    z, logdet = flow_forward(flow, x)
    torch.testing.assert_close(z, x, rtol=0, atol=0)
    assert float(logdet.detach()) == 0.0
    torch.testing.assert_close(flow_inverse(flow, torch.zeros(6, 4, dtype=torch.float64)),
                               torch.zeros(6, 4, dtype=torch.float64))


def test_zero_coupling_flow_preserves_norm():
    flow = _flow(5)
    x = torch.randn(7, 5, dtype=torch.float64)
    z, logdet = flow_forward(flow, x)
    assert float(logdet.detach()) == 0.0
    torch.testing.assert_close(z.norm(dim=1), x.norm(dim=1))


@pytest.mark.parametrize("dtype,tol", [(torch.float64, 1e-8), (torch.float32, 1e-4)])
def test_round_trip(dtype, tol):
    rng = np.random.default_rng(0)
    for k in range(10):
        d = int(rng.integers(2, 9))
        t = int(rng.integers(1, 21))
        flow = _flow(d, seed=k, dtype=dtype)
        randomize_flow(flow, k, scale=0.1)
        x = torch.as_tensor(rng.normal(size=(t, d)), dtype=dtype)
        z, _ = flow_forward(flow, x)
        assert z.shape == x.shape
        assert float((flow_inverse(flow, z) - x).abs().max().detach()) <= tol


def test_logdet_matches_numerical_jacobian():
    for seed in range(5):
        flow = _flow(4, seed=seed)
        randomize_flow(flow, seed)
        x = torch.randn(2, 4, dtype=torch.float64)
        _, logdet = flow_forward(flow, x)
        num = numerical_logdet(flow, x)
        err = abs(float(logdet.detach()) - num)
        assert err <= 1e-4 * max(abs(num), 1e-8) or err < 1e-9


def test_flow_rejects_nonfinite():
    flow = _flow(4)
    x = torch.zeros(3, 4, dtype=torch.float64)
    x[1, 2] = float("nan")
    with pytest.raises(ValueError):
        flow_forward(flow, x)


def test_padded_frames_do_not_leak():
    flow = _flow(4)
    randomize_flow(flow, 3)
    x = torch.randn(1, 4, 9, dtype=torch.float64)
    mask = torch.ones(1, 1, 9, dtype=torch.float64)
    mask[..., 6:] = 0
    z_masked, ld_masked = flow(x, mask)
    z_short, ld_short = flow(x[..., :6])
    torch.testing.assert_close(z_masked[..., :6], z_short)
    torch.testing.assert_close(ld_masked, ld_short)


# -- likelihoods ------------------------------------------------------------------------


def test_frame_log_likelihood_values():
    zero, one = torch.zeros(1, 1, dtype=torch.float64), torch.ones(1, 1, dtype=torch.float64)
    assert float(frame_log_likelihoods(zero, zero)) == pytest.approx(-0.918938533, abs=1e-9)
    assert float(frame_log_likelihoods(one, zero)) == pytest.approx(-1.418938533, abs=1e-9)
    with pytest.raises(ValueError):
        frame_log_likelihoods(torch.zeros(3, 2), torch.zeros(2, 3))


def test_frame_log_likelihood_matches_density_loop():
    rng = np.random.default_rng(0)
    z, mu = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    out = frame_log_likelihoods(torch.as_tensor(z), torch.as_tensor(mu)).numpy()
    for j in range(5):
        for i in range(4):
            logp = 0.0
            for k in range(3):
                logp += math.log(math.exp(-0.5 * (z[j, k] - mu[i, k]) ** 2) / math.sqrt(2 * math.pi))
            assert abs(out[j, i] - logp) <= 1e-12


# -- MAS -------------------------------------------------------------------------------------


def test_mas_forced_paths():
    rng = np.random.default_rng(0)
    assert mas(rng.normal(size=(3, 1))).tolist() == [0, 0, 0]
    assert mas(rng.normal(size=(5, 5))).tolist() == [0, 1, 2, 3, 4]
    with pytest.raises(ValueError):
        mas(rng.normal(size=(2, 3)))


def test_mas_matches_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(1, 6))
        t = int(rng.integers(n, 9))
        ll = rng.normal(size=(t, n))
        path = mas(ll)
        assert score(ll, path) == brute_force_best(ll)


def test_mas_tie_prefers_staying():
    # all paths tie; backtracking stays on the later token as long as it can
    ll = np.zeros((4, 2))
    assert mas(ll).tolist() == [0, 1, 1, 1]


def test_mas_path_invariants():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(1, 10))
        t = int(rng.integers(n, 30))
        path = mas(rng.normal(size=(t, n)) * 3)
        steps = np.diff(path)
        assert path[0] == 0 and path[-1] == n - 1
        assert set(np.unique(steps)) <= {0, 1}


def test_mas_batch_matches_single():
    rng = np.random.default_rng(3)
    shapes = [(8, 3), (5, 5), (12, 2)]
    lls = [rng.normal(size=s) for s in shapes]
    padded = np.full((3, 12, 5), 7.0)  # garbage in padding must be ignored
    for k, ll in enumerate(lls):
        padded[k, :ll.shape[0], :ll.shape[1]] = ll
    paths = mas_batch(padded, [8, 5, 12], [3, 5, 2])
    for k, ll in enumerate(lls):
        assert paths[k, :ll.shape[0]].tolist() == mas(ll).tolist()
        assert (paths[k, ll.shape[0]:] == -1).all()


# -- durations and loss -------------------------------------------------------------------


def test_extract_durations():
    assert extract_durations(np.array([0, 0, 1, 2, 2, 2]), 3).tolist() == [2, 1, 3]
    assert extract_durations(np.zeros(7, dtype=int), 1).tolist() == [7]
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(1, 6))
        t = int(rng.integers(n, 12))
        paths = list(all_monotonic_paths(t, n))
        path = paths[int(rng.integers(len(paths)))]
        counts = [0] * n
        for i in path:
            counts[i] += 1
        assert extract_durations(np.array(path), n).tolist() == counts


def test_alignment_loss_at_means():
    flow = _flow(1 + 1, seed=0)
    for m in flow.mixers:
        m.weight.copy_(torch.eye(2, dtype=torch.float64))
    mu = torch.tensor([[0.5, -1.0], [2.0, 0.0]], dtype=torch.float64)
    mel = torch.stack([mu[0], mu[0], mu[1]])
    loss, path = alignment_loss(flow, mel, mu)
    assert path.tolist() == [0, 0, 1]
    assert float(loss.detach()) == pytest.approx(HALF_LOG_2PI, abs=1e-12)


def test_alignment_loss_gradient():
    flow = _flow(3, seed=1, blocks=2)
    randomize_flow(flow, 1, scale=0.2)
    torch.manual_seed(5)
    mu = torch.randn(3, 3, dtype=torch.float64, requires_grad=True)
    mel = torch.randn(7, 3, dtype=torch.float64)
    err = max_rel_error(lambda: alignment_loss(flow, mel, mu)[0], list(flow.parameters()) + [mu])
    assert err < 1e-3
