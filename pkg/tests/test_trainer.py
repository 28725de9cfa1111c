import csv
import math

import numpy as np
import pytest
import torch

from sttts.checkpoint import from_bytes, load_checkpoint, save_checkpoint, to_bytes
from sttts.config import ModelConfig, format_config, load_config, parse_config_text
from sttts.corpus import Vocabulary
from sttts.model import AlignmentError, make_batch
from sttts.trainer import (TrainingDivergedError, build_model, grad_check, make_optimizer, model_from_checkpoint,
                           noam_lr, tiny_problem, train)


@pytest.fixture(scope="module")
def tiny():
    config = ModelConfig.tiny(provider_jitter=0.1, max_steps=6, log_interval=1, warmup_steps=4)
    utts, families = tiny_problem(config, n_utterances=6)
    return config, utts, families, Vocabulary.default(config.vocab_size)


# -- learning rate ------------------------------------------------------------------


def test_noam_examples():
    assert noam_lr(4000, 0.02, 4000) == pytest.approx(3.1623e-4, rel=1e-4)
    assert noam_lr(1, 0.02, 4000) == pytest.approx(7.9057e-8, rel=1e-4)
    with pytest.raises(ValueError):
        noam_lr(0, 0.02, 4000)


def test_noam_peaks_at_warmup():
    lrs = [noam_lr(s, 0.02, 500) for s in range(1, 5001)]
    assert int(np.argmax(lrs)) + 1 == 500
    assert all(a < b for a, b in zip(lrs[:499], lrs[1:500]))
    assert all(a > b for a, b in zip(lrs[499:-1], lrs[500:]))


# -- losses ----------------------------------------------------------------------------


def test_total_is_weighted_sum(tiny):
    config, utts, families, _ = tiny
    config = config.replace(w_mel=0.5, w_dur=2.0, w_align=0.25, w_style=3.0)
    model = build_model(config, families)
    out = model.forward_train(make_batch(utts[:3], dtype=torch.float64))
    expect = (0.5 * out.losses["mel"] + 2.0 * out.losses["dur"] + 0.25 * out.losses["align"]
              + 3.0 * out.losses["style"])
    assert out.total.item() == expect.item()
    assert set(out.losses) == {"mel", "dur", "align", "style"}


def test_durations_sum_to_frames(tiny):
    config, utts, families, _ = tiny
    out = build_model(config, families).forward_train(make_batch(utts, dtype=torch.float64))
    for k, u in enumerate(utts):
        d = out.durations[k].detach()
        assert int(d.sum()) == u.n_frames
        assert (d[:u.n_tokens] >= 1).all()


def test_short_mel_names_utterance(tiny):
    _, utts, _, _ = tiny
    u = utts[0]
    bad = type(u)(id="too-short", text=u.text, tokens=u.tokens, style_tag=u.style_tag,
                  mel=u.mel[:u.n_tokens - 1], true_durations=None, family_id=u.family_id)
    with pytest.raises(AlignmentError, match="too-short"):
        make_batch([bad])


def test_loss_finite_for_many_seeds(tiny):
    config, utts, families, _ = tiny
    batch = make_batch(utts, dtype=torch.float64)
    for seed in range(50):
        out = build_model(config.replace(seed=seed), families).forward_train(batch)
        assert all(math.isfinite(float(v.detach())) for v in out.losses.values())


def test_provider_is_frozen(tiny):
    config, _, families, _ = tiny
    model = build_model(config, families)
    names = [n for n, _ in model.named_parameters()]
    assert not any("provider" in n for n in names)
    optimized = {id(p) for g in make_optimizer(model).param_groups for p in g["params"]}
    assert optimized == {id(p) for p in model.parameters()}
    before = model.provider.embed_tag(families[0].surface_forms[0]).copy()
    out = model.forward_train(make_batch(tiny[1][:2], dtype=torch.float64))
    out.total.backward()
    np.testing.assert_array_equal(before, model.provider.embed_tag(families[0].surface_forms[0]))


# -- training loop and checkpoints ----------------------------------------------------------


def test_metrics_and_checkpoint_written(tiny, tmp_path):
    config, utts, families, vocab = tiny
    ckpt, metrics = train(config, utts, vocab, families, out_dir=tmp_path)
    assert ckpt.step == 6 and [m["step"] for m in metrics] == list(range(1, 7))
    with open(tmp_path / "metrics.csv") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ["step", "lr", "mel_loss", "dur_loss", "align_loss", "style_loss", "total"]
    assert len(rows) == 6
    assert (tmp_path / "checkpoint.sttts").exists()


def test_training_is_deterministic(tiny):
    config, utts, families, vocab = tiny
    a, ma = train(config, utts, vocab, families)
    b, mb = train(config, utts, vocab, families)
    assert ma == mb
    assert to_bytes(a) == to_bytes(b)


def test_zero_steps_is_initialization(tiny):
    config, utts, families, vocab = tiny
    ckpt, metrics = train(config.replace(max_steps=0), utts, vocab, families)
    assert metrics == [] and ckpt.step == 0
    fresh = build_model(config, families)
    for name, t in fresh.state_dict().items():
        torch.testing.assert_close(ckpt.model_state()[name], t, rtol=0, atol=0)


def test_checkpoint_bytes_stable(tiny, tmp_path):
    config, utts, families, vocab = tiny
    ckpt, _ = train(config.replace(max_steps=2), utts, vocab, families)
    save_checkpoint(tmp_path / "a.sttts", ckpt)
    again = load_checkpoint(tmp_path / "a.sttts")
    save_checkpoint(tmp_path / "b.sttts", again)
    assert (tmp_path / "a.sttts").read_bytes() == (tmp_path / "b.sttts").read_bytes()
    assert again.config == ckpt.config and again.step == 2
    model, vocab2 = model_from_checkpoint(again)
    assert vocab2 == vocab


def test_corrupt_checkpoint_rejected(tiny):
    config, utts, families, vocab = tiny
    data = to_bytes(train(config.replace(max_steps=0), utts, vocab, families)[0])
    with pytest.raises(ValueError):
        from_bytes(b"XXXXXX" + data[6:])
    with pytest.raises(ValueError):
        from_bytes(data[:-5])


def test_resume_matches_uninterrupted(tiny, tmp_path):
    config, utts, families, vocab = tiny
    full, full_metrics = train(config, utts, vocab, families)
    half, half_metrics = train(config.replace(max_steps=3), utts, vocab, families)
    rest, rest_metrics = train(config, utts, vocab, families, resume=from_bytes(to_bytes(half)))
    assert half_metrics + rest_metrics == full_metrics
    assert to_bytes(rest) == to_bytes(full)


def test_divergence_names_loss_and_step(tiny, monkeypatch):
    config, utts, families, vocab = tiny
    from sttts import acoustic_model

    real = acoustic_model.mel_loss

    def broken(pred, target, mask):
        return real(pred, target, mask) * float("nan")

    monkeypatch.setattr("sttts.model.mel_loss", broken)
    with pytest.raises(TrainingDivergedError, match=r"step 1: mel loss"):
        train(config, utts, vocab, families)


def test_rejects_vocab_mismatch(tiny):
    config, utts, families, _ = tiny
    with pytest.raises(ValueError, match="vocabulary"):
        train(config, utts, Vocabulary.default(config.vocab_size + 1), families)


# -- gradient check ---------------------------------------------------------------------------


def test_grad_check_subset():
    report = grad_check(ModelConfig.tiny(provider_jitter=0.1), max_entries=6)
    assert set(report) >= {"text_encoder", "duration_predictor", "mel_decoder", "flow", "ref_encoder",
                           "tag_encoder", "_overall"}
    assert report["_overall"] <= 1e-3


def test_grad_check_at_initialization():
    report = grad_check(ModelConfig.tiny(provider_jitter=0.1), perturb=0.0, max_entries=4)
    assert report["_overall"] <= 1e-3


def test_grad_check_with_zero_weight():
    config = ModelConfig.tiny(provider_jitter=0.1, w_style=0.0)
    report = grad_check(config, max_entries=4)
    assert report["tag_encoder"] == 0.0


# -- config files ------------------------------------------------------------------------------


def test_config_round_trip(tmp_path):
    config = ModelConfig.tiny(seed=4, dec_dilations=(1, 3))
    path = tmp_path / "c.conf"
    path.write_text(format_config(config))
    assert load_config(path) == config


def test_config_errors():
    assert parse_config_text("# comment\nmax_steps = 7\n").max_steps == 7
    with pytest.raises(ValueError, match="line 2"):
        parse_config_text("seed = 1\nbogus = 3\n")
    with pytest.raises(ValueError):
        parse_config_text("precision = half\n")
    with pytest.raises(ValueError):
        ModelConfig(w_mel=-1)
