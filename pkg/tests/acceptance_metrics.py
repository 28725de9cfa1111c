"""Measurements behind the trained-model acceptance checks (shared with ad-hoc analysis)."""

import itertools

import numpy as np
import torch

from sttts.acoustic_model import durations_for_inference
from sttts.evaluation import evaluate, family_separation, mel_distance, reconstruct, tag_retrieval_accuracy
from sttts.inference import SynthesisRequest


def mean_reconstruction_mae(synth, utts):
    return float(np.mean([np.abs(reconstruct(synth, u) - u.mel).mean() for u in utts]))


@torch.no_grad()
def predicted_total(synth, tokens, tag):
    model = synth.model
    h, _ = model.decoder_inputs(tokens)
    return int(durations_for_inference(model.predict_log_durations(h, model.encode_tag(tag)).numpy()).sum())


def rate_ordering(synth, families, texts, min_ratio=1.5):
    """Pairs of families whose rates differ by >= min_ratio, and how many of them order correctly on every text."""
    pairs = [(a, b) for a, b in itertools.permutations(families, 2) if a.rate / b.rate >= min_ratio]
    consistent = 0
    for slow, fast in pairs:
        if all(predicted_total(synth, t, slow.surface_forms[0]) > predicted_total(synth, t, fast.surface_forms[0])
               for t in texts):
            consistent += 1
    return len(pairs), consistent


def separated_fraction(emb, labels):
    sep = family_separation(emb, labels)
    return sum(intra < inter for intra, inter in sep.values()) / len(sep), len(sep)


def style_geometry(synth, utts, families):
    ref = np.stack([synth.embed_reference(u.mel) for u in utts])
    ref_labels = [u.family_id for u in utts]
    tags = [(f.family_id, t) for f in families for t in f.all_forms]
    tag_emb = synth.embed_tags([t for _, t in tags])
    tag_labels = [fam for fam, _ in tags]

    seen = [(f.family_id, f.surface_forms[0]) for f in families]
    seen_emb = synth.embed_tags([t for _, t in seen])
    sq = ((seen_emb[:, None, :] - ref[None, :, :]) ** 2).mean(-1)
    same = np.array([[fam == lab for lab in ref_labels] for fam, _ in seen])
    return {
        "ref_separated": separated_fraction(ref, ref_labels),
        "tag_separated": separated_fraction(tag_emb, tag_labels),
        "mse_same": float(sq[same].mean()),
        "mse_other": float(sq[~same].mean()),
    }


def unseen_tag_outputs(synth, families, texts):
    """Mean output distance: unseen vs seen tag of the same family, and seen tags across families."""
    outs = {}
    for f in families:
        for tag in (f.surface_forms[0], f.held_out_forms[0]):
            outs[tag] = [synth.synthesize(SynthesisRequest(text=t, tag=tag)).mel for t in texts]
    same = [mel_distance(a, b) for f in families
            for a, b in zip(outs[f.surface_forms[0]], outs[f.held_out_forms[0]])]
    cross = [mel_distance(a, b) for f, g in itertools.combinations(families, 2)
             for a, b in zip(outs[f.surface_forms[0]], outs[g.surface_forms[0]])]
    return float(np.mean(same)), float(np.mean(cross))


def trained_report(synth, untrained, test, all_utts, families, vocab):
    report = evaluate(synth, test, families)
    texts = [u.text for u in test[:5]]
    n_pairs, consistent = rate_ordering(synth, families, [u.tokens for u in test[:5]])
    acc, n_held = tag_retrieval_accuracy(synth, families)
    unseen, cross = unseen_tag_outputs(synth, families, texts)
    return {
        "mel_mae": mean_reconstruction_mae(synth, test),
        "untrained_mel_mae": mean_reconstruction_mae(untrained, test),
        "aligner_mae": report.aligner_duration_mae,
        "predictor_mae": report.duration_mae,
        "rate_pairs": n_pairs,
        "rate_consistent": consistent,
        "retrieval": acc,
        "n_held_out": n_held,
        "unseen_vs_seen": unseen,
        "cross_family": cross,
        **style_geometry(synth, all_utts, families),
    }
