"""Command-line entry point: ``sttts <command> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ModelConfig, load_config

log = logging.getLogger("sttts")


class CliError(Exception):
    pass


def _model_config(args, **extra) -> ModelConfig:
    config = load_config(args.config) if getattr(args, "config", None) else ModelConfig()
    overrides = dict(extra)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "max_steps", None) is not None:
        overrides["max_steps"] = args.max_steps
    if getattr(args, "precision", None) is not None:
        overrides["precision"] = args.precision
    return config.replace(**overrides)


def _load_corpus(corpus_dir, vocab=None):
    from .corpus import load_corpus_dir

    if corpus_dir is None:
        raise CliError("--corpus-dir is required")
    if not (Path(corpus_dir) / "metadata.tsv").exists():
        raise CliError(f"{corpus_dir}: no metadata.tsv")
    return load_corpus_dir(corpus_dir, vocab)


def _synth(args):
    from .inference import Synthesizer

    if not args.checkpoint:
        raise CliError("--checkpoint is required")
    if not Path(args.checkpoint).exists():
        raise CliError(f"checkpoint not found: {args.checkpoint}")
    return Synthesizer(args.checkpoint)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_corpus(args) -> None:
    from .corpus import CorpusSpec, Vocabulary, generate_corpus, save_corpus, split_corpus

    spec = CorpusSpec(seed=args.seed if args.seed is not None else 1, vocab_size=args.vocab_size,
                      mel_dim=args.mel_dim, n_families=args.n_families, n_utterances=args.n_utterances,
                      token_base_duration=args.base_duration, noise_sigma=args.noise_sigma)
    utts, families = generate_corpus(spec)
    vocab = Vocabulary.default(spec.vocab_size)
    train, test = split_corpus(utts, args.test_fraction)
    out = Path(args.out)
    save_corpus(out / "train", train, families, vocab)
    if test:
        save_corpus(out / "test", test, families, vocab)
    print(f"wrote {len(train)} train / {len(test)} test utterances to {out}")


def cmd_train(args) -> None:
    from .trainer import train

    utts, families, vocab = _load_corpus(args.corpus_dir)
    config = _model_config(args, vocab_size=len(vocab), mel_dim=int(utts[0].mel.shape[1]))
    resume = None
    if args.resume:
        from .checkpoint import load_checkpoint
        resume = load_checkpoint(args.resume)
    out = Path(args.out or "run")
    ckpt, metrics = train(config, utts, vocab, families, resume=resume, out_dir=out)
    last = metrics[-1]["total"] if metrics else float("nan")
    print(f"trained to step {ckpt.step}; final total loss {last:.4f}; checkpoint {out / 'checkpoint.sttts'}")


def cmd_align(args) -> None:
    synth = _synth(args)
    utts, _, _ = _load_corpus(args.corpus_dir, synth.vocab)
    lines = []
    for u in utts:
        if u.n_frames < u.n_tokens:
            raise CliError(f"utterance {u.id}: {u.n_frames} frames < {u.n_tokens} tokens")
        durations = synth.model.align(u.tokens, u.mel)
        lines.append(f"{u.id}\t{','.join(str(int(d)) for d in durations)}\n")
    _write_text(args.out, "".join(lines))


def cmd_synthesize(args) -> None:
    from .corpus import read_mel, write_mel

    if args.requests:
        from .inference import batch_synthesize, load_requests
        if args.server:
            raise CliError("--requests is only supported locally")
        manifest = batch_synthesize(load_requests(args.requests), _synth(args), args.out or "synth")
        n_err = sum(r["status"] != "ok" for r in manifest)
        print(f"{len(manifest) - n_err} synthesized, {n_err} failed")
        return
    if not args.text:
        raise CliError("--text is required")
    if (args.tag is None) == (args.reference is None):
        raise CliError("give exactly one of --tag or --reference")
    if not args.out:
        raise CliError("--out is required")

    if args.server:
        from .client import ServiceClient
        ref = read_mel(args.reference) if args.reference else None
        mel, durations = ServiceClient(args.server).synthesize(args.text, tag=args.tag, reference_mel=ref)
    else:
        from .inference import SynthesisRequest
        req = SynthesisRequest(text=args.text, tag=args.tag, reference_path=args.reference)
        result = _synth(args).synthesize(req)
        mel, durations = result.mel, result.durations
    write_mel(args.out, mel)
    print(f"{mel.shape[0]} frames ({','.join(str(int(d)) for d in durations)}) -> {args.out}")


def cmd_embed(args) -> None:
    from .corpus import read_mel
    from .evaluation import write_embeddings

    synth = _synth(args)
    rows = []
    if args.tags_file:
        tags = [t.strip() for t in Path(args.tags_file).read_text(encoding="utf-8").splitlines() if t.strip()]
        rows += [(t, "tag", v) for t, v in zip(tags, synth.embed_tags(tags))]
    if args.corpus_dir:
        utts, _, _ = _load_corpus(args.corpus_dir, synth.vocab)
        rows += [(u.style_tag, "ref", synth.embed_reference(u.mel)) for u in utts]
    if args.mel_dir:
        for path in sorted(Path(args.mel_dir).glob("*.mel")):
            rows.append((path.stem, "ref", synth.embed_reference(read_mel(path))))
    if not (args.tags_file or args.corpus_dir or args.mel_dir):
        raise CliError("give --tags-file, --corpus-dir or --mel-dir")
    write_embeddings(args.out or "embeddings.csv", rows)
    print(f"wrote {len(rows)} embeddings")


def cmd_project(args) -> None:
    from .evaluation import pca_project, read_embeddings, write_projection

    rows = read_embeddings(args.embeddings)
    if len(rows) < 3:
        raise CliError(f"need at least 3 embeddings to project, got {len(rows)}")
    coords = pca_project(np.stack([v for _, _, v in rows]))
    write_projection(args.out or "projection.csv", [r[0] for r in rows], [r[1] for r in rows], coords)


def cmd_eval(args) -> None:
    from .evaluation import evaluate

    synth = _synth(args)
    utts, families, _ = _load_corpus(args.corpus_dir, synth.vocab)
    if families is None and synth.checkpoint.meta.get("families"):
        from .corpus import TagFamily
        families = [TagFamily(**f) for f in synth.checkpoint.meta["families"]]
    report = evaluate(synth, utts, families)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")


def cmd_grad_check(args) -> None:
    from .trainer import grad_check

    config = load_config(args.config) if args.config else ModelConfig.tiny(provider_jitter=0.1)
    report = grad_check(config, max_entries=args.max_entries)
    for group, err in sorted(report.items()):
        print(f"{group}\t{err:.3e}")
    if report["_overall"] > 1e-3:
        raise CliError(f"gradient check failed: max relative error {report['_overall']:.3e}")


def cmd_serve(args) -> None:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(_synth(args)), host=args.host, port=args.port)


def _write_text(path, text: str) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sttts", description="Style-tag controlled non-autoregressive TTS")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        return p

    p = add("gen-corpus", cmd_gen_corpus, "write a synthetic style-tagged corpus")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--n-utterances", type=int, default=500)
    p.add_argument("--n-families", type=int, default=20)
    p.add_argument("--vocab-size", type=int, default=24)
    p.add_argument("--mel-dim", type=int, default=20)
    p.add_argument("--base-duration", type=int, default=4)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--test-fraction", type=float, default=0.1)

    p = add("train", cmd_train, "train all components jointly")
    p.add_argument("--corpus-dir", required=True)
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--precision", choices=["single", "double"])
    p.add_argument("--resume", help="checkpoint to continue from")

    p = add("align", cmd_align, "aligner durations for every utterance of a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus-dir", required=True)
    p.add_argument("--out")

    p = add("synthesize", cmd_synthesize, "text + style tag or reference mel -> MEL1 file")
    p.add_argument("--checkpoint")
    p.add_argument("--text")
    p.add_argument("--tag")
    p.add_argument("--reference", help="reference MEL1 file")
    p.add_argument("--requests", help="batch request TSV: id<TAB>text<TAB>tag|@mel_path")
    p.add_argument("--out")
    p.add_argument("--server", help="base URL of a running 'sttts serve'")

    p = add("embed", cmd_embed, "style embeddings of tags and/or reference mels as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tags-file")
    p.add_argument("--corpus-dir")
    p.add_argument("--mel-dir")
    p.add_argument("--out")

    p = add("project", cmd_project, "2-D PCA projection of an embeddings CSV")
    p.add_argument("embeddings")
    p.add_argument("--out")

    p = add("eval", cmd_eval, "objective evaluation report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus-dir", required=True)
    p.add_argument("--out")

    p = add("grad-check", cmd_grad_check, "finite-difference gradient check on a tiny model")
    p.add_argument("--config")
    p.add_argument("--max-entries", type=int)

    p = add("serve", cmd_serve, "serve a checkpoint over HTTP")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        print(f"sttts {args.command}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"sttts {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
