import sys
from pathlib import Path

import torch

sys.path.insert(0, str(Path(__file__).parent))
torch.set_num_threads(1)

import pytest  # noqa: E402

from sttts.config import ModelConfig, format_config  # noqa: E402
from sttts.corpus import CorpusSpec, Vocabulary, generate_corpus, save_corpus, split_corpus  # noqa: E402
from sttts.trainer import train  # noqa: E402

TINY_CORPUS = CorpusSpec(seed=2, vocab_size=6, mel_dim=4, n_families=3, n_utterances=16,
                         token_base_duration=2, min_text_len=2, max_text_len=4)


def tiny_config(**overrides):
    return ModelConfig.tiny(provider_jitter=0.1, max_steps=20, warmup_steps=10, log_interval=5,
                            batch_size=4, **overrides)


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """A small corpus on disk plus a briefly trained checkpoint."""
    root = tmp_path_factory.mktemp("tiny_run")
    utts, families = generate_corpus(TINY_CORPUS)
    vocab = Vocabulary.default(TINY_CORPUS.vocab_size)
    train_utts, test_utts = split_corpus(utts, 0.25)
    save_corpus(root / "corpus" / "train", train_utts, families, vocab)
    save_corpus(root / "corpus" / "test", test_utts, families, vocab)
    config = tiny_config()
    (root / "tiny.conf").write_text(format_config(config))
    ckpt, _ = train(config, train_utts, vocab, families, out_dir=root / "run")
    return {"root": root, "checkpoint": root / "run" / "checkpoint.sttts", "ckpt": ckpt,
            "train": train_utts, "test": test_utts, "families": families, "vocab": vocab,
            "config_path": root / "tiny.conf"}
