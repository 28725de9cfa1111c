"""Non-autoregressive text-to-mel synthesis with style control by natural-language tags or reference mels."""

from .config import ModelConfig
from .corpus import CorpusSpec, TagFamily, Utterance, Vocabulary, generate_corpus, tokenize
from .inference import SynthesisRequest, Synthesizer
from .trainer import build_model, grad_check, noam_lr, train

__version__ = "0.1.0"

__all__ = [
    "CorpusSpec", "ModelConfig", "SynthesisRequest", "Synthesizer", "TagFamily", "Utterance",
    "Vocabulary", "build_model", "generate_corpus", "grad_check", "noam_lr", "tokenize", "train",
]
