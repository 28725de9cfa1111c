"""Style-tagged corpora: synthetic generation, on-disk format, tag augmentation."""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MEL_MAGIC = b"MEL1"
UNK = "<unk>"
UNK_ID = 0


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid corpus specifications."""


# Synonym families. The last surface form of each family is held out from
# training and used to probe generalization to unseen tags.
TAG_FAMILIES: list[list[str]] = [
    ["whispering", "in a whisper", "hushed voice", "softly murmuring"],
    ["loud voice", "shouting", "yelling loudly", "booming voice"],
    ["with affection", "affectionately", "tenderly", "warm hearted"],
    ["heartless", "cold hearted", "coldly", "unfeeling tone"],
    ["seem angry", "angrily", "furious", "enraged voice"],
    ["pleased", "happily", "joyful voice", "cheerfully"],
    ["bitter", "bitterly", "resentful", "sour mood"],
    ["in a hurry", "hurriedly", "rushed", "urgent voice"],
    ["sleepy", "drowsy", "half asleep", "yawning voice"],
    ["drunken", "tipsy", "slurred speech", "intoxicated"],
    ["sad voice", "sorrowfully", "tearful", "gloomy tone"],
    ["calm voice", "calmly", "serene", "peaceful tone"],
    ["scared", "fearfully", "trembling voice", "terrified"],
    ["surprised", "astonished", "amazed voice", "shocked"],
    ["sarcastic", "mocking tone", "sneering", "ironically"],
    ["proud voice", "boastfully", "arrogant", "smug tone"],
    ["shy voice", "timidly", "bashful", "hesitantly"],
    ["bored voice", "listlessly", "dull tone", "apathetic"],
    ["excited voice", "eagerly", "thrilled", "enthusiastic"],
    ["reading a book", "narrating", "plain reading", "storytelling voice"],
    ["serious tone", "solemnly", "grave voice", "earnestly"],
    ["playful voice", "teasingly", "mischievous", "jokingly"],
    ["gentle voice", "kindly", "soothing tone", "softly"],
    ["annoyed voice", "irritably", "grumpy", "exasperated"],
]

ALPHABET = "abcdefghijklmnopqrstuvwxyz"


@dataclass
class Utterance:
    id: str
    text: str
    tokens: np.ndarray
    style_tag: str
    mel: np.ndarray
    true_durations: np.ndarray | None = None
    family_id: int | None = None

    @property
    def n_tokens(self) -> int:
        return int(len(self.tokens))

    @property
    def n_frames(self) -> int:
        return int(self.mel.shape[0])


@dataclass
class TagFamily:
    family_id: int
    surface_forms: list[str]
    rate: float
    gain: float
    tilt: float
    held_out_forms: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.surface_forms:
            raise CorpusError(f"family {self.family_id} has no surface forms")
        if not 0.5 <= self.rate <= 2.0:
            raise CorpusError(f"family {self.family_id}: rate {self.rate} outside [0.5, 2.0]")
        if not 0.5 <= self.gain <= 2.0:
            raise CorpusError(f"family {self.family_id}: gain {self.gain} outside [0.5, 2.0]")

    @property
    def all_forms(self) -> list[str]:
        return list(self.surface_forms) + list(self.held_out_forms)


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 1
    vocab_size: int = 24
    mel_dim: int = 20
    n_families: int = 20
    n_utterances: int = 500
    token_base_duration: int = 4
    noise_sigma: float = 0.01
    duration_spread: int = 1
    min_text_len: int = 4
    max_text_len: int = 10
    rate_range: tuple[float, float] = (0.6, 1.8)
    gain_range: tuple[float, float] = (0.7, 1.4)
    tilt_range: tuple[float, float] = (-0.8, 0.8)

    def __post_init__(self):
        counts = dict(
            vocab_size=self.vocab_size, mel_dim=self.mel_dim, n_families=self.n_families,
            n_utterances=self.n_utterances, token_base_duration=self.token_base_duration,
            min_text_len=self.min_text_len,
        )
        for name, value in counts.items():
            if value < 1:
                raise CorpusError(f"{name} must be >= 1, got {value}")
        if self.vocab_size < 3:
            raise CorpusError("vocab_size must leave at least two non-UNK symbols")
        if self.max_text_len < self.min_text_len:
            raise CorpusError("max_text_len < min_text_len")
        if self.noise_sigma < 0:
            raise CorpusError("noise_sigma must be nonnegative")
        if self.duration_spread < 0:
            raise CorpusError("duration_spread must be nonnegative")
        lo, hi = self.rate_range
        if not 0.5 <= lo <= hi <= 2.0:
            raise CorpusError("rate_range must lie within [0.5, 2.0]")
        lo, hi = self.gain_range
        if not 0.5 <= lo <= hi <= 2.0:
            raise CorpusError("gain_range must lie within [0.5, 2.0]")


# ---------------------------------------------------------------------------
# Vocabulary and tokenization


class Vocabulary:
    """Character-level symbol table with id 0 reserved for unknown characters."""

    def __init__(self, symbols: Sequence[str]):
        symbols = list(symbols)
        if not symbols or symbols[0] != UNK:
            symbols = [UNK] + [s for s in symbols if s != UNK]
        if len(set(symbols)) != len(symbols):
            raise CorpusError("duplicate symbols in vocabulary")
        self.symbols = symbols
        self.index = {s: i for i, s in enumerate(symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.symbols == other.symbols

    @classmethod
    def default(cls, vocab_size: int) -> "Vocabulary":
        chars = [chr(ord("a") + i) if i < 26 else chr(0x3131 + i - 26) for i in range(vocab_size - 1)]
        return cls([UNK] + chars)

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        return cls([UNK] + sorted({c for t in texts for c in t}))

    def decode(self, tokens: Iterable[int]) -> str:
        return "".join(self.symbols[int(t)] if int(t) != UNK_ID else "?" for t in tokens)


def tokenize(text: str, vocab: Vocabulary | dict[str, int]) -> np.ndarray:
    """Map each character of ``text`` to its id; unknown characters map to UNK."""
    if not text:
        raise CorpusError("cannot tokenize empty text")
    index = vocab.index if isinstance(vocab, Vocabulary) else vocab
    return np.array([index.get(c, UNK_ID) for c in text], dtype=np.int64)


# ---------------------------------------------------------------------------
# Tag augmentation


@dataclass(frozen=True)
class AugmentRules:
    swap: bool = True
    templates: tuple[str, ...] = ("in a {} way", "with a {} tone")


DEFAULT_RULES = AugmentRules()


def _stable_seed(*parts) -> int:
    h = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def augment_variants(tag: str, rules: AugmentRules = DEFAULT_RULES) -> list[str]:
    """Enumerate every variant ``augment_tag`` can return, identity first."""
    if not tag.strip():
        raise CorpusError("tag must be nonempty")
    variants = [tag]
    words = tag.split()
    if rules.swap and len(words) == 2:
        variants.append(f"{words[1]} {words[0]}")
    variants.extend(t.format(tag) for t in rules.templates)
    return variants


def augment_tag(tag: str, rules: AugmentRules = DEFAULT_RULES, seed: int = 0) -> str:
    variants = augment_variants(tag, rules)
    rng = np.random.default_rng(_stable_seed("augment", tag, seed))
    return variants[int(rng.integers(len(variants)))]


def canonical_tag(tag: str, rules: AugmentRules = DEFAULT_RULES) -> str:
    """Undo template wrapping and word order so all augmented variants share one key."""
    tag = " ".join(tag.lower().split())
    patterns = [re.compile("^" + re.escape(t).replace(r"\{\}", "(.+)") + "$") for t in rules.templates]
    changed = True
    while changed:
        changed = False
        for p in patterns:
            m = p.match(tag)
            if m:
                tag, changed = m.group(1), True
    return " ".join(sorted(tag.split()))


# ---------------------------------------------------------------------------
# Synthetic corpus


def _family_forms(family_id: int) -> list[str]:
    if family_id < len(TAG_FAMILIES):
        return list(TAG_FAMILIES[family_id])
    return [f"style {family_id} {k}" for k in ("alpha", "beta", "gamma")]


def token_patterns(spec: CorpusSpec) -> np.ndarray:
    """Per-token mel patterns, shape (V, D)."""
    rng = np.random.default_rng([spec.seed, 101])
    return rng.normal(0.0, 1.0, size=(spec.vocab_size, spec.mel_dim))


def token_base_durations(spec: CorpusSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 102])
    offsets = rng.integers(-spec.duration_spread, spec.duration_spread + 1, size=spec.vocab_size)
    return np.maximum(1, spec.token_base_duration + offsets)


def make_families(spec: CorpusSpec) -> list[TagFamily]:
    rng = np.random.default_rng([spec.seed, 103])
    families = []
    for f in range(spec.n_families):
        forms = _family_forms(f)
        families.append(TagFamily(
            family_id=f,
            surface_forms=forms[:-1],
            held_out_forms=forms[-1:],
            rate=float(rng.uniform(*spec.rate_range)),
            gain=float(rng.uniform(*spec.gain_range)),
            tilt=float(rng.uniform(*spec.tilt_range)),
        ))
    return families


def synthetic_durations(tokens: np.ndarray, family: TagFamily, base: np.ndarray) -> np.ndarray:
    # np.rint rounds half to even, matching Python's round()
    return np.maximum(1, np.rint(base[tokens] * family.rate)).astype(np.int64)


def render_mel(tokens: np.ndarray, family: TagFamily, patterns: np.ndarray, base: np.ndarray,
               noise_sigma: float = 0.0, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Build a mel from tokens and style params. Returns (mel, durations)."""
    durations = synthetic_durations(tokens, family, base)
    frames = np.repeat(tokens, durations)
    ramp = np.linspace(-1.0, 1.0, patterns.shape[1])
    mel = family.gain * patterns[frames] + family.tilt * ramp[None, :]
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("rng required when noise_sigma > 0")
        mel = mel + rng.normal(0.0, noise_sigma, size=mel.shape)
    return mel.astype(np.float32), durations


def generate_corpus(spec: CorpusSpec) -> tuple[list[Utterance], list[TagFamily]]:
    vocab = Vocabulary.default(spec.vocab_size)
    patterns = token_patterns(spec)
    base = token_base_durations(spec)
    families = make_families(spec)
    rng = np.random.default_rng([spec.seed, 104])

    utterances = []
    for u in range(spec.n_utterances):
        n = int(rng.integers(spec.min_text_len, spec.max_text_len + 1))
        # no immediate repeats: adjacent identical tokens have no observable boundary
        ids = [int(rng.integers(1, spec.vocab_size))]
        while len(ids) < n:
            step = int(rng.integers(1, spec.vocab_size - 1))
            ids.append((ids[-1] - 1 + step) % (spec.vocab_size - 1) + 1)
        tokens = np.array(ids, dtype=np.int64)
        family = families[int(rng.integers(len(families)))]
        tag = family.surface_forms[int(rng.integers(len(family.surface_forms)))]
        mel, durations = render_mel(tokens, family, patterns, base, spec.noise_sigma, rng)
        utterances.append(Utterance(
            id=f"utt{u:05d}",
            text=vocab.decode(tokens),
            tokens=tokens,
            style_tag=tag,
            mel=mel,
            true_durations=durations,
            family_id=family.family_id,
        ))
    return utterances, families


def split_corpus(utterances: Sequence[Utterance], test_fraction: float = 0.1) -> tuple[list[Utterance], list[Utterance]]:
    n_test = max(1, int(round(len(utterances) * test_fraction))) if len(utterances) > 1 else 0
    cut = len(utterances) - n_test
    return list(utterances[:cut]), list(utterances[cut:])


# ---------------------------------------------------------------------------
# File formats


def write_mel(path: str | Path, mel: np.ndarray) -> None:
    mel = np.ascontiguousarray(mel, dtype="<f4")
    if mel.ndim != 2:
        raise CorpusError(f"mel must be 2-D, got shape {mel.shape}")
    with open(path, "wb") as f:
        f.write(MEL_MAGIC + struct.pack("<II", *mel.shape) + mel.tobytes())


def read_mel(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MEL_MAGIC:
        raise CorpusError(f"{path}: not a MEL1 file")
    t, d = struct.unpack("<II", data[4:12])
    payload = data[12:]
    if len(payload) != 4 * t * d:
        raise CorpusError(f"{path}: header says {t}x{d} but payload holds {len(payload) // 4} floats")
    return np.frombuffer(payload, dtype="<f4").reshape(t, d).astype(np.float32)


def parse_metadata(path: str | Path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3 or not all(fields):
                raise CorpusError(f"{path}:{lineno}: expected id<TAB>text<TAB>style_tag, got {len(fields)} field(s)")
            rows.append((fields[0], fields[1], fields[2]))
    return rows


def load_corpus(metadata_path: str | Path, mel_dir: str | Path,
                vocab: Vocabulary | None = None) -> list[Utterance]:
    rows = parse_metadata(metadata_path)
    if vocab is None:
        vocab = Vocabulary.from_texts(text for _, text, _ in rows)
    mel_dir = Path(mel_dir)
    utterances = []
    for uid, text, tag in rows:
        mel_path = mel_dir / f"{uid}.mel"
        if not mel_path.exists():
            raise CorpusError(f"missing mel file {mel_path}")
        utterances.append(Utterance(id=uid, text=text, tokens=tokenize(text, vocab),
                                    style_tag=tag, mel=read_mel(mel_path)))
    return utterances


def save_corpus(out_dir: str | Path, utterances: Sequence[Utterance],
                families: Sequence[TagFamily] | None = None,
                vocab: Vocabulary | None = None) -> None:
    """Write metadata.tsv, mels/*.mel and, when known, durations, families and vocab."""
    out = Path(out_dir)
    (out / "mels").mkdir(parents=True, exist_ok=True)
    with open(out / "metadata.tsv", "w", encoding="utf-8", newline="\n") as f:
        for u in utterances:
            f.write(f"{u.id}\t{u.text}\t{u.style_tag}\n")
    for u in utterances:
        write_mel(out / "mels" / f"{u.id}.mel", u.mel)
    if all(u.true_durations is not None for u in utterances):
        with open(out / "durations.tsv", "w", encoding="utf-8", newline="\n") as f:
            for u in utterances:
                f.write(f"{u.id}\t{','.join(str(int(d)) for d in u.true_durations)}\t{u.family_id}\n")
    if families is not None:
        (out / "families.json").write_text(
            json.dumps([asdict(fam) for fam in families], indent=1, sort_keys=True) + "\n", encoding="utf-8")
    if vocab is not None:
        (out / "vocab.txt").write_text("\n".join(vocab.symbols) + "\n", encoding="utf-8")


def load_families(path: str | Path) -> list[TagFamily]:
    return [TagFamily(**d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]


def load_corpus_dir(corpus_dir: str | Path, vocab: Vocabulary | None = None
                    ) -> tuple[list[Utterance], list[TagFamily] | None, Vocabulary]:
    """Load a directory written by ``save_corpus``, attaching sidecar data when present."""
    root = Path(corpus_dir)
    if vocab is None and (root / "vocab.txt").exists():
        vocab = Vocabulary((root / "vocab.txt").read_text(encoding="utf-8").splitlines())
    if vocab is None:
        vocab = Vocabulary.from_texts(text for _, text, _ in parse_metadata(root / "metadata.tsv"))
    utterances = load_corpus(root / "metadata.tsv", root / "mels", vocab)
    if (root / "durations.tsv").exists():
        by_id = {u.id: u for u in utterances}
        for line in (root / "durations.tsv").read_text(encoding="utf-8").splitlines():
            uid, durs, fam = line.split("\t")
            if uid in by_id:
                by_id[uid].true_durations = np.array([int(x) for x in durs.split(",")], dtype=np.int64)
                by_id[uid].family_id = int(fam)
    families = load_families(root / "families.json") if (root / "families.json").exists() else None
    return utterances, families, vocab
