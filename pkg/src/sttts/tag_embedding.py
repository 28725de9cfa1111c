"""Frozen sentence-embedding providers for style tags.

The model never trains these; it only reads vectors from them. ``SyntheticTagProvider``
places every tag of a synonym family near a shared random centroid, which gives the
language-model property the style tag encoder relies on (similar meaning, nearby vector)
without a pretrained network. ``ExternalTagProvider`` wraps any callable that maps a
string to a fixed-size vector, e.g. a sentence-transformers model.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import DEFAULT_RULES, AugmentRules, TagFamily, canonical_tag


class ProviderUnavailableError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProviderSpec:
    kind: str = "synthetic"
    lm_dim: int = 32
    family_centroid_scale: float = 1.0
    within_family_jitter: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("synthetic", "external"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.lm_dim < 1:
            raise ValueError("lm_dim must be >= 1")
        if self.within_family_jitter < 0:
            raise ValueError("within_family_jitter must be nonnegative")


def _hash_seed(seed: int, text: str) -> list[int]:
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest()
    return [seed] + [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


class SyntheticTagProvider:
    def __init__(self, spec: ProviderSpec, families: Sequence[TagFamily],
                 rules: AugmentRules = DEFAULT_RULES):
        if spec.kind != "synthetic":
            raise ValueError("SyntheticTagProvider requires kind='synthetic'")
        self.spec = spec
        self.rules = rules
        self.families = sorted(families, key=lambda f: f.family_id)
        self.family_ids = np.array([f.family_id for f in self.families], dtype=np.int64)
        rng = np.random.default_rng([spec.seed, 7])
        self.centroids = spec.family_centroid_scale * rng.normal(size=(len(self.families), spec.lm_dim))

        if len(self.families) > 1:
            diff = self.centroids[:, None, :] - self.centroids[None, :, :]
            dist = np.sqrt((diff ** 2).sum(-1))
            gap = dist[np.triu_indices(len(self.families), 1)].min()
            if not gap > 4 * spec.within_family_jitter:
                raise ValueError(
                    f"min centroid gap {gap:.4f} must exceed 4 * jitter = {4 * spec.within_family_jitter:.4f}")

        self._row_of_family = {int(fid): k for k, fid in enumerate(self.family_ids)}
        self._family_of_key: dict[str, int] = {}
        for fam in self.families:
            for form in fam.all_forms:
                self._family_of_key[canonical_tag(form, rules)] = fam.family_id

    @property
    def lm_dim(self) -> int:
        return self.spec.lm_dim

    def family_of(self, tag: str) -> int | None:
        return self._family_of_key.get(canonical_tag(tag, self.rules))

    def centroid(self, family_id: int) -> np.ndarray:
        return self.centroids[self._row_of_family[family_id]].copy()

    def embed_tag(self, tag: str) -> np.ndarray:
        """Centroid of the tag's family plus a unit-direction offset of norm ``within_family_jitter``.

        Tags outside every family land at a hash-seeded point of centroid scale.
        """
        if not tag.strip():
            raise ValueError("tag must be nonempty")
        rng = np.random.default_rng(_hash_seed(self.spec.seed, tag))
        direction = rng.normal(size=self.spec.lm_dim)
        family = self.family_of(tag)
        if family is None:
            return (self.spec.family_centroid_scale * direction).astype(np.float64)
        direction /= np.linalg.norm(direction)
        return self.centroid(family) + self.spec.within_family_jitter * direction

    def embed_tags(self, tags: Sequence[str]) -> np.ndarray:
        return np.stack([self.embed_tag(t) for t in tags]) if tags else np.zeros((0, self.lm_dim))

    def nearest_family(self, v: np.ndarray) -> int:
        d = ((self.centroids - np.asarray(v, dtype=np.float64)[None, :]) ** 2).sum(-1)
        # argmin returns the first minimum; rows are sorted by family id
        return int(self.family_ids[int(np.argmin(d))])


class ExternalTagProvider:
    """Adapter around a frozen pretrained encoder.

    ``encoder`` takes a UTF-8 string and returns ``lm_dim`` floats. Results are cached so
    repeated tags always give the same vector.
    """

    def __init__(self, spec: ProviderSpec, encoder: Callable[[str], Sequence[float]] | None):
        self.spec = spec
        self._encoder = encoder
        self._cache: dict[str, np.ndarray] = {}

    @property
    def lm_dim(self) -> int:
        return self.spec.lm_dim

    def embed_tag(self, tag: str) -> np.ndarray:
        if self._encoder is None:
            raise ProviderUnavailableError("external tag embedding provider is not configured")
        if tag not in self._cache:
            try:
                v = np.asarray(self._encoder(tag), dtype=np.float32).astype(np.float64)
            except Exception as exc:
                raise ProviderUnavailableError(f"external provider failed on {tag!r}: {exc}") from exc
            if v.shape != (self.spec.lm_dim,) or not np.all(np.isfinite(v)):
                raise ProviderUnavailableError(
                    f"external provider returned shape {v.shape}, expected ({self.spec.lm_dim},) finite values")
            self._cache[tag] = v
        return self._cache[tag].copy()

    def embed_tags(self, tags: Sequence[str]) -> np.ndarray:
        return np.stack([self.embed_tag(t) for t in tags]) if tags else np.zeros((0, self.lm_dim))

    def family_of(self, tag: str) -> int | None:
        return None


def sentence_transformer_encoder(model_name: str) -> Callable[[str], np.ndarray]:
    """Build an encoder from a sentence-transformers checkpoint (loaded lazily, frozen)."""
    try:
        from sentence_transformers import SentenceTransformer
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise ProviderUnavailableError("sentence-transformers is not installed") from exc
    try:
        model = SentenceTransformer(model_name)
    except Exception as exc:  # pragma: no cover - network/cache dependent
        raise ProviderUnavailableError(f"cannot load {model_name}: {exc}") from exc
    model.eval()
    return lambda text: model.encode(text, convert_to_numpy=True)


def make_provider(spec: ProviderSpec, families: Sequence[TagFamily] | None = None,
                  encoder: Callable[[str], Sequence[float]] | None = None):
    if spec.kind == "synthetic":
        return SyntheticTagProvider(spec, families or [])
    return ExternalTagProvider(spec, encoder)
