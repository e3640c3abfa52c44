"""Deterministic hash embedding with a trainable linear projection, plus
ingestion of precomputed embedding caches.

Each token is bucketed by 64-bit FNV-1a over its UTF-8 bytes; a text's raw
feature vector is the per-bucket count averaged over tokens, and the
embedding is an affine projection of that vector. The bucket of a token
never changes across runs or platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Instance, PartSequence, partition_ngrams, tokenize
from .errors import ConfigError, CorpusError

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return h


def token_bucket(token: str, hash_dim: int) -> int:
    return fnv1a64(token) % hash_dim


@dataclass
class EncoderParams:
    hash_dim: int
    embed_dim: int
    projection: np.ndarray  # (embed_dim, hash_dim), trainable
    projection_bias: np.ndarray  # (embed_dim,), trainable

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.hash_dim < self.embed_dim:
            raise ConfigError(
                f"hash_dim ({self.hash_dim}) must be >= embed_dim ({self.embed_dim})"
            )
        if self.projection.shape != (self.embed_dim, self.hash_dim):
            raise ConfigError("projection shape does not match (embed_dim, hash_dim)")
        if not np.all(np.isfinite(self.projection)):
            raise ConfigError("projection must be finite-valued")


def bucket_counts(tokens: list[str], hash_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Sparse averaged bucket counts: (sorted bucket ids, values summing to 1).

    Empty token lists yield empty arrays.
    """
    if not tokens:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    counts: dict[int, int] = {}
    for tok in tokens:
        b = token_bucket(tok, hash_dim)
        counts[b] = counts.get(b, 0) + 1
    ids = np.array(sorted(counts), dtype=np.int64)
    vals = np.array([counts[b] for b in ids], dtype=np.float64) / len(tokens)
    return ids, vals


def embed_text(params: EncoderParams, tokens: list[str]) -> np.ndarray:
    """Averaged bag-of-buckets vector projected to embed_dim dims.

    An empty token list maps to the zero vector (no bias applied).
    """
    ids, vals = bucket_counts(tokens, params.hash_dim)
    if ids.size == 0:
        return np.zeros(params.embed_dim)
    return params.projection[:, ids] @ vals + params.projection_bias


def embed_parts(params: EncoderParams, parts: PartSequence) -> np.ndarray:
    """T x d matrix whose row t embeds part t."""
    out = np.empty((parts.T, params.embed_dim))
    for t, part in enumerate(parts.parts):
        out[t] = embed_text(params, part.text.split(" ") if part.text else [])
    return out


@dataclass(frozen=True)
class InstanceFeatures:
    """Per-part sparse bucket features in CSR layout, ready for the kernels.

    Part t's features live at ``indices[indptr[t]:indptr[t+1]]`` with the
    matching ``values`` slice; values within a part sum to 1 unless the part
    is empty.
    """

    indptr: np.ndarray  # int64, (n_parts + 1,)
    indices: np.ndarray  # int64, (nnz,)
    values: np.ndarray  # float64, (nnz,)
    n_parts: int
    label: int


def featurize(instance: Instance, n_gram: int, hash_dim: int) -> InstanceFeatures:
    parts = partition_ngrams(tokenize(instance.text), n_gram)
    return featurize_parts(parts, hash_dim, instance.label)


def featurize_parts(parts: PartSequence, hash_dim: int, label: int = 0) -> InstanceFeatures:
    indptr = np.zeros(parts.T + 1, dtype=np.int64)
    all_ids, all_vals = [], []
    for t, part in enumerate(parts.parts):
        toks = part.text.split(" ") if part.text else []
        ids, vals = bucket_counts(toks, hash_dim)
        all_ids.append(ids)
        all_vals.append(vals)
        indptr[t + 1] = indptr[t] + ids.size
    indices = np.concatenate(all_ids) if all_ids else np.empty(0, dtype=np.int64)
    values = np.concatenate(all_vals) if all_vals else np.empty(0, dtype=np.float64)
    return InstanceFeatures(indptr, indices, values, parts.T, label)


def featurize_corpus(corpus: list[Instance], n_gram: int, hash_dim: int) -> list[InstanceFeatures]:
    return [featurize(inst, n_gram, hash_dim) for inst in corpus]


def embed_features(params: EncoderParams, feats: InstanceFeatures) -> np.ndarray:
    """T x d part embeddings from precomputed sparse features."""
    T = feats.n_parts
    out = np.zeros((T, params.embed_dim))
    for t in range(T):
        lo, hi = feats.indptr[t], feats.indptr[t + 1]
        if hi > lo:
            out[t] = (
                params.projection[:, feats.indices[lo:hi]] @ feats.values[lo:hi]
                + params.projection_bias
            )
    return out


@dataclass
class EmbeddingCache:
    """Exact-match lookup table from sentence text to a fixed vector."""

    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def lookup(self, text: str) -> np.ndarray | None:
        return self.entries.get(text)


def load_cache(path, expected_dim: int | None = None) -> EmbeddingCache:
    """Load a JSONL cache: first line {"dim": d}, then {"text", "vec"} lines."""
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}: line 1: malformed JSON header") from exc
        if not isinstance(header, dict) or "dim" not in header:
            raise CorpusError(f"{path}: line 1: expected a {{\"dim\": d}} header")
        dim = header["dim"]
        if not isinstance(dim, int) or dim < 1:
            raise CorpusError(f"{path}: line 1: 'dim' must be a positive integer")
        if expected_dim is not None and dim != expected_dim:
            raise ConfigError(
                f"embedding cache dimension {dim} does not match model dimension {expected_dim}"
            )
        cache = EmbeddingCache(dim)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {lineno}: malformed JSON") from exc
            if "text" not in obj or "vec" not in obj:
                raise CorpusError(f"{path}: line {lineno}: missing field 'text' or 'vec'")
            vec = np.asarray(obj["vec"], dtype=np.float64)
            if vec.shape != (dim,):
                raise CorpusError(
                    f"{path}: line {lineno}: vector length {vec.size} != dim {dim}"
                )
            cache.entries[obj["text"]] = vec
    return cache


def encode_sentence(
    params: EncoderParams, text: str, cache: EmbeddingCache | None = None
) -> np.ndarray:
    """Whole-sentence embedding; a configured cache takes precedence."""
    if cache is not None:
        hit = cache.lookup(text)
        if hit is not None:
            return np.asarray(hit, dtype=np.float64)
    return embed_text(params, tokenize(text))
