"""Prototype alignment: k-means candidate pools over training-sentence
embeddings and the sigmoid-gated movement rule that pulls each prototype
toward the mean of its most similar candidates.

The alignment step is an external overwrite of prototype rows, not a
gradient step; the trainer resets optimizer moments for prototypes after
each round.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import AlignmentConfig
from .encoder import EmbeddingCache, EncoderParams, encode_sentence

KMEANS_MAX_ITERS = 50
PER_CLUSTER_TOP = 50


def kmeans(
    vectors: np.ndarray, k: int, max_iters: int = KMEANS_MAX_ITERS, seed=0
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with greedy D^2-weighted seeding.

    Deterministic for a fixed seed (an integer or a Generator). Empty
    clusters are re-seeded to the point farthest from its assigned center.
    Returns (centers (k, d), assignments (n,)).
    """
    n = vectors.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"k ({k}) exceeds the number of vectors ({n})")
    rng = np.random.default_rng(seed)

    centers = np.empty((k, vectors.shape[1]))
    first = int(rng.integers(n))
    centers[0] = vectors[first]
    d2 = np.sum((vectors - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(np.sum(d2))
        if total <= 0.0:
            centers[j:] = vectors[first]
            break
        probs = d2 / total
        pick = int(rng.choice(n, p=probs))
        centers[j] = vectors[pick]
        d2 = np.minimum(d2, np.sum((vectors - centers[j]) ** 2, axis=1))

    assignments = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        dist2 = (
            np.sum(vectors**2, axis=1)[:, None]
            - 2.0 * vectors @ centers.T
            + np.sum(centers**2, axis=1)[None, :]
        )
        new_assign = np.argmin(dist2, axis=1)
        for j in range(k):
            members = vectors[new_assign == j]
            if members.shape[0] == 0:
                worst = int(np.argmax(dist2[np.arange(n), new_assign]))
                centers[j] = vectors[worst]
                new_assign[worst] = j
            else:
                centers[j] = np.mean(members, axis=0)
        if np.array_equal(new_assign, assignments):
            assignments = new_assign
            break
        assignments = new_assign
    return centers, assignments


@dataclass
class CandidatePool:
    """Flat list of (sentence text, embedding) candidates.

    Size is at most clusters * per_cluster_top; each sentence text appears
    at most once, ordered by (cluster, distance to its center).
    """

    candidates: list[tuple[str, np.ndarray]]
    clusters: int
    per_cluster_top: int


def dedup_sentences(sentences: list[str]) -> list[int]:
    """Indices of the first occurrence of each distinct sentence, in order."""
    seen = set()
    keep = []
    for i, s in enumerate(sentences):
        if s not in seen:
            seen.add(s)
            keep.append(i)
    return keep


def build_candidate_pool(
    sentences: list[str],
    encoder: EncoderParams,
    clusters: int,
    per_cluster_top: int = PER_CLUSTER_TOP,
    cache: EmbeddingCache | None = None,
    seed=0,
) -> CandidatePool:
    """Cluster sentence embeddings and keep each center's nearest sentences.

    k-means runs over the full sentence list, so sentences repeated in the
    corpus pull centers with their real frequency; duplicates are removed by
    text before the per-center nearest selection, and a sentence captured by
    several centers is kept once (first capture wins).
    """
    if len(sentences) < clusters:
        raise ValueError(
            f"need at least {clusters} sentences to build the pool, "
            f"got {len(sentences)}"
        )
    emb = np.stack([encode_sentence(encoder, s, cache) for s in sentences])
    centers, _ = kmeans(emb, clusters, KMEANS_MAX_ITERS, seed)

    keep = dedup_sentences(sentences)
    uniq_emb = emb[keep]
    candidates: list[tuple[str, np.ndarray]] = []
    taken = set()
    for center in centers:
        d2 = np.sum((uniq_emb - center) ** 2, axis=1)
        order = np.argsort(d2, kind="stable")[:per_cluster_top]
        for idx in order:
            i = int(idx)
            if i not in taken:
                taken.add(i)
                candidates.append((sentences[keep[i]], uniq_emb[i]))
    return CandidatePool(
        candidates=candidates, clusters=clusters, per_cluster_top=per_cluster_top
    )


def representative_embedding(
    prototype: np.ndarray, pool: CandidatePool, top_candidates: int = 3
) -> tuple[np.ndarray, list[str]]:
    """Mean of the pool vectors most cosine-similar to the prototype.

    Ties keep pool order. Returns (c, chosen sentence texts, best first).
    """
    if not pool.candidates:
        raise ValueError("candidate pool is empty")
    vectors = np.stack([vec for _, vec in pool.candidates])
    norms = np.linalg.norm(vectors, axis=1)
    p_norm = float(np.linalg.norm(prototype))
    cos = (vectors @ prototype) / (norms * p_norm + 1e-8)
    order = np.argsort(-cos, kind="stable")[:top_candidates]
    chosen = [pool.candidates[int(i)][0] for i in order]
    c = np.mean(vectors[order], axis=0)
    return c, chosen


def align_prototype(
    p: np.ndarray, c: np.ndarray, cfg: AlignmentConfig
) -> np.ndarray:
    """Sigmoid-gated move of prototype p toward representative c.

    Far prototypes (distance above tau) step at most tau along the line to
    c; near ones land on c. The d = 0 and d = tau cases take exact branches
    so the fixed points hold in floating point.
    """
    diff = c - p
    d = float(np.linalg.norm(diff))
    if d == 0.0:
        return p.copy()
    if d == cfg.tau:
        return c.copy()
    u = diff / (d + cfg.eps)
    omega = 1.0 / (1.0 + np.exp(-cfg.gamma * (d - cfg.tau)))
    return omega * (p + cfg.tau * u) + (1.0 - omega) * c


@dataclass
class AlignmentEvent:
    """One prototype's movement in one alignment round."""

    epoch: int
    prototype: int
    distance_before: float
    distance_after: float
    step_norm: float
    representatives: list[str]

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "prototype": self.prototype,
            "distance_before": self.distance_before,
            "distance_after": self.distance_after,
            "step_norm": self.step_norm,
            "representatives": list(self.representatives),
        }


def align_all(
    model, pool: CandidatePool, cfg: AlignmentConfig, epoch: int
) -> list[AlignmentEvent]:
    """Move every prototype toward its pool representative, logging each step.

    The first-ranked representative sentence becomes the prototype's display
    interpretation in reports.
    """
    events = []
    P = model.prototypes.vectors
    for k in range(P.shape[0]):
        c, chosen = representative_embedding(P[k], pool, cfg.top_candidates)
        before = float(np.linalg.norm(c - P[k]))
        moved = align_prototype(P[k], c, cfg)
        events.append(
            AlignmentEvent(
                epoch=epoch,
                prototype=k,
                distance_before=before,
                distance_after=float(np.linalg.norm(c - moved)),
                step_norm=float(np.linalg.norm(moved - P[k])),
                representatives=chosen,
            )
        )
        P[k] = moved
    return events
