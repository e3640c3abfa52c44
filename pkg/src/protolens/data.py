"""Text tokenization, n-gram partitioning, corpus I/O, and the synthetic
planted-phrase corpus generator."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .errors import CorpusError

# Word runs or single non-space punctuation characters, matched on the
# original text so character offsets stay valid for span rendering.
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


@dataclass(frozen=True)
class Instance:
    text: str
    label: int


@dataclass(frozen=True)
class Token:
    text: str  # lowercased surface
    start: int  # character offset into the original text
    end: int


@dataclass(frozen=True)
class Part:
    """One sliding-window n-gram over the token sequence.

    ``start``/``end`` are token indices, end-exclusive.
    """

    start: int
    end: int
    text: str


@dataclass(frozen=True)
class PartSequence:
    parts: tuple[Part, ...]
    n: int

    @property
    def T(self) -> int:
        return len(self.parts)


def tokenize_with_spans(text: str) -> list[Token]:
    """Tokenize with character offsets into the original text."""
    return [
        Token(m.group(0).lower(), m.start(), m.end())
        for m in _TOKEN_RE.finditer(text)
    ]


def tokenize(text: str) -> list[str]:
    """Lowercased tokens: whitespace-split with punctuation detached."""
    return [t.text for t in tokenize_with_spans(text)]


def partition_ngrams(tokens: list[str], n: int) -> PartSequence:
    """Stride-1 sliding windows of ``n`` tokens.

    Token lists shorter than ``n`` yield a single part covering all tokens,
    so every instance stays classifiable.
    """
    if n < 1:
        raise ValueError(f"n-gram size must be >= 1, got {n}")
    count = len(tokens)
    if count < n:
        parts = (Part(0, count, " ".join(tokens)),)
    else:
        parts = tuple(
            Part(i, i + n, " ".join(tokens[i : i + n]))
            for i in range(count - n + 1)
        )
    return PartSequence(parts, n)


def load_corpus(path) -> list[Instance]:
    """Read a JSON Lines corpus of {"text": str, "label": int} objects."""
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {lineno}: malformed JSON ({exc})") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}: line {lineno}: expected a JSON object")
            for field in ("text", "label"):
                if field not in obj:
                    raise CorpusError(f"{path}: line {lineno}: missing field '{field}'")
            text, label = obj["text"], obj["label"]
            if not isinstance(text, str) or not text.strip():
                raise CorpusError(f"{path}: line {lineno}: 'text' must be a non-empty string")
            if isinstance(label, bool) or not isinstance(label, int) or label < 0:
                raise CorpusError(f"{path}: line {lineno}: 'label' must be a non-negative integer")
            instances.append(Instance(text, label))
    return instances


def save_corpus(instances: list[Instance], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps({"text": inst.text, "label": inst.label}) + "\n")


def num_classes(instances: list[Instance]) -> int:
    if not instances:
        raise CorpusError("empty corpus")
    return max(inst.label for inst in instances) + 1


@dataclass(frozen=True)
class SpanAnnotation:
    """Ground-truth token span of the planted phrase, end-exclusive."""

    start_token: int
    end_token: int
    phrase: str


# Filler tokens live in their own namespace so noise can never spell out a
# planted phrase by accident.
def _filler_vocab(vocab_size: int) -> list[str]:
    return [f"w{j:03d}" for j in range(vocab_size)]


def generate_synthetic(
    num_train: int,
    num_test: int,
    vocab_size: int,
    planted_phrases: list[list[str]],
    noise_length: int,
    seed: int,
) -> tuple[list[Instance], list[Instance], dict[str, list[SpanAnnotation]]]:
    """Planted-phrase corpora: short documents of filler-noise sentences with
    exactly one class phrase spliced in as its own sentence.

    Each instance carries ``noise_length`` filler tokens chunked into
    period-terminated sentences of 4..8 tokens, plus one phrase of its class
    inserted at a random sentence boundary; the label is recoverable by
    scanning for the phrase. Span annotations index the full token sequence
    (periods count as tokens). Labels round-robin over classes so counts are
    balanced within one.
    """
    if len(planted_phrases) < 2:
        raise ValueError("need phrase lists for at least 2 classes")
    if vocab_size < 1 or noise_length < 1:
        raise ValueError("vocab_size and noise_length must be positive")
    tokenized: list[list[tuple[str, ...]]] = []
    for phrases in planted_phrases:
        if not phrases:
            raise ValueError("every class needs at least one planted phrase")
        tokenized.append([tuple(tokenize(p)) for p in phrases])
    for c, phrases in enumerate(tokenized):
        for other in range(c + 1, len(tokenized)):
            overlap = set(phrases) & set(tokenized[other])
            if overlap:
                raise ValueError(
                    f"planted phrases overlap between classes {c} and {other}: {sorted(overlap)}"
                )
    filler = set(_filler_vocab(vocab_size))
    for phrases in tokenized:
        for phrase in phrases:
            if set(phrase) & filler:
                raise ValueError(f"phrase {' '.join(phrase)!r} collides with filler vocabulary")

    rng = np.random.default_rng(seed)
    vocab = _filler_vocab(vocab_size)
    num_classes_ = len(planted_phrases)

    def make_split(count: int) -> tuple[list[Instance], list[SpanAnnotation]]:
        instances, annotations = [], []
        for i in range(count):
            label = i % num_classes_
            phrase = tokenized[label][rng.integers(len(tokenized[label]))]
            noise = [vocab[j] for j in rng.integers(vocab_size, size=noise_length)]
            sentences = []
            used = 0
            while used < noise_length:
                width = int(rng.integers(4, 9))
                sentences.append(noise[used : used + width])
                used += width
            slot = int(rng.integers(len(sentences) + 1))
            pieces = sentences[:slot] + [list(phrase)] + sentences[slot:]
            # phrase token offset within the final sequence: each earlier
            # sentence contributes its tokens plus one period token
            pos = sum(len(s) + 1 for s in pieces[:slot])
            text = " ".join(" ".join(s) + " ." for s in pieces)
            instances.append(Instance(text, label))
            annotations.append(SpanAnnotation(pos, pos + len(phrase), " ".join(phrase)))
        return instances, annotations

    train, train_ann = make_split(num_train)
    test, test_ann = make_split(num_test)
    return train, test, {"train": train_ann, "test": test_ann}


def phrase_scan_label(text: str, planted_phrases: list[list[str]]) -> int | None:
    """Rule-based oracle: the class whose phrase occurs as a token run."""
    tokens = tokenize(text)
    for c, phrases in enumerate(planted_phrases):
        for phrase in phrases:
            ptoks = tokenize(phrase)
            w = len(ptoks)
            for i in range(len(tokens) - w + 1):
                if tokens[i : i + w] == ptoks:
                    return c
    return None


def split_sentences(text: str) -> list[str]:
    """Split on sentence-ending punctuation; used by prototype alignment."""
    pieces = re.split(r"[.!?]+", text)
    return [p.strip() for p in pieces if p.strip()]
