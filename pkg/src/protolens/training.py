"""Training loop, evaluation, checkpoint serialization, and the TF-IDF
logistic-regression baseline.

Determinism contract: three independent seeded streams drive initialization,
epoch shuffling, and alignment clustering, so (config, seed, corpus) fixes
the history, the final parameters, and the checkpoint bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .alignment import (
    PER_CLUSTER_TOP,
    AlignmentEvent,
    align_all,
    build_candidate_pool,
)
from .config import TrainConfig
from .data import Instance, split_sentences, tokenize
from .encoder import EmbeddingCache, EncoderParams, encode_sentence
from .errors import CheckpointError, CorpusError, ProtoLensError
from .losses import loss_and_grads
from .model import PARAM_ORDER, ProtoLensModel, PrototypeBank
from .spans import DEFAULT_HIDDEN, MixtureHeadParams

ALIGN_WARMUP_EPOCHS = 1

CHECKPOINT_MAGIC = b"PLNS"
CHECKPOINT_VERSION = 1


class AdamW:
    """Adam with decoupled weight decay over a dict of parameter arrays.

    Holds references to the arrays and updates them in place; moments can be
    reset per-parameter after external overwrites such as alignment.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, arr in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * arr
            arr -= lr * update

    def reset_moments(self, names: list[str]) -> None:
        for name in names:
            self.m[name][...] = 0.0
            self.v[name][...] = 0.0


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    return config.learning_rate * config.lr_decay_factor ** (
        epoch // config.lr_decay_every
    )


@dataclass
class EvalResult:
    accuracy: float
    count: int
    per_class: list[dict]  # one row per class: label, total, correct


def evaluate(model: ProtoLensModel, corpus: list[Instance]) -> EvalResult:
    """Argmax-prediction accuracy with per-class counts.

    Probability ties break toward the lower class index.
    """
    if not corpus:
        raise CorpusError("cannot evaluate on an empty corpus")
    totals = np.zeros(model.num_classes, dtype=np.int64)
    correct = np.zeros(model.num_classes, dtype=np.int64)
    for inst in corpus:
        pred = model.predict(inst)
        totals[inst.label] += 1
        if pred == inst.label:
            correct[inst.label] += 1
    per_class = [
        {"label": c, "total": int(totals[c]), "correct": int(correct[c])}
        for c in range(model.num_classes)
    ]
    return EvalResult(
        accuracy=float(np.sum(correct) / len(corpus)),
        count=len(corpus),
        per_class=per_class,
    )


def _corpus_num_classes(*corpora: list[Instance]) -> int:
    labels = {inst.label for corpus in corpora if corpus for inst in corpus}
    if not labels:
        raise CorpusError("empty corpus")
    return max(labels) + 1


def _sentence_pool(corpus: list[Instance]) -> list[str]:
    pool = [s for inst in corpus for s in split_sentences(inst.text)]
    if not pool:
        pool = [inst.text for inst in corpus]
    return pool


def train(
    config: TrainConfig,
    train_corpus: list[Instance],
    val_corpus: list[Instance] | None = None,
    cache: EmbeddingCache | None = None,
    log=None,
) -> tuple[ProtoLensModel, list[dict]]:
    """Full training run; returns (model, per-epoch history).

    The history rows carry the mean loss breakdown, the learning rate, and
    the validation accuracy (None without a validation corpus); the same
    rows are embedded in checkpoints.
    """
    if not train_corpus:
        raise CorpusError("training corpus is empty")
    num_classes = _corpus_num_classes(train_corpus, val_corpus or [])
    if num_classes < 2:
        raise CorpusError("training corpus has a single class")

    init_rng = np.random.default_rng([config.seed, 0])
    shuffle_rng = np.random.default_rng([config.seed, 1])
    align_rng = np.random.default_rng([config.seed, 2])

    model = ProtoLensModel.init(config, num_classes, init_rng)
    pool_texts = _sentence_pool(train_corpus)
    pool_emb = np.stack(
        [encode_sentence(model.encoder, s, cache) for s in pool_texts]
    )
    # prototypes start at uniformly sampled training-sentence embeddings
    idx = init_rng.choice(
        pool_emb.shape[0], size=config.K, replace=pool_emb.shape[0] < config.K
    )
    model.prototypes.vectors[...] = pool_emb[idx]

    features = [model.featurize(inst) for inst in train_corpus]
    opt = AdamW(model.parameters(), weight_decay=config.weight_decay)
    history: list[dict] = []
    acfg = config.alignment

    for epoch in range(config.epochs):
        lr = lr_at_epoch(config, epoch)
        order = shuffle_rng.permutation(len(features))
        sums = {"total": 0.0, "ce": 0.0, "gmm": 0.0, "nll": 0.0, "l1": 0.0, "div": 0.0}
        for start in range(0, len(order), config.batch_size):
            batch = [features[i] for i in order[start : start + config.batch_size]]
            breakdown, grads = loss_and_grads(model, batch)
            values = breakdown.to_dict()
            for name, value in values.items():
                if not np.isfinite(value):
                    raise ProtoLensError(
                        f"non-finite {name} loss at epoch {epoch}: {value}"
                    )
                sums[name] += value * len(batch)
            opt.step(grads, lr)

        aligned = (
            not config.ablations.no_alignment
            and epoch >= ALIGN_WARMUP_EPOCHS
            and (epoch - ALIGN_WARMUP_EPOCHS) % acfg.period_epochs == 0
        )
        if aligned:
            pool = build_candidate_pool(
                pool_texts,
                model.encoder,
                clusters=config.K,
                per_cluster_top=PER_CLUSTER_TOP,
                cache=cache,
                seed=align_rng,
            )
            events = align_all(model, pool, acfg, epoch)
            model.alignment_log.extend(events)
            opt.reset_moments(["prototypes"])

        row = {name: value / len(features) for name, value in sums.items()}
        row["epoch"] = epoch
        row["lr"] = lr
        row["aligned"] = aligned
        row["val_accuracy"] = (
            evaluate(model, val_corpus).accuracy if val_corpus else None
        )
        history.append(row)
        if log is not None:
            log(
                f"epoch {epoch:3d} total {row['total']:.4f} ce {row['ce']:.4f} "
                f"gmm {row['gmm']:.4f} div {row['div']:.4f}"
                + (
                    f" val_acc {row['val_accuracy']:.3f}"
                    if row["val_accuracy"] is not None
                    else ""
                )
            )

    model.history = history
    return model, history


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(model: ProtoLensModel, path) -> None:
    """Binary checkpoint: magic, version, JSON header, raw parameter blocks,
    JSON tail with the alignment log and training history."""
    params = model.parameters()
    header = {
        "num_classes": model.num_classes,
        "config": model.config.to_dict(),
        "dtype": "<f8",
        "params": [
            {"name": name, "shape": list(params[name].shape)} for name in PARAM_ORDER
        ],
    }
    header_bytes = _canonical_json(header)
    tail = {
        "alignment_log": [ev.to_dict() for ev in model.alignment_log],
        "history": model.history,
    }
    tail_bytes = _canonical_json(tail)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for name in PARAM_ORDER:
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            fh.write(arr.tobytes())
        fh.write(struct.pack("<I", len(tail_bytes)))
        fh.write(tail_bytes)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: expected {n} bytes for {what}")
    return data


def load_checkpoint(path) -> ProtoLensModel:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {version}, "
                f"expected {CHECKPOINT_VERSION}"
            )
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        try:
            header = json.loads(_read_exact(fh, header_len, "header"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt header JSON: {exc}") from exc
        for field_name in ("num_classes", "config", "dtype", "params"):
            if field_name not in header:
                raise CheckpointError(f"header missing field {field_name!r}")
        if header["dtype"] != "<f8":
            raise CheckpointError(f"unsupported dtype {header['dtype']!r}")
        config = TrainConfig.from_dict(header["config"])
        num_classes = header["num_classes"]
        declared = [p["name"] for p in header["params"]]
        if declared != list(PARAM_ORDER):
            raise CheckpointError(
                f"parameter order mismatch: {declared} vs {list(PARAM_ORDER)}"
            )

        model = _empty_model(config, num_classes)
        params = model.parameters()
        for entry in header["params"]:
            name = entry["name"]
            shape = tuple(entry["shape"])
            if params[name].shape != shape:
                raise CheckpointError(
                    f"parameter {name!r} has shape {shape}, "
                    f"expected {params[name].shape}"
                )
            nbytes = int(np.prod(shape)) * 8 if shape else 8
            block = _read_exact(fh, nbytes, f"parameter {name!r}")
            params[name][...] = np.frombuffer(block, dtype="<f8").reshape(shape)
        (tail_len,) = struct.unpack("<I", _read_exact(fh, 4, "tail length"))
        try:
            tail = json.loads(_read_exact(fh, tail_len, "tail"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt tail JSON: {exc}") from exc
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError("trailing bytes after checkpoint tail")
    model.alignment_log = [AlignmentEvent(**ev) for ev in tail["alignment_log"]]
    model.history = tail["history"]
    return model


def _empty_model(config: TrainConfig, num_classes: int) -> ProtoLensModel:
    """Zero-filled model of the right shapes, ready for set_parameters."""
    hidden = DEFAULT_HIDDEN
    encoder = EncoderParams(
        hash_dim=config.hash_dim,
        embed_dim=config.d,
        projection=np.zeros((config.d, config.hash_dim)),
        projection_bias=np.zeros(config.d),
    )
    head = MixtureHeadParams(
        t_max=config.T_max,
        hidden=hidden,
        num_components=config.M,
        w1=np.zeros((hidden, config.T_max)),
        b1=np.zeros(hidden),
        w2=np.zeros((hidden, hidden)),
        b2=np.zeros(hidden),
        w_mu=np.zeros((config.M, hidden)),
        b_mu=np.zeros(config.M),
        w_sigma=np.zeros((config.M, hidden)),
        b_sigma=np.zeros(config.M),
        w_pi=np.zeros((config.M, hidden)),
        b_pi=np.zeros(config.M),
    )
    model = ProtoLensModel(
        config=config,
        num_classes=num_classes,
        encoder=encoder,
        prototypes=PrototypeBank(np.ones((config.K, config.d))),
        head=head,
        rms_gain=np.zeros(config.K),
        head_weights=np.zeros((num_classes, config.K)),
        head_bias=np.zeros(num_classes),
    )
    return model


@dataclass
class TfidfLogisticBaseline:
    vocab: dict[str, int]
    idf: np.ndarray
    weights: np.ndarray  # (C, V)
    bias: np.ndarray  # (C,)

    def features(self, text: str) -> np.ndarray:
        counts = np.zeros(self.idf.shape[0])
        for token in tokenize(text):
            j = self.vocab.get(token)
            if j is not None:
                counts[j] += 1.0
        vec = counts * self.idf
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def predict(self, text: str) -> int:
        logits = self.weights @ self.features(text) + self.bias
        return int(np.argmax(logits))

    def accuracy(self, corpus: list[Instance]) -> float:
        hits = sum(1 for inst in corpus if self.predict(inst.text) == inst.label)
        return hits / len(corpus)


def train_tfidf_baseline(
    train_corpus: list[Instance],
    epochs: int = 100,
    lr: float = 0.5,
    seed: int = 0,
) -> TfidfLogisticBaseline:
    """Unigram TF-IDF softmax regression, full-batch AdamW.

    The default step size is large on purpose: with L2-normalized rows the
    informative token weights need to grow well past the incidental ones
    within the fixed epoch budget, and smaller steps leave the model leaning
    on noise tokens that happen to split the training set.
    """
    if not train_corpus:
        raise CorpusError("empty corpus")
    labels = {inst.label for inst in train_corpus}
    if len(labels) < 2:
        raise CorpusError("baseline needs at least two classes in the corpus")
    num_classes = max(labels) + 1

    vocab_terms = sorted({t for inst in train_corpus for t in tokenize(inst.text)})
    vocab = {t: j for j, t in enumerate(vocab_terms)}
    N = len(train_corpus)
    df = np.zeros(len(vocab))
    for inst in train_corpus:
        for t in set(tokenize(inst.text)):
            df[vocab[t]] += 1.0
    idf = np.log((1.0 + N) / (1.0 + df)) + 1.0

    rng = np.random.default_rng(seed)
    baseline = TfidfLogisticBaseline(
        vocab=vocab,
        idf=idf,
        weights=rng.normal(0.0, 0.01, (num_classes, len(vocab))),
        bias=np.zeros(num_classes),
    )
    X = np.stack([baseline.features(inst.text) for inst in train_corpus])
    y = np.array([inst.label for inst in train_corpus])

    params = {"weights": baseline.weights, "bias": baseline.bias}
    opt = AdamW(params)
    for _ in range(epochs):
        logits = X @ baseline.weights.T + baseline.bias
        shifted = logits - np.max(logits, axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / np.sum(exp, axis=1, keepdims=True)
        dlogits = probs
        dlogits[np.arange(N), y] -= 1.0
        dlogits /= N
        grads = {"weights": dlogits.T @ X, "bias": np.sum(dlogits, axis=0)}
        opt.step(grads, lr)
    return baseline


def baseline_tfidf_logreg(
    train_corpus: list[Instance], test_corpus: list[Instance], seed: int = 0
) -> float:
    """Test accuracy of the TF-IDF logistic-regression baseline."""
    baseline = train_tfidf_baseline(train_corpus, seed=seed)
    return baseline.accuracy(test_corpus)
