"""The prototype model: prototype bank, cosine similarity curves, span-masked
refined embeddings, RMS-normalized similarity scores, and the logistic head.

The forward pass is vectorized over prototypes and returns every intermediate
in a ForwardRecord so the backward pass and the reporting layer can reuse them
without recomputation. Per-curve reference semantics live in spans.py; tests
hold this vectorized path to that straight-line version.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .data import Instance, partition_ngrams, tokenize
from .encoder import (
    EncoderParams,
    InstanceFeatures,
    embed_features,
    featurize_parts,
)
from .errors import ConfigError
from .spans import (
    DEFAULT_HIDDEN,
    SIGMA_CLAMP_HI,
    SIGMA_CLAMP_LO,
    MixtureHeadParams,
    init_mixture_head,
)

COS_EPS = 1e-8
REFINE_EPS = 1e-8
RMS_EPS = 1e-6

# Checkpoint block order; every trainable array, fixed for serialization.
PARAM_ORDER = (
    "projection",
    "projection_bias",
    "prototypes",
    "w1",
    "b1",
    "w2",
    "b2",
    "w_mu",
    "b_mu",
    "w_sigma",
    "b_sigma",
    "w_pi",
    "b_pi",
    "rms_gain",
    "head_weights",
    "head_bias",
)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity with an epsilon-guarded denominator.

    All-zero input on either side yields 0 rather than an error.
    """
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v) + COS_EPS))


def rmsnorm(raw: np.ndarray, gain: np.ndarray) -> tuple[np.ndarray, float]:
    """Gain-scaled RMS normalization over the whole vector; returns (out, rms)."""
    rms = float(np.sqrt(np.mean(raw * raw) + RMS_EPS))
    return gain * raw / rms, rms


def refine_embedding(part_embeddings: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mask-weighted mean of part embeddings (Z); all-zero masks give zero."""
    return (mask @ part_embeddings) / (float(np.sum(mask)) + REFINE_EPS)


@dataclass
class PrototypeBank:
    """K trainable d-dimensional prototypes."""

    vectors: np.ndarray  # (K, d)

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise ConfigError("prototypes must be a K x d matrix")
        if self.vectors.shape[0] < 2:
            raise ConfigError("need at least 2 prototypes")
        if not np.all(np.isfinite(self.vectors)):
            raise ConfigError("prototypes must be finite")

    @property
    def K(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class ForwardRecord:
    """Every intermediate of one instance's forward pass.

    Array layouts: curves/padded/mask are (K, T)-shaped with prototypes as
    rows; MLP activations are (K, hidden); mixture tensors are (K, M).
    ``pre_sigma`` is the raw (unclamped) sigma pre-activation so the backward
    pass can recover the clamp mask.
    """

    features: InstanceFeatures
    T: int
    embeddings: np.ndarray  # (T, d)
    embed_norms: np.ndarray  # (T,)
    curves: np.ndarray  # (K, T)
    padded: np.ndarray  # (K, t_max)
    h1: np.ndarray  # (K, hidden)
    h: np.ndarray  # (K, hidden)
    mu: np.ndarray  # (K, M)
    sigma: np.ndarray  # (K, M)
    pre_sigma: np.ndarray  # (K, M) before clamping
    nu: np.ndarray  # (K, M)
    pi_raw: np.ndarray  # (K, M)
    pi_norm: np.ndarray  # (K, M)
    selected: np.ndarray  # (K,) winning component per prototype
    mask: np.ndarray  # (K, T)
    mask_sum: np.ndarray  # (K,)
    refined: np.ndarray  # (K, d)
    refined_norms: np.ndarray  # (K,)
    proto_norms: np.ndarray  # (K,)
    scores: np.ndarray  # (K,) raw cosine similarities
    rms: float
    normed: np.ndarray  # (K,) RMS-normalized similarities
    logits: np.ndarray  # (C,)
    probs: np.ndarray  # (C,)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ProtoLensModel:
    config: TrainConfig
    num_classes: int
    encoder: EncoderParams
    prototypes: PrototypeBank
    head: MixtureHeadParams
    rms_gain: np.ndarray  # (K,)
    head_weights: np.ndarray  # (C, K)
    head_bias: np.ndarray  # (C,)
    alignment_log: list = field(default_factory=list)
    history: list = field(default_factory=list)

    @classmethod
    def init(
        cls,
        config: TrainConfig,
        num_classes: int,
        rng: np.random.Generator,
        seed_embeddings: np.ndarray | None = None,
    ) -> "ProtoLensModel":
        """Seeded initialization.

        Prototypes start at uniformly sampled rows of ``seed_embeddings``
        (training-sentence embeddings, so alignment is meaningful from the
        first round); without a pool they fall back to unit-norm-ish noise.
        The projection uses unit-variance columns: token directions stay well
        separated and sentence averages land near the norm scale the
        alignment step size tau is tuned for.
        """
        if num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
        projection = rng.normal(0.0, 1.0, (config.d, config.hash_dim))
        encoder = EncoderParams(
            hash_dim=config.hash_dim,
            embed_dim=config.d,
            projection=projection,
            projection_bias=np.zeros(config.d),
        )
        if seed_embeddings is not None and seed_embeddings.shape[0] >= 1:
            pool_size = seed_embeddings.shape[0]
            idx = rng.choice(pool_size, size=config.K, replace=pool_size < config.K)
            prototypes = PrototypeBank(np.array(seed_embeddings[idx], dtype=np.float64))
        else:
            prototypes = PrototypeBank(
                rng.normal(0.0, 1.0 / np.sqrt(config.d), (config.K, config.d))
            )
        head = init_mixture_head(config.T_max, DEFAULT_HIDDEN, config.M, rng)
        head_weights = rng.normal(0.0, 0.01, (num_classes, config.K))
        return cls(
            config=config,
            num_classes=num_classes,
            encoder=encoder,
            prototypes=prototypes,
            head=head,
            rms_gain=np.ones(config.K),
            head_weights=head_weights,
            head_bias=np.zeros(num_classes),
        )

    @property
    def max_tokens(self) -> int:
        """Token budget so the part count never exceeds the padded width."""
        return self.config.T_max + self.config.n_gram - 1

    def parameters(self) -> dict[str, np.ndarray]:
        h = self.head
        return {
            "projection": self.encoder.projection,
            "projection_bias": self.encoder.projection_bias,
            "prototypes": self.prototypes.vectors,
            "w1": h.w1,
            "b1": h.b1,
            "w2": h.w2,
            "b2": h.b2,
            "w_mu": h.w_mu,
            "b_mu": h.b_mu,
            "w_sigma": h.w_sigma,
            "b_sigma": h.b_sigma,
            "w_pi": h.w_pi,
            "b_pi": h.b_pi,
            "rms_gain": self.rms_gain,
            "head_weights": self.head_weights,
            "head_bias": self.head_bias,
        }

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        current = self.parameters()
        for name, arr in values.items():
            if name not in current:
                raise ConfigError(f"unknown parameter {name!r}")
            if current[name].shape != arr.shape:
                raise ConfigError(
                    f"parameter {name!r} has shape {arr.shape}, "
                    f"expected {current[name].shape}"
                )
            current[name][...] = arr

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.parameters().items()}

    def featurize(self, instance: Instance) -> InstanceFeatures:
        tokens = tokenize(instance.text)[: self.max_tokens]
        parts = partition_ngrams(tokens, self.config.n_gram)
        return featurize_parts(parts, self.config.hash_dim, label=instance.label)

    def forward(self, instance_or_features) -> ForwardRecord:
        """Full forward pass for one instance; see ForwardRecord for layout."""
        if isinstance(instance_or_features, InstanceFeatures):
            feats = instance_or_features
        else:
            feats = self.featurize(instance_or_features)
        cfg = self.config
        E = embed_features(self.encoder, feats)  # (T, d)
        T = E.shape[0]
        if T > cfg.T_max:
            raise ConfigError(f"part count {T} exceeds T_max {cfg.T_max}")
        embed_norms = np.linalg.norm(E, axis=1)
        P = self.prototypes.vectors
        proto_norms = np.linalg.norm(P, axis=1)
        curves = (P @ E.T) / (
            proto_norms[:, None] * embed_norms[None, :] + COS_EPS
        )  # (K, T)

        padded = np.zeros((cfg.K, cfg.T_max))
        padded[:, :T] = curves
        hd = self.head
        h1 = np.tanh(padded @ hd.w1.T + hd.b1)  # (K, hidden)
        h = h1 @ hd.w2.T + hd.b2  # (K, hidden)
        mu = _sigmoid(h @ hd.w_mu.T + hd.b_mu) * T  # (K, M)
        pre_sigma = h @ hd.w_sigma.T + hd.b_sigma  # (K, M), unclamped
        sigma = np.exp(np.clip(pre_sigma, SIGMA_CLAMP_LO, SIGMA_CLAMP_HI))
        nu = _sigmoid(h @ hd.w_pi.T + hd.b_pi)  # (K, M)

        remaining = np.concatenate(
            [np.ones((cfg.K, 1)), np.cumprod(1.0 - nu, axis=1)[:, :-1]], axis=1
        )
        pi_raw = nu * remaining  # (K, M)
        pi_norm = pi_raw / np.sum(pi_raw, axis=1, keepdims=True)

        selected = np.argmax(pi_raw, axis=1)  # (K,)
        rows = np.arange(cfg.K)
        mu_star = mu[rows, selected][:, None]  # (K, 1)
        sigma_star = sigma[rows, selected][:, None]
        positions = np.arange(1, T + 1, dtype=np.float64)[None, :]  # (1, T)
        mask = np.clip(
            (cfg.R + sigma_star - np.abs(mu_star - positions)) / cfg.R, 0.0, 1.0
        )  # (K, T)

        mask_sum = np.sum(mask, axis=1)
        refined = (mask @ E) / (mask_sum[:, None] + REFINE_EPS)  # (K, d)
        refined_norms = np.linalg.norm(refined, axis=1)
        scores = np.sum(refined * P, axis=1) / (
            refined_norms * proto_norms + COS_EPS
        )  # (K,)

        rms = float(np.sqrt(np.mean(scores * scores) + RMS_EPS))
        normed = self.rms_gain * scores / rms
        logits = self.head_weights @ normed + self.head_bias
        shifted = logits - np.max(logits)
        exp = np.exp(shifted)
        probs = exp / np.sum(exp)

        return ForwardRecord(
            features=feats,
            T=T,
            embeddings=E,
            embed_norms=embed_norms,
            curves=curves,
            padded=padded,
            h1=h1,
            h=h,
            mu=mu,
            sigma=sigma,
            pre_sigma=pre_sigma,
            nu=nu,
            pi_raw=pi_raw,
            pi_norm=pi_norm,
            selected=selected,
            mask=mask,
            mask_sum=mask_sum,
            refined=refined,
            refined_norms=refined_norms,
            proto_norms=proto_norms,
            scores=scores,
            rms=rms,
            normed=normed,
            logits=logits,
            probs=probs,
        )

    def class_weight_of(self, k: int) -> float:
        """Scalar head contribution of prototype k toward the positive class.

        Defined for binary heads as the logit-difference weight; multiclass
        callers should read head_weights directly.
        """
        if self.num_classes != 2:
            raise ConfigError("class_weight_of is defined for 2-class heads")
        return float(self.head_weights[1, k] - self.head_weights[0, k])

    def predict_proba(self, instance: Instance) -> np.ndarray:
        return self.forward(instance).probs

    def predict(self, instance: Instance) -> int:
        return int(np.argmax(self.predict_proba(instance)))
