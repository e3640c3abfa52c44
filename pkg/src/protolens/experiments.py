"""Ablation study and hyperparameter sweeps over the full train/eval cycle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .data import Instance
from .training import evaluate, train

# Default planted phrases for the synthetic task: two classes, no shared
# phrases, no overlap with the wNNN filler namespace.
DEFAULT_PLANTED_PHRASES = [
    ["truly awful plot", "painfully dull script"],
    ["absolutely stunning visuals", "wonderfully sharp acting"],
]

ABLATION_VARIANTS = ("full", "no_diversity", "no_alignment")

SWEEP_PARAMETERS = ("K", "n_gram")


def _variant_config(base: TrainConfig, variant: str) -> TrainConfig:
    # dict round trip gives an independent deep copy of the nested configs
    cfg = TrainConfig.from_dict(base.to_dict())
    if variant == "full":
        pass
    elif variant == "no_diversity":
        cfg.ablations.no_diversity = True
    elif variant == "no_alignment":
        cfg.ablations.no_alignment = True
    else:
        raise ValueError(f"unknown ablation variant {variant!r}")
    return cfg


def mean_pairwise_cosine(prototypes: np.ndarray) -> float:
    """Mean cosine similarity over unordered prototype pairs."""
    K = prototypes.shape[0]
    if K < 2:
        return 0.0
    norms = np.linalg.norm(prototypes, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = prototypes / safe[:, None]
    cos = unit @ unit.T
    upper = cos[np.triu_indices(K, k=1)]
    return float(np.mean(upper))


@dataclass
class AblationRow:
    variant: str
    accuracy: float
    val_accuracy: float | None
    mean_prototype_cosine: float

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "accuracy": self.accuracy,
            "val_accuracy": self.val_accuracy,
            "mean_prototype_cosine": self.mean_prototype_cosine,
        }


def run_ablation(
    config: TrainConfig,
    train_corpus: list[Instance],
    val_corpus: list[Instance] | None,
    test_corpus: list[Instance],
    log=None,
) -> list[AblationRow]:
    """Train the full model and each single-component removal at one seed.

    Rows come back in ABLATION_VARIANTS order with test accuracy and the
    mean pairwise prototype cosine (the quantity diversity pressure lowers).
    """
    rows = []
    for variant in ABLATION_VARIANTS:
        cfg = _variant_config(config, variant)
        model, history = train(cfg, train_corpus, val_corpus)
        acc = evaluate(model, test_corpus).accuracy
        val_acc = history[-1]["val_accuracy"] if history else None
        rows.append(
            AblationRow(
                variant=variant,
                accuracy=acc,
                val_accuracy=val_acc,
                mean_prototype_cosine=mean_pairwise_cosine(
                    model.prototypes.vectors
                ),
            )
        )
        if log is not None:
            log(f"ablation {variant:13s} accuracy {acc:.3f}")
    return rows


@dataclass
class SweepPoint:
    parameter: str
    value: int
    accuracy: float

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "value": self.value,
            "accuracy": self.accuracy,
        }


def run_sweep(
    config: TrainConfig,
    train_corpus: list[Instance],
    val_corpus: list[Instance] | None,
    test_corpus: list[Instance],
    parameter: str,
    values: list[int],
    log=None,
) -> list[SweepPoint]:
    """Retrain at each value of one hyperparameter, returning (value, accuracy)
    points in the order given."""
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(
            f"unknown sweep parameter {parameter!r}, expected one of "
            f"{SWEEP_PARAMETERS}"
        )
    points = []
    for value in values:
        raw = config.to_dict()
        raw[parameter] = value
        cfg = TrainConfig.from_dict(raw)
        model, _ = train(cfg, train_corpus, val_corpus)
        acc = evaluate(model, test_corpus).accuracy
        points.append(SweepPoint(parameter=parameter, value=value, accuracy=acc))
        if log is not None:
            log(f"sweep {parameter}={value}: accuracy {acc:.3f}")
    return points
