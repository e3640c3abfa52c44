"""Run configuration: nested dataclasses, JSON round-trippable.

Validation happens eagerly in __post_init__ so a bad config fails before
any training work starts. The JSON file schema uses exactly these field
names, with ``loss``, ``alignment``, and ``ablations`` as nested objects.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError


def _require_positive_int(name: str, value) -> None:
    if not (isinstance(value, int) and not isinstance(value, bool) and value >= 1):
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")


@dataclass
class LossConfig:
    alpha: float = 0.1  # weight on the span-mixture objective
    beta: float = 1e-3  # weight on the prototype diversity penalty
    lambda_l1: float = 1e-3  # L1 pressure on raw mixture weights
    eps_nll: float = 1e-8  # floor inside the mixture log
    # True penalizes pairwise cosine similarity (the stated intent of the
    # diversity term); False keeps the literal sum(1 - cos) form.
    diversity_sign_corrected: bool = True

    def __post_init__(self):
        for name in ("alpha", "beta", "lambda_l1"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v >= 0):
                raise ConfigError(f"{name} must be a non-negative number, got {v!r}")
        if not (isinstance(self.eps_nll, (int, float)) and self.eps_nll > 0):
            raise ConfigError(f"eps_nll must be > 0, got {self.eps_nll!r}")


@dataclass
class AlignmentConfig:
    tau: float = 0.5  # distance threshold / maximum step length
    gamma: float = 10.0  # gate sharpness
    eps: float = 1e-8  # division guard in the unit direction
    top_candidates: int = 3  # pool sentences averaged into the target
    period_epochs: int = 1  # epochs between alignment rounds

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        _require_positive_int("top_candidates", self.top_candidates)
        _require_positive_int("period_epochs", self.period_epochs)


@dataclass
class AblationFlags:
    no_diversity: bool = False  # zero the diversity term
    no_alignment: bool = False  # skip alignment rounds entirely

    def __post_init__(self):
        for name in ("no_diversity", "no_alignment"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be a boolean")


@dataclass
class TrainConfig:
    K: int = 20  # prototype count
    M: int = 4  # mixture components per similarity curve
    n_gram: int = 5
    d: int = 32  # embedding dimension
    hash_dim: int = 2048
    T_max: int = 128  # padded curve length the mixture head can address
    R: float = 2.0  # span mask ramp width
    batch_size: int = 16
    epochs: int = 25
    learning_rate: float = 1e-4
    lr_decay_every: int = 10
    lr_decay_factor: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    ablations: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if isinstance(self.alignment, dict):
            self.alignment = AlignmentConfig(**self.alignment)
        if isinstance(self.ablations, dict):
            self.ablations = AblationFlags(**self.ablations)
        for name in ("K", "M", "n_gram", "d", "hash_dim", "T_max",
                     "batch_size"):
            _require_positive_int(name, getattr(self, name))
        if not (isinstance(self.epochs, int)
                and not isinstance(self.epochs, bool) and self.epochs >= 0):
            raise ConfigError(
                f"epochs must be a non-negative integer, got {self.epochs!r}"
            )
        if self.K < 2:
            raise ConfigError(f"K must be >= 2, got {self.K}")
        if self.hash_dim < self.d:
            raise ConfigError(
                f"hash_dim ({self.hash_dim}) must be >= d ({self.d})"
            )
        if self.R <= 0:
            raise ConfigError(f"R must be > 0, got {self.R}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not (0 < self.lr_decay_factor <= 1):
            raise ConfigError(
                f"lr_decay_factor must be in (0, 1], got {self.lr_decay_factor}"
            )
        _require_positive_int("lr_decay_every", self.lr_decay_every)
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for sub, sub_cls in (("loss", LossConfig),
                             ("alignment", AlignmentConfig),
                             ("ablations", AblationFlags)):
            if sub in obj:
                val = obj[sub]
                if not isinstance(val, dict):
                    raise ConfigError(f"{sub} must be a JSON object")
                sub_known = {f.name for f in dataclasses.fields(sub_cls)}
                sub_unknown = set(val) - sub_known
                if sub_unknown:
                    raise ConfigError(
                        f"unknown {sub} fields: {sorted(sub_unknown)}"
                    )
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> TrainConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return TrainConfig.from_dict(obj)


def save_config(config: TrainConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
