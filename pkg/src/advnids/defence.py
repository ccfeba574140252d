"""Heuristic defences: adversarial training, Gaussian augmentation, high-confidence output."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .attacks import attack_config_from_dict, run_attack
from .data import Dataset
from .errors import ConfigError, DataError
from .net import MlpModel, TrainConfig, TrainHistory, forward, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GdaConfig:
    sigma: float = 0.01
    ratio: float = 0.01
    keep_originals: bool = True
    apply_predict: bool = True
    apply_fit: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigError("gaussian sigma must be finite and >= 0")
        if not (math.isfinite(self.ratio) and self.ratio >= 0):
            raise ConfigError("gaussian ratio must be finite and >= 0")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class HcConfig:
    cutoff: float = 0.05
    apply_predict: bool = True

    def __post_init__(self):
        if not 0 <= self.cutoff < 1:
            raise ConfigError("high-confidence cutoff must lie in [0, 1)")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class AtConfig:
    """Adversarial retraining settings.

    ``attacks`` lists attack configs (objects or dicts); every one of them
    contributes adversarial copies of the training set. ``ratio`` is the
    number of adversarial rows per clean row for each attack.
    """

    attacks: tuple = ()
    ratio: float = 1.0
    epochs: int = 100
    seed: int = 0
    train: TrainConfig | None = None

    def __post_init__(self):
        if not self.attacks:
            raise ConfigError("adversarial training needs at least one attack")
        if self.epochs < 1:
            raise ConfigError("adversarial training epochs must be >= 1")
        if self.ratio < 0:
            raise ConfigError("adversarial ratio must be >= 0")
        parsed = tuple(a if not isinstance(a, dict) else attack_config_from_dict(a) for a in self.attacks)
        object.__setattr__(self, "attacks", parsed)

    def train_config(self) -> TrainConfig:
        base = self.train or TrainConfig()
        return TrainConfig(**{**base.__dict__, "epochs": self.epochs, "seed": self.seed})

    def to_dict(self) -> dict:
        return {
            "attacks": [a.to_dict() for a in self.attacks],
            "ratio": self.ratio,
            "epochs": self.epochs,
            "seed": self.seed,
            "train": dict(self.train_config().__dict__),
        }


@dataclass
class DefendedModel:
    """Prediction pipeline: optional input noise -> base model -> optional score filter."""

    base: MlpModel
    preprocessor: GdaConfig | None = None
    postprocessor: HcConfig | None = None
    provenance: list[dict] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.base.input_dim


def adversarial_train(
    model: MlpModel, train_data: Dataset, validation: Dataset | None, config: AtConfig
) -> tuple[MlpModel, TrainHistory]:
    """Retrain ``model`` on clean rows plus adversarial copies crafted against it."""
    rng = np.random.default_rng(config.seed)
    n = len(train_data)
    n_adv = math.floor(config.ratio * n)
    Xs = [train_data.features]
    ys = [train_data.labels]
    for attack in config.attacks:
        if n_adv == 0:
            break
        if n_adv == n:
            idx = np.arange(n)
        else:
            idx = np.sort(rng.choice(n, size=n_adv, replace=n_adv > n))
        try:
            batch = run_attack(model, train_data.features[idx], train_data.labels[idx], attack)
        except Exception as exc:
            raise type(exc)(f"{attack.name}: {exc}") from exc
        Xs.append(batch.x_adv)
        ys.append(train_data.labels[idx])
        log.info("adversarial training: %d %s rows", n_adv, attack.name)
    augmented = train_data.with_features(np.concatenate(Xs), np.concatenate(ys))
    return train(model, augmented, validation, config.train_config())


def gaussian_augment(data: Dataset, config: GdaConfig) -> Dataset:
    """Append ``floor(ratio * n)`` noisy copies of randomly chosen rows."""
    rng = np.random.default_rng(config.seed)
    n = len(data)
    m = math.floor(config.ratio * n)
    src = rng.integers(0, n, size=m) if n else np.zeros(0, dtype=np.int64)
    noisy = data.features[src] + config.sigma * rng.standard_normal((m, data.n_features))
    labels = data.labels[src]
    if config.keep_originals:
        X = np.concatenate([data.features, noisy])
        y = np.concatenate([data.labels, labels])
    else:
        X, y = noisy, labels
    return data.with_features(X, y)


def high_confidence(scores, config: HcConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zero every class score below ``cutoff``.

    Returns ``(filtered_scores, labels, abstain)``. The label is the larger
    surviving score (ties go to class 1); when both scores are zeroed the
    sample abstains and its label falls back to the raw argmax.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != 2:
        raise DataError(f"expected (n, 2) score pairs, got shape {s.shape}")
    if not np.all(np.isfinite(s)) or np.any(s < 0) or not np.allclose(s.sum(axis=1), 1.0, atol=1e-9):
        raise DataError("score pairs must be non-negative and sum to 1")
    kept = np.where(s < config.cutoff, 0.0, s)
    abstain = np.all(kept == 0.0, axis=1)
    labels = (kept[:, 1] >= kept[:, 0]).astype(np.int64)
    raw = (s[:, 1] >= s[:, 0]).astype(np.int64)
    labels[abstain] = raw[abstain]
    return kept, labels, abstain


def defended_scores(dm: DefendedModel | MlpModel, X, noise_seed: int = 0):
    """Score pairs, labels and abstain flags along the full prediction path."""
    if isinstance(dm, MlpModel):
        dm = DefendedModel(dm)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != dm.input_dim:
        raise DataError(f"model expects {dm.input_dim} features, got shape {X.shape}")
    pre = dm.preprocessor
    if pre is not None and pre.apply_predict and pre.sigma > 0:
        rng = np.random.default_rng([pre.seed, noise_seed])
        X = X + pre.sigma * rng.standard_normal(X.shape)
    _, cs = forward(dm.base, X)
    pairs = cs.as_pairs()
    post = dm.postprocessor
    if post is not None and post.apply_predict:
        return high_confidence(pairs, post)
    labels = (pairs[:, 1] >= 0.5).astype(np.int64)
    return pairs, labels, np.zeros(len(X), dtype=bool)


def defended_predict(dm: DefendedModel | MlpModel, X, noise_seed: int = 0):
    """Labels, attack scores (``p1`` after postprocessing) and abstain flags."""
    pairs, labels, abstain = defended_scores(dm, X, noise_seed)
    return labels, pairs[:, 1], abstain


def gaussian_defence(
    model: MlpModel,
    train_data: Dataset,
    validation: Dataset | None,
    config: GdaConfig,
    train_config: TrainConfig,
) -> tuple[DefendedModel, TrainHistory | None]:
    """Retrain on augmented data (if ``apply_fit``) and attach inference-time noise."""
    hist = None
    base = model
    if config.apply_fit:
        base, hist = train(model, gaussian_augment(train_data, config), validation, train_config)
    prov = {"defence": "gaussian_augmentation", "config": config.to_dict()}
    if config.apply_fit:
        prov["train"] = dict(train_config.__dict__)
    return DefendedModel(base, preprocessor=config, provenance=[prov]), hist
