"""Fully-connected binary intrusion classifier with analytic gradients.

Hidden layers use ReLU and the single output unit a logistic sigmoid.
Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of
shape ``(n, d)`` flows through as ``X @ W + b``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError, NumericalError

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden: tuple[int, ...] = (60, 40, 20, 10)
    l2_lambda: float = 1e-4
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ConfigError("input dimension must be >= 1")
        if len(self.hidden) < 1:
            raise ConfigError("architecture needs at least one hidden layer")
        if any(int(w) < 1 for w in self.hidden):
            raise ConfigError(f"hidden widths must be positive, got {self.hidden}")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be non-negative")
        if self.hidden_activation != "relu" or self.output_activation != "sigmoid":
            raise ConfigError("only relu hidden / sigmoid output activations are supported")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, 1]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "l2_lambda": self.l2_lambda,
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Architecture:
        return cls(
            input_dim=int(d["input_dim"]),
            hidden=tuple(int(w) for w in d["hidden"]),
            l2_lambda=float(d.get("l2_lambda", 0.0)),
            hidden_activation=d.get("hidden_activation", "relu"),
            output_activation=d.get("output_activation", "sigmoid"),
        )


@dataclass
class MlpModel:
    architecture: Architecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0

    def __post_init__(self):
        sizes = self.architecture.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(self.weights):
            raise DataError(
                f"expected {len(sizes) - 1} layers, got {len(self.weights)} weights "
                f"and {len(self.biases)} biases"
            )
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise DataError(
                    f"layer {i}: weight {W.shape} / bias {b.shape} do not chain "
                    f"{sizes[i]} -> {sizes[i + 1]}"
                )
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise NumericalError(f"layer {i} has non-finite parameters")

    @classmethod
    def from_arrays(cls, weights, biases, l2_lambda: float = 0.0, seed: int = 0) -> MlpModel:
        """Build a model straight from parameter arrays (hidden layers optional)."""
        weights = [np.asarray(W, dtype=np.float64) for W in weights]
        # a flat weight vector is a single output column
        weights = [W[:, None] if W.ndim == 1 else W for W in weights]
        biases = [np.atleast_1d(np.asarray(b, dtype=np.float64)) for b in biases]
        hidden = tuple(W.shape[1] for W in weights[:-1])
        arch = Architecture(weights[0].shape[0], hidden, l2_lambda)
        return cls(arch, weights, biases, seed)

    @property
    def input_dim(self) -> int:
        return self.architecture.input_dim

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> MlpModel:
        return MlpModel(
            self.architecture,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.seed,
        )

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out


@dataclass(frozen=True)
class ClassScores:
    """Two-class view of the single logit: ``z0 = -z1``, ``p0 = 1 - p1``."""

    z1: np.ndarray

    @property
    def z0(self) -> np.ndarray:
        return -self.z1

    @property
    def p1(self) -> np.ndarray:
        return sigmoid(self.z1)

    @property
    def p0(self) -> np.ndarray:
        return 1.0 - self.p1

    def as_pairs(self) -> np.ndarray:
        p1 = self.p1
        return np.stack([1.0 - p1, p1], axis=1)


@dataclass(frozen=True)
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8192
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    optimizer: str = "adam"
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    val_loss: list[float | None] = field(default_factory=list)
    val_accuracy: list[float | None] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loss)

    def extend(self, other: TrainHistory) -> None:
        self.loss += other.loss
        self.accuracy += other.accuracy
        self.val_loss += other.val_loss
        self.val_accuracy += other.val_accuracy

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "accuracy": self.accuracy,
            "val_loss": self.val_loss,
            "val_accuracy": self.val_accuracy,
        }


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_model(arch: Architecture, seed: int = 0) -> MlpModel:
    """He-initialised weights (variance 2/fan_in), zero biases."""
    arch.validate()
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    weights = [
        rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
    ]
    biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
    return MlpModel(arch, weights, biases, seed)


def _check_X(model: MlpModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DataError(f"model expects {model.input_dim} features, got shape {X.shape}")
    return X


def _check_Xy(model: MlpModel, X, y) -> tuple[np.ndarray, np.ndarray]:
    X = _check_X(model, X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0]:
        raise DataError(f"{X.shape[0]} samples but {y.shape[0]} labels")
    if X.shape[0] == 0:
        raise DataError("empty batch")
    return X, y


def _rows(a: np.ndarray, W: np.ndarray) -> np.ndarray:
    # a @ W without BLAS: gemm/gemv round a row differently depending on the
    # batch's row count, and attack results must not depend on batch size
    return np.einsum("ij,jk->ik", a, W)


def _forward_cache(model: MlpModel, X: np.ndarray):
    """Return the logit and the per-layer inputs / pre-activations for backprop."""
    acts = [X]
    pre = []
    a = X
    last = model.n_layers - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = _rows(a, W) + b
        if i < last:
            pre.append(z)
            a = np.maximum(z, 0.0)
            acts.append(a)
        else:
            logit = z[:, 0]
    return logit, acts, pre


def _backward(model: MlpModel, acts, pre, dlogit: np.ndarray, want_params: bool):
    """Backpropagate ``dlogit`` (shape ``(n,)``); returns (dW list, db list, dX)."""
    delta = dlogit[:, None]
    dWs: list[np.ndarray] = [None] * model.n_layers
    dbs: list[np.ndarray] = [None] * model.n_layers
    for i in range(model.n_layers - 1, -1, -1):
        if want_params:
            dWs[i] = acts[i].T @ delta
            dbs[i] = delta.sum(axis=0)
        delta = _rows(delta, model.weights[i].T)
        if i > 0:
            delta = delta * (pre[i - 1] > 0)
    return dWs, dbs, delta


def logits(model: MlpModel, X) -> np.ndarray:
    X = _check_X(model, X)
    return _forward_cache(model, X)[0]


def forward(model: MlpModel, X) -> tuple[np.ndarray, ClassScores]:
    """Attack probabilities ``p1`` and the class-score pair for each row of ``X``."""
    z = logits(model, X)
    scores = ClassScores(z)
    return scores.p1, scores


def _residual(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    # sigmoid(z) - y, written so that it never rounds to zero for y=1
    return np.where(y > 0.5, -sigmoid(-z), sigmoid(z))


def _bce(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def l2_penalty(model: MlpModel) -> float:
    return model.architecture.l2_lambda * sum(float(np.sum(W * W)) for W in model.weights)


def per_sample_loss(model: MlpModel, X, y) -> np.ndarray:
    X, y = _check_Xy(model, X, y)
    return _bce(sigmoid(logits(model, X)), y)


def loss(model: MlpModel, X, y) -> float:
    """Mean binary cross-entropy plus ``l2_lambda * sum ||W||^2``."""
    return float(per_sample_loss(model, X, y).mean()) + l2_penalty(model)


def param_gradients(model: MlpModel, X, y) -> GradientSet:
    X, y = _check_Xy(model, X, y)
    z, acts, pre = _forward_cache(model, X)
    r = _residual(z, y) / X.shape[0]
    dWs, dbs, _ = _backward(model, acts, pre, r, want_params=True)
    lam = model.architecture.l2_lambda
    dWs = [dW + 2.0 * lam * W for dW, W in zip(dWs, model.weights)]
    return GradientSet(dWs, dbs)


def input_gradient(model: MlpModel, X, y) -> np.ndarray:
    """Gradient of each sample's own cross-entropy with respect to its features."""
    X, y = _check_Xy(model, X, y)
    z, acts, pre = _forward_cache(model, X)
    _, _, dX = _backward(model, acts, pre, _residual(z, y), want_params=False)
    return dX


def logit_gradient(model: MlpModel, X) -> np.ndarray:
    """``dz1/dx`` for every row of ``X``."""
    X = _check_X(model, X)
    z, acts, pre = _forward_cache(model, X)
    _, _, dX = _backward(model, acts, pre, np.ones_like(z), want_params=False)
    return dX


def class_score_jacobian(model: MlpModel, x) -> np.ndarray:
    """2 x d Jacobian of ``(z0, z1)`` for a single sample."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("class_score_jacobian takes a single sample")
    g = logit_gradient(model, x[None, :])[0]
    return np.stack([-g, g])


def predict(model: MlpModel, X, threshold: float = 0.5) -> np.ndarray:
    """Label 1 iff the attack probability is >= ``threshold``."""
    p, _ = forward(model, X)
    return (p >= threshold).astype(np.int64)


def accuracy(model: MlpModel, X, y) -> float:
    return float(np.mean(predict(model, X) == np.asarray(y)))


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def train(
    model: MlpModel,
    train_data: Dataset,
    validation: Dataset | None,
    config: TrainConfig,
) -> tuple[MlpModel, TrainHistory]:
    """Mini-batch training for a fixed number of epochs.

    The input model is not modified. Batch order in each epoch comes from a
    generator seeded with ``(config.seed, epoch)``.
    """
    X, y = _check_Xy(model, train_data.features, train_data.labels)
    if validation is not None and len(validation):
        Xv, yv = _check_Xy(model, validation.features, validation.labels)
    else:
        Xv = yv = None

    m = model.copy()
    params = m.params()
    mom = [np.zeros_like(p) for p in params]
    vel = [np.zeros_like(p) for p in params]
    step = 0
    hist = TrainHistory()
    n = X.shape[0]
    bs = min(config.batch_size, n)

    for epoch in range(config.epochs):
        order = _epoch_rng(config.seed, epoch).permutation(n) if config.shuffle else np.arange(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            g = param_gradients(m, X[idx], y[idx])
            grads = []
            for dW, db in zip(g.weights, g.biases):
                grads.extend((dW, db))
            step += 1
            if config.optimizer == "adam":
                b1, b2 = config.beta1, config.beta2
                lr_t = config.learning_rate * math.sqrt(1 - b2**step) / (1 - b1**step)
                for p, gr, mo, ve in zip(params, grads, mom, vel):
                    mo *= b1
                    mo += (1 - b1) * gr
                    ve *= b2
                    ve += (1 - b2) * gr * gr
                    p -= lr_t * mo / (np.sqrt(ve) + config.adam_eps)
            else:
                for p, gr in zip(params, grads):
                    p -= config.learning_rate * gr

        tr_loss = loss(m, X, y)
        if not math.isfinite(tr_loss):
            raise NumericalError(f"non-finite training loss at epoch {epoch}")
        hist.loss.append(tr_loss)
        hist.accuracy.append(accuracy(m, X, y))
        if Xv is not None:
            hist.val_loss.append(loss(m, Xv, yv))
            hist.val_accuracy.append(accuracy(m, Xv, yv))
        else:
            hist.val_loss.append(None)
            hist.val_accuracy.append(None)
        log.debug("epoch %d loss %.5f acc %.4f", epoch, tr_loss, hist.accuracy[-1])

    if not all(np.all(np.isfinite(p)) for p in params):
        raise NumericalError("training produced non-finite parameters")
    return m, hist


@dataclass(frozen=True)
class SearchSpace:
    """Ranges sampled by :func:`random_search`.

    Depth and width are drawn uniformly from inclusive integer ranges, the
    learning rate log-uniformly, the batch size from a list.
    """

    depth: tuple[int, int] = (1, 4)
    width: tuple[int, int] = (8, 64)
    learning_rate: tuple[float, float] = (1e-4, 1e-2)
    batch_sizes: tuple[int, ...] = (64, 256, 1024, 8192)

    def validate(self) -> None:
        (dlo, dhi), (wlo, whi), (llo, lhi) = self.depth, self.width, self.learning_rate
        if not self.batch_sizes or dlo > dhi or wlo > whi or llo > lhi:
            raise ConfigError("empty search space")
        if dlo < 1 or wlo < 1 or llo <= 0 or min(self.batch_sizes) < 1:
            raise ConfigError("search space bounds must be positive")


@dataclass(frozen=True)
class SearchTrial:
    index: int
    architecture: Architecture
    config: TrainConfig
    val_accuracy: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "hidden": list(self.architecture.hidden),
            "learning_rate": self.config.learning_rate,
            "batch_size": self.config.batch_size,
            "seed": self.config.seed,
            "val_accuracy": self.val_accuracy,
        }


def random_search(
    space: SearchSpace,
    budget: int,
    train_data: Dataset,
    validation: Dataset,
    seed: int = 0,
    base_config: TrainConfig | None = None,
    l2_lambda: float = 1e-4,
) -> tuple[SearchTrial, list[SearchTrial]]:
    """Sample ``budget`` architectures/configs and keep the best by validation accuracy.

    Trials are drawn from one seeded stream, so a larger budget always
    replays the trials of a smaller one first.
    """
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    space.validate()
    base = base_config or TrainConfig(epochs=20, batch_size=256)
    rng = np.random.default_rng(seed)
    trials: list[SearchTrial] = []
    for i in range(budget):
        depth = int(rng.integers(space.depth[0], space.depth[1] + 1))
        hidden = tuple(int(w) for w in rng.integers(space.width[0], space.width[1] + 1, size=depth))
        lr = float(math.exp(rng.uniform(math.log(space.learning_rate[0]), math.log(space.learning_rate[1]))))
        batch = int(space.batch_sizes[int(rng.integers(len(space.batch_sizes)))])
        trial_seed = int(rng.integers(2**31))
        arch = Architecture(train_data.n_features, hidden, l2_lambda)
        cfg = replace(base, learning_rate=lr, batch_size=batch, seed=trial_seed)
        trained, _ = train(init_model(arch, trial_seed), train_data, validation, cfg)
        acc = accuracy(trained, validation.features, validation.labels)
        trials.append(SearchTrial(i, arch, cfg, acc))
        log.info("trial %d hidden=%s lr=%.2e batch=%d val_acc=%.4f", i, hidden, lr, batch, acc)
    best = max(trials, key=lambda t: (t.val_accuracy, -t.index))
    return best, trials
