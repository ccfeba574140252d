"""White-box evasion attacks against :class:`~advnids.net.MlpModel`.

All attacks are untargeted, evaluate gradients per sample, and return an
:class:`AdvBatch` recording the perturbation and whether it fooled the model.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, fields
from typing import ClassVar

import numpy as np

from .data import ClipBox
from .errors import ConfigError, DataError, NumericalError
from .net import MlpModel, _check_Xy, input_gradient, logit_gradient, logits, predict

log = logging.getLogger(__name__)

__all__ = [
    "ClipBox",
    "AdvBatch",
    "FgsmConfig",
    "PgdConfig",
    "JsmaConfig",
    "CwConfig",
    "fgsm",
    "pgd",
    "jsma",
    "cw_l2",
    "run_attack",
    "perturbation_stats",
    "attack_config_from_dict",
]

# half-width of the per-sample box C&W falls back to when no clip box is given
CW_FALLBACK_RADIUS = 10.0
_TANH_SHRINK = 1.0 - 1e-6


@dataclass(frozen=True)
class AdvBatch:
    x_adv: np.ndarray
    delta: np.ndarray
    labels: np.ndarray
    success: np.ndarray
    attack: str
    config: dict = field(default_factory=dict)

    @property
    def linf(self) -> np.ndarray:
        return np.abs(self.delta).max(axis=1) if self.delta.shape[1] else np.zeros(len(self))

    @property
    def l0(self) -> np.ndarray:
        return np.count_nonzero(self.delta, axis=1)

    @property
    def l2(self) -> np.ndarray:
        return np.sqrt(np.sum(self.delta * self.delta, axis=1))

    def __len__(self) -> int:
        return self.x_adv.shape[0]

    def sidecar(self) -> dict:
        return {
            "attack": self.attack,
            "config": self.config,
            "labels": self.labels.tolist(),
            "success": self.success.astype(bool).tolist(),
            "linf": self.linf.tolist(),
            "l0": self.l0.tolist(),
            "l2": self.l2.tolist(),
            "summary": perturbation_stats(self),
        }


def _box_from(value) -> ClipBox | None:
    if value is None or isinstance(value, ClipBox):
        return value
    if value == "global":
        return ClipBox.fixed_global()
    if isinstance(value, dict):
        return ClipBox.from_dict(value)
    raise ConfigError(f"cannot interpret clip box {value!r}")


class _AttackConfig:
    name: ClassVar[str]

    def to_dict(self) -> dict:
        out = {"name": self.name}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.to_dict() if isinstance(v, ClipBox) else v
        return out

    @classmethod
    def from_dict(cls, d: dict):
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in d.items() if k != "name"}
        unknown = set(kwargs) - known
        if unknown:
            raise ConfigError(f"{cls.name}: unknown parameters {sorted(unknown)}")
        if "clip" in kwargs:
            kwargs["clip"] = _box_from(kwargs["clip"])
        return cls(**kwargs)


@dataclass(frozen=True)
class FgsmConfig(_AttackConfig):
    name: ClassVar[str] = "fgsm"
    eps: float = 0.003
    clip: ClipBox | None = None
    batch_size: int = 1000

    def __post_init__(self):
        if not (math.isfinite(self.eps) and self.eps >= 0):
            raise ConfigError("fgsm eps must be finite and >= 0")


@dataclass(frozen=True)
class PgdConfig(_AttackConfig):
    """``eps_step=None`` means ``eps / 10``.

    ``reported_step_size`` only travels in the config echo; it is never used
    as the step.
    """

    name: ClassVar[str] = "pgd"
    eps: float = 0.003
    eps_step: float | None = None
    max_iter: int = 100
    clip: ClipBox | None = None
    random_start: bool = False
    seed: int = 0
    batch_size: int = 1000
    reported_step_size: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.eps) and self.eps >= 0):
            raise ConfigError("pgd eps must be finite and >= 0")
        if self.max_iter < 1:
            raise ConfigError("pgd max_iter must be >= 1")
        if self.eps_step is not None and not self.eps_step > 0:
            raise ConfigError("pgd eps_step must be > 0")
        if self.eps_step is not None and self.eps_step > self.eps:
            warnings.warn("pgd eps_step exceeds eps", stacklevel=3)

    @property
    def step(self) -> float:
        return self.eps / 10.0 if self.eps_step is None else self.eps_step


@dataclass(frozen=True)
class JsmaConfig(_AttackConfig):
    name: ClassVar[str] = "jsma"
    theta: float = 0.03
    gamma: float = 0.02
    clip: ClipBox | None = None
    max_iter: int = 1000
    batch_size: int = 1000

    def __post_init__(self):
        if self.theta == 0 or not math.isfinite(self.theta):
            raise ConfigError("jsma theta must be finite and non-zero")
        if not 0 < self.gamma <= 1:
            raise ConfigError("jsma gamma must lie in (0, 1]")
        if self.max_iter < 1:
            raise ConfigError("jsma max_iter must be >= 1")

    def budget(self, d: int) -> int:
        return max(1, math.ceil(self.gamma * d - 1e-12))


@dataclass(frozen=True)
class CwConfig(_AttackConfig):
    name: ClassVar[str] = "cw"
    learning_rate: float = 0.02
    binary_search_steps: int = 10
    max_iter: int = 10
    initial_const: float = 0.01
    confidence: float = 0.0
    max_halving: int = 5
    max_doubling: int = 5
    clip: ClipBox | None = None
    batch_size: int = 1000

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("cw learning_rate must be > 0")
        for n in ("binary_search_steps", "max_iter", "max_halving", "max_doubling"):
            if getattr(self, n) < 1:
                raise ConfigError(f"cw {n} must be >= 1")
        if not self.initial_const > 0:
            raise ConfigError("cw initial_const must be > 0")
        if self.confidence < 0:
            raise ConfigError("cw confidence must be >= 0")


CONFIG_TYPES = {c.name: c for c in (FgsmConfig, PgdConfig, JsmaConfig, CwConfig)}
CONFIG_TYPES["c&w"] = CwConfig
CONFIG_TYPES["cw_l2"] = CwConfig


def attack_config_from_dict(d: dict):
    name = str(d.get("name", "")).lower()
    if name not in CONFIG_TYPES:
        raise ConfigError(f"unknown attack {d.get('name')!r}")
    return CONFIG_TYPES[name].from_dict(d)


def _prepare(model, X, y, clip: ClipBox | None, mask):
    X, yf = _check_Xy(model, X, y)
    y = yf.astype(np.int64)
    if clip is None:
        lo = np.full(X.shape, -np.inf)
        hi = np.full(X.shape, np.inf)
    else:
        lo, hi = clip.bounds_for(X)
    if mask is None:
        mask = np.ones(X.shape[1], dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (X.shape[1],):
            raise DataError(f"feature mask must have {X.shape[1]} entries")
    return X, y, lo, hi, mask


def _signed_grad(model, x, y, mask) -> np.ndarray:
    g = input_gradient(model, x, y)
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite input gradient")
    s = np.sign(g)
    s[:, ~mask] = 0.0
    return s


def _finish(model, X, x_adv, y, name, config) -> AdvBatch:
    # numerically untouched entries keep the caller's bits (e.g. -0.0)
    x_adv = np.where(x_adv == X, X, x_adv)
    success = predict(model, x_adv) != y
    return AdvBatch(x_adv, x_adv - X, y, success, name, config.to_dict())


def fgsm(model: MlpModel, X, y, config: FgsmConfig, mask=None) -> AdvBatch:
    """One signed-gradient step of size ``eps`` on the true-label loss, then clip."""
    X, y, lo, hi, mask = _prepare(model, X, y, config.clip, mask)
    s = _signed_grad(model, X, y, mask)
    x_adv = np.clip(X + config.eps * s, lo, hi)
    return _finish(model, X, x_adv, y, config.name, config)


def pgd(model: MlpModel, X, y, config: PgdConfig, mask=None) -> AdvBatch:
    """Iterated signed steps projected onto the eps-ball and the clip box."""
    X, y, lo, hi, mask = _prepare(model, X, y, config.clip, mask)
    eps = config.eps
    ball_lo, ball_hi = X - eps, X + eps
    x = X.copy()
    if config.random_start:
        rng = np.random.default_rng(config.seed)
        noise = rng.uniform(-eps, eps, size=X.shape)
        noise[:, ~mask] = 0.0
        x = np.clip(np.clip(X + noise, ball_lo, ball_hi), lo, hi)
    step = config.step
    for _ in range(config.max_iter):
        x = x + step * _signed_grad(model, x, y, mask)
        x = np.clip(x, ball_lo, ball_hi)
        x = np.clip(x, lo, hi)
    return _finish(model, X, x, y, config.name, config)


def jsma(model: MlpModel, X, y, config: JsmaConfig, mask=None) -> AdvBatch:
    """Greedy single-feature saliency attack toward the other class.

    Each round perturbs, for every still-correct sample, the unsaturated
    feature whose logit derivative pushes hardest toward the target class in
    the direction of ``theta``. At most ``ceil(gamma * d)`` distinct features
    are ever touched; a touched feature may be stepped again until it sits on
    the clip box.
    """
    X, y, lo, hi, mask = _prepare(model, X, y, config.clip, mask)
    n, d = X.shape
    theta = config.theta
    direction = 1.0 if theta > 0 else -1.0
    budget = config.budget(d)
    target_sign = np.where(y == 1, -1.0, 1.0)  # dz_t/dx = target_sign * dz1/dx

    x = np.clip(X, lo, hi)
    modified = np.zeros((n, d), dtype=bool)
    bound = hi if theta > 0 else lo
    saturated = (x >= hi) if theta > 0 else (x <= lo)
    active = predict(model, x) == y

    for _ in range(config.max_iter):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        g = logit_gradient(model, x[rows])
        toward = direction * target_sign[rows, None] * g > 0
        room = (modified[rows].sum(axis=1) < budget)[:, None]
        eligible = toward & ~saturated[rows] & mask[None, :] & (modified[rows] | room)
        has = eligible.any(axis=1)
        active[rows[~has]] = False
        rows, g, eligible = rows[has], g[has], eligible[has]
        if rows.size == 0:
            break
        saliency = np.where(eligible, g * g, -np.inf)
        j = np.argmax(saliency, axis=1)
        new = np.clip(x[rows, j] + theta, lo[rows, j], hi[rows, j])
        x[rows, j] = new
        modified[rows, j] = True
        saturated[rows, j] = new == bound[rows, j]
        flipped = predict(model, x[rows]) != y[rows]
        active[rows[flipped]] = False
    else:
        log.debug("jsma stopped at max_iter=%d with %d samples active", config.max_iter, active.sum())
    return _finish(model, X, x, y, config.name, config)


def _cw_terms(model, x_adv, X, ysign, c, k):
    z = logits(model, x_adv)
    margin = 2.0 * ysign * z  # Z_true - Z_other
    f = np.maximum(margin, -k)
    dist = np.sum((x_adv - X) ** 2, axis=1)
    return dist + c * f, dist, margin, z


def cw_l2(model: MlpModel, X, y, config: CwConfig, mask=None) -> AdvBatch:
    """Carlini-Wagner L2 with tanh box reparametrisation and binary search on ``c``.

    Minimises ``||x' - x||^2 + c * max(Z_true - Z_other, -k)`` by gradient
    descent with a halving/doubling line search, and returns the smallest
    successful perturbation found over all binary-search steps.
    """
    X, y, lo, hi, mask = _prepare(model, X, y, config.clip, mask)
    if config.clip is None:
        lo, hi = X - CW_FALLBACK_RADIUS, X + CW_FALLBACK_RADIUS
    n, d = X.shape
    ysign = np.where(y == 1, 1.0, -1.0)
    k = config.confidence

    mid = (lo + hi) / 2.0
    half = (hi - lo) / 2.0
    frozen = (half == 0) | ~mask[None, :]
    safe_half = np.where(half == 0, 1.0, half)
    w0 = np.arctanh(np.clip((X - mid) / safe_half, -1.0, 1.0) * _TANH_SHRINK)

    best_l2 = np.full(n, np.inf)
    best_x = X.copy()
    already = predict(model, X) != y
    best_l2[already] = 0.0

    c = np.full(n, config.initial_const)
    c_lo = np.zeros(n)
    c_hi = np.full(n, np.inf)
    todo = ~already

    for _ in range(config.binary_search_steps):
        rows = np.flatnonzero(todo)
        if rows.size == 0:
            break
        Xr, ys, cr = X[rows], ysign[rows], c[rows]
        w = w0[rows].copy()
        lr = np.full(rows.size, config.learning_rate)
        fr, mr, hr = frozen[rows], mid[rows], half[rows]

        def to_xr(wr, sel=slice(None)):
            return np.where(fr[sel], Xr[sel], mr[sel] + hr[sel] * np.tanh(wr))

        xa = to_xr(w)
        obj, dist, margin, z = _cw_terms(model, xa, Xr, ys, cr, k)
        found = np.zeros(rows.size, dtype=bool)

        for _ in range(config.max_iter):
            active_f = (margin > -k).astype(float)
            dz = logit_gradient(model, xa)
            g_x = 2.0 * (xa - Xr) + (cr * active_f * 2.0 * ys)[:, None] * dz
            g_w = g_x * hr * (1.0 - np.tanh(w) ** 2)
            g_w[fr] = 0.0
            if not np.all(np.isfinite(g_w)):
                raise NumericalError("non-finite gradient in cw_l2")

            cand_w = w - lr[:, None] * g_w
            cand_x = to_xr(cand_w)
            cand_obj = _cw_terms(model, cand_x, Xr, ys, cr, k)[0]
            improved = cand_obj < obj
            halved = np.zeros(rows.size, dtype=bool)
            for _h in range(config.max_halving):
                redo = np.flatnonzero(~improved)
                if redo.size == 0:
                    break
                lr[redo] /= 2.0
                halved[redo] = True
                cw_ = w[redo] - lr[redo, None] * g_w[redo]
                cx_ = to_xr(cw_, redo)
                co_ = _cw_terms(model, cx_, Xr[redo], ys[redo], cr[redo], k)[0]
                cand_w[redo], cand_x[redo], cand_obj[redo] = cw_, cx_, co_
                improved[redo] = co_ < obj[redo]
            grow = improved & ~halved
            for _d in range(config.max_doubling):
                idx = np.flatnonzero(grow)
                if idx.size == 0:
                    break
                lr2 = lr[idx] * 2.0
                cw_ = w[idx] - lr2[:, None] * g_w[idx]
                cx_ = to_xr(cw_, idx)
                co_ = _cw_terms(model, cx_, Xr[idx], ys[idx], cr[idx], k)[0]
                better = co_ < cand_obj[idx]
                acc = idx[better]
                lr[acc] = lr2[better]
                cand_w[acc], cand_x[acc], cand_obj[acc] = cw_[better], cx_[better], co_[better]
                grow[:] = False
                grow[acc] = True

            w[improved] = cand_w[improved]
            xa[improved] = cand_x[improved]
            obj, dist, margin, z = _cw_terms(model, xa, Xr, ys, cr, k)

            fooled = predict(model, xa) != y[rows]
            l2 = np.sqrt(dist)
            better = fooled & (l2 < best_l2[rows])
            best_l2[rows[better]] = l2[better]
            best_x[rows[better]] = xa[better]
            found |= fooled

        ok = rows[found]
        fail = rows[~found]
        c_hi[ok] = c[ok]
        c[ok] = (c_lo[ok] + c_hi[ok]) / 2.0
        c_lo[fail] = c[fail]
        c[fail] = np.where(np.isinf(c_hi[fail]), c[fail] * 2.0, (c_lo[fail] + c_hi[fail]) / 2.0)

    x_adv = np.where(np.isfinite(best_l2)[:, None], best_x, X)
    return _finish(model, X, x_adv, y, config.name, config)


_DISPATCH = {
    FgsmConfig: fgsm,
    PgdConfig: pgd,
    JsmaConfig: jsma,
    CwConfig: cw_l2,
}


def run_attack(model: MlpModel, X, y, config, mask=None) -> AdvBatch:
    """Dispatch on the config type.

    ``batch_size`` is kept in the config echo only: samples never interact,
    so the whole matrix is processed in one vectorised pass.
    """
    fn = _DISPATCH.get(type(config))
    if fn is None:
        raise ConfigError(f"not an attack config: {config!r}")
    return fn(model, X, y, config, mask)


def perturbation_stats(batch: AdvBatch) -> dict:
    """Mean/max of the per-sample L-inf, L0 and L2 norms plus the success rate."""
    if len(batch) == 0:
        raise DataError("empty adversarial batch")
    linf, l0, l2 = batch.linf, batch.l0, batch.l2
    return {
        "n": len(batch),
        "linf_mean": float(linf.mean()),
        "linf_max": float(linf.max()),
        "l0_mean": float(l0.mean()),
        "l0_max": int(l0.max()),
        "l2_mean": float(l2.mean()),
        "l2_max": float(l2.max()),
        "success_rate": float(np.mean(batch.success)),
    }
