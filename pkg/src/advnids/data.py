"""Flow-feature ingestion: CSV parsing, cleaning, scaling, splitting, synthetic data."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

BENIGN_LABEL = "BENIGN"
LABEL_MAP = {"BENIGN": 0, "*": 1}

_NAN_TOKENS = {"", "nan", "na", "null", "none"}
_INF_TOKENS = {"inf", "+inf", "infinity", "+infinity"}
_NEG_INF_TOKENS = {"-inf", "-infinity"}


@dataclass(frozen=True)
class RawTable:
    """Parsed CSV before cleaning.

    ``cells`` holds the non-label columns (NaN marks a missing cell, infinities
    are kept as parsed); ``labels`` keeps the label column as raw text.
    """

    column_names: list[str]
    cells: np.ndarray
    labels: list[str]
    label_column: str

    @property
    def feature_names(self) -> list[str]:
        return [c for c in self.column_names if c != self.label_column]

    @property
    def n_rows(self) -> int:
        return self.cells.shape[0]


@dataclass(frozen=True)
class CleaningReport:
    feature_names: list[str]
    missing_replaced: np.ndarray
    infinite_replaced: np.ndarray
    fill_values: np.ndarray
    strategy: str = "median"

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "columns": {
                name: {
                    "missing_replaced": int(m),
                    "infinite_replaced": int(i),
                    "fill_value": float(f),
                }
                for name, m, i, f in zip(
                    self.feature_names, self.missing_replaced, self.infinite_replaced, self.fill_values
                )
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> CleaningReport:
        cols = d["columns"]
        names = list(cols)
        return cls(
            feature_names=names,
            missing_replaced=np.array([cols[n]["missing_replaced"] for n in names], dtype=np.int64),
            infinite_replaced=np.array([cols[n]["infinite_replaced"] for n in names], dtype=np.int64),
            fill_values=np.array([cols[n]["fill_value"] for n in names], dtype=np.float64),
            strategy=d.get("strategy", "median"),
        )


@dataclass(frozen=True)
class ScalerStats:
    """Per-feature z-score statistics (population variance).

    Zero standard deviations are stored as computed and replaced by 1 when
    the transform is applied, so constant training columns map to 0.
    """

    mean: np.ndarray
    std: np.ndarray
    convention: str = "population"

    def __post_init__(self):
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise DataError("scaler mean and std must be 1-d arrays of equal length")
        if np.any(self.std < 0):
            raise DataError("scaler std must be non-negative")

    @property
    def zero_std(self) -> np.ndarray:
        return self.std == 0

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.mean.shape[0]:
            raise DataError(
                f"scaler expects {self.mean.shape[0]} features, got shape {X.shape}"
            )
        return (X - self.mean) / np.where(self.std == 0, 1.0, self.std)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "convention": self.convention}

    @classmethod
    def from_dict(cls, d: dict) -> ScalerStats:
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            convention=d.get("convention", "population"),
        )


@dataclass(frozen=True)
class ClipBox:
    """Per-feature (or scalar) bounds every adversarial iterate must respect.

    With ``strict=False`` (the default) each sample's box is widened to contain
    the clean input itself, so clipping can never move a feature further than
    the attack budget allows. ``strict=True`` clips unconditionally.
    """

    lo: np.ndarray | float
    hi: np.ndarray | float
    strict: bool = False

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != hi.shape:
            raise ConfigError("clip box bounds must have the same shape")
        if np.any(lo > hi):
            raise ConfigError("clip box requires min <= max elementwise")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigError("clip box bounds must be finite")

    @classmethod
    def from_data(cls, X: np.ndarray, strict: bool = False) -> ClipBox:
        X = np.asarray(X, dtype=np.float64)
        return cls(X.min(axis=0), X.max(axis=0), strict=strict)

    @classmethod
    def fixed_global(cls) -> ClipBox:
        return cls(-0.98, 0.99, strict=True)

    @classmethod
    def unbounded(cls, scale: float = 1e6) -> ClipBox:
        return cls(-scale, scale)

    def bounds_for(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Effective elementwise bounds for clean inputs ``X``."""
        lo = np.broadcast_to(np.asarray(self.lo, dtype=np.float64), X.shape)
        hi = np.broadcast_to(np.asarray(self.hi, dtype=np.float64), X.shape)
        if self.strict:
            return lo, hi
        return np.minimum(lo, X), np.maximum(hi, X)

    def contains(self, X: np.ndarray) -> bool:
        return bool(np.all(X >= self.lo) and np.all(X <= self.hi))

    def to_dict(self) -> dict:
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        return {"min": lo.tolist(), "max": hi.tolist(), "strict": self.strict}

    @classmethod
    def from_dict(cls, d: dict) -> ClipBox:
        return cls(
            np.asarray(d["min"], dtype=np.float64),
            np.asarray(d["max"], dtype=np.float64),
            strict=bool(d.get("strict", False)),
        )


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str]
    scaler: ScalerStats | None = None
    clip_box: ClipBox | None = None

    def __post_init__(self):
        X, y = self.features, self.labels
        if X.ndim != 2:
            raise DataError(f"features must be 2-d, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError(f"labels shape {y.shape} does not match {X.shape[0]} rows")
        if not np.all(np.isfinite(X)):
            raise DataError("dataset features contain NaN or infinite values")
        if y.size and not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0 (benign) or 1 (attack)")
        if len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names length does not match feature count")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray) -> Dataset:
        return Dataset(
            self.features[idx], self.labels[idx], self.feature_names, self.scaler, self.clip_box
        )

    def with_features(self, X: np.ndarray, labels: np.ndarray | None = None) -> Dataset:
        return Dataset(
            X,
            self.labels if labels is None else labels,
            self.feature_names,
            self.scaler,
            self.clip_box,
        )


@dataclass(frozen=True)
class SplitSpec:
    """Train/validation/test partition settings.

    ``test_fraction`` is taken from the whole dataset (rounded up) and
    ``validation_fraction`` from what remains after the test split.
    """

    test_fraction: float = 0.4
    validation_fraction: float = 0.25
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError("validation_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class SynthConfig:
    """Two Gaussian clusters for desk-scale experiments.

    The class means sit at ``±separation/2`` along a unit direction whose
    weight ``robust_weight`` falls on the first ``robust_features`` features
    and the rest on an alternating-sign pattern over the remaining ones.
    The latter block also carries a common-mode noise term (``shared_noise``,
    relative to ``noise``), mimicking the strongly correlated flow statistics
    of real traffic; it leaves the class separation untouched but makes a
    plainly trained classifier brittle to small L-inf perturbations.
    """

    samples_per_class: int = 2500
    dimensions: int = 20
    separation: float = 6.0
    noise: float = 1.0
    seed: int = 0
    robust_features: int = 2
    robust_weight: float = 0.75
    shared_noise: float = 4.0

    def __post_init__(self):
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be >= 1")
        if self.dimensions < 1:
            raise ConfigError("dimensions must be >= 1")
        if not self.noise > 0:
            raise ConfigError("noise scale must be > 0")
        if self.separation < 0 or self.shared_noise < 0:
            raise ConfigError("separation and shared_noise must be >= 0")
        if not 0 <= self.robust_weight <= 1:
            raise ConfigError("robust_weight must lie in [0, 1]")
        if self.robust_features < 0:
            raise ConfigError("robust_features must be >= 0")


def _parse_cell(token: str) -> float:
    t = token.strip().lower()
    if t in _NAN_TOKENS:
        return math.nan
    if t in _INF_TOKENS:
        return math.inf
    if t in _NEG_INF_TOKENS:
        return -math.inf
    return float(t)


def load_csv(path: str | Path, label_column: str = "Label", drop_columns=()) -> RawTable:
    """Parse a header-first CSV of flow features.

    Header names are whitespace-stripped (CICIDS-2017 files carry leading
    spaces). Missing, ``NaN`` and ``Infinity`` tokens are recognised
    case-insensitively; any other non-numeric feature cell is a
    :class:`DataError` naming its row and column.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    drop = {c.strip() for c in drop_columns}
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if label_column not in header:
            raise DataError(f"{path}: header lacks label column {label_column!r}")
        label_pos = header.index(label_column)
        keep = [i for i, h in enumerate(header) if i != label_pos and h not in drop]
        rows: list[list[float]] = []
        labels: list[str] = []
        for row_idx, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {row_idx} has {len(row)} fields, expected {len(header)}"
                )
            vals = []
            for i in keep:
                try:
                    vals.append(_parse_cell(row[i]))
                except ValueError:
                    raise DataError(
                        f"{path}: row {row_idx}, column {header[i]!r}: "
                        f"cannot parse {row[i]!r} as a number"
                    ) from None
            rows.append(vals)
            labels.append(row[label_pos])
    names = [header[i] for i in keep] + [label_column]
    cells = np.array(rows, dtype=np.float64).reshape(len(rows), len(keep))
    return RawTable(names, cells, labels, label_column)


def encode_label(text: str) -> int:
    """'BENIGN' (any case) or '0' -> 0; '1' and every attack name -> 1."""
    t = text.strip().upper()
    if t in (BENIGN_LABEL, "0"):
        return 0
    return 1


def clean(table: RawTable, fill: str = "median") -> tuple[Dataset, CleaningReport]:
    """Replace NaN and +-inf per column and binarise labels."""
    if fill not in ("median", "mean"):
        raise ConfigError(f"unknown fill strategy {fill!r}")
    if table.n_rows == 0:
        raise DataError("cannot clean an empty table")
    X = table.cells.astype(np.float64, copy=True)
    names = table.feature_names
    nan_mask = np.isnan(X)
    inf_mask = np.isinf(X)
    finite = ~(nan_mask | inf_mask)
    fills = np.empty(X.shape[1])
    for j in range(X.shape[1]):
        col = X[finite[:, j], j]
        if col.size == 0:
            raise DataError(f"column {names[j]!r} has no finite values")
        fills[j] = np.median(col) if fill == "median" else col.mean()
    X = np.where(finite, X, fills)
    y = np.array([encode_label(t) for t in table.labels], dtype=np.int64)
    report = CleaningReport(
        feature_names=list(names),
        missing_replaced=nan_mask.sum(axis=0),
        infinite_replaced=inf_mask.sum(axis=0),
        fill_values=fills,
        strategy=fill,
    )
    return Dataset(X, y, list(names)), report


def fit_scaler(X: np.ndarray) -> ScalerStats:
    X = np.asarray(X, dtype=np.float64)
    return ScalerStats(X.mean(axis=0), X.std(axis=0))


def standardize(data: Dataset, stats: ScalerStats | None = None) -> tuple[Dataset, ScalerStats]:
    """Z-score the features, fitting the statistics on ``data`` when absent."""
    if stats is None:
        stats = fit_scaler(data.features)
    elif stats.mean.shape[0] != data.n_features:
        raise DataError(
            f"scaler has {stats.mean.shape[0]} features, dataset has {data.n_features}"
        )
    X = stats.transform(data.features)
    return Dataset(X, data.labels, data.feature_names, stats, data.clip_box), stats


def _largest_remainder(total: int, weights: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Split ``total`` into integers proportional to ``weights`` without exceeding ``caps``."""
    if total == 0 or weights.sum() == 0:
        return np.zeros(len(weights), dtype=np.int64)
    exact = total * weights / weights.sum()
    out = np.minimum(np.floor(exact).astype(np.int64), caps)
    order = np.argsort(-(exact - np.floor(exact)), kind="stable")
    i = 0
    while out.sum() < total:
        k = order[i % len(order)]
        if out[k] < caps[k]:
            out[k] += 1
        i += 1
    return out


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic train/validation/test partition.

    Sizes follow ``n_test = ceil(test_fraction * n)`` and
    ``n_val = ceil(validation_fraction * (n - n_test))``. Stratified splits
    distribute each partition's size across classes by largest remainder.
    """
    n = len(data)
    n_test = math.ceil(spec.test_fraction * n)
    n_val = math.ceil(spec.validation_fraction * (n - n_test))
    n_train = n - n_test - n_val
    if n_test < 1 or n_train < 1 or (spec.validation_fraction > 0 and n_val < 1):
        raise DataError(
            f"split of {n} rows leaves an empty partition "
            f"(train={n_train}, validation={n_val}, test={n_test})"
        )
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        classes = [np.flatnonzero(data.labels == c) for c in (0, 1)]
        classes = [rng.permutation(idx) for idx in classes]
        sizes = np.array([len(c) for c in classes])
        t_counts = _largest_remainder(n_test, sizes.astype(float), sizes)
        rest = sizes - t_counts
        v_counts = _largest_remainder(n_val, rest.astype(float), rest)
        test_idx, val_idx, train_idx = [], [], []
        for idx, t, v in zip(classes, t_counts, v_counts):
            test_idx.append(idx[:t])
            val_idx.append(idx[t : t + v])
            train_idx.append(idx[t + v :])
        parts = [np.concatenate(p) for p in (train_idx, val_idx, test_idx)]
    else:
        perm = rng.permutation(n)
        parts = [perm[n_test + n_val :], perm[n_test : n_test + n_val], perm[:n_test]]
    train, val, test = (data.subset(np.sort(p)) for p in parts)
    return train, val, test


def synth_gen(config: SynthConfig) -> Dataset:
    """Generate a seeded, standardized two-class Gaussian dataset."""
    rng = np.random.default_rng(config.seed)
    d = config.dimensions
    k = min(config.robust_features, d)
    weak = d - k
    alpha = config.robust_weight if weak else 1.0
    if k == 0:
        alpha = 0.0
    beta = math.sqrt(max(0.0, 1.0 - alpha**2))
    u = np.zeros(d)
    if k:
        u[:k] = alpha / math.sqrt(k)
    if weak:
        signs = np.where(np.arange(weak) % 2 == 0, 1.0, -1.0)
        u[k:] = beta * signs / math.sqrt(weak)
    u /= np.linalg.norm(u)

    n = config.samples_per_class
    y = np.repeat(np.array([0, 1], dtype=np.int64), n)
    sign = np.where(y == 1, 1.0, -1.0)[:, None]
    eps = rng.standard_normal((2 * n, d))
    common = rng.standard_normal((2 * n, 1))
    noise = eps.copy()
    noise[:, k:] += config.shared_noise * common
    X = sign * (config.separation / 2.0) * u + config.noise * noise

    perm = rng.permutation(2 * n)
    X, y = X[perm], y[perm]
    stats = fit_scaler(X)
    X = stats.transform(X)
    names = [f"f{j}" for j in range(d)]
    return Dataset(X, y, names, stats)


def save_dataset(data: Dataset, path: str | Path, report: CleaningReport | None = None) -> tuple[Path, Path]:
    """Write ``data`` as CSV plus a ``.json`` sidecar with scaler/label/cleaning metadata."""
    path = Path(path)
    sidecar = path.with_suffix(".json")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(data.feature_names) + ["Label"])
        for row, label in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
    meta = {
        "label_column": "Label",
        "label_map": LABEL_MAP,
        "scaler": data.scaler.to_dict() if data.scaler else None,
        "clip_box": data.clip_box.to_dict() if data.clip_box else None,
        "cleaning": report.to_dict() if report else None,
    }
    sidecar.write_text(json.dumps(meta, indent=2))
    return path, sidecar


def load_dataset(path: str | Path) -> Dataset:
    """Inverse of :func:`save_dataset`; the sidecar is optional."""
    path = Path(path)
    table = load_csv(path, "Label")
    if np.any(~np.isfinite(table.cells)):
        raise DataError(f"{path}: saved dataset contains non-finite values")
    y = np.array([encode_label(t) for t in table.labels], dtype=np.int64)
    scaler = clip = None
    sidecar = path.with_suffix(".json")
    if sidecar.is_file():
        meta = json.loads(sidecar.read_text())
        scaler = ScalerStats.from_dict(meta["scaler"]) if meta.get("scaler") else None
        clip = ClipBox.from_dict(meta["clip_box"]) if meta.get("clip_box") else None
    return Dataset(table.cells, y, table.feature_names, scaler, clip)
