"""Confusion matrices, classification reports, ROC/AUC and the evaluation loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np

from .attacks import AdvBatch, perturbation_stats, run_attack
from .data import Dataset
from .defence import DefendedModel, defended_predict
from .errors import AdvNidsError, DataError
from .net import MlpModel

PHASES = ("pre-attack", "post-attack", "post-defence")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Binary counts with attack (1) as the positive class."""

    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise DataError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def as_array(self) -> np.ndarray:
        """Rows = actual (0, 1), columns = predicted (0, 1)."""
        return np.array([[self.tn, self.fp], [self.fn, self.tp]])

    def to_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class ClassReport:
    per_class: dict
    accuracy: float
    macro: dict
    weighted: dict
    fpr: float
    support: dict
    degenerate: tuple = ()

    def to_dict(self) -> dict:
        return {
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "accuracy": self.accuracy,
            "macro": self.macro,
            "weighted": self.weighted,
            "fpr": self.fpr,
            "support": {str(k): v for k, v in self.support.items()},
            "degenerate": list(self.degenerate),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ClassReport:
        return cls(
            per_class={int(k): v for k, v in d["per_class"].items()},
            accuracy=d["accuracy"],
            macro=d["macro"],
            weighted=d["weighted"],
            fpr=d["fpr"],
            support={int(k): v for k, v in d["support"].items()},
            degenerate=tuple(d.get("degenerate", ())),
        )


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def to_dict(self) -> dict:
        th = [None if not np.isfinite(t) else float(t) for t in self.thresholds]
        return {"thresholds": th, "fpr": self.fpr.tolist(), "tpr": self.tpr.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> RocCurve:
        th = np.array([np.inf if t is None else t for t in d["thresholds"]], dtype=np.float64)
        return cls(th, np.asarray(d["fpr"], dtype=np.float64), np.asarray(d["tpr"], dtype=np.float64))


@dataclass
class EvalReport:
    phase: str
    class_report: ClassReport
    confusion: ConfusionMatrix
    roc: RocCurve | None
    auc: float | None
    attack: str | None = None
    attack_config: dict | None = None
    defence: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return f"{self.phase}_{self.attack or 'clean'}"

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "attack": self.attack,
            "attack_config": self.attack_config,
            "defence": self.defence,
            "confusion": self.confusion.to_dict(),
            "classification_report": self.class_report.to_dict(),
            "auc": self.auc,
            "roc": self.roc.to_dict() if self.roc else None,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        return cls(
            phase=d["phase"],
            class_report=ClassReport.from_dict(d["classification_report"]),
            confusion=ConfusionMatrix(**d["confusion"]),
            roc=RocCurve.from_dict(d["roc"]) if d.get("roc") else None,
            auc=d.get("auc"),
            attack=d.get("attack"),
            attack_config=d.get("attack_config"),
            defence=d.get("defence", []),
            extra=d.get("extra", {}),
        )


def _binary(a, what: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 1:
        raise DataError(f"{what} must be 1-d")
    if a.size and not np.all((a == 0) | (a == 1)):
        raise DataError(f"{what} must be binary (0/1)")
    return a.astype(np.int64)


def confusion(true_labels, predicted_labels) -> ConfusionMatrix:
    t = _binary(true_labels, "true labels")
    p = _binary(predicted_labels, "predicted labels")
    if t.shape != p.shape:
        raise DataError(f"length mismatch: {t.size} true vs {p.size} predicted")
    return ConfusionMatrix(
        tp=int(np.sum((t == 1) & (p == 1))),
        tn=int(np.sum((t == 0) & (p == 0))),
        fp=int(np.sum((t == 0) & (p == 1))),
        fn=int(np.sum((t == 1) & (p == 0))),
    )


def _ratio(num: int, den: int, name: str, flags: list) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def classification_report(cm: ConfusionMatrix) -> ClassReport:
    """Accuracy, per-class precision/recall/F1, macro and support-weighted means, FPR.

    Class 0 metrics treat benign as the positive role. Zero denominators give
    0 and are listed in ``degenerate``.
    """
    if cm.total == 0:
        raise DataError("empty confusion matrix")
    flags: list[str] = []
    counts = {
        1: (cm.tp, cm.fp, cm.fn),  # (true pos, false pos, false neg) in class-1 role
        0: (cm.tn, cm.fn, cm.fp),
    }
    per_class = {}
    for c, (tp, fp, fn) in counts.items():
        p = _ratio(tp, tp + fp, f"precision_{c}", flags)
        r = _ratio(tp, tp + fn, f"recall_{c}", flags)
        f = _ratio(2 * p * r, p + r, f"f1_{c}", flags) if (p + r) else _ratio(0, 0, f"f1_{c}", flags)
        per_class[c] = {"precision": p, "recall": r, "f1": f, "support": tp + fn}
    per_class = {0: per_class[0], 1: per_class[1]}
    support = {c: per_class[c]["support"] for c in (0, 1)}
    total = cm.total
    macro = {k: (per_class[0][k] + per_class[1][k]) / 2.0 for k in ("precision", "recall", "f1")}
    weighted = {
        k: (per_class[0][k] * support[0] + per_class[1][k] * support[1]) / total
        for k in ("precision", "recall", "f1")
    }
    return ClassReport(
        per_class=per_class,
        accuracy=(cm.tp + cm.tn) / total,
        macro=macro,
        weighted=weighted,
        fpr=_ratio(cm.fp, cm.fp + cm.tn, "fpr", flags),
        support=support,
        degenerate=tuple(flags),
    )


def roc_curve(scores, true_labels) -> RocCurve:
    """ROC points at every distinct score, highest first, after a ``+inf`` sentinel.

    A sample counts as positive at threshold ``t`` when its score is ``>= t``.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(true_labels, "true labels")
    if s.shape != y.shape:
        raise DataError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise DataError("scores must be finite")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs both classes present")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s_sorted)), y.size - 1]
    tps = np.cumsum(y_sorted)[last_of_group]
    fps = (last_of_group + 1) - tps
    return RocCurve(
        thresholds=np.r_[np.inf, s_sorted[last_of_group]],
        fpr=np.r_[0.0, fps / n_neg],
        tpr=np.r_[0.0, tps / n_pos],
    )


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the ROC curve."""
    f, t = curve.fpr, curve.tpr
    return float(np.sum(np.diff(f) * (t[1:] + t[:-1]) / 2.0))


def pct(value: float) -> Decimal:
    """Percentage rounded half-to-even at two decimals (on the exact binary value)."""
    return (Decimal(value) * 100).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN)


def make_report(
    true_labels,
    predicted,
    scores,
    phase: str,
    attack: str | None = None,
    attack_config: dict | None = None,
    defence: list | None = None,
    extra: dict | None = None,
) -> EvalReport:
    if phase not in PHASES:
        raise DataError(f"unknown phase {phase!r}")
    cm = confusion(true_labels, predicted)
    y = np.asarray(true_labels)
    if 0 < y.sum() < y.size:
        curve = roc_curve(scores, y)
        area = auc(curve)
    else:
        curve, area = None, None
    return EvalReport(
        phase=phase,
        class_report=classification_report(cm),
        confusion=cm,
        roc=curve,
        auc=area,
        attack=attack,
        attack_config=attack_config,
        defence=list(defence or []),
        extra=dict(extra or {}),
    )


def attack_labels(attacks) -> list[str]:
    """Report labels per attack config; repeated names get a numeric suffix."""
    seen: dict[str, int] = {}
    out = []
    for a in attacks:
        seen[a.name] = seen.get(a.name, 0) + 1
        out.append(a.name if seen[a.name] == 1 else f"{a.name}{seen[a.name]}")
    return out


def _base(model) -> MlpModel:
    return model.base if isinstance(model, DefendedModel) else model


def generate_adversarial_sets(model, test: Dataset, attacks) -> dict[str, AdvBatch]:
    """Craft one adversarial copy of ``test`` per attack against the base network."""
    base = _base(model)
    out = {}
    for label, cfg in zip(attack_labels(attacks), attacks):
        try:
            out[label] = run_attack(base, test.features, test.labels, cfg)
        except AdvNidsError as exc:
            raise type(exc)(f"attack {label}: {exc}") from exc
    return out


def evaluate_pipeline(
    model: MlpModel | DefendedModel,
    test: Dataset,
    attacks=None,
    phase: str = "post-attack",
    replay: dict[str, AdvBatch] | None = None,
    noise_seed: int = 0,
) -> list[EvalReport]:
    """Clean report followed by one report per attack.

    Adversarial sets come from ``replay`` when it holds an entry for the
    attack label, otherwise they are generated against the base network.
    Every set is scored through the full (possibly defended) prediction path.
    """
    attacks = list(attacks or [])
    defence = model.provenance if isinstance(model, DefendedModel) else []
    clean_phase = "post-defence" if phase == "post-defence" else "pre-attack"
    labels, scores, abstain = defended_predict(model, test.features, noise_seed)
    reports = [
        make_report(
            test.labels, labels, scores, clean_phase, defence=defence,
            extra={"abstained": int(abstain.sum())},
        )
    ]
    replay = replay or {}
    for i, (label, cfg) in enumerate(zip(attack_labels(attacks), attacks)):
        batch = replay.get(label)
        mode = "replay"
        if batch is None:
            mode = "regenerate"
            batch = generate_adversarial_sets(model, test, [cfg])[cfg.name]
        if batch.x_adv.shape != test.features.shape:
            raise DataError(f"attack {label}: adversarial set shape {batch.x_adv.shape} does not match test data")
        labels, scores, abstain = defended_predict(model, batch.x_adv, noise_seed + i + 1)
        reports.append(
            make_report(
                test.labels, labels, scores, phase,
                attack=label, attack_config=cfg.to_dict(), defence=defence,
                extra={
                    "mode": mode,
                    "abstained": int(abstain.sum()),
                    "perturbation": perturbation_stats(batch),
                },
            )
        )
    return reports


def render_table(report: EvalReport) -> str:
    """Plain-text classification report with rows 0/1/MA/WA and 2-decimal percentages."""
    cr = report.class_report
    head = f"phase: {report.phase}   attack: {report.attack or 'none'}"
    if report.defence:
        head += "   defence: " + ", ".join(d.get("defence", "?") for d in report.defence)
    lines = [head, "", f"{'LB':<4}{'AC(%)':>9}{'P(%)':>9}{'R(%)':>9}{'F(%)':>9}"]

    def row(lb, ac, m):
        ac_s = str(pct(ac)) if ac is not None else ""
        return f"{lb:<4}{ac_s:>9}{pct(m['precision'])!s:>9}{pct(m['recall'])!s:>9}{pct(m['f1'])!s:>9}"

    lines.append(row("0", cr.accuracy, cr.per_class[0]))
    lines.append(row("1", None, cr.per_class[1]))
    lines.append(row("MA", None, cr.macro))
    lines.append(row("WA", None, cr.weighted))
    cm = report.confusion
    w = max(len(str(v)) for v in (cm.tn, cm.fp, cm.fn, cm.tp)) + 2
    lines += [
        "",
        "confusion matrix (rows: actual, columns: predicted)",
        f"{'':<8}{'0':>{w}}{'1':>{w}}",
        f"{'0':<8}{cm.tn:>{w}}{cm.fp:>{w}}",
        f"{'1':<8}{cm.fn:>{w}}{cm.tp:>{w}}",
        "",
        f"FPR(%): {pct(cr.fpr)}",
    ]
    if report.auc is not None:
        lines.append(f"AUC: {report.auc:.6f} ({pct(report.auc)})")
    if cr.degenerate:
        lines.append("degenerate metrics (zero denominator): " + ", ".join(cr.degenerate))
    return "\n".join(lines) + "\n"
