"""Model files, adversarial-batch files and report files.

Every writer goes through :class:`Staging` or :func:`atomic_write_text`, so a
failing command never leaves half-written artifacts behind.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import AdvBatch
from .data import ClipBox, ScalerStats
from .defence import DefendedModel, GdaConfig, HcConfig
from .errors import DataError
from .evaluation import EvalReport, render_table
from .flowsim import SimReport
from .net import Architecture, MlpModel

MODEL_FORMAT_VERSION = 1
REPORT_FORMAT_VERSION = 1
REPORT_FORMATS = ("json", "text", "csv")


def canonical_json(obj) -> str:
    """Sorted-key, fixed-indent JSON; floats keep their shortest round-trip repr."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write ``text`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


class Staging:
    """Collect a command's output files in a scratch directory, publish all at once.

    Use as a context manager: files are written under :attr:`root` and moved
    into ``out_dir`` only if the block finishes without raising.
    """

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        parent = self.out_dir.resolve().parent
        if not parent.is_dir():
            raise DataError(f"output parent directory {parent} does not exist")
        self.root = Path(tempfile.mkdtemp(dir=parent, prefix=f".{self.out_dir.name}.staging."))
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.root / name

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text, encoding="utf-8")
        return p

    def commit(self) -> list[Path]:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        out = []
        for name in dict.fromkeys(self.files):
            dest = self.out_dir / name
            os.replace(self.root / name, dest)
            out.append(dest)
        shutil.rmtree(self.root, ignore_errors=True)
        return out

    def abort(self) -> None:
        shutil.rmtree(self.root, ignore_errors=True)

    def __enter__(self) -> Staging:
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.committed = self.commit()
        else:
            self.abort()
        return False


# --------------------------------------------------------------------- models


@dataclass
class ModelFile:
    model: MlpModel
    scaler: ScalerStats | None = None
    clip_box: ClipBox | None = None
    preprocessor: GdaConfig | None = None
    postprocessor: HcConfig | None = None
    provenance: list = field(default_factory=list)
    fingerprint: dict = field(default_factory=dict)
    feature_names: list | None = None

    @classmethod
    def wrap(cls, model: MlpModel | DefendedModel, **kw) -> ModelFile:
        if isinstance(model, DefendedModel):
            return cls(
                model.base,
                preprocessor=model.preprocessor,
                postprocessor=model.postprocessor,
                provenance=list(model.provenance),
                **kw,
            )
        return cls(model, **kw)

    def predictor(self) -> MlpModel | DefendedModel:
        if self.preprocessor is None and self.postprocessor is None and not self.provenance:
            return self.model
        return DefendedModel(self.model, self.preprocessor, self.postprocessor, list(self.provenance))

    def to_dict(self) -> dict:
        m = self.model
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "architecture": m.architecture.to_dict(),
            "seed": m.seed,
            "layers": [
                {"weight": W.tolist(), "bias": b.tolist()} for W, b in zip(m.weights, m.biases)
            ],
            "scaler": self.scaler.to_dict() if self.scaler else None,
            "clip_box": self.clip_box.to_dict() if self.clip_box else None,
            "feature_names": self.feature_names,
            "defence": {
                "preprocessor": self.preprocessor.to_dict() if self.preprocessor else None,
                "postprocessor": self.postprocessor.to_dict() if self.postprocessor else None,
                "provenance": self.provenance,
            },
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ModelFile:
        version = d.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise DataError(
                f"unsupported model format version {version!r} (expected {MODEL_FORMAT_VERSION})"
            )
        try:
            arch = Architecture.from_dict(d["architecture"])
            layers = d["layers"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed model file: {exc}") from None
        sizes = arch.layer_sizes
        if len(layers) != len(sizes) - 1:
            raise DataError(f"model file has {len(layers)} layers, architecture needs {len(sizes) - 1}")
        weights, biases = [], []
        for i, layer in enumerate(layers):
            want_w, want_b = (sizes[i], sizes[i + 1]), (sizes[i + 1],)
            try:
                W = np.array(layer["weight"], dtype=np.float64)
                b = np.array(layer["bias"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"layer {i}: unreadable parameters ({exc})") from None
            if W.shape != want_w:
                raise DataError(f"layer {i}: weight shape {W.shape}, expected {want_w}")
            if b.shape != want_b:
                raise DataError(f"layer {i}: bias shape {b.shape}, expected {want_b}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise DataError(f"layer {i}: non-finite parameters")
            weights.append(W)
            biases.append(b)
        model = MlpModel(arch, weights, biases, int(d.get("seed", 0)))
        dfn = d.get("defence") or {}
        pre = dfn.get("preprocessor")
        post = dfn.get("postprocessor")
        return cls(
            model,
            scaler=ScalerStats.from_dict(d["scaler"]) if d.get("scaler") else None,
            clip_box=ClipBox.from_dict(d["clip_box"]) if d.get("clip_box") else None,
            preprocessor=GdaConfig(**pre) if pre else None,
            postprocessor=HcConfig(**post) if post else None,
            provenance=list(dfn.get("provenance", [])),
            fingerprint=dict(d.get("fingerprint", {})),
            feature_names=d.get("feature_names"),
        )


def model_to_text(mf: ModelFile) -> str:
    return canonical_json(mf.to_dict())


def save_model(mf: ModelFile, path: str | Path) -> Path:
    return atomic_write_text(path, model_to_text(mf))


def load_model(path: str | Path) -> ModelFile:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such model file: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise DataError(f"{path}: expected a JSON object")
    return ModelFile.from_dict(d)


# -------------------------------------------------------------- adv batches


def adv_batch_csv(batch: AdvBatch, feature_names=None) -> str:
    d = batch.x_adv.shape[1]
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(d)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names + ["Label", "success"])
    for row, y, s in zip(batch.x_adv, batch.labels, batch.success):
        w.writerow([repr(float(v)) for v in row] + [int(y), int(bool(s))])
    return buf.getvalue()


def write_adv_batch(stage: Staging, stem: str, batch: AdvBatch, feature_names=None) -> None:
    stage.write_text(f"{stem}.csv", adv_batch_csv(batch, feature_names))
    stage.write_text(f"{stem}.json", canonical_json(batch.sidecar()))


def read_adv_batch(path: str | Path, clean: np.ndarray) -> AdvBatch:
    """Load an adversarial CSV; ``clean`` supplies the original rows for ``delta``."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    X = np.array([[float(v) for v in r[:-2]] for r in body], dtype=np.float64)
    y = np.array([int(r[-2]) for r in body], dtype=np.int64)
    s = np.array([r[-1] == "1" for r in body], dtype=bool)
    clean = np.asarray(clean, dtype=np.float64)
    if X.shape != clean.shape:
        raise DataError(f"{path}: shape {X.shape} does not match clean rows {clean.shape}")
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
    return AdvBatch(X, X - clean, y, s, meta.get("attack", "unknown"), meta.get("config", {}))


# ------------------------------------------------------------------ reports


def report_stem(report: EvalReport | SimReport) -> str:
    if isinstance(report, SimReport):
        return f"simulation_case{report.case}"
    parts = [report.phase]
    if report.defence:
        parts.append("+".join(d.get("defence", "defence") for d in report.defence))
    parts.append(report.attack or "clean")
    return "_".join(parts)


def roc_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "fpr", "tpr"])
    if report.roc is not None:
        for t, f, p in zip(report.roc.thresholds, report.roc.fpr, report.roc.tpr):
            w.writerow(["inf" if math.isinf(t) else repr(float(t)), repr(float(f)), repr(float(p))])
    return buf.getvalue()


def sim_text(report: SimReport) -> str:
    def rate(v):
        return "n/a" if v is None else f"{100 * v:.2f}"

    lines = [
        f"simulation case {report.case}",
        f"malicious sent/passed: {report.malicious_sent}/{report.malicious_passed}"
        f"   evasion rate(%): {rate(report.evasion_rate)}",
        f"benign sent/blocked: {report.benign_sent}/{report.benign_blocked}"
        f"   false-block rate(%): {rate(report.false_block_rate)}",
        "",
        f"{'id':<8}{'path':<8}{'label':>6}{'pert':>6}{'score':>12}  verdict",
    ]
    for r in report.records:
        lines.append(
            f"{r.id:<8}{r.path:<8}{r.label:>6}{int(r.perturbed):>6}{r.score:>12.6f}  {r.verdict}"
        )
    for w in report.warnings:
        lines.append(f"warning: {w}")
    return "\n".join(lines) + "\n"


def envelope(report: EvalReport | SimReport, meta: dict | None, canonical: bool) -> dict:
    out = {
        "tool": "advnids",
        "version": __version__,
        "report_format_version": REPORT_FORMAT_VERSION,
        "kind": "simulation" if isinstance(report, SimReport) else "evaluation",
        "report": report.to_dict(),
    }
    out.update(meta or {})
    if not canonical:
        out["generated_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return out


def write_report(
    reports,
    out_dir: str | Path | Staging,
    formats=REPORT_FORMATS,
    meta: dict | None = None,
    canonical: bool = False,
) -> list[Path]:
    """Write each report as JSON, a text table and a CSV (ROC or per-flow trace).

    ``out_dir`` may be a directory path or an open :class:`Staging`; with a
    path the files appear together or not at all.
    """
    reports = list(reports)
    if not reports:
        raise DataError("no reports to write")
    unknown = set(formats) - set(REPORT_FORMATS)
    if unknown:
        raise DataError(f"unknown report formats {sorted(unknown)}")
    if isinstance(out_dir, Staging):
        _write_reports(reports, out_dir, formats, meta, canonical)
        return [out_dir.root / f for f in out_dir.files]
    out = Path(out_dir)
    if out.exists() and not os.access(out, os.W_OK):
        raise DataError(f"output directory {out} is not writable")
    with Staging(out) as stage:
        _write_reports(reports, stage, formats, meta, canonical)
    return stage.committed


def _write_reports(reports, stage: Staging, formats, meta, canonical) -> None:
    seen: dict[str, int] = {}
    for rep in reports:
        stem = report_stem(rep)
        seen[stem] = seen.get(stem, 0) + 1
        if seen[stem] > 1:
            stem = f"{stem}_{seen[stem]}"
        if "json" in formats:
            stage.write_text(f"{stem}.json", canonical_json(envelope(rep, meta, canonical)))
        is_sim = isinstance(rep, SimReport)
        if "text" in formats:
            stage.write_text(f"{stem}.txt", sim_text(rep) if is_sim else render_table(rep))
        if "csv" in formats:
            if is_sim:
                stage.write_text(f"{stem}.flows.csv", rep.to_csv())
            else:
                stage.write_text(f"{stem}.roc.csv", roc_csv(rep))


def read_report(path: str | Path) -> EvalReport | SimReport:
    """Load a JSON report file written by :func:`write_report`."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such report: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None
    if d.get("kind") == "evaluation":
        return EvalReport.from_dict(d["report"])
    if d.get("kind") == "simulation":
        return SimReport.from_dict(d["report"])
    raise DataError(f"{path}: not an advnids report")
