"""End-to-end stages driven by a :class:`~advnids.config.RunConfig`.

``reproduce`` chains training and clean evaluation, attack generation with
post-attack evaluation, and defence with post-defence evaluation (replaying
the cached adversarial sets), plus the flow simulation when configured.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .data import (
    CleaningReport,
    ClipBox,
    Dataset,
    RawTable,
    ScalerStats,
    clean,
    load_csv,
    save_dataset,
    split,
    standardize,
    synth_gen,
)
from .defence import DefendedModel, adversarial_train, gaussian_defence
from .errors import DataError
from .evaluation import EvalReport, evaluate_pipeline, generate_adversarial_sets
from .flowsim import (
    AdversaryPlacement,
    SimConfig,
    SimReport,
    build_topology,
    flows_from_dataset,
    run_simulation,
    scenario_flows,
    surrogate_transfer,
)
from .net import Architecture, MlpModel, TrainHistory, init_model, random_search, train
from .persist import ModelFile, Staging, save_model, write_adv_batch, write_report

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    train: Dataset
    validation: Dataset
    test: Dataset
    clip_box: ClipBox | None
    scaler: ScalerStats | None
    cleaning: CleaningReport | None


def _concat_tables(tables: list[RawTable]) -> RawTable:
    first = tables[0]
    for t in tables[1:]:
        if t.column_names != first.column_names:
            raise DataError("CSV files do not share the same columns")
    cells = np.concatenate([t.cells for t in tables])
    labels = [lab for t in tables for lab in t.labels]
    return RawTable(first.column_names, cells, labels, first.label_column)


def resolve_clip(spec, train_features: np.ndarray) -> ClipBox | None:
    if isinstance(spec, dict):
        return ClipBox.from_dict(spec)
    if spec == "global":
        return ClipBox.fixed_global()
    if spec == "none":
        return None
    return ClipBox.from_data(train_features)


def prepare(run: RunConfig) -> Prepared:
    """Load or generate data, split it and derive scaler and clip box from the training part."""
    if "synth" in run.data:
        ds = synth_gen(run.data["synth"])
        tr, va, te = split(ds, run.split)
        scaler, report = ds.scaler, None
    else:
        c = run.data["csv"]
        tables = [load_csv(p, c["label_column"], c["drop_columns"]) for p in c["paths"]]
        ds, report = clean(_concat_tables(tables), c["fill"])
        tr, va, te = split(ds, run.split)
        tr, scaler = standardize(tr)
        va, _ = standardize(va, scaler)
        te, _ = standardize(te, scaler)
    box = resolve_clip(run.clip, tr.features)
    log.info("data: train=%d validation=%d test=%d features=%d", len(tr), len(va), len(te), tr.n_features)
    return Prepared(tr, va, te, box, scaler, report)


def fit_model(run: RunConfig, prep: Prepared) -> tuple[MlpModel, TrainHistory, list]:
    """Train the NIDS model, optionally after a random architecture search."""
    trials = []
    arch = Architecture(prep.train.n_features, run.hidden, run.l2_lambda)
    cfg = run.train
    if run.search:
        s = run.search
        best, trials = random_search(
            s["space"], s["budget"], prep.train, prep.validation, s["seed"], run.train, run.l2_lambda
        )
        arch, cfg = best.architecture, best.config
    model, hist = train(init_model(arch, cfg.seed), prep.train, prep.validation, cfg)
    return model, hist, trials


def fingerprint(run: RunConfig) -> dict:
    return {"seed": run.seed, "config_hash": run.hash}


def model_file(run: RunConfig, prep: Prepared, model: MlpModel | DefendedModel) -> ModelFile:
    return ModelFile.wrap(
        model,
        scaler=prep.scaler,
        clip_box=prep.clip_box,
        fingerprint=fingerprint(run),
        feature_names=list(prep.train.feature_names),
    )


def report_meta(run: RunConfig) -> dict:
    """Config echo for report files; the output directory is left out so reruns elsewhere match."""
    config = run.to_dict()
    config.pop("output")
    return {"config_hash": run.hash, "config": config}


def apply_defences(
    run: RunConfig, model: MlpModel, prep: Prepared
) -> list[tuple[str, MlpModel | DefendedModel]]:
    """One defended model per configured defence, each built from ``model``.

    With both adversarial training and the high-confidence filter configured,
    the filter is also applied to the retrained network.
    """
    out = []
    d = run.defences
    if "adversarial_training" in d:
        at = d["adversarial_training"]
        at = type(at)(
            attacks=tuple(run.with_clip(at.attacks, prep.clip_box)),
            ratio=at.ratio,
            epochs=at.epochs,
            seed=at.seed,
            train=at.train,
        )
        retrained, _ = adversarial_train(model, prep.train, prep.validation, at)
        prov = {"defence": "adversarial_training", "config": at.to_dict()}
        out.append(("adversarial_training", DefendedModel(retrained, provenance=[prov])))
    if "gaussian" in d:
        gm, _ = gaussian_defence(model, prep.train, prep.validation, d["gaussian"], run.train)
        out.append(("gaussian", gm))
    if "high_confidence" in d:
        hc = d["high_confidence"]
        prov = {"defence": "high_confidence", "config": hc.to_dict()}
        out.append(("high_confidence", DefendedModel(model, postprocessor=hc, provenance=[prov])))
        if "adversarial_training" in d:
            # stacked variant: score filter on top of the retrained network
            at_model = out[0][1]
            out.append((
                "adversarial_training+high_confidence",
                DefendedModel(at_model.base, postprocessor=hc, provenance=[*at_model.provenance, prov]),
            ))
    return out


def train_surrogate(run: RunConfig, prep: Prepared) -> MlpModel:
    sg = run.simulation["adversary"]["surrogate"]
    rng = np.random.default_rng(sg["seed"])
    n = len(prep.train)
    m = max(2, int(round(sg["train_fraction"] * n)))
    idx = np.sort(rng.choice(n, size=min(m, n), replace=False))
    arch = Architecture(prep.train.n_features, tuple(sg["hidden"]), sg["l2_lambda"])
    model, _ = train(init_model(arch, sg["seed"]), prep.train.subset(idx), None, sg["train"])
    return model


def simulate(
    run: RunConfig, target: MlpModel | DefendedModel, prep: Prepared
) -> tuple[SimReport, dict | None]:
    """Run the configured flow simulation; returns the report and transfer stats (case 3)."""
    sim = run.simulation
    topo = build_topology(sim["topology"])
    if sim["flows"] == "scenario":
        flows = scenario_flows(prep.test, run.seed)
    else:
        n = min(sim["flows"]["n"], len(prep.test))
        flows = flows_from_dataset(prep.test, n, topo, sim["flows"]["seed"])
    adv = sim["adversary"]
    placement = None
    transfer = None
    if adv is not None and sim["case"] != 1:
        attack = run.with_clip([adv["attack"]], prep.clip_box)[0]
        surrogate = train_surrogate(run, prep) if adv["surrogate"] is not None else None
        placement = AdversaryPlacement(adv["router"], adv["mode"], attack, surrogate, adv["perturb_benign"])
        if surrogate is not None:
            base = target.base if isinstance(target, DefendedModel) else target
            transfer = surrogate_transfer(base, surrogate, prep.test.features, prep.test.labels, attack).to_dict()
    cfg = SimConfig(topo, flows, sim["case"], target, placement, sim["threshold"], run.seed)
    return run_simulation(cfg), transfer


def reproduce(run: RunConfig, stage: Staging, canonical: bool = False) -> dict:
    """Full pipeline into ``stage``; returns a summary of headline numbers."""
    prep = prepare(run)
    model, hist, trials = fit_model(run, prep)
    save_model(model_file(run, prep, model), stage.path("model.json"))
    save_dataset(prep.test, stage.path("test.csv"))
    stage.files.append("test.json")
    meta = report_meta(run)
    meta["training"] = hist.to_dict()
    if trials:
        meta["search"] = [t.to_dict() for t in trials]

    attacks = run.with_clip(run.attacks, prep.clip_box)
    cached = generate_adversarial_sets(model, prep.test, attacks)
    for label, batch in cached.items():
        write_adv_batch(stage, f"adv_{label}", batch, prep.test.feature_names)
    reports: list[EvalReport | SimReport] = evaluate_pipeline(model, prep.test, attacks, replay=cached)

    for name, defended in apply_defences(run, model, prep):
        save_model(model_file(run, prep, defended), stage.path(f"model_{name}.json"))
        reports += evaluate_pipeline(defended, prep.test, attacks, phase="post-defence", replay=cached)

    transfer = None
    if run.simulation:
        sim_report, transfer = simulate(run, model, prep)
        reports.append(sim_report)
    if transfer is not None:
        meta["transfer"] = transfer
    write_report(reports, stage, meta=meta, canonical=canonical)

    summary = {}
    for r in reports:
        if isinstance(r, SimReport):
            summary[f"simulation_case{r.case}_evasion_rate"] = r.evasion_rate
        else:
            tag = "+".join(d.get("defence", "") for d in r.defence)
            key = f"{r.label}" + (f"[{tag}]" if tag else "")
            summary[key] = r.class_report.accuracy
    return summary
