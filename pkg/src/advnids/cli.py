"""Command-line entry point: ``advnids <command> [options]``.

Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 configuration
error, 4 data or I/O error, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .attacks import CONFIG_TYPES
from .config import RunConfig, load_run_config
from .data import clean, load_csv, load_dataset, save_dataset, standardize
from .defence import DefendedModel
from .errors import AdvNidsError, ConfigError, DataError, NumericalError
from .evaluation import evaluate_pipeline, generate_adversarial_sets, render_table
from .flowsim import SimReport
from .persist import (
    REPORT_FORMATS,
    ModelFile,
    Staging,
    canonical_json,
    load_model,
    read_report,
    roc_csv,
    save_model,
    sim_text,
    write_adv_batch,
    write_report,
)
from . import pipeline

log = logging.getLogger("advnids")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERICAL = 5

# flag name -> config field, per attack
_ATTACK_FLAGS = {
    "eps": "eps",
    "eps_step": "eps_step",
    "max_iter": "max_iter",
    "random_start": "random_start",
    "theta": "theta",
    "gamma": "gamma",
    "confidence": "confidence",
    "cw_lr": "learning_rate",
    "binary_search_steps": "binary_search_steps",
    "initial_const": "initial_const",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, help="global seed (overrides the config)")
    g.add_argument("--threads", type=int, default=1, help="numeric thread limit (default 1)")
    g.add_argument("--output", "-o", help="output directory")
    g.add_argument(
        "--format", action="append", choices=REPORT_FORMATS, dest="formats",
        help="report formats to write (repeatable; default: all)",
    )
    g.add_argument("--canonical", action="store_true", help="omit timestamps from reports")
    g.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _attack_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("attack options")
    g.add_argument("--attack", choices=sorted(CONFIG_TYPES), help="attack to run")
    g.add_argument("--eps", type=float)
    g.add_argument("--eps-step", type=float)
    g.add_argument("--max-iter", type=int)
    g.add_argument("--random-start", action="store_true", default=None)
    g.add_argument("--theta", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--confidence", type=float)
    g.add_argument("--cw-lr", type=float, help="C&W learning rate")
    g.add_argument("--binary-search-steps", type=int)
    g.add_argument("--initial-const", type=float)
    g.add_argument(
        "--clip", default="model", choices=("model", "global", "none"),
        help="clip box: stored with the model, the fixed global box, or none (default: model)",
    )


def build_parser() -> argparse.ArgumentParser:
    parent = _global_flags()
    ap = _Parser(prog="advnids", description="Adversarial robustness toolkit for an MLP intrusion detector.")
    ap.add_argument("--version", action="version", version=f"advnids {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[parent], help="train a model and write a clean report")
    p.add_argument("--config", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)

    p = sub.add_parser("attack", parents=[parent], help="craft adversarial sets against a model")
    p.add_argument("--model", required=True)
    p.add_argument("--test", help="test CSV (default: test.csv next to the model)")
    p.add_argument("--config", help="run config supplying attacks and/or data")
    _attack_flags(p)

    p = sub.add_parser("defend", parents=[parent], help="apply the configured defences")
    p.add_argument("--config", required=True)
    p.add_argument("--model", help="start from this model instead of training one")

    p = sub.add_parser("evaluate", parents=[parent], help="evaluate a model on test data")
    p.add_argument("--model", required=True)
    p.add_argument("--test", help="test CSV (default: test.csv next to the model)")
    p.add_argument("--config", help="run config supplying data")
    _attack_flags(p)

    p = sub.add_parser("simulate", parents=[parent], help="run the flow simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--model", help="target model (default: train one from the config)")

    p = sub.add_parser("report", parents=[parent], help="re-render saved JSON reports")
    p.add_argument("reports", nargs="+", help="report JSON files")

    p = sub.add_parser("reproduce", parents=[parent], help="train, attack, defend and evaluate end to end")
    p.add_argument("--config", required=True)
    return ap


# ------------------------------------------------------------------ helpers


def _formats(args) -> tuple[str, ...]:
    return tuple(dict.fromkeys(args.formats)) if args.formats else REPORT_FORMATS


def _run_config(args) -> RunConfig:
    run = load_run_config(args.config, seed=args.seed, output=args.output)
    overrides = {
        k: v
        for k, v in (
            ("epochs", getattr(args, "epochs", None)),
            ("batch_size", getattr(args, "batch_size", None)),
            ("learning_rate", getattr(args, "learning_rate", None)),
        )
        if v is not None
    }
    if overrides:
        raw = run.to_dict()
        raw["train"] = {**raw["train"], **overrides}
        run = RunConfig.from_dict(raw, base_dir=Path(args.config).parent)
    return run


def _out_dir(args, default: Path) -> Path:
    return Path(args.output) if args.output else default


def _cli_attacks(args, mf: ModelFile, run: RunConfig | None) -> list:
    if args.attack:
        cls = CONFIG_TYPES[args.attack]
        kwargs = {}
        for flag, fieldname in _ATTACK_FLAGS.items():
            v = getattr(args, flag)
            if v is not None:
                kwargs[fieldname] = v
        if args.clip == "model":
            kwargs["clip"] = mf.clip_box
        elif args.clip == "global":
            kwargs["clip"] = "global"
        try:
            return [cls.from_dict(kwargs)]
        except TypeError as exc:
            raise ConfigError(f"{args.attack}: {exc}") from None
    if run is not None:
        return run.with_clip(run.attacks, mf.clip_box)
    return []


def _load_test(args, mf: ModelFile, run: RunConfig | None):
    if args.test:
        path = Path(args.test)
        if not path.is_file():
            raise DataError(f"no such test file: {path}")
        if path.with_suffix(".json").is_file():
            data = load_dataset(path)
        else:
            data, _ = clean(load_csv(path))
            if mf.scaler is not None:
                data, _ = standardize(data, mf.scaler)
    elif run is not None:
        data = pipeline.prepare(run).test
    else:
        path = Path(args.model).parent / "test.csv"
        if not path.is_file():
            raise DataError("no test data: pass --test or --config")
        data = load_dataset(path)
    if data.n_features != mf.model.input_dim:
        raise DataError(f"model expects {mf.model.input_dim} features, test data has {data.n_features}")
    return data


def _meta(mf: ModelFile, run: RunConfig | None) -> dict:
    meta = {"model_fingerprint": mf.fingerprint}
    if run is not None:
        meta.update(pipeline.report_meta(run))
    return meta


def _say(msg: str) -> None:
    print(msg)


def _announce(paths) -> None:
    for p in paths:
        _say(f"wrote {p}")


def _summarise(reports) -> None:
    for r in reports:
        if isinstance(r, SimReport):
            _say(f"simulation case {r.case}: evasion rate {r.evasion_rate}")
        else:
            tag = "+".join(d.get("defence", "") for d in r.defence)
            _say(f"{r.label}{'[' + tag + ']' if tag else ''}: accuracy {r.class_report.accuracy:.4f}")


# ----------------------------------------------------------------- commands


def cmd_train(args) -> int:
    run = _run_config(args)
    prep = pipeline.prepare(run)
    model, hist, trials = pipeline.fit_model(run, prep)
    reports = evaluate_pipeline(model, prep.test)
    meta = pipeline.report_meta(run)
    meta["training"] = hist.to_dict()
    if trials:
        meta["search"] = [t.to_dict() for t in trials]
    with Staging(_out_dir(args, Path(run.output))) as stage:
        save_model(pipeline.model_file(run, prep, model), stage.path("model.json"))
        save_dataset(prep.test, stage.path("test.csv"))
        stage.files.append("test.json")
        write_report(reports, stage, _formats(args), meta, args.canonical)
    _summarise(reports)
    _announce(stage.committed)
    return EXIT_OK


def cmd_attack(args) -> int:
    mf = load_model(args.model)
    run = _run_config(args) if args.config else None
    attacks = _cli_attacks(args, mf, run)
    if not attacks:
        raise ConfigError("no attack given: use --attack or a config with attacks")
    test = _load_test(args, mf, run)
    predictor = mf.predictor()
    cached = generate_adversarial_sets(predictor, test, attacks)
    reports = evaluate_pipeline(predictor, test, attacks, replay=cached)
    with Staging(_out_dir(args, Path(args.model).parent)) as stage:
        for label, batch in cached.items():
            write_adv_batch(stage, f"adv_{label}", batch, test.feature_names)
        write_report(reports, stage, _formats(args), _meta(mf, run), args.canonical)
    _summarise(reports)
    _announce(stage.committed)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    mf = load_model(args.model)
    run = _run_config(args) if args.config else None
    test = _load_test(args, mf, run)
    attacks = _cli_attacks(args, mf, None)
    predictor = mf.predictor()
    phase = "post-defence" if isinstance(predictor, DefendedModel) else "post-attack"
    reports = evaluate_pipeline(predictor, test, attacks, phase=phase)
    with Staging(_out_dir(args, Path(args.model).parent)) as stage:
        write_report(reports, stage, _formats(args), _meta(mf, run), args.canonical)
    _summarise(reports)
    _announce(stage.committed)
    return EXIT_OK


def cmd_defend(args) -> int:
    run = _run_config(args)
    if not run.defences:
        raise ConfigError("config has no defences section")
    prep = pipeline.prepare(run)
    if args.model:
        model = load_model(args.model).model
        if model.input_dim != prep.train.n_features:
            raise DataError(f"model expects {model.input_dim} features, data has {prep.train.n_features}")
    else:
        model, _, _ = pipeline.fit_model(run, prep)
    attacks = run.with_clip(run.attacks, prep.clip_box)
    cached = generate_adversarial_sets(model, prep.test, attacks)
    reports = evaluate_pipeline(model, prep.test, attacks, replay=cached)
    defended = pipeline.apply_defences(run, model, prep)
    with Staging(_out_dir(args, Path(run.output))) as stage:
        for name, dm in defended:
            save_model(pipeline.model_file(run, prep, dm), stage.path(f"model_{name}.json"))
            reports += evaluate_pipeline(dm, prep.test, attacks, phase="post-defence", replay=cached)
        write_report(reports, stage, _formats(args), pipeline.report_meta(run), args.canonical)
    _summarise(reports)
    _announce(stage.committed)
    return EXIT_OK


def cmd_simulate(args) -> int:
    run = _run_config(args)
    if not run.simulation:
        raise ConfigError("config has no simulation section")
    prep = pipeline.prepare(run)
    if args.model:
        target = load_model(args.model).predictor()
    else:
        target, _, _ = pipeline.fit_model(run, prep)
    report, transfer = pipeline.simulate(run, target, prep)
    meta = pipeline.report_meta(run)
    if transfer is not None:
        meta["transfer"] = transfer
    with Staging(_out_dir(args, Path(run.output))) as stage:
        write_report([report], stage, _formats(args), meta, args.canonical)
    _summarise([report])
    _announce(stage.committed)
    return EXIT_OK


def cmd_report(args) -> int:
    reports = [read_report(p) for p in args.reports]
    fmts = _formats(args)
    if args.output:
        with Staging(Path(args.output)) as stage:
            write_report(reports, stage, fmts, {"rerendered": True}, args.canonical)
        _announce(stage.committed)
        return EXIT_OK
    fmt = fmts[0] if args.formats else "text"
    for r in reports:
        is_sim = isinstance(r, SimReport)
        if fmt == "text":
            sys.stdout.write(sim_text(r) if is_sim else render_table(r))
        elif fmt == "csv":
            sys.stdout.write(r.to_csv() if is_sim else roc_csv(r))
        else:
            sys.stdout.write(canonical_json(r.to_dict()))
    return EXIT_OK


def cmd_reproduce(args) -> int:
    run = _run_config(args)
    with Staging(_out_dir(args, Path(run.output))) as stage:
        summary = pipeline.reproduce(run, stage, canonical=args.canonical)
    for k, v in summary.items():
        _say(f"{k}: {v}")
    _announce(stage.committed)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "defend": cmd_defend,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "report": cmd_report,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        print("advnids: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"advnids: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"advnids: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"advnids: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except AdvNidsError as exc:
        print(f"advnids: error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


run = main

if __name__ == "__main__":
    sys.exit(main())
