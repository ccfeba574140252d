from __future__ import annotations

import json
import subprocess
import sys

import pytest

from advnids import cli, pipeline
from advnids.cli import main
from advnids.errors import AdvNidsError, NumericalError
from advnids.persist import load_model


def small_config(tmp_path, **extra):
    cfg = {
        "seed": 0,
        "output": "out",
        "data": {"synth": {"samples_per_class": 120, "dimensions": 8}},
        "model": {"hidden": [16, 8]},
        "train": {"epochs": 5, "batch_size": 64},
        **extra,
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def names(path):
    return sorted(p.name for p in path.iterdir())


@pytest.fixture
def trained(tmp_path):
    out = tmp_path / "trained"
    assert main(["train", "--config", str(small_config(tmp_path)), "-o", str(out), "--canonical"]) == 0
    return out


class TestUsage:
    @pytest.mark.parametrize(
        "argv",
        [[], ["fly"], ["train"], ["train", "--config", "x", "--bogus"], ["attack", "--model", "m", "--attack", "fgsm", "--clip", "box"]],
    )
    def test_usage_errors(self, argv, capsys):
        assert main(argv) == 2
        assert "usage" in capsys.readouterr().err

    def test_threads_must_be_positive(self, tmp_path, capsys):
        assert main(["train", "--config", str(small_config(tmp_path)), "--threads", "0"]) == 2

    def test_help(self, capsys):
        assert main(["--help"]) == 0
        out = capsys.readouterr().out
        for cmd in ("train", "attack", "defend", "evaluate", "simulate", "report", "reproduce"):
            assert cmd in out

    def test_module_entry_point(self):
        r = subprocess.run([sys.executable, "-m", "advnids", "--version"], capture_output=True, text=True)
        assert r.returncode == 0 and r.stdout.startswith("advnids ")


class TestErrors:
    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "none.json")]) == 3

    def test_config_without_output(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"data": {"synth": {}}}))
        assert main(["train", "--config", str(p)]) == 3
        assert "output" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path):
        assert main(["train", "--config", str(small_config(tmp_path, colour="red"))]) == 3

    def test_missing_test_file_leaves_nothing(self, trained, tmp_path):
        out = tmp_path / "eval"
        code = main(["evaluate", "--model", str(trained / "model.json"), "--test", str(tmp_path / "missing.csv"), "-o", str(out)])
        assert code == 4
        assert not out.exists()
        assert not [p for p in tmp_path.iterdir() if ".staging." in p.name]

    def test_missing_model(self, tmp_path):
        assert main(["evaluate", "--model", str(tmp_path / "m.json")]) == 4

    def test_numerical_failure(self, tmp_path, monkeypatch):
        def boom(run, prep):
            raise NumericalError("loss diverged at epoch 1")

        monkeypatch.setattr(pipeline, "fit_model", boom)
        out = tmp_path / "o"
        assert main(["train", "--config", str(small_config(tmp_path)), "-o", str(out)]) == 5
        assert not out.exists()

    def test_other_library_error(self, tmp_path, monkeypatch):
        def boom(run, prep):
            raise AdvNidsError("unexpected")

        monkeypatch.setattr(pipeline, "fit_model", boom)
        assert main(["train", "--config", str(small_config(tmp_path)), "-o", str(tmp_path / "o")]) == 1


class TestCommands:
    def test_train_outputs(self, trained):
        assert names(trained) == [
            "model.json", "pre-attack_clean.json", "pre-attack_clean.roc.csv",
            "pre-attack_clean.txt", "test.csv", "test.json",
        ]
        mf = load_model(trained / "model.json")
        report = json.loads((trained / "pre-attack_clean.json").read_text())
        assert mf.fingerprint["config_hash"] == report["config_hash"]
        assert "generated_at" not in report

    def test_train_flag_overrides(self, tmp_path):
        out = tmp_path / "o"
        assert main(["train", "--config", str(small_config(tmp_path)), "-o", str(out), "--epochs", "2", "--seed", "3"]) == 0
        report = json.loads((out / "pre-attack_clean.json").read_text())
        assert report["config"]["train"]["epochs"] == 2 and report["config"]["seed"] == 3
        assert report["training"]["loss"].__len__() == 2

    def test_format_selection(self, tmp_path):
        out = tmp_path / "o"
        assert main(["train", "--config", str(small_config(tmp_path)), "-o", str(out), "--format", "json"]) == 0
        assert [n for n in names(out) if n.startswith("pre-attack")] == ["pre-attack_clean.json"]

    def test_attack(self, trained, tmp_path, capsys):
        out = tmp_path / "atk"
        argv = ["attack", "--model", str(trained / "model.json"), "--attack", "fgsm", "--eps", "0.003", "-o", str(out)]
        assert main(argv) == 0
        got = names(out)
        assert {"adv_fgsm.csv", "adv_fgsm.json", "post-attack_fgsm.json", "post-attack_fgsm.txt"} <= set(got)
        doc = json.loads((out / "post-attack_fgsm.json").read_text())
        assert doc["report"]["attack_config"]["eps"] == 0.003
        assert doc["report"]["extra"]["perturbation"]["linf_max"] <= 0.003 + 1e-12
        assert "post-attack_fgsm: accuracy" in capsys.readouterr().out

    def test_attack_needs_attack(self, trained):
        assert main(["attack", "--model", str(trained / "model.json")]) == 3

    def test_evaluate_with_saved_test_set(self, trained, tmp_path):
        out = tmp_path / "ev"
        argv = ["evaluate", "--model", str(trained / "model.json"), "--test", str(trained / "test.csv"),
                "--attack", "pgd", "--eps", "0.1", "--max-iter", "3", "-o", str(out), "--canonical"]
        assert main(argv) == 0
        assert "post-attack_pgd.json" in names(out)
        clean = json.loads((out / "pre-attack_clean.json").read_text())["report"]
        first = json.loads((trained / "pre-attack_clean.json").read_text())["report"]
        assert clean["confusion"] == first["confusion"]

    def test_defend(self, tmp_path):
        cfg = small_config(
            tmp_path,
            attacks=[{"name": "fgsm", "eps": 0.1}],
            defences={"high_confidence": {"cutoff": 0.05}, "gaussian": {"sigma": 0.01, "apply_fit": False}},
        )
        out = tmp_path / "d"
        assert main(["defend", "--config", str(cfg), "-o", str(out), "--format", "json"]) == 0
        got = names(out)
        assert "model_high_confidence.json" in got and "model_gaussian.json" in got
        assert "post-defence_high_confidence_fgsm.json" in got
        doc = json.loads((out / "post-defence_high_confidence_fgsm.json").read_text())
        assert doc["report"]["extra"]["mode"] == "replay"

    def test_defend_needs_defences(self, tmp_path):
        assert main(["defend", "--config", str(small_config(tmp_path))]) == 3

    def test_simulate(self, tmp_path, capsys):
        cfg = small_config(
            tmp_path,
            simulation={"case": 2, "flows": {"n": 40}, "adversary": {"router": "R1", "attack": {"name": "fgsm", "eps": 0.3}}},
        )
        out = tmp_path / "s"
        assert main(["simulate", "--config", str(cfg), "-o", str(out)]) == 0
        assert names(out) == ["simulation_case2.flows.csv", "simulation_case2.json", "simulation_case2.txt"]
        assert "simulation case 2: evasion rate" in capsys.readouterr().out

    def test_report_rerender(self, trained, tmp_path, capsys):
        src = str(trained / "pre-attack_clean.json")
        assert main(["report", src]) == 0
        text = capsys.readouterr().out
        assert text.splitlines()[0].startswith("phase: pre-attack")
        assert main(["report", src, "--format", "csv"]) == 0
        assert capsys.readouterr().out.startswith("threshold,fpr,tpr")
        out = tmp_path / "r"
        assert main(["report", src, "-o", str(out)]) == 0
        assert (out / "pre-attack_clean.txt").read_text() == (trained / "pre-attack_clean.txt").read_text()

    def test_report_missing_file(self, tmp_path):
        assert main(["report", str(tmp_path / "none.json")]) == 4

    def test_reproduce_is_byte_identical(self, tmp_path):
        cfg = small_config(
            tmp_path,
            attacks=[{"name": "fgsm", "eps": 0.2}],
            defences={"high_confidence": {}},
            simulation={"case": 2, "flows": {"n": 20}, "adversary": {"router": "R3", "attack": {"name": "fgsm", "eps": 0.2}}},
        )
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["reproduce", "--config", str(cfg), "-o", str(a), "--canonical"]) == 0
        assert main(["reproduce", "--config", str(cfg), "-o", str(b), "--canonical"]) == 0
        assert names(a) == names(b)
        for name in names(a):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_run_alias(self):
        assert cli.run is main


def test_reproduce_stacks_high_confidence_on_retrained_model(tmp_path):
    cfg = small_config(
        tmp_path,
        attacks=[{"name": "fgsm", "eps": 0.2}],
        defences={"adversarial_training": {"epochs": 2}, "high_confidence": {"cutoff": 0.05}},
    )
    out = tmp_path / "o"
    assert main(["reproduce", "--config", str(cfg), "-o", str(out), "--format", "json"]) == 0
    got = names(out)
    assert "model_adversarial_training+high_confidence.json" in got
    doc = json.loads((out / "post-defence_adversarial_training+high_confidence_fgsm.json").read_text())
    assert [d["defence"] for d in doc["report"]["defence"]] == ["adversarial_training", "high_confidence"]
    stacked = load_model(out / "model_adversarial_training+high_confidence.json")
    retrained = load_model(out / "model_adversarial_training.json")
    assert stacked.model.weights[0].tobytes() == retrained.model.weights[0].tobytes()
