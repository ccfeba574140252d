"""Declarative run configuration (JSON, versioned).

Schema, version 1. Only ``data`` and ``output`` are required::

    {
      "version": 1,
      "seed": 0,
      "output": "out",
      "data": {"synth": {...SynthConfig fields...}}
           or {"csv": {"paths": [...], "label_column": "Label",
                       "drop_columns": [], "fill": "median"}},
      "split": {...SplitSpec fields...},
      "clip": "train" | "global" | "none" | {"min": ..., "max": ..., "strict": false},
      "model": {"hidden": [60, 40, 20, 10], "l2_lambda": 0.0001},
      "train": {...TrainConfig fields...},
      "search": {"budget": 8, "space": {...SearchSpace fields...}},
      "attacks": [{"name": "fgsm", "eps": 0.003}, ...],
      "defences": {
        "adversarial_training": {...AtConfig fields; attacks default to "attacks"...},
        "gaussian": {...GdaConfig fields...},
        "high_confidence": {...HcConfig fields...}
      },
      "simulation": {
        "case": 2, "threshold": 0.5,
        "flows": {"n": 200} or "scenario",
        "topology": {"routers": [...], "paths": {...}, "replace_paths": false},
        "adversary": {"router": "R3", "mode": "white-box", "attack": {...},
                      "perturb_benign": false,
                      "surrogate": {"hidden": [...], "train_fraction": 0.5,
                                    "train": {...TrainConfig fields...}}}
      }
    }

Any ``seed`` left out of a section is filled with the global ``seed``.
Attack configs without ``clip`` use the run-level clip box.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .attacks import attack_config_from_dict
from .data import ClipBox, SplitSpec, SynthConfig
from .defence import AtConfig, GdaConfig, HcConfig
from .errors import ConfigError, DataError
from .net import SearchSpace, TrainConfig
from .persist import config_hash

CONFIG_VERSION = 1
_TOP_KEYS = {
    "version", "seed", "output", "data", "split", "clip", "model", "train",
    "search", "attacks", "defences", "simulation",
}
_DEFENCE_KEYS = {"adversarial_training", "gaussian", "high_confidence"}
_SIM_KEYS = {"case", "threshold", "flows", "topology", "adversary"}
_ADV_KEYS = {"router", "mode", "attack", "perturb_benign", "surrogate"}
_SURROGATE_KEYS = {"hidden", "l2_lambda", "train_fraction", "seed", "train"}


def _check_keys(d, allowed: set, where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return d


def _build(cls, d: dict, where: str, **defaults):
    try:
        return cls(**{**defaults, **d})
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _seeded(d: dict | None, seed: int) -> dict:
    d = dict(d or {})
    d.setdefault("seed", seed)
    return d


def _attack(d: dict, seed: int, where: str):
    if not isinstance(d, dict) or "name" not in d:
        raise ConfigError(f"{where}: attack needs a name")
    d = dict(d)
    if d["name"] == "pgd":
        d.setdefault("seed", seed)
    try:
        return attack_config_from_dict(d)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class RunConfig:
    raw: dict
    seed: int
    output: str
    data: dict
    split: SplitSpec
    clip: str | dict
    hidden: tuple[int, ...]
    l2_lambda: float
    train: TrainConfig
    search: dict | None
    attacks: list = field(default_factory=list)
    defences: dict = field(default_factory=dict)
    simulation: dict | None = None
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(
        cls, d: dict, base_dir: str | Path = ".", seed: int | None = None, output: str | None = None
    ) -> RunConfig:
        d = dict(_check_keys(d, _TOP_KEYS, "config"))
        version = d.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version!r}")
        if seed is not None:
            d["seed"] = seed
        if output is not None:
            d["output"] = output
        if "data" not in d:
            raise ConfigError("config needs a data section")
        if "output" not in d:
            raise ConfigError("config needs an output directory")
        g = d.get("seed", 0)
        if not isinstance(g, int) or isinstance(g, bool):
            raise ConfigError("seed must be an integer")
        base_dir = Path(base_dir)

        data = _check_keys(d["data"], {"synth", "csv"}, "data")
        if len(data) != 1:
            raise ConfigError("data needs exactly one of 'synth' or 'csv'")
        if "synth" in data:
            synth = _build(SynthConfig, _seeded(data["synth"], g), "data.synth")
            data = {"synth": synth}
        else:
            c = _check_keys(data["csv"], {"paths", "label_column", "drop_columns", "fill"}, "data.csv")
            paths = c.get("paths") or []
            if isinstance(paths, str):
                paths = [paths]
            if not paths:
                raise ConfigError("data.csv needs at least one path")
            resolved = []
            for p in paths:
                rp = Path(p) if Path(p).is_absolute() else base_dir / p
                if not rp.is_file():
                    raise DataError(f"data file not found: {rp}")
                resolved.append(str(rp))
            if c.get("fill", "median") not in ("median", "mean"):
                raise ConfigError("data.csv.fill must be 'median' or 'mean'")
            data = {
                "csv": {
                    "paths": resolved,
                    "label_column": c.get("label_column", "Label"),
                    "drop_columns": list(c.get("drop_columns", [])),
                    "fill": c.get("fill", "median"),
                }
            }

        split = _build(SplitSpec, _seeded(d.get("split"), g), "split")
        clip = d.get("clip", "train")
        if isinstance(clip, dict):
            ClipBox.from_dict(clip)
        elif clip not in ("train", "global", "none"):
            raise ConfigError(f"clip must be 'train', 'global', 'none' or a box, not {clip!r}")

        model = _check_keys(d.get("model", {}), {"hidden", "l2_lambda"}, "model")
        hidden = tuple(int(w) for w in model.get("hidden", (60, 40, 20, 10)))
        if not hidden or min(hidden) < 1:
            raise ConfigError("model.hidden needs at least one positive width")
        l2 = float(model.get("l2_lambda", 1e-4))
        if not (math.isfinite(l2) and l2 >= 0):
            raise ConfigError("model.l2_lambda must be finite and >= 0")
        train = _build(TrainConfig, _seeded(d.get("train"), g), "train")

        search = None
        if d.get("search"):
            s = _check_keys(d["search"], {"budget", "space", "seed"}, "search")
            space = _build(SearchSpace, {k: tuple(v) for k, v in s.get("space", {}).items()}, "search.space")
            space.validate()
            budget = int(s.get("budget", 8))
            if budget < 1:
                raise ConfigError("search.budget must be >= 1")
            search = {"budget": budget, "space": space, "seed": int(s.get("seed", g))}

        attack_dicts = d.get("attacks", [])
        if not isinstance(attack_dicts, list):
            raise ConfigError("attacks must be a list")
        attacks = [_attack(a, g, f"attacks[{i}]") for i, a in enumerate(attack_dicts)]

        defences = {}
        dd = _check_keys(d.get("defences", {}), _DEFENCE_KEYS, "defences")
        if "adversarial_training" in dd:
            at = dict(_check_keys(
                dd["adversarial_training"], {"attacks", "ratio", "epochs", "seed", "train"},
                "defences.adversarial_training",
            ))
            at_attacks = at.pop("attacks", None)
            parsed = (
                [_attack(a, g, "defences.adversarial_training.attacks") for a in at_attacks]
                if at_attacks is not None
                else list(attacks)
            )
            at_train = at.pop("train", None)
            tc = _build(TrainConfig, _seeded(at_train, g), "defences.adversarial_training.train") if at_train else train
            defences["adversarial_training"] = _build(
                AtConfig, _seeded(at, g), "defences.adversarial_training", attacks=tuple(parsed), train=tc
            )
        if "gaussian" in dd:
            defences["gaussian"] = _build(GdaConfig, _seeded(dd["gaussian"], g), "defences.gaussian")
        if "high_confidence" in dd:
            defences["high_confidence"] = _build(HcConfig, dd["high_confidence"], "defences.high_confidence")

        simulation = None
        if d.get("simulation"):
            simulation = _parse_simulation(d["simulation"], g, train)

        run = cls(
            raw={},
            seed=g,
            output=str(d["output"]),
            data=data,
            split=split,
            clip=clip,
            hidden=hidden,
            l2_lambda=l2,
            train=train,
            search=search,
            attacks=attacks,
            defences=defences,
            simulation=simulation,
            base_dir=base_dir,
        )
        run.raw = run.to_dict()
        return run

    def to_dict(self) -> dict:
        """Fully resolved configuration (defaults and seeds filled in)."""
        data = (
            {"synth": dict(self.data["synth"].__dict__)} if "synth" in self.data else {"csv": self.data["csv"]}
        )
        out = {
            "version": CONFIG_VERSION,
            "seed": self.seed,
            "output": self.output,
            "data": data,
            "split": dict(self.split.__dict__),
            "clip": self.clip,
            "model": {"hidden": list(self.hidden), "l2_lambda": self.l2_lambda},
            "train": dict(self.train.__dict__),
            "attacks": [a.to_dict() for a in self.attacks],
            "defences": {k: v.to_dict() for k, v in self.defences.items()},
        }
        if self.search:
            s = self.search
            out["search"] = {
                "budget": s["budget"],
                "seed": s["seed"],
                "space": {k: list(v) for k, v in s["space"].__dict__.items()},
            }
        if self.simulation:
            out["simulation"] = _simulation_to_dict(self.simulation)
        return out

    @property
    def hash(self) -> str:
        """Digest of the resolved config; the output directory does not count."""
        d = self.to_dict()
        d.pop("output")
        return config_hash(d)

    def with_clip(self, configs, box: ClipBox | None) -> list:
        """Attach ``box`` to attack configs that did not name their own clip box."""
        return [c if c.clip is not None else replace(c, clip=box) for c in configs]


def _parse_simulation(s: dict, seed: int, train: TrainConfig) -> dict:
    s = _check_keys(s, _SIM_KEYS, "simulation")
    case = s.get("case", 1)
    if case not in (1, 2, 3):
        raise ConfigError("simulation.case must be 1, 2 or 3")
    flows = s.get("flows", {"n": 200})
    if flows != "scenario":
        flows = dict(_check_keys(flows, {"n", "seed"}, "simulation.flows"))
        flows.setdefault("n", 200)
        flows.setdefault("seed", seed)
    adversary = None
    if s.get("adversary"):
        a = _check_keys(s["adversary"], _ADV_KEYS, "simulation.adversary")
        if "router" not in a or "attack" not in a:
            raise ConfigError("simulation.adversary needs a router and an attack")
        mode = a.get("mode", "white-box" if case != 3 else "black-box")
        surrogate = None
        if a.get("surrogate") is not None:
            sg = _check_keys(a["surrogate"], _SURROGATE_KEYS, "simulation.adversary.surrogate")
            frac = float(sg.get("train_fraction", 0.5))
            if not 0 < frac <= 1:
                raise ConfigError("surrogate train_fraction must lie in (0, 1]")
            surrogate = {
                "hidden": [int(w) for w in sg.get("hidden", (32, 16))],
                "l2_lambda": float(sg.get("l2_lambda", 1e-4)),
                "train_fraction": frac,
                "seed": int(sg.get("seed", seed + 1)),
                "train": _build(TrainConfig, _seeded(sg.get("train", train.__dict__), seed + 1), "surrogate.train"),
            }
        elif mode == "black-box":
            raise ConfigError("a black-box adversary needs a surrogate section")
        adversary = {
            "router": str(a["router"]),
            "mode": mode,
            "attack": _attack(a["attack"], seed, "simulation.adversary.attack"),
            "perturb_benign": bool(a.get("perturb_benign", False)),
            "surrogate": surrogate,
        }
    if case != 1 and adversary is None:
        raise ConfigError(f"simulation case {case} needs an adversary")
    return {
        "case": case,
        "threshold": float(s.get("threshold", 0.5)),
        "flows": flows,
        "topology": s.get("topology"),
        "adversary": adversary,
    }


def _simulation_to_dict(sim: dict) -> dict:
    out = {k: v for k, v in sim.items() if k != "adversary"}
    adv = sim["adversary"]
    if adv is not None:
        a = {**adv, "attack": adv["attack"].to_dict()}
        if adv["surrogate"] is not None:
            a["surrogate"] = {**adv["surrogate"], "train": dict(adv["surrogate"]["train"].__dict__)}
        out["adversary"] = a
    else:
        out["adversary"] = None
    return out


def load_run_config(path: str | Path, seed: int | None = None, output: str | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return RunConfig.from_dict(d, base_dir=path.parent, seed=seed, output=output)
