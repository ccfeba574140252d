"""Deterministic hop-by-hop flow simulator for in-path evasion scenarios.

Flow records travel from the entry router R1 along a named path to R6, the
last hop before the gateway that hosts the NIDS. An adversary sitting on one
router may replace a passing record's features with an adversarial version
(white-box: crafted on the target model; black-box: on a surrogate) and send
it on along the same path. The gateway blocks a record iff its attack score
is at least the detection threshold.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .attacks import AdvBatch, run_attack
from .data import Dataset
from .defence import DefendedModel, defended_predict
from .errors import ConfigError, DataError
from .net import MlpModel, predict

log = logging.getLogger(__name__)

ENTRY_ROUTER = "R1"
EXIT_ROUTER = "R6"
DEFAULT_ROUTERS = ("R1", "R2", "R3", "R4", "R5", "R6")
DEFAULT_PATHS = {
    "Path-1": ("R1", "R2", "R3", "R6"),
    "Path-2": ("R1", "R5", "R6"),
    "Path-3": ("R1", "R4", "R5", "R6"),
}


@dataclass(frozen=True)
class Topology:
    routers: tuple[str, ...]
    paths: dict

    @property
    def nodes(self) -> tuple[str, ...]:
        return ("source", *self.routers, "gateway", "destination")

    def routers_on_paths(self) -> set[str]:
        return {r for p in self.paths.values() for r in p}

    def to_dict(self) -> dict:
        return {"routers": list(self.routers), "paths": {k: list(v) for k, v in self.paths.items()}}


def build_topology(overrides: dict | None = None) -> Topology:
    """Default three-path topology, optionally extended.

    ``overrides`` may carry ``routers`` (extra router names) and ``paths``
    (name -> router list). With ``replace_paths: true`` the given paths
    replace the defaults instead of being added to them.
    """
    routers = list(DEFAULT_ROUTERS)
    paths = dict(DEFAULT_PATHS)
    if overrides:
        for r in overrides.get("routers", ()):
            if r not in routers:
                routers.append(r)
        if "paths" in overrides:
            given = overrides["paths"]
            if not given:
                raise ConfigError("topology needs at least one path")
            if overrides.get("replace_paths", False):
                paths = {}
            paths.update({name: tuple(p) for name, p in given.items()})
    known = set(routers)
    for name, p in paths.items():
        if not p:
            raise ConfigError(f"path {name!r} is empty")
        unknown = [r for r in p if r not in known]
        if unknown:
            raise ConfigError(f"path {name!r} references unknown routers {unknown}")
        if p[0] != ENTRY_ROUTER or p[-1] != EXIT_ROUTER:
            raise ConfigError(f"path {name!r} must start at {ENTRY_ROUTER} and end at {EXIT_ROUTER}")
    return Topology(tuple(routers), paths)


@dataclass(frozen=True)
class PacketFlow:
    id: str
    path: str
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class AdversaryPlacement:
    router: str
    mode: str = "white-box"
    attack: object = None
    surrogate: MlpModel | None = None
    perturb_benign: bool = False

    def __post_init__(self):
        if self.mode not in ("white-box", "black-box"):
            raise ConfigError(f"unknown adversary mode {self.mode!r}")
        if self.attack is None:
            raise ConfigError("adversary needs an attack config")


@dataclass(frozen=True)
class SimConfig:
    topology: Topology
    flows: list
    case: int
    target: MlpModel | DefendedModel
    adversary: AdversaryPlacement | None = None
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.case not in (1, 2, 3):
            raise ConfigError("case must be 1, 2 or 3")
        if self.case == 2 and (self.adversary is None or self.adversary.mode != "white-box"):
            raise ConfigError("case 2 needs a white-box adversary")
        if self.case == 3:
            if self.adversary is None or self.adversary.mode != "black-box":
                raise ConfigError("case 3 needs a black-box adversary")
            if self.adversary.surrogate is None:
                raise ConfigError("case 3 needs a surrogate model")
        if self.adversary is not None and self.adversary.router not in self.topology.routers_on_paths():
            raise ConfigError(f"adversary router {self.adversary.router!r} lies on no path")
        for f in self.flows:
            if f.path not in self.topology.paths:
                raise ConfigError(f"flow {f.id!r} uses unknown path {f.path!r}")


@dataclass(frozen=True)
class FlowRecord:
    id: str
    path: str
    hops: tuple[str, ...]
    label: int
    intercepted: bool
    perturbed: bool
    linf: float | None
    l0: int | None
    l2: float | None
    score: float
    verdict: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "path": self.path,
            "hops": list(self.hops),
            "label": self.label,
            "intercepted": self.intercepted,
            "perturbed": self.perturbed,
            "linf": self.linf,
            "l0": self.l0,
            "l2": self.l2,
            "score": self.score,
            "verdict": self.verdict,
        }

    @classmethod
    def from_dict(cls, d: dict) -> FlowRecord:
        return cls(**{**d, "hops": tuple(d["hops"])})


def _rate(num: int, den: int) -> float | None:
    return num / den if den else None


@dataclass
class SimReport:
    case: int
    records: list[FlowRecord]
    warnings: list[str] = field(default_factory=list)

    @property
    def malicious_sent(self) -> int:
        return sum(r.label == 1 for r in self.records)

    @property
    def malicious_passed(self) -> int:
        return sum(r.label == 1 and r.verdict == "pass" for r in self.records)

    @property
    def benign_sent(self) -> int:
        return sum(r.label == 0 for r in self.records)

    @property
    def benign_blocked(self) -> int:
        return sum(r.label == 0 and r.verdict == "block" for r in self.records)

    @property
    def evasion_rate(self) -> float | None:
        return _rate(self.malicious_passed, self.malicious_sent)

    @property
    def false_block_rate(self) -> float | None:
        return _rate(self.benign_blocked, self.benign_sent)

    def verdicts(self) -> list[str]:
        return [r.verdict for r in self.records]

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "evasion_rate": self.evasion_rate,
            "false_block_rate": self.false_block_rate,
            "malicious_sent": self.malicious_sent,
            "malicious_passed": self.malicious_passed,
            "benign_sent": self.benign_sent,
            "benign_blocked": self.benign_blocked,
            "warnings": self.warnings,
            "flows": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SimReport:
        return cls(d["case"], [FlowRecord.from_dict(r) for r in d["flows"]], list(d.get("warnings", [])))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "path", "hops", "label", "intercepted", "perturbed", "linf", "l0", "l2", "score", "verdict"])
        for r in self.records:
            w.writerow([
                r.id, r.path, "-".join(r.hops), r.label, int(r.intercepted), int(r.perturbed),
                "" if r.linf is None else repr(r.linf), "" if r.l0 is None else r.l0,
                "" if r.l2 is None else repr(r.l2), repr(r.score), r.verdict,
            ])
        return buf.getvalue()


def flows_from_dataset(data: Dataset, n: int, topology: Topology, seed: int = 0) -> list[PacketFlow]:
    """Sample ``n`` records (without replacement) and spread them over the paths."""
    if n < 1 or n > len(data):
        raise DataError(f"cannot draw {n} flows from {len(data)} records")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(data), size=n, replace=False))
    names = sorted(topology.paths)
    which = rng.integers(0, len(names), size=n)
    return [
        PacketFlow(f"F{k}", names[w], data.features[i].copy(), int(data.labels[i]))
        for k, (i, w) in enumerate(zip(idx, which))
    ]


def scenario_flows(data: Dataset, seed: int = 0) -> list[PacketFlow]:
    """Four records laid out like the reference scenario.

    P1 and P2 (malicious) take Path-3, P3 (malicious) takes Path-1 and P4
    (benign) takes Path-2.
    """
    rng = np.random.default_rng(seed)
    mal = np.flatnonzero(data.labels == 1)
    ben = np.flatnonzero(data.labels == 0)
    if len(mal) < 3 or len(ben) < 1:
        raise DataError("scenario needs at least three malicious and one benign record")
    m = rng.choice(mal, size=3, replace=False)
    b = int(rng.choice(ben))
    spec = [("P1", "Path-3", m[0]), ("P2", "Path-3", m[1]), ("P3", "Path-1", m[2]), ("P4", "Path-2", b)]
    return [PacketFlow(name, path, data.features[i].copy(), int(data.labels[i])) for name, path, i in spec]


def _attacker_model(config: SimConfig) -> MlpModel:
    adv = config.adversary
    if adv.mode == "black-box":
        return adv.surrogate
    return config.target.base if isinstance(config.target, DefendedModel) else config.target


def run_simulation(config: SimConfig) -> SimReport:
    flows = list(config.flows)
    report = SimReport(config.case, [])
    adv = config.adversary if config.case != 1 else None
    if adv is not None and not any(adv.router in config.topology.paths[f.path] for f in flows):
        report.warnings.append(f"adversary router {adv.router} is on no flow's path")

    feats = np.array([f.features for f in flows], dtype=np.float64).reshape(len(flows), -1)
    intercepted = np.zeros(len(flows), dtype=bool)
    perturbed = np.zeros(len(flows), dtype=bool)
    norms: dict[int, tuple[float, int, float]] = {}
    if adv is not None:
        for k, f in enumerate(flows):
            if adv.router in config.topology.paths[f.path]:
                intercepted[k] = f.label == 1 or adv.perturb_benign
        rows = np.flatnonzero(intercepted)
        if rows.size:
            labels = np.array([flows[k].label for k in rows])
            batch: AdvBatch = run_attack(_attacker_model(config), feats[rows], labels, adv.attack)
            feats[rows] = batch.x_adv
            for j, k in enumerate(rows):
                perturbed[k] = True
                norms[k] = (float(batch.linf[j]), int(batch.l0[j]), float(batch.l2[j]))

    if len(flows):
        _, scores, _ = defended_predict(config.target, feats, noise_seed=config.seed)
    else:
        scores = np.zeros(0)
    for k, f in enumerate(flows):
        hops: list[str] = []
        for router in config.topology.paths[f.path]:
            hops.append(router)
        linf, l0, l2 = norms.get(k, (None, None, None))
        report.records.append(
            FlowRecord(
                id=f.id,
                path=f.path,
                hops=tuple(hops),
                label=f.label,
                intercepted=bool(intercepted[k]),
                perturbed=bool(perturbed[k]),
                linf=linf,
                l0=l0,
                l2=l2,
                score=float(scores[k]),
                verdict="block" if scores[k] >= config.threshold else "pass",
            )
        )
    return report


@dataclass(frozen=True)
class TransferResult:
    batch: AdvBatch
    surrogate_fooled: np.ndarray
    target_fooled: np.ndarray

    @property
    def rate(self) -> float:
        """Share of surrogate-fooling examples that also fool the target (0 if none)."""
        n = int(self.surrogate_fooled.sum())
        return float((self.surrogate_fooled & self.target_fooled).sum() / n) if n else 0.0

    def to_dict(self) -> dict:
        return {
            "transfer_rate": self.rate,
            "surrogate_fooled": int(self.surrogate_fooled.sum()),
            "target_fooled": int(self.target_fooled.sum()),
            "both_fooled": int((self.surrogate_fooled & self.target_fooled).sum()),
            "n": len(self.batch),
        }


def surrogate_transfer(target: MlpModel, surrogate: MlpModel, X, y, attack) -> TransferResult:
    """Craft examples on ``surrogate`` and measure how many carry over to ``target``."""
    if target.input_dim != surrogate.input_dim:
        raise DataError(
            f"target expects {target.input_dim} features, surrogate {surrogate.input_dim}"
        )
    y = np.asarray(y).astype(np.int64)
    batch = run_attack(surrogate, X, y, attack)
    return TransferResult(batch, batch.success.copy(), predict(target, batch.x_adv) != y)
