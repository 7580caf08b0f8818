"""Retrenchment plans and the four-head surrogate bundle used by the DOE builders."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import HeadLimitMismatch, UnfoldedModel
from .grid import Feeder, Limits
from .icnn import (
    HEAD_KINDS,
    IcnnModel,
    MlpModel,
    TrainConfig,
    check_convex,
    fold_normalization,
    load_model,
    make_head,
    nmae,
    save_model,
    train,
)
from .snapshots import SnapshotSet, split

DEFAULT_HIDDEN = {"loss": [32, 16], "v": [64, 32], "ol": [64, 32], "rpf": [32, 16]}


@dataclass(frozen=True)
class RetrenchPlan:
    """Positional bus / line indices whose quantities the surrogates predict."""

    v_buses: tuple
    ol_lines: tuple
    rpf_lines: tuple

    def mask(self, kind):
        return {"loss": None, "v": list(self.v_buses), "ol": list(self.ol_lines),
                "rpf": list(self.rpf_lines)}[kind]

    def to_dict(self):
        return {"v_buses": list(self.v_buses), "ol_lines": list(self.ol_lines), "rpf_lines": list(self.rpf_lines)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["v_buses"]), tuple(d["ol_lines"]), tuple(d["rpf_lines"]))

    def fingerprint(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def retrench(feeder: Feeder) -> RetrenchPlan:
    """Drop transit buses (no load, no DER) and the quantities they cannot bind.

    Voltages are kept for every other bus, currents for every line touching a
    kept bus, reverse flow only on the line feeding each DER.
    """
    top = feeder.topology
    transit = {k for k, b in enumerate(feeder.buses)
               if b.der is None and b.base_load_p == 0 and b.base_load_q == 0}
    kept = [k for k in range(feeder.n_bus) if k not in transit]
    keep = set(kept)
    lines = [k for k in range(feeder.n_line) if top.line_up[k] in keep or top.line_down[k] in keep]
    rpf = sorted({int(top.parent_line[j]) for j in feeder.der_index if top.parent_line[j] >= 0})
    return RetrenchPlan(tuple(kept), tuple(lines), tuple(rpf))


def full_plan(feeder: Feeder) -> RetrenchPlan:
    every = tuple(range(feeder.n_line))
    return RetrenchPlan(tuple(range(feeder.n_bus)), every, every)


@dataclass
class SurrogateSet:
    """One network per head kind plus the plan that fixed their output masks."""

    models: dict
    plan: RetrenchPlan
    nmae: dict = field(default_factory=dict)

    @property
    def family(self):
        return "icnn" if all(isinstance(m, IcnnModel) for m in self.models.values()) else "mlp"

    def folded(self):
        return SurrogateSet({k: fold_normalization(m) for k, m in self.models.items()}, self.plan, self.nmae)

    def heads(self, limits: Limits):
        heads = {}
        for kind, model in self.models.items():
            head = make_head(kind, limits, self.plan.mask(kind))
            if head.size != model.output_dim:
                raise HeadLimitMismatch(f"{kind} model has {model.output_dim} outputs, head needs {head.size}")
            heads[kind] = head
        return heads

    def check(self, convex=True):
        for kind, model in self.models.items():
            if not model.folded:
                raise UnfoldedModel(f"{kind} model must be folded before embedding")
            if model.plan_fingerprint not in (None, self.plan.fingerprint()):
                raise HeadLimitMismatch(f"{kind} model was trained for a different retrenchment plan")
            if convex:
                check_convex(model)

    def save(self, directory, prefix=None):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        prefix = prefix or self.family
        for kind, model in self.models.items():
            save_model(model, directory / f"{prefix}_{kind}.json")
        meta = {"plan": self.plan.to_dict(), "nmae": self.nmae, "kinds": sorted(self.models)}
        (directory / f"{prefix}_plan.json").write_text(json.dumps(meta, indent=1))

    @classmethod
    def load(cls, directory, prefix="icnn"):
        directory = Path(directory)
        meta = json.loads((directory / f"{prefix}_plan.json").read_text())
        models = {k: load_model(directory / f"{prefix}_{k}.json") for k in meta["kinds"]}
        return cls(models, RetrenchPlan.from_dict(meta["plan"]), meta.get("nmae", {}))


def head_normalizer(kind, Y):
    """Spread of the physical quantity behind a head's targets (kW, p.u. or A)."""
    Y = np.asarray(Y)
    if kind == "v":
        Y = Y[:, : Y.shape[1] // 2]
    spread = float(Y.max() - Y.min())
    return spread if spread > 0 else 1.0


def train_surrogates(data: SnapshotSet, plan: RetrenchPlan, family="icnn", hidden=None, cfg=None,
                     kinds=HEAD_KINDS, test_fraction=0.2, seed=0, log=None):
    """Train one network per head on a train/validation/test split of ``data``.

    Returns the bundle with held-out NMAE per head stored in ``.nmae``.
    """
    hidden = {**DEFAULT_HIDDEN, **(hidden or {})}
    cfg = cfg or TrainConfig(seed=seed)
    cls = IcnnModel if family == "icnn" else MlpModel
    train_all, test = split(data, 1.0 - test_fraction, seed)
    fit, val = split(train_all, 1.0 - cfg.validation_fraction, seed + 1)
    models, report = {}, {}
    for i, kind in enumerate(kinds):
        mask = plan.mask(kind)
        Y = fit.targets(kind, mask)
        model = cls.init(data.inputs.shape[1], hidden[kind], Y.shape[1], np.random.default_rng([seed, i]), kind)
        model.mask = mask
        model.plan_fingerprint = plan.fingerprint()
        train(model, (fit.inputs, Y), (val.inputs, val.targets(kind, mask)), cfg)
        Yt = test.targets(kind, mask)
        report[kind] = {"nmae": nmae(model, test.inputs, Yt, head_normalizer(kind, Y)),
                        "normalizer": head_normalizer(kind, Y), "hidden": hidden[kind],
                        "epochs": model.training.get("epochs_run")}
        models[kind] = model
        if log:
            log(f"{family} {kind}: NMAE {report[kind]['nmae']:.2e} after {report[kind]['epochs']} epochs")
    return SurrogateSet(models, plan, report)
