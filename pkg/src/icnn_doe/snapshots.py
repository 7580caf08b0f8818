"""Labelled power-flow snapshots for surrogate training.

Row ``i`` is drawn from ``numpy.random.default_rng([seed, i])`` so any row can
be regenerated on its own and the dataset never depends on evaluation order.
A row whose sweep fails to converge is redrawn from the same stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptySplit, FingerprintMismatch, MalformedFile, TooManyRejections
from .grid import Feeder, solve_distflow_batch

SCHEMA_VERSION = 1
BLOCKS = ("inputs", "loss", "v", "i", "p_flow", "residual")


@dataclass
class SamplingSpec:
    """Uniform sampling box: per-bus load multipliers and per-DER output range."""

    p_range: np.ndarray  # (n_bus, 2)
    q_range: np.ndarray  # (n_bus, 2)
    der_range: np.ndarray  # (n_der, 2) kW, generation positive
    seed: int = 0

    def __post_init__(self):
        self.p_range = np.atleast_2d(np.asarray(self.p_range, dtype=float))
        self.q_range = np.atleast_2d(np.asarray(self.q_range, dtype=float))
        self.der_range = np.asarray(self.der_range, dtype=float).reshape(-1, 2)
        for name in ("p_range", "q_range", "der_range"):
            r = getattr(self, name)
            if not np.all(np.isfinite(r)):
                raise ValueError(f"{name} must be finite")
            if np.any(r[:, 0] > r[:, 1]):
                raise ValueError(f"{name} has lo > hi")
        self.seed = int(self.seed)

    @classmethod
    def default(cls, feeder: Feeder, seed=0, lo=0.2, hi=1.2):
        n = feeder.n_bus
        box = np.tile([lo, hi], (n, 1))
        ders = [[d.p_min, d.p_max] for d in feeder.ders]
        return cls(box, box.copy(), np.array(ders).reshape(-1, 2), seed)

    def to_dict(self):
        return {"p_range": self.p_range.tolist(), "q_range": self.q_range.tolist(),
                "der_range": self.der_range.tolist(), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["p_range"], d["q_range"], d["der_range"], d["seed"])


@dataclass
class SnapshotSet:
    inputs: np.ndarray  # (n, 2|M|): net p then net q per bus
    loss: np.ndarray  # (n,)
    v: np.ndarray  # (n, |M|)
    i: np.ndarray  # (n, |L|)
    p_flow: np.ndarray  # (n, |L|)
    residual: np.ndarray  # (n,) sweep residual at acceptance
    feeder_fingerprint: str
    spec: SamplingSpec | None = None
    rejections: int = 0
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.inputs.shape[0]
        for name in BLOCKS[1:]:
            if getattr(self, name).shape[0] != n:
                raise MalformedFile(f"block {name!r} has {getattr(self, name).shape[0]} rows, expected {n}")

    def __len__(self):
        return self.inputs.shape[0]

    def take(self, rows):
        rows = np.asarray(rows, dtype=int)
        return SnapshotSet(*(getattr(self, b)[rows] for b in BLOCKS), self.feeder_fingerprint,
                           self.spec, 0, dict(self.labels))

    def targets(self, kind, mask=None):
        from .icnn import head_targets

        return head_targets(kind, mask, self.loss, self.v, self.i, self.p_flow)


def _labels(feeder):
    ids = feeder.bus_ids
    lines = [feeder.line_label(k) for k in range(feeder.n_line)]
    return {
        "inputs": [f"p_{b}" for b in ids] + [f"q_{b}" for b in ids],
        "loss": ["loss"],
        "v": [f"v_{b}" for b in ids],
        "i": [f"i_{ln}" for ln in lines],
        "p_flow": [f"p_{ln}" for ln in lines],
        "residual": ["residual"],
    }


def _draw(rng, spec, base_p, base_q, der_idx, q_der):
    mp = rng.uniform(spec.p_range[:, 0], spec.p_range[:, 1])
    mq = rng.uniform(spec.q_range[:, 0], spec.q_range[:, 1])
    g = rng.uniform(spec.der_range[:, 0], spec.der_range[:, 1])
    p = base_p * mp
    q = base_q * mq
    p[der_idx] -= g
    q[der_idx] -= q_der
    return p, q


def generate(feeder: Feeder, spec: SamplingSpec, n: int) -> SnapshotSet:
    """Draw ``n`` converged snapshots; raises if more than half the draws fail."""
    if n < 1:
        raise ValueError("n must be at least 1")
    nb = feeder.n_bus
    if spec.p_range.shape != (nb, 2) or spec.q_range.shape != (nb, 2) or spec.der_range.shape[0] != len(feeder.ders):
        raise ValueError("sampling ranges do not match the feeder")
    base = feeder.base_injection()
    der_idx = feeder.der_index
    q_der = np.array([d.q_der for d in feeder.ders])
    rngs = [np.random.default_rng([spec.seed, i]) for i in range(n)]
    P = np.empty((n, nb))
    Q = np.empty((n, nb))
    for i, rng in enumerate(rngs):
        P[i], Q[i] = _draw(rng, spec, base.p, base.q, der_idx, q_der)
    out = solve_distflow_batch(feeder, P, Q)
    pending = np.flatnonzero(~out["converged"])
    rejections = 0
    while pending.size:
        rejections += pending.size
        if rejections > n:
            raise TooManyRejections(f"{rejections} rejected draws for {n} accepted rows")
        for i in pending:
            P[i], Q[i] = _draw(rngs[i], spec, base.p, base.q, der_idx, q_der)
        redo = solve_distflow_batch(feeder, P[pending], Q[pending])
        for key in ("v", "i", "p_flow", "loss", "residual", "converged"):
            out[key][pending] = redo[key]
        pending = pending[~redo["converged"]]
    return SnapshotSet(np.hstack([P, Q]), out["loss"].copy(), out["v"].copy(), out["i"].copy(),
                       out["p_flow"].copy(), out["residual"].copy(), feeder.fingerprint(), spec,
                       rejections, _labels(feeder))


def split(data: SnapshotSet, train_fraction: float, seed=0):
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(data)
    k = int(round(train_fraction * n))
    if k == 0 or k == n:
        raise EmptySplit(f"fraction {train_fraction} of {n} rows leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    return data.take(np.sort(perm[:k])), data.take(np.sort(perm[k:]))


def save(data: SnapshotSet, path):
    """Write one CSV per block plus ``manifest.json`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name in BLOCKS:
        block = getattr(data, name)
        block = block.reshape(len(data), -1)
        header = ",".join(data.labels.get(name) or [f"{name}_{k}" for k in range(block.shape[1])])
        np.savetxt(path / f"{name}.csv", block, fmt="%.17g", delimiter=",", header=header, comments="")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "feeder_fingerprint": data.feeder_fingerprint,
        "n": len(data),
        "seed": data.spec.seed if data.spec else None,
        "spec": data.spec.to_dict() if data.spec else None,
        "rejections": data.rejections,
        "blocks": {name: f"{name}.csv" for name in BLOCKS},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load(path, feeder: Feeder | None = None) -> SnapshotSet:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        n = int(manifest["n"])
        if manifest["schema_version"] != SCHEMA_VERSION:
            raise MalformedFile(f"unsupported schema version {manifest['schema_version']}")
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, MalformedFile):
            raise
        raise MalformedFile(f"cannot read manifest: {exc}") from exc
    if feeder is not None and feeder.fingerprint() != manifest["feeder_fingerprint"]:
        raise FingerprintMismatch("snapshot set was generated for a different feeder")
    blocks, labels = {}, {}
    for name in BLOCKS:
        try:
            with open(path / f"{name}.csv") as fh:
                labels[name] = fh.readline().strip().split(",")
                arr = np.loadtxt(fh, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise MalformedFile(f"cannot read block {name!r}: {exc}") from exc
        if arr.shape != (n, len(labels[name])):
            raise MalformedFile(f"block {name!r} has shape {arr.shape}, expected ({n}, {len(labels[name])})")
        blocks[name] = arr[:, 0] if name in ("loss", "residual") else arr
    spec = SamplingSpec.from_dict(manifest["spec"]) if manifest.get("spec") else None
    return SnapshotSet(*(blocks[b] for b in BLOCKS), manifest["feeder_fingerprint"], spec,
                       int(manifest.get("rejections", 0)), labels)
