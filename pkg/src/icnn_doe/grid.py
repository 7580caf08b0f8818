"""Radial feeder data model and the exact DistFlow power-flow oracle.

All internal arithmetic is per-unit on the feeder's three-phase power base and
line-to-line voltage base.  The public surface speaks kW / kVar / A, with
voltages in p.u.  Line flows are oriented from the upstream (slack side) bus to
the downstream bus regardless of how the line was written in the input file, so
``P > 0`` always means power flowing away from the substation.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import (
    CycleDetected,
    DimensionMismatch,
    DisconnectedBus,
    DuplicateEdge,
    MalformedFile,
    NegativeVoltageSquare,
    NonConvergence,
    TopologyError,
)

BUNDLED_FEEDER = "ieee33.json"


@dataclass(frozen=True)
class Der:
    p_max: float
    p_min: float
    q_der: float = 0.0

    def __post_init__(self):
        if self.p_min > self.p_max:
            raise ValueError(f"DER p_min {self.p_min} exceeds p_max {self.p_max}")


@dataclass(frozen=True)
class Bus:
    id: int
    base_load_p: float = 0.0
    base_load_q: float = 0.0
    der: Der | None = None


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float
    i_max: float = math.inf
    p_min_reverse: float = -math.inf

    def __post_init__(self):
        if self.r < 0 or self.x < 0:
            raise ValueError(f"line {self.from_bus}-{self.to_bus} has negative impedance")
        if not self.i_max > 0:
            raise ValueError(f"line {self.from_bus}-{self.to_bus} needs i_max > 0")


@dataclass(frozen=True)
class Limits:
    v_min: float
    v_max: float
    i_max: np.ndarray
    p_min: np.ndarray

    def __post_init__(self):
        if not 0 < self.v_min < self.v_max:
            raise ValueError("limits need 0 < v_min < v_max")
        object.__setattr__(self, "i_max", np.asarray(self.i_max, dtype=float))
        object.__setattr__(self, "p_min", np.asarray(self.p_min, dtype=float))
        if self.i_max.shape != self.p_min.shape:
            raise DimensionMismatch("i_max and p_min must have one entry per line")

    def to_dict(self):
        return {"v_min": self.v_min, "v_max": self.v_max,
                "i_max": self.i_max.tolist(), "p_min": self.p_min.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["v_min"], d["v_max"], np.asarray(d["i_max"]), np.asarray(d["p_min"]))


@dataclass
class InjectionVector:
    """Net load per bus (consumption positive), kW and kVar."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        if self.p.shape != self.q.shape or self.p.ndim != 1:
            raise DimensionMismatch("p and q must be 1-D vectors of equal length")

    def as_vector(self):
        return np.concatenate([self.p, self.q])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.size % 2:
            raise DimensionMismatch("injection vector must have even length 2|M|")
        n = x.size // 2
        return cls(x[:n].copy(), x[n:].copy())


class TopologyOrder(NamedTuple):
    """Traversal data for sweeps; all entries are positional indices."""

    order: np.ndarray  # buses, breadth-first from the slack
    parent: np.ndarray  # parent bus per bus, -1 at the slack
    parent_line: np.ndarray  # line feeding each bus, -1 at the slack
    children: tuple  # tuple of index tuples, N_j^- per bus
    line_up: np.ndarray  # upstream bus per line
    line_down: np.ndarray  # downstream bus per line
    depth: np.ndarray


@dataclass
class Feeder:
    buses: list[Bus]
    lines: list[Line]
    slack_bus: int
    base_power: float = 10.0  # MVA, three-phase
    base_voltage: float = 12.66  # kV line-to-line
    slack_voltage: float = 1.0
    v_min: float = 0.9
    v_max: float = 1.1
    substation_rating: float | None = None  # kW
    name: str = "feeder"
    source: dict | None = field(default=None, repr=False, compare=False)

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def n_line(self):
        return len(self.lines)

    @cached_property
    def bus_index(self):
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def bus_ids(self):
        return [b.id for b in self.buses]

    @property
    def s_base_kw(self):
        return self.base_power * 1000.0

    @property
    def i_base(self):
        """Base current in A for the three-phase power base."""
        return self.base_power * 1e6 / (math.sqrt(3) * self.base_voltage * 1e3)

    @property
    def rating_kw(self):
        return self.substation_rating if self.substation_rating else self.s_base_kw

    @property
    def der_buses(self):
        return [b.id for b in self.buses if b.der is not None]

    @property
    def der_index(self):
        return np.array([self.bus_index[b] for b in self.der_buses], dtype=int)

    @property
    def ders(self):
        return [b.der for b in self.buses if b.der is not None]

    @property
    def r(self):
        return np.array([ln.r for ln in self.lines])

    @property
    def x(self):
        return np.array([ln.x for ln in self.lines])

    @cached_property
    def topology(self):
        return validate_radial(self)

    def limits(self):
        return Limits(self.v_min, self.v_max,
                      np.array([ln.i_max for ln in self.lines]),
                      np.array([ln.p_min_reverse for ln in self.lines]))

    def base_injection(self, der_p=None):
        """Injection at base load; ``der_p`` (kW per DER) is generation."""
        p = np.array([b.base_load_p for b in self.buses])
        q = np.array([b.base_load_q for b in self.buses])
        if der_p is not None:
            idx = self.der_index
            p[idx] -= np.asarray(der_p, dtype=float)
            q[idx] -= np.array([d.q_der for d in self.ders])
        return InjectionVector(p, q)

    def line_label(self, k):
        up, down = self.topology.line_up[k], self.topology.line_down[k]
        return f"{self.buses[up].id}-{self.buses[down].id}"

    def to_dict(self):
        ders = [{"bus": b.id, "p_max": b.der.p_max, "p_min": b.der.p_min, "q_der": b.der.q_der}
                for b in self.buses if b.der is not None]
        header = (self.source or {}).get("header", {"name": self.name})
        return {
            "header": header,
            "base_power": self.base_power,
            "base_voltage": self.base_voltage,
            "slack_bus": self.slack_bus,
            "slack_voltage": self.slack_voltage,
            "substation_rating": self.substation_rating,
            "buses": [{"id": b.id, "base_load_p": b.base_load_p, "base_load_q": b.base_load_q}
                      for b in self.buses],
            "lines": [{"from_bus": ln.from_bus, "to_bus": ln.to_bus, "r": ln.r, "x": ln.x,
                       "i_max": ln.i_max, "p_min_reverse": ln.p_min_reverse} for ln in self.lines],
            "ders": ders,
            "limits": {"v_min": self.v_min, "v_max": self.v_max},
        }

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, d):
        try:
            ders = {int(e["bus"]): Der(float(e["p_max"]), float(e["p_min"]), float(e.get("q_der", 0.0)))
                    for e in d.get("ders", [])}
            buses = [Bus(int(b["id"]), float(b.get("base_load_p", 0.0)), float(b.get("base_load_q", 0.0)),
                         ders.get(int(b["id"]))) for b in d["buses"]]
            lines = [Line(int(ln["from_bus"]), int(ln["to_bus"]), float(ln["r"]), float(ln["x"]),
                          float(ln.get("i_max", math.inf)), float(ln.get("p_min_reverse", -math.inf)))
                     for ln in d["lines"]]
            lim = d.get("limits", {})
            header = d.get("header", {})
            feeder = cls(buses, lines, int(d["slack_bus"]),
                         base_power=float(d.get("base_power", 10.0)),
                         base_voltage=float(d.get("base_voltage", 12.66)),
                         slack_voltage=float(d.get("slack_voltage", 1.0)),
                         v_min=float(lim.get("v_min", 0.9)), v_max=float(lim.get("v_max", 1.1)),
                         substation_rating=d.get("substation_rating"),
                         name=header.get("name", "feeder"), source=d)
        except (KeyError, TypeError) as exc:
            raise MalformedFile(f"feeder description is missing a field: {exc}") from exc
        unknown = set(ders) - {b.id for b in buses}
        if unknown:
            raise MalformedFile(f"DERs reference unknown buses {sorted(unknown)}")
        return feeder


def load_feeder(path=None):
    """Read a feeder JSON file; ``None`` loads the bundled 33-bus feeder."""
    if path is None:
        text = resources.files("icnn_doe.data").joinpath(BUNDLED_FEEDER).read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(str(exc)) from exc
    feeder = Feeder.from_dict(doc)
    validate_radial(feeder)
    return feeder


def bundled_feeder_path():
    return Path(str(resources.files("icnn_doe.data").joinpath(BUNDLED_FEEDER)))


def validate_radial(feeder: Feeder) -> TopologyOrder:
    """Check that the line set is a tree rooted at the slack and return sweep order."""
    if feeder.n_bus < 1:
        raise TopologyError("feeder has no buses")
    index = {}
    for k, b in enumerate(feeder.buses):
        if b.id in index:
            raise TopologyError(f"duplicate bus id {b.id}")
        index[b.id] = k
    if feeder.slack_bus not in index:
        raise TopologyError(f"slack bus {feeder.slack_bus} is not a bus")

    adj = [[] for _ in feeder.buses]
    seen_pairs = set()
    for e, ln in enumerate(feeder.lines):
        if ln.from_bus not in index or ln.to_bus not in index:
            raise TopologyError(f"line {ln.from_bus}-{ln.to_bus} references an unknown bus")
        if ln.from_bus == ln.to_bus:
            raise CycleDetected(f"line {e} is a self loop at bus {ln.from_bus}")
        pair = frozenset((ln.from_bus, ln.to_bus))
        if pair in seen_pairs:
            raise DuplicateEdge(f"buses {ln.from_bus} and {ln.to_bus} are joined twice")
        seen_pairs.add(pair)
        i, j = index[ln.from_bus], index[ln.to_bus]
        adj[i].append((j, e))
        adj[j].append((i, e))

    n = feeder.n_bus
    root = index[feeder.slack_bus]
    parent = np.full(n, -1, dtype=int)
    parent_line = np.full(n, -1, dtype=int)
    depth = np.zeros(n, dtype=int)
    visited = np.zeros(n, dtype=bool)
    visited[root] = True
    order = [root]
    queue = deque([root])
    while queue:
        i = queue.popleft()
        for j, e in adj[i]:
            if e == parent_line[i]:
                continue
            if visited[j]:
                raise CycleDetected(f"line {feeder.lines[e].from_bus}-{feeder.lines[e].to_bus} closes a loop")
            visited[j] = True
            parent[j] = i
            parent_line[j] = e
            depth[j] = depth[i] + 1
            order.append(j)
            queue.append(j)
    if not visited.all():
        missing = [feeder.buses[k].id for k in np.flatnonzero(~visited)]
        raise DisconnectedBus(f"buses {missing} are not connected to the slack")

    children = [[] for _ in range(n)]
    for j in order[1:]:
        children[parent[j]].append(j)
    line_up = np.empty(feeder.n_line, dtype=int)
    line_down = np.empty(feeder.n_line, dtype=int)
    for j in order[1:]:
        line_up[parent_line[j]] = parent[j]
        line_down[parent_line[j]] = j
    return TopologyOrder(np.array(order), parent, parent_line,
                         tuple(tuple(c) for c in children), line_up, line_down, depth)


@dataclass
class PowerFlowSolution:
    v: np.ndarray  # p.u. magnitude per bus
    i: np.ndarray  # A per line
    p_flow: np.ndarray  # kW per line, upstream -> downstream
    q_flow: np.ndarray  # kVar per line
    loss: float  # kW
    iterations: int
    residual: float  # p.u., max equation mismatch


def slack_power(feeder, sol):
    """Active and reactive power entering the feeder at the slack, kW / kVar."""
    top = feeder.topology
    root = top.order[0]
    lines = [top.parent_line[c] for c in top.children[root]]
    return float(sol.p_flow[lines].sum()), float(sol.q_flow[lines].sum())


def _sweep(feeder, p, q, tol, max_iter):
    """Vectorised backward/forward sweep over rows of per-unit net loads.

    Returns (v2, l, P, Q, iterations, residual) with one row per case; rows that
    did not reach ``tol`` keep their last iterate and report iterations = -1.
    """
    top = feeder.topology
    r, x = feeder.r, feeder.x
    z2 = r * r + x * x
    rows = p.shape[0]
    v0 = feeder.slack_voltage ** 2
    v2 = np.full((rows, feeder.n_bus), v0)
    l = np.zeros((rows, feeder.n_line))
    P = np.zeros((rows, feeder.n_line))
    Q = np.zeros((rows, feeder.n_line))
    iters = np.full(rows, -1, dtype=int)
    resid = np.full(rows, np.inf)
    downstream = top.order[::-1][:-1]
    forward = top.order[1:]
    up = top.line_up
    for it in range(1, max_iter + 1):
        sp = np.zeros((rows, feeder.n_bus))
        sq = np.zeros((rows, feeder.n_bus))
        for j in downstream:
            e = top.parent_line[j]
            P[:, e] = p[:, j] + sp[:, j] + r[e] * l[:, e]
            Q[:, e] = q[:, j] + sq[:, j] + x[e] * l[:, e]
            i = top.parent[j]
            sp[:, i] += P[:, e]
            sq[:, i] += Q[:, e]
        for j in forward:
            e = top.parent_line[j]
            i = top.parent[j]
            v2[:, j] = v2[:, i] - 2 * (r[e] * P[:, e] + x[e] * Q[:, e]) + z2[e] * l[:, e]
        bad = (v2 <= 0).any(axis=1)
        v2[bad] = np.nan
        l_new = (P * P + Q * Q) / v2[:, up]
        resid = np.abs(l_new - l).max(axis=1) if feeder.n_line else np.zeros(rows)
        resid[bad] = np.inf
        done = (resid <= tol) & (iters < 0)
        iters[done] = it
        if (iters > 0).all():
            break
        # converged rows keep the l that their P, Q, v2 were built from
        active = iters < 0
        l[active] = np.where(np.isnan(l_new[active]), 0.0, l_new[active])
        if bad.all():
            break
    return v2, l, P, Q, iters, resid


def solve_distflow(feeder: Feeder, inj: InjectionVector, tol=1e-10, max_iter=100) -> PowerFlowSolution:
    """Exact branch-flow solution by backward/forward sweep from a flat start."""
    if inj.p.size != feeder.n_bus:
        raise DimensionMismatch(f"injection has {inj.p.size} buses, feeder has {feeder.n_bus}")
    sb = feeder.s_base_kw
    v2, l, P, Q, iters, resid = _sweep(feeder, inj.p[None, :] / sb, inj.q[None, :] / sb, tol, max_iter)
    if not np.isfinite(resid[0]) and np.isnan(v2[0]).any():
        raise NegativeVoltageSquare("squared voltage collapsed below zero", max_iter, float(resid[0]))
    if iters[0] < 0:
        raise NonConvergence(f"sweep did not converge in {max_iter} iterations "
                             f"(residual {resid[0]:.3e})", max_iter, float(resid[0]))
    return _to_solution(feeder, v2[0], l[0], P[0], Q[0], int(iters[0]), float(resid[0]))


def _to_solution(feeder, v2, l, P, Q, iterations, residual):
    sb = feeder.s_base_kw
    return PowerFlowSolution(
        v=np.sqrt(v2),
        i=np.sqrt(l) * feeder.i_base,
        p_flow=P * sb,
        q_flow=Q * sb,
        loss=float(np.dot(feeder.r, l) * sb),
        iterations=iterations,
        residual=residual,
    )


def solve_distflow_batch(feeder, p, q, tol=1e-10, max_iter=100):
    """Solve many cases at once; ``p``, ``q`` are (rows, buses) in kW / kVar.

    Returns a dict of arrays in interface units plus a ``converged`` mask.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if p.shape != q.shape or p.shape[1] != feeder.n_bus:
        raise DimensionMismatch("batch injections must be (rows, n_bus)")
    sb = feeder.s_base_kw
    v2, l, P, Q, iters, resid = _sweep(feeder, p / sb, q / sb, tol, max_iter)
    with np.errstate(invalid="ignore"):
        v = np.sqrt(v2)
    return {
        "v": v,
        "i": np.sqrt(l) * feeder.i_base,
        "p_flow": P * sb,
        "q_flow": Q * sb,
        "loss": l @ feeder.r * sb,
        "iterations": iters,
        "residual": resid,
        "converged": iters > 0,
    }


class Residuals(NamedTuple):
    """Max-abs mismatch of each DistFlow equation family, per-unit."""

    active_balance: float
    reactive_balance: float
    voltage_drop: float
    current_definition: float

    def max(self):
        return max(self)


def residuals(feeder: Feeder, sol: PowerFlowSolution, inj: InjectionVector) -> Residuals:
    if inj.p.size != feeder.n_bus or sol.v.size != feeder.n_bus or sol.i.size != feeder.n_line:
        raise DimensionMismatch("solution, injection and feeder sizes disagree")
    top = feeder.topology
    sb = feeder.s_base_kw
    r, x = feeder.r, feeder.x
    P, Q = sol.p_flow / sb, sol.q_flow / sb
    l = (sol.i / feeder.i_base) ** 2
    v2 = sol.v ** 2
    p, q = inj.p / sb, inj.q / sb
    child_p = np.zeros(feeder.n_bus)
    child_q = np.zeros(feeder.n_bus)
    np.add.at(child_p, top.line_up, P)
    np.add.at(child_q, top.line_up, Q)
    down, up = top.line_down, top.line_up
    if feeder.n_line == 0:
        return Residuals(0.0, 0.0, 0.0, 0.0)
    r_p = P - (child_p[down] + p[down] + r * l)
    r_q = Q - (child_q[down] + q[down] + x * l)
    r_v = v2[down] - (v2[up] - 2 * (r * P + x * Q) + (r * r + x * x) * l)
    r_i = l - (P * P + Q * Q) / v2[up]
    return Residuals(*(float(np.abs(a).max()) for a in (r_p, r_q, r_v, r_i)))


def violation_terms(sol: PowerFlowSolution, limits: Limits):
    """(delta_v [p.u.], delta_ol [A], delta_rpf [kW]) summed over elements."""
    if limits.i_max.size != sol.i.size or limits.p_min.size != sol.p_flow.size:
        raise DimensionMismatch("limit vectors do not match the solution's line count")
    dv = np.maximum(sol.v - limits.v_max, 0).sum() + np.maximum(limits.v_min - sol.v, 0).sum()
    dol = np.maximum(sol.i - limits.i_max, 0).sum()
    drpf = np.maximum(limits.p_min - sol.p_flow, 0).sum()
    return float(dv), float(dol), float(drpf)
