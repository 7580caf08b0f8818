"""Big-M ReLU encodings and a branch-and-bound solver on top of :mod:`lp`.

Every encoded ReLU is recorded as a :class:`ReluUnit` in layer order.  The
solver uses those records for a completion heuristic: take the relaxation's
inputs, recompute each unit's activation exactly, fix the implied binaries
and re-solve.  For convex networks the relaxation is already tight, so this
closes the gap at the root.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import IntervalMissing, NoIncumbentFound, SolverFailure, UnboundedInput
from .icnn import ReluNet, fold_normalization
from .lp import EQ, GE, LE, LpProblem, Status, solve_lp

INT_TOL = 1e-6


@dataclass
class ReluUnit:
    """z = max(a, 0) with a = val . x[idx] + bias and a in [lo, hi]."""

    z: int
    beta: int  # -1 when the unit is stable
    lo: float
    hi: float
    idx: np.ndarray
    val: np.ndarray
    bias: float


@dataclass
class MilpProblem:
    lp: LpProblem = field(default_factory=LpProblem)
    binaries: list = field(default_factory=list)
    units: list = field(default_factory=list)

    def validate(self):
        n = len(self.lp.c)
        for b in self.binaries:
            if not 0 <= b < n:
                raise IndexError(f"binary index {b} out of range")
            if self.lp.lo[b] < 0 or self.lp.hi[b] > 1:
                raise ValueError(f"binary {b} has bounds outside [0, 1]")
        for u in self.units:
            if not (math.isfinite(u.lo) and math.isfinite(u.hi)):
                raise IntervalMissing("big-M bounds must be finite")
            if u.beta >= 0 and not u.lo <= 0 <= u.hi:
                raise ValueError("an encoded unit needs lo <= 0 <= hi")

    @property
    def n_binaries(self):
        return len(self.binaries)


def _affine_interval(W, b, lo, hi):
    c = 0.5 * (lo + hi)
    r = 0.5 * (hi - lo)
    mid = W @ c + b
    rad = np.abs(W) @ r
    return mid - rad, mid + rad


def bound_propagate(model: ReluNet, x_lo, x_hi):
    """Preactivation intervals per hidden layer, then the output interval.

    Works in physical units (the model is folded first if needed).
    """
    x_lo = np.asarray(x_lo, dtype=float)
    x_hi = np.asarray(x_hi, dtype=float)
    if not (np.all(np.isfinite(x_lo)) and np.all(np.isfinite(x_hi))):
        raise UnboundedInput("input box must be finite")
    if np.any(x_lo > x_hi):
        raise ValueError("x_lo exceeds x_hi")
    net = fold_normalization(model) if not model.folded else model
    out = []
    zl = zh = None
    for k in range(net.K + 1):
        lo = np.zeros_like(net.b[k])
        hi = np.zeros_like(net.b[k])
        if net.wx[k] is not None:
            l, h = _affine_interval(net.wx[k], net.b[k], x_lo, x_hi)
            lo += l
            hi += h
        else:
            lo += net.b[k]
            hi += net.b[k]
        if k > 0:
            l, h = _affine_interval(net.wz[k - 1], 0.0, zl, zh)
            lo += l
            hi += h
        out.append((lo, hi))
        zl, zh = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    return out


def encode_relu_unit(mp: MilpProblem, idx, val, bias, lo, hi, name="relu"):
    """Add z = max(a, 0) exactly (given sound bounds); returns the z variable."""
    if lo is None or hi is None or not (math.isfinite(lo) and math.isfinite(hi)):
        raise IntervalMissing(f"{name}: no finite interval")
    p = mp.lp
    idx = np.asarray(idx, dtype=int)
    val = np.asarray(val, dtype=float)
    if hi <= 0:
        z = p.add_var(0.0, 0.0, name=name)
        mp.units.append(ReluUnit(z, -1, lo, hi, idx, val, bias))
        return z
    if lo >= 0:
        z = p.add_var(0.0, math.inf, name=name)
        p.add_row(np.concatenate([[z], idx]), np.concatenate([[1.0], -val]), EQ, bias, name=f"{name}.eq")
        mp.units.append(ReluUnit(z, -1, lo, hi, idx, val, bias))
        return z
    z = p.add_var(0.0, hi, name=name)
    beta = p.add_var(0.0, 1.0, name=f"{name}.beta")
    mp.binaries.append(beta)
    p.add_row(np.concatenate([[z], idx]), np.concatenate([[1.0], -val]), GE, bias, name=f"{name}.ge")
    p.add_row(np.concatenate([[z, beta], idx]), np.concatenate([[1.0, -lo], -val]), LE, bias - lo,
              name=f"{name}.lo")
    p.add_row([z, beta], [1.0, -hi], LE, 0.0, name=f"{name}.hi")
    mp.units.append(ReluUnit(z, beta, lo, hi, idx, val, bias))
    return z


def encode_relu_bigM(mp: MilpProblem, model: ReluNet, x_vars, intervals, tag="net"):
    """Encode every hidden ReLU of ``model`` (folded) with big-M rows.

    ``intervals`` is the output of :func:`bound_propagate`.  Returns the same
    (z vars, output map) pair as :func:`icnn.add_relaxed_layers`.
    """
    if intervals is None or len(intervals) < model.K:
        raise IntervalMissing("one interval pair per hidden layer is required")
    x_vars = np.asarray(x_vars, dtype=int)
    zs = []
    prev = None
    for k in range(model.K):
        lo, hi = intervals[k]
        if lo.size != model.b[k].size:
            raise IntervalMissing(f"layer {k + 1}: interval size {lo.size} != width {model.b[k].size}")
        layer = []
        for i in range(model.b[k].size):
            idx, val = [], []
            if model.wx[k] is not None:
                idx.append(x_vars)
                val.append(model.wx[k][i])
            if prev is not None:
                idx.append(np.asarray(prev))
                val.append(model.wz[k - 1][i])
            layer.append(encode_relu_unit(mp, np.concatenate(idx), np.concatenate(val), float(model.b[k][i]),
                                          float(lo[i]), float(hi[i]), name=f"{tag}.z{k + 1}[{i}]"))
        zs.append(layer)
        prev = layer
    K = model.K
    out = []
    for o in range(model.output_dim):
        idx = list(prev)
        val = list(model.wz[K - 1][o])
        if model.wx[K] is not None:
            idx.extend(x_vars)
            val.extend(model.wx[K][o])
        out.append((np.array(idx, dtype=int), np.array(val), float(model.b[K][o])))
    return zs, out


class MilpStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    NODE_LIMIT = "NodeLimit"
    TIME_LIMIT = "TimeLimit"


@dataclass
class BnbConfig:
    node_selection: str = "best-bound"
    branching: str = "most-fractional"
    abs_gap: float = 1e-9
    rel_gap: float = 1e-6
    time_limit: float = 60.0
    node_limit: int = 100_000
    heuristic: bool = True

    def __post_init__(self):
        if self.node_selection not in ("best-bound", "depth-first"):
            raise ValueError(f"unknown node selection {self.node_selection!r}")
        if self.branching != "most-fractional":
            raise ValueError(f"unknown branching rule {self.branching!r}")
        if self.abs_gap < 0 or self.rel_gap < 0 or self.time_limit <= 0 or self.node_limit <= 0:
            raise ValueError("limits must be positive")


@dataclass
class MilpSolution:
    status: MilpStatus
    x: np.ndarray | None
    objective: float
    bound: float
    gap: float
    nodes: int
    wall_time: float
    lp_iterations: int
    root_objective: float

    @property
    def optimal(self):
        return self.status == MilpStatus.OPTIMAL


def _gap(inc, bound):
    if not math.isfinite(inc):
        return math.inf
    return max(0.0, inc - bound) / max(1.0, abs(inc))


def _solve_with(mp, fixes):
    p = mp.lp.copy()
    for var, (lo, hi) in fixes.items():
        p.lo[var] = lo
        p.hi[var] = hi
    return solve_lp(p)


def _complete(mp, x):
    """Fix each binary to the activation pattern the inputs in ``x`` imply."""
    x = x.copy()
    fixes = {}
    for u in mp.units:
        a = float(np.dot(u.val, x[u.idx])) + u.bias
        x[u.z] = max(a, 0.0)
        if u.beta >= 0:
            on = 1.0 if a > 0 else 0.0
            fixes[u.beta] = (on, on)
    return fixes


def solve_milp(mp: MilpProblem, cfg: BnbConfig | None = None) -> MilpSolution:
    cfg = cfg or BnbConfig()
    mp.validate()
    t0 = time.perf_counter()
    binaries = np.asarray(mp.binaries, dtype=int)
    inc_val, inc_x = math.inf, None
    lp_iters = 0
    counter = 0
    nodes = 0

    def consider(fixes):
        nonlocal inc_val, inc_x, lp_iters
        sol = _solve_with(mp, fixes)
        lp_iters += sol.iterations
        if sol.optimal and sol.objective < inc_val:
            inc_val, inc_x = sol.objective, sol.x

    def closed(bound):
        if not math.isfinite(inc_val):
            return False
        return inc_val - bound <= max(cfg.abs_gap, cfg.rel_gap * max(1.0, abs(inc_val)))

    root = _solve_with(mp, {})
    lp_iters += root.iterations
    if root.status == Status.INFEASIBLE:
        return MilpSolution(MilpStatus.INFEASIBLE, None, math.inf, math.inf, math.inf, 1,
                            time.perf_counter() - t0, lp_iters, math.inf)
    if root.status != Status.OPTIMAL:
        raise SolverFailure(f"root relaxation ended with status {root.status.value}")
    root_obj = root.objective
    open_nodes = [(root_obj, counter, {}, root)]
    status = MilpStatus.OPTIMAL
    if cfg.heuristic and mp.units:
        consider(_complete(mp, root.x))

    while open_nodes:
        if cfg.node_selection == "best-bound":
            bound, _, fixes, sol = heapq.heappop(open_nodes)
        else:
            bound, _, fixes, sol = open_nodes.pop()
        if closed(bound):
            continue
        if nodes >= cfg.node_limit:
            status = MilpStatus.NODE_LIMIT
            open_nodes.append((bound, counter, fixes, sol))
            break
        if time.perf_counter() - t0 > cfg.time_limit:
            status = MilpStatus.TIME_LIMIT
            open_nodes.append((bound, counter, fixes, sol))
            break
        nodes += 1
        if sol is None:
            sol = _solve_with(mp, fixes)
            lp_iters += sol.iterations
            if sol.status == Status.INFEASIBLE:
                continue
            if sol.status != Status.OPTIMAL:
                raise SolverFailure(f"node relaxation ended with status {sol.status.value}")
            if closed(sol.objective):
                continue
        frac = np.abs(sol.x[binaries] - np.round(sol.x[binaries])) if binaries.size else np.zeros(0)
        if frac.size == 0 or frac.max() <= INT_TOL:
            fixed = dict(fixes)
            for b in binaries:
                r = float(round(sol.x[b]))
                fixed[int(b)] = (r, r)
            consider(fixed)
            continue
        if cfg.heuristic and nodes > 1 and mp.units and nodes % 10 == 0:
            consider({**_complete(mp, sol.x), **fixes})
        j = int(binaries[int(np.argmax(frac))])
        for side in ((0.0, 0.0), (1.0, 1.0)) if cfg.node_selection == "best-bound" else ((1.0, 1.0), (0.0, 0.0)):
            counter += 1
            child = dict(fixes)
            child[j] = side
            item = (sol.objective, counter, child, None)
            if cfg.node_selection == "best-bound":
                heapq.heappush(open_nodes, item)
            else:
                open_nodes.append(item)

    remaining = [n[0] for n in open_nodes if not closed(n[0])]
    bound = min([inc_val] + remaining) if math.isfinite(inc_val) else min(remaining, default=math.inf)
    elapsed = time.perf_counter() - t0
    if inc_x is None:
        if status == MilpStatus.OPTIMAL:
            return MilpSolution(MilpStatus.INFEASIBLE, None, math.inf, math.inf, math.inf, nodes, elapsed,
                                lp_iters, root_obj)
        raise NoIncumbentFound(f"stopped on {status.value} without a feasible point", bound)
    return MilpSolution(status, inc_x, inc_val, bound, _gap(inc_val, bound), max(nodes, 1), elapsed,
                        lp_iters, root_obj)
