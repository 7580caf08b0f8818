"""Dynamic operating envelope problems in five flavours.

``B0``  pass-through: every DER gets its original limit, nothing is optimised.
``B1``  ICNN surrogates embedded as a linear program (relaxed ReLU epigraphs).
``B2``  the same ICNNs with exact big-M ReLU encodings, solved by branch-and-bound.
``B3``  linearised branch flow with piecewise-linear losses, a plain LP.
``B4``  ReLU MLP surrogates encoded as a MILP.

Each interval is an independent problem.  Every answer is re-checked with the
full power flow, so the reported J1/J2/J3 are physical, not surrogate, values.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BadSegmentCount, DimensionMismatch, NegativeWeight, SolverFailure
from .grid import Feeder, InjectionVector, Limits, solve_distflow, violation_terms
from .icnn import add_relaxed_layers, forward, violation
from .lp import EQ, GE, LpProblem, solve_lp
from .milp import BnbConfig, MilpProblem, bound_propagate, encode_relu_bigM, solve_milp
from .surrogates import SurrogateSet

METHODS = ("B0", "B1", "B2", "B3", "B4")
DIRECTIONS = ("upper", "lower")
DEFAULT_SEGMENTS = 8


@dataclass
class Weights:
    w_doe: float = 1.0
    w_loss: float = 1.0
    w_v: float = 1e6
    w_ol: float = 1e3
    w_rpf: float = 1e3

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v >= 0 or not math.isfinite(v):
                raise NegativeWeight(f"{k} must be a finite non-negative number, got {v}")

    def penalty(self, kind):
        return {"loss": self.w_loss, "v": self.w_v, "ol": self.w_ol, "rpf": self.w_rpf}[kind]

    def j3(self, dv, dol, drpf):
        return self.w_v * dv + self.w_ol * dol + self.w_rpf * drpf

    def with_overrides(self, overrides):
        d = asdict(self)
        for key, value in overrides.items():
            if key not in d:
                raise KeyError(f"unknown weight {key!r}")
            d[key] = float(value)
        return Weights(**d)


@dataclass
class DoeRequest:
    """Loads and DER ranges per interval (rows) for one envelope direction."""

    p0: np.ndarray  # (T, n_bus) kW
    q0: np.ndarray  # (T, n_bus) kVar
    p_max: np.ndarray  # (T, n_der) kW
    p_min: np.ndarray  # (T, n_der) kW
    q_der: np.ndarray  # (n_der,) kVar
    limits: Limits
    weights: Weights = field(default_factory=Weights)
    direction: str = "upper"
    intervals: list | None = None

    def __post_init__(self):
        self.p0 = np.atleast_2d(np.asarray(self.p0, dtype=float))
        self.q0 = np.atleast_2d(np.asarray(self.q0, dtype=float))
        self.p_max = np.atleast_2d(np.asarray(self.p_max, dtype=float))
        self.p_min = np.atleast_2d(np.asarray(self.p_min, dtype=float))
        self.q_der = np.asarray(self.q_der, dtype=float).reshape(-1)
        T = self.p0.shape[0]
        if self.q0.shape != self.p0.shape or self.p_max.shape != self.p_min.shape or self.p_max.shape[0] != T:
            raise DimensionMismatch("request blocks must share the interval count")
        if self.p_max.shape[1] != self.q_der.size:
            raise DimensionMismatch("one q_der per DER is required")
        if np.any(self.p_min > self.p_max):
            raise ValueError("p_min exceeds p_max")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if self.intervals is None:
            self.intervals = list(range(T))
        if any(not 0 <= t < T for t in self.intervals):
            raise IndexError("interval index out of range")

    @property
    def n_intervals(self):
        return self.p0.shape[0]

    def injection(self, feeder: Feeder, t, envelope):
        p = self.p0[t].copy()
        q = self.q0[t].copy()
        idx = feeder.der_index
        p[idx] -= np.asarray(envelope, dtype=float)
        q[idx] -= self.q_der
        return InjectionVector(p, q)

    def j1(self, t, envelope):
        e = np.asarray(envelope, dtype=float)
        gap = self.p_max[t] - e if self.direction == "upper" else e - self.p_min[t]
        return self.weights.w_doe * float(np.abs(gap).sum())

    def passthrough(self, t):
        return (self.p_max if self.direction == "upper" else self.p_min)[t].copy()

    def to_dict(self):
        return {"p0": self.p0.tolist(), "q0": self.q0.tolist(), "p_max": self.p_max.tolist(),
                "p_min": self.p_min.tolist(), "q_der": self.q_der.tolist(), "limits": self.limits.to_dict(),
                "weights": asdict(self.weights), "direction": self.direction, "intervals": list(self.intervals)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["p0"], d["q0"], d["p_max"], d["p_min"], d["q_der"], Limits.from_dict(d["limits"]),
                   Weights(**d.get("weights", {})), d.get("direction", "upper"), d.get("intervals"))

    def with_weights(self, weights):
        return DoeRequest(self.p0, self.q0, self.p_max, self.p_min, self.q_der, self.limits, weights,
                          self.direction, list(self.intervals))


@dataclass
class DoeResult:
    interval: int
    method: str
    direction: str
    envelope: list
    j1: float
    j2: float
    j3: float
    j: float
    objective: float  # solver objective (surrogate model of J)
    j2_surrogate: float | None
    j3_surrogate: float | None
    delta_surrogate: dict | None
    delta_verified: dict
    loss_verified: float
    wall_time: float
    status: str = "Optimal"
    gap: float = 0.0
    n_vars: int = 0
    n_rows: int = 0
    n_binaries: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_rows(self):
        """Flat rows, one per DER, for CSV export."""
        rows = []
        for k, e in enumerate(self.envelope):
            rows.append({
                "interval": self.interval, "method": self.method, "direction": self.direction, "der": k,
                "envelope": e, "J1": self.j1, "J2": self.j2, "J3": self.j3, "J": self.j,
                "objective": self.objective,
                "J2_surrogate": "" if self.j2_surrogate is None else self.j2_surrogate,
                "J3_surrogate": "" if self.j3_surrogate is None else self.j3_surrogate,
                "dv_verified": self.delta_verified["v"], "dol_verified": self.delta_verified["ol"],
                "drpf_verified": self.delta_verified["rpf"], "loss_verified": self.loss_verified,
                "time_ms": 1000.0 * self.wall_time, "status": self.status, "gap": self.gap,
                "n_vars": self.n_vars, "n_rows": self.n_rows, "n_binaries": self.n_binaries,
            })
        return rows


CSV_FIELDS = ["interval", "method", "direction", "der", "envelope", "J1", "J2", "J3", "J", "objective",
              "J2_surrogate", "J3_surrogate", "dv_verified", "dol_verified", "drpf_verified", "loss_verified",
              "time_ms", "status", "gap", "n_vars", "n_rows", "n_binaries"]


def results_to_csv(results):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in results:
        for row in r.to_rows():
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def results_to_json(results):
    return json.dumps([r.to_dict() for r in results], indent=1)


def results_from_json(text):
    return [DoeResult.from_dict(d) for d in json.loads(text)]


# shared pieces ---------------------------------------------------------------------


@dataclass
class Built:
    """An assembled instance plus the variable indices needed to read it back."""

    problem: LpProblem | MilpProblem
    envelope: np.ndarray
    x: np.ndarray | None = None
    deltas: dict = field(default_factory=dict)  # head kind -> delta variable
    extras: dict = field(default_factory=dict)

    @property
    def lp(self):
        return self.problem.lp if isinstance(self.problem, MilpProblem) else self.problem


def _envelope_block(p: LpProblem, feeder: Feeder, req: DoeRequest, t):
    """Envelope variables inside [p_min, p_max] and the J1 objective."""
    w = req.weights.w_doe
    e = p.add_vars(len(feeder.ders), req.p_min[t], req.p_max[t], 0.0, group="envelope")
    for k, var in enumerate(e):
        if req.direction == "upper":
            p.c[var] = -w
            p.offset += w * req.p_max[t, k]
        else:
            p.c[var] = w
            p.offset -= w * req.p_min[t, k]
    return e


def _input_block(p: LpProblem, feeder: Feeder, req: DoeRequest, t, e):
    """Network inputs x = [p; q]; only the DER active loads are free."""
    nb = feeder.n_bus
    net = req.injection(feeder, t, np.zeros(len(feeder.ders)))
    x = p.add_vars(2 * nb, net.as_vector(), net.as_vector(), 0.0, group="x")
    for k, j in enumerate(feeder.der_index):
        p.lo[x[j]] = -math.inf
        p.hi[x[j]] = math.inf
        p.add_row([x[j], e[k]], [1.0, 1.0], EQ, req.p0[t, j], name=f"inj[{j}]")
    return x


def input_box(feeder: Feeder, req: DoeRequest, t):
    net = req.injection(feeder, t, np.zeros(len(feeder.ders))).as_vector()
    lo, hi = net.copy(), net.copy()
    idx = feeder.der_index
    lo[idx] = req.p0[t, idx] - req.p_max[t]
    hi[idx] = req.p0[t, idx] - req.p_min[t]
    return lo, hi


def _penalty_block(p: LpProblem, out_map, head, weight, tag):
    """nu >= y + eps, nu >= 0, delta = sum(nu) with cost ``weight`` on delta."""
    nu = p.add_vars(len(out_map), 0.0, math.inf, 0.0, group=f"{tag}.nu")
    for o, (idx, val, const) in enumerate(out_map):
        p.add_row(np.concatenate([[nu[o]], idx]), np.concatenate([[1.0], -val]), GE, const + head.eps[o],
                  name=f"{tag}.nu[{o}]")
    delta = p.add_var(0.0, math.inf, weight, name=f"{tag}.delta")
    p.add_row(np.concatenate([[delta], nu]), np.concatenate([[1.0], -np.ones(len(nu))]), EQ, 0.0,
              name=f"{tag}.delta")
    return delta


def _active_kinds(surr: SurrogateSet, weights: Weights):
    return [k for k in ("loss", "v", "ol", "rpf") if k in surr.models and weights.penalty(k) > 0]


def build_icnn_lp(feeder: Feeder, surrogates: SurrogateSet, req: DoeRequest, t) -> Built:
    """Convex surrogates embedded through their relaxed ReLU epigraphs."""
    surrogates.check(convex=True)
    heads = surrogates.heads(req.limits)
    p = LpProblem()
    e = _envelope_block(p, feeder, req, t)
    x = _input_block(p, feeder, req, t, e)
    deltas = {}
    for kind in _active_kinds(surrogates, req.weights):
        _, out = add_relaxed_layers(p, surrogates.models[kind], x, kind)
        deltas[kind] = _penalty_block(p, out, heads[kind], req.weights.penalty(kind), kind)
    return Built(p, e, x, deltas)


def build_icnn_milp(feeder: Feeder, surrogates: SurrogateSet, req: DoeRequest, t) -> Built:
    """Exact big-M encoding of every hidden ReLU (ICNN or MLP bundle)."""
    surrogates.check(convex=surrogates.family == "icnn")
    heads = surrogates.heads(req.limits)
    mp = MilpProblem()
    e = _envelope_block(mp.lp, feeder, req, t)
    x = _input_block(mp.lp, feeder, req, t, e)
    lo, hi = input_box(feeder, req, t)
    deltas = {}
    for kind in _active_kinds(surrogates, req.weights):
        model = surrogates.models[kind]
        _, out = encode_relu_bigM(mp, model, x, bound_propagate(model, lo, hi), tag=kind)
        deltas[kind] = _penalty_block(mp.lp, out, heads[kind], req.weights.penalty(kind), kind)
    return Built(mp, e, x, deltas)


def secants(r, span, segments):
    """(slope, intercept) pairs whose maximum interpolates r*s^2 on [-span, span]."""
    if not isinstance(segments, (int, np.integer)) or segments < 1:
        raise BadSegmentCount(f"need a positive integer segment count, got {segments!r}")
    pts = np.linspace(-span, span, segments + 1)
    a, b = pts[:-1], pts[1:]
    return r * (a + b), -r * a * b


def _downstream_sum(feeder: Feeder, values):
    """Sum of a per-bus quantity over each line's downstream subtree."""
    top = feeder.topology
    acc = np.asarray(values, dtype=float).copy()
    for j in top.order[::-1]:
        if top.parent[j] >= 0:
            acc[top.parent[j]] += acc[j]
    return acc[top.line_down]


def build_lindistflow(feeder: Feeder, req: DoeRequest, t, pwl_segments=DEFAULT_SEGMENTS) -> Built:
    """Linearised branch flow: lossless balances, linear voltage drop, PWL loss."""
    if not isinstance(pwl_segments, (int, np.integer)) or pwl_segments < 1:
        raise BadSegmentCount(f"need a positive integer segment count, got {pwl_segments!r}")
    top = feeder.topology
    sb = feeder.s_base_kw
    w = req.weights
    lim = req.limits
    p = LpProblem()
    e = _envelope_block(p, feeder, req, t)
    nl, nb = feeder.n_line, feeder.n_bus
    P = p.add_vars(nl, -math.inf, math.inf, 0.0, group="P")
    Q = p.add_vars(nl, -math.inf, math.inf, 0.0, group="Q")
    slack = feeder.bus_index[feeder.slack_bus]
    v0 = feeder.slack_voltage ** 2
    v = p.add_vars(nb, -math.inf, math.inf, 0.0, group="v")
    p.lo[v[slack]] = p.hi[v[slack]] = v0
    der_of = {int(j): k for k, j in enumerate(feeder.der_index)}
    net_q = req.injection(feeder, t, np.zeros(len(feeder.ders))).q
    for l in range(nl):
        j = top.line_down[l]
        kids = [top.parent_line[c] for c in top.children[j]]
        idx = [P[l]] + [P[k] for k in kids]
        val = [1.0] + [-1.0] * len(kids)
        if j in der_of:
            idx.append(e[der_of[j]])
            val.append(1.0 / sb)
        p.add_row(idx, val, EQ, req.p0[t, j] / sb, name=f"pbal[{l}]")
        p.add_row([Q[l]] + [Q[k] for k in kids], [1.0] + [-1.0] * len(kids), EQ, net_q[j] / sb,
                  name=f"qbal[{l}]")
        r, x = feeder.r[l], feeder.x[l]
        p.add_row([v[j], v[top.line_up[l]], P[l], Q[l]], [1.0, -1.0, 2 * r, 2 * x], EQ, 0.0, name=f"vdrop[{l}]")

    deltas = {}
    if w.w_loss > 0:
        # active flows span the largest downstream load / export the request allows
        gen = np.zeros(nb)
        gen[feeder.der_index] = np.maximum(np.abs(req.p_max[t]), np.abs(req.p_min[t]))
        span_p = (_downstream_sum(feeder, np.abs(req.p0[t])) + _downstream_sum(feeder, gen)) / sb
        # reactive flows are fixed by the data, so x Q^2 is a constant
        q_flow = _downstream_sum(feeder, net_q) / sb
        q_part = float(np.dot(feeder.x, q_flow ** 2))
        loss_terms = []
        for l in range(nl):
            tv = p.add_var(0.0, math.inf, 0.0, name=f"loss[{l}]")
            for slope, icpt in zip(*secants(feeder.r[l], max(span_p[l], 1e-6), pwl_segments)):
                p.add_row([tv, P[l]], [1.0, -slope], GE, icpt, name=f"pwl[{l}]")
            loss_terms.append(tv)
        d = p.add_var(0.0, math.inf, w.w_loss, name="loss.delta")
        p.add_row([d] + loss_terms, [1.0] + [-sb] * nl, EQ, sb * q_part, name="loss.total")
        deltas["loss"] = d
    if w.w_v > 0:
        nu = []
        for j in range(nb):
            if j == slack:
                continue
            hi_ = p.add_var(0.0, math.inf, 0.0, name=f"v.hi[{j}]")
            lo_ = p.add_var(0.0, math.inf, 0.0, name=f"v.lo[{j}]")
            # squared-voltage excess converted to magnitude: dV ~ dv / (2 V)
            p.add_row([hi_, v[j]], [2 * lim.v_max, -1.0], GE, -lim.v_max ** 2)
            p.add_row([lo_, v[j]], [2 * lim.v_min, 1.0], GE, lim.v_min ** 2)
            nu += [hi_, lo_]
        d = p.add_var(0.0, math.inf, w.w_v, name="v.delta")
        p.add_row([d] + nu, [1.0] + [-1.0] * len(nu), EQ, 0.0)
        deltas["v"] = d
    if w.w_ol > 0:
        # thermal limit as a rated-power bound, excess reported in amps
        amps_per_kw = 1.0 / (math.sqrt(3.0) * feeder.base_voltage)
        nu = []
        for l in range(nl):
            pmax = lim.i_max[l] / amps_per_kw
            s = p.add_var(0.0, math.inf, 0.0, name=f"ol[{l}]")
            p.add_row([s, P[l]], [1.0, -sb * amps_per_kw], GE, -pmax * amps_per_kw)
            p.add_row([s, P[l]], [1.0, sb * amps_per_kw], GE, -pmax * amps_per_kw)
            nu.append(s)
        d = p.add_var(0.0, math.inf, w.w_ol, name="ol.delta")
        p.add_row([d] + nu, [1.0] + [-1.0] * nl, EQ, 0.0)
        deltas["ol"] = d
    if w.w_rpf > 0:
        nu = []
        for l in range(nl):
            s = p.add_var(0.0, math.inf, 0.0, name=f"rpf[{l}]")
            p.add_row([s, P[l]], [1.0, sb], GE, lim.p_min[l])
            nu.append(s)
        d = p.add_var(0.0, math.inf, w.w_rpf, name="rpf.delta")
        p.add_row([d] + nu, [1.0] + [-1.0] * nl, EQ, 0.0)
        deltas["rpf"] = d
    return Built(p, e, None, deltas, {"P": P, "Q": Q, "v": v})


# evaluation ------------------------------------------------------------------------


def verify_with_oracle(feeder: Feeder, req: DoeRequest, t, envelope):
    """Apply the envelope as DER set-points and run the exact power flow."""
    sol = solve_distflow(feeder, req.injection(feeder, t, envelope))
    dv, dol, drpf = violation_terms(sol, req.limits)
    return {"v": dv, "ol": dol, "rpf": drpf}, sol.loss


def surrogate_deltas(surrogates: SurrogateSet, req: DoeRequest, feeder: Feeder, t, envelope):
    """Head values recomputed by a forward pass at the chosen operating point."""
    x = req.injection(feeder, t, envelope).as_vector()
    heads = surrogates.heads(req.limits)
    out = {}
    for kind, model in surrogates.models.items():
        y = forward(model, x)
        out[kind] = float(y[0]) if kind == "loss" else float(violation(heads[kind], y))
    return out


def _finish(feeder, req, t, method, envelope, objective, wall, surr_deltas, status="Optimal", gap=0.0,
            size=(0, 0, 0)):
    envelope = np.clip(np.asarray(envelope, dtype=float), req.p_min[t], req.p_max[t])
    verified, loss = verify_with_oracle(feeder, req, t, envelope)
    w = req.weights
    j1 = req.j1(t, envelope)
    j2 = w.w_loss * loss
    j3 = w.j3(verified["v"], verified["ol"], verified["rpf"])
    j2s = j3s = None
    if surr_deltas is not None:
        j2s = w.w_loss * max(surr_deltas.get("loss", 0.0), 0.0)
        j3s = w.j3(surr_deltas.get("v", 0.0), surr_deltas.get("ol", 0.0), surr_deltas.get("rpf", 0.0))
    return DoeResult(int(t), method, req.direction, envelope.tolist(), j1, j2, j3, j1 + j2 + j3,
                     float(objective), j2s, j3s, surr_deltas, verified, float(loss), wall, status, gap,
                     *size)


def evaluate_b0(feeder: Feeder, req: DoeRequest, t) -> DoeResult:
    start = time.perf_counter()
    env = req.passthrough(t)
    wall = time.perf_counter() - start
    res = _finish(feeder, req, t, "B0", env, math.nan, wall, None)
    res.objective = res.j
    return res


def solve_interval(feeder: Feeder, req: DoeRequest, t, method, icnn=None, mlp=None,
                   pwl_segments=DEFAULT_SEGMENTS, bnb=None) -> DoeResult:
    """Build and solve one interval; the wall time covers assembly and solve."""
    if method == "B0":
        return evaluate_b0(feeder, req, t)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    start = time.perf_counter()
    surr = None
    if method in ("B1", "B2"):
        if icnn is None:
            raise ValueError(f"{method} needs trained ICNN surrogates")
        surr = icnn
    elif method == "B4":
        if mlp is None:
            raise ValueError("B4 needs trained MLP surrogates")
        surr = mlp
    if method == "B1":
        built = build_icnn_lp(feeder, surr, req, t)
    elif method == "B3":
        built = build_lindistflow(feeder, req, t, pwl_segments)
    else:
        built = build_icnn_milp(feeder, surr, req, t)
    gap, n_bin = 0.0, 0
    if isinstance(built.problem, MilpProblem):
        n_bin = built.problem.n_binaries
        sol = solve_milp(built.problem, bnb or BnbConfig())
        status, gap = sol.status.value, sol.gap
    else:
        sol = solve_lp(built.problem)
        if not sol.optimal:
            raise SolverFailure(f"interval {t}: {method} LP ended with status {sol.status.value}")
        status = sol.status.value
    wall = time.perf_counter() - start
    env = sol.x[built.envelope]
    if surr is not None:
        sd = surrogate_deltas(surr, req, feeder, t, env)
    else:
        sd = {k: float(sol.x[d]) for k, d in built.deltas.items()}
    size = (len(built.lp.c), len(built.lp.rhs), n_bin)
    return _finish(feeder, req, t, method, env, sol.objective, wall, sd, status, gap, size)


def solve_doe(feeder: Feeder, req: DoeRequest, method, icnn=None, mlp=None, pwl_segments=DEFAULT_SEGMENTS,
              bnb=None):
    """One result per requested interval, solved independently."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    icnn = icnn.folded() if icnn is not None else None
    mlp = mlp.folded() if mlp is not None else None
    out = []
    for t in req.intervals:
        try:
            out.append(solve_interval(feeder, req, t, method, icnn, mlp, pwl_segments, bnb))
        except Exception as exc:
            if hasattr(exc, "args") and exc.args and "interval" not in str(exc.args[0]):
                exc.args = (f"interval {t}: {exc.args[0]}",) + exc.args[1:]
            raise
    return out


# scenarios --------------------------------------------------------------------------


def stress_day(feeder: Feeder, n_intervals=96, seed=0):
    """A synthetic day with a midday solar peak and an evening load peak.

    Returns (p0, q0, p_max, p_min): per-bus loads follow a residential shape
    (trough about 0.35, evening peak 1.0 of base load) with small per-bus
    jitter; the first DER follows a solar bell capped at its rating, the
    others keep their full two-sided range all day.
    """
    rng = np.random.default_rng(seed)
    h = (np.arange(n_intervals) + 0.5) * 24.0 / n_intervals
    shape = (0.35 + 0.25 * np.exp(-((h - 8.0) / 2.0) ** 2) + 0.1 * np.exp(-((h - 13.0) / 3.0) ** 2)
             + 0.6 * np.exp(-((h - 19.0) / 2.2) ** 2))
    shape = np.minimum(shape, 1.0)
    jitter = rng.uniform(0.95, 1.05, size=(n_intervals, feeder.n_bus))
    mult = np.clip(shape[:, None] * jitter, 0.2, 1.2)
    base = feeder.base_injection()
    p0 = base.p[None, :] * mult
    q0 = base.q[None, :] * mult
    ders = feeder.ders
    p_max = np.tile([d.p_max for d in ders], (n_intervals, 1)).astype(float)
    p_min = np.tile([d.p_min for d in ders], (n_intervals, 1)).astype(float)
    solar = np.clip(np.sin(np.pi * (h - 6.0) / 12.0), 0.0, None) ** 1.2
    p_max[:, 0] = np.maximum(ders[0].p_max * solar, p_min[:, 0])
    return p0, q0, p_max, p_min


def make_request(feeder: Feeder, day, direction="upper", weights=None, intervals=None):
    p0, q0, p_max, p_min = day
    return DoeRequest(p0, q0, p_max, p_min, [d.q_der for d in feeder.ders], feeder.limits(),
                      weights or Weights(), direction, intervals)
