"""Bounded-variable revised simplex.

Problems are assembled incrementally through :class:`LpProblem` and solved by
:func:`solve_lp`.  The solver is a textbook two-phase primal simplex on the
bounded form ``A x + s = b, lo <= x <= hi`` with one slack per row:

* phase 1 minimises the sum of artificial variables added only for rows whose
  slack cannot absorb the initial residual;
* Dantzig pricing, switching to Bland's rule after 100 non-improving pivots;
* Harris two-pass ratio test;
* an explicit basis inverse kept up to date with eta (product-form) updates and
  refactored every ``REFACTOR_EVERY`` pivots.

Presolve removes fixed variables and empty rows only, so every row and column
the caller created maps one to one onto the solved problem.
"""

from __future__ import annotations

import math
import re
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import NegativeWeight, NumericalBreakdown

REFACTOR_EVERY = 128
STALL_PIVOTS = 100
PIVOT_TOL = 1e-9

LE, EQ, GE = "<=", "=", ">="


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITER_LIMIT = "IterLimit"


class LpProblem:
    """Minimise ``c.x + offset`` over sparse rows and per-variable bounds."""

    def __init__(self):
        self.c = []
        self.lo = []
        self.hi = []
        self.names = []
        self.row_idx = []
        self.row_val = []
        self.rel = []
        self.rhs = []
        self.row_names = []
        self.offset = 0.0
        self.groups = {}

    @property
    def n_vars(self):
        return len(self.c)

    @property
    def n_rows(self):
        return len(self.rhs)

    def add_var(self, lo=0.0, hi=math.inf, obj=0.0, name=None):
        if not (math.isfinite(obj) and not math.isnan(lo) and not math.isnan(hi)):
            raise ValueError("objective coefficient and bounds must be numbers")
        self.c.append(float(obj))
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        self.names.append(name or f"x{len(self.c) - 1}")
        return len(self.c) - 1

    def add_vars(self, n, lo=0.0, hi=math.inf, obj=0.0, group=None):
        """Add ``n`` variables; scalar or per-variable bounds / costs."""
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,))
        obj = np.broadcast_to(np.asarray(obj, dtype=float), (n,))
        first = self.n_vars
        for k in range(n):
            self.add_var(lo[k], hi[k], obj[k], f"{group}[{k}]" if group else None)
        idx = np.arange(first, first + n)
        if group:
            self.groups[group] = idx
        return idx

    def add_row(self, idx, vals, rel, rhs, name=None):
        idx = np.asarray(idx, dtype=int).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        if idx.shape != vals.shape:
            raise ValueError("row index and value arrays differ in length")
        if rel not in (LE, EQ, GE):
            raise ValueError(f"unknown relation {rel!r}")
        if not np.all(np.isfinite(vals)) or not math.isfinite(rhs):
            raise ValueError("row coefficients and right-hand side must be finite")
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_vars):
            raise IndexError("row references a variable that does not exist")
        keep = vals != 0
        self.row_idx.append(idx[keep])
        self.row_val.append(vals[keep])
        self.rel.append(rel)
        self.rhs.append(float(rhs))
        self.row_names.append(name or f"r{len(self.rhs) - 1}")
        return len(self.rhs) - 1

    def set_bounds(self, j, lo, hi):
        self.lo[j] = float(lo)
        self.hi[j] = float(hi)

    def copy(self):
        other = LpProblem()
        for attr in ("c", "lo", "hi", "names", "row_idx", "row_val", "rel", "rhs", "row_names"):
            setattr(other, attr, list(getattr(self, attr)))
        other.offset = self.offset
        other.groups = dict(self.groups)
        return other

    def dense(self):
        A = np.zeros((self.n_rows, self.n_vars))
        for i, (idx, val) in enumerate(zip(self.row_idx, self.row_val)):
            np.add.at(A[i], idx, val)
        return A

    def objective(self, x):
        return float(np.dot(self.c, x) + self.offset)

    def max_violation(self, x):
        """Largest bound or row violation of a candidate point."""
        x = np.asarray(x, dtype=float)
        worst = max(0.0, float(np.max(np.asarray(self.lo) - x, initial=0.0)),
                    float(np.max(x - np.asarray(self.hi), initial=0.0)))
        for idx, val, rel, rhs in zip(self.row_idx, self.row_val, self.rel, self.rhs):
            act = float(np.dot(val, x[idx]))
            if rel == LE:
                worst = max(worst, act - rhs)
            elif rel == GE:
                worst = max(worst, rhs - act)
            else:
                worst = max(worst, abs(act - rhs))
        return worst

    def to_lp_format(self):
        """Dump in CPLEX LP text format for cross-checking with external solvers."""

        def nm(s):
            return re.sub(r"[^A-Za-z0-9_.]", "_", s)

        def expr(idx, val):
            if not len(idx):
                return "0 " + nm(self.names[0]) if self.n_vars else "0"
            return " ".join(f"{'+' if v >= 0 else '-'} {abs(v):.17g} {nm(self.names[j])}"
                            for j, v in zip(idx, val))

        out = ["\\ objective offset " + repr(self.offset), "Minimize"]
        nz = [j for j, cj in enumerate(self.c) if cj != 0]
        out.append(" obj: " + expr(nz, [self.c[j] for j in nz]))
        out.append("Subject To")
        for idx, val, rel, rhs, name in zip(self.row_idx, self.row_val, self.rel, self.rhs, self.row_names):
            out.append(f" {nm(name)}: {expr(idx, val)} {rel} {rhs:.17g}")
        out.append("Bounds")
        for lo, hi, name in zip(self.lo, self.hi, self.names):
            lo_s = "-inf" if lo == -math.inf else f"{lo:.17g}"
            hi_s = "+inf" if hi == math.inf else f"{hi:.17g}"
            out.append(f" {lo_s} <= {nm(name)} <= {hi_s}")
        out.append("End")
        return "\n".join(out) + "\n"


@dataclass
class LpSolution:
    status: Status
    x: np.ndarray | None
    objective: float
    iterations: int
    wall_time: float
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    dual_infeasibility: float = math.nan
    duality_gap: float = math.nan
    info: dict = field(default_factory=dict)

    @property
    def optimal(self):
        return self.status == Status.OPTIMAL


def add_abs_term(p: LpProblem, var, center, weight):
    """Add ``weight * |center - x[var]|`` to the objective via one auxiliary."""
    if weight < 0:
        raise NegativeWeight(f"absolute-value weight must be >= 0, got {weight}")
    t = p.add_var(0.0, math.inf, weight, name=f"abs_{p.names[var]}")
    p.add_row([t, var], [1.0, 1.0], GE, center)
    p.add_row([t, var], [1.0, -1.0], GE, -center)
    return t


def _presolve(p: LpProblem, feas_tol):
    lo = np.array(p.lo)
    hi = np.array(p.hi)
    c = np.array(p.c)
    if np.any(lo > hi + feas_tol):
        return None
    fixed = lo == hi
    keep_cols = np.flatnonzero(~fixed)
    col_map = np.full(p.n_vars, -1)
    col_map[keep_cols] = np.arange(keep_cols.size)
    x_fixed = np.where(fixed, lo, 0.0)
    offset = float(np.dot(c[fixed], lo[fixed]))
    rows, rhs, rel, row_ids = [], [], [], []
    for i, (idx, val) in enumerate(zip(p.row_idx, p.row_val)):
        b = p.rhs[i] - float(np.dot(val[fixed[idx]], x_fixed[idx[fixed[idx]]])) if idx.size else p.rhs[i]
        free = ~fixed[idx]
        if not free.any():
            r = p.rel[i]
            bad = (r == LE and b < -feas_tol) or (r == GE and b > feas_tol) or (r == EQ and abs(b) > feas_tol)
            if bad:
                return None
            continue
        rows.append((col_map[idx[free]], val[free]))
        rhs.append(b)
        rel.append(p.rel[i])
        row_ids.append(i)
    A = np.zeros((len(rows), keep_cols.size))
    for k, (idx, val) in enumerate(rows):
        np.add.at(A[k], idx, val)
    return {
        "A": A,
        "b": np.array(rhs),
        "rel": rel,
        "c": c[keep_cols],
        "lo": lo[keep_cols],
        "hi": hi[keep_cols],
        "keep_cols": keep_cols,
        "row_ids": row_ids,
        "x_fixed": x_fixed,
        "offset": offset,
    }


class _Core:
    """Primal bounded simplex on equality form; mutates its arrays in place."""

    def __init__(self, A, b, lo, hi, x, basis, feas_tol, opt_tol, iter_limit, n_struct=None):
        self.A, self.b, self.lo, self.hi = A, b, lo, hi
        # columns past n_struct are signed unit vectors (slacks, artificials)
        self.ns = A.shape[1] if n_struct is None else n_struct
        tail = A[:, self.ns:]
        if tail.size:
            self.urow = np.argmax(np.abs(tail), axis=0)
            self.uval = tail[self.urow, np.arange(tail.shape[1])]
        else:
            self.urow = np.zeros(tail.shape[1], dtype=int)
            self.uval = np.zeros(tail.shape[1])
        self.x = x
        self.basis = basis
        self.m, self.n = A.shape
        self.feas_tol, self.opt_tol = feas_tol, opt_tol
        self.iter_limit = iter_limit
        self.iterations = 0
        self.is_basic = np.zeros(self.n, dtype=bool)
        self.is_basic[basis] = True
        self.refactor()

    def refactor(self):
        B = self.A[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown("singular basis matrix") from exc
        if not np.all(np.isfinite(self.Binv)):
            raise NumericalBreakdown("basis inverse is not finite")
        xn = np.where(self.is_basic, 0.0, self.x)
        self.x[self.basis] = self.Binv @ (self.b - self.A @ xn)
        self.since_refactor = 0

    def run(self, c):
        """Iterate to optimality for cost ``c``; returns a Status."""
        A, lo, hi, x = self.A, self.lo, self.hi, self.x
        bland = False
        stall = 0
        best = math.inf
        while True:
            if self.iterations >= self.iter_limit:
                return Status.ITER_LIMIT
            if self.since_refactor >= REFACTOR_EVERY:
                self.refactor()
            y = c[self.basis] @ self.Binv
            d = c.copy()
            d[:self.ns] -= y @ A[:, :self.ns]
            d[self.ns:] -= y[self.urow] * self.uval
            nb = ~self.is_basic
            can_up = nb & (x < hi) & (d < -self.opt_tol)
            can_down = nb & (x > lo) & (d > self.opt_tol)
            elig = can_up | can_down
            if not elig.any():
                self.y, self.d = y, d
                return Status.OPTIMAL
            if bland:
                j = int(np.flatnonzero(elig)[0])
            else:
                j = int(np.argmax(np.where(elig, np.abs(d), -1.0)))
            direction = 1.0 if d[j] < 0 else -1.0
            if j < self.ns:
                alpha = self.Binv @ A[:, j]
            else:
                alpha = self.Binv[:, self.urow[j - self.ns]] * self.uval[j - self.ns]
            delta = -direction * alpha  # change of basics per unit step
            xb = x[self.basis]
            lb = lo[self.basis]
            ub = hi[self.basis]
            dec = delta < -PIVOT_TOL
            inc = delta > PIVOT_TOL
            with np.errstate(divide="ignore", invalid="ignore"):
                relaxed = np.full(self.m, math.inf)
                relaxed[dec] = (xb[dec] - lb[dec] + self.feas_tol) / -delta[dec]
                relaxed[inc] = (ub[inc] - xb[inc] + self.feas_tol) / delta[inc]
                exact = np.full(self.m, math.inf)
                exact[dec] = (xb[dec] - lb[dec]) / -delta[dec]
                exact[inc] = (ub[inc] - xb[inc]) / delta[inc]
            flip = hi[j] - lo[j]
            t_max = relaxed.min() if self.m else math.inf
            if not math.isfinite(t_max) and not math.isfinite(flip):
                return Status.UNBOUNDED
            if flip <= t_max:
                step = flip
                leave = -1
            else:
                if bland:
                    t_min = np.nanmin(exact)
                    ties = np.flatnonzero(exact <= max(t_min, 0.0) + 1e-12)
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    cand = np.flatnonzero(exact <= t_max)
                    r = int(cand[np.argmax(np.abs(delta[cand]))])
                step = max(exact[r], 0.0)
                leave = r
            if leave < 0:
                x[j] = hi[j] if direction > 0 else lo[j]
            else:
                x[j] += direction * step
            x[self.basis] = xb + step * delta
            self.iterations += 1
            if leave >= 0:
                out = self.basis[leave]
                # snap the leaving variable onto the bound it reached
                x[out] = lb[leave] if delta[leave] < 0 else ub[leave]
                piv = alpha[leave]
                if abs(piv) < PIVOT_TOL:
                    raise NumericalBreakdown(f"pivot {piv:.3e} too small")
                row = self.Binv[leave] / piv
                self.Binv -= np.outer(alpha, row)
                self.Binv[leave] = row
                self.basis[leave] = j
                self.is_basic[out] = False
                self.is_basic[j] = True
                self.since_refactor += 1
            obj = float(c @ x)
            if obj < best - 1e-12 * (1.0 + abs(best if math.isfinite(best) else 0.0)):
                best = obj
                stall = 0
                bland = False
            else:
                stall += 1
                if stall >= STALL_PIVOTS:
                    bland = True


def solve_lp(p: LpProblem, feas_tol=1e-7, opt_tol=1e-7, iter_limit=None) -> LpSolution:
    """Solve ``p`` to optimality (minimisation)."""
    start = time.perf_counter()
    pre = _presolve(p, feas_tol)
    if pre is None:
        return LpSolution(Status.INFEASIBLE, None, math.nan, 0, time.perf_counter() - start)
    A0, b0, c0, lo0, hi0 = pre["A"], pre["b"], pre["c"], pre["lo"], pre["hi"]
    m, n = A0.shape
    if iter_limit is None:
        iter_limit = 50 * (p.n_vars + p.n_rows) + 100

    # row equilibration
    scale = np.abs(A0).max(axis=1) if m else np.ones(0)
    scale[scale == 0] = 1.0
    A = A0 / scale[:, None]
    b = b0 / scale

    slack_lo = np.array([0.0 if r == LE else (-math.inf if r == GE else 0.0) for r in pre["rel"]])
    slack_hi = np.array([math.inf if r == LE else 0.0 for r in pre["rel"]])

    x_struct = np.where(np.isfinite(lo0), lo0, np.where(np.isfinite(hi0), hi0, 0.0))
    resid = b - A @ x_struct
    slack_ok = (resid >= slack_lo - feas_tol) & (resid <= slack_hi + feas_tol)
    need_art = np.flatnonzero(~slack_ok)
    n_art = need_art.size
    art_sign = np.sign(resid[need_art])

    N = n + m + n_art
    A_full = np.zeros((m, N))
    A_full[:, :n] = A
    A_full[:, n:n + m] = np.eye(m)
    if n_art:
        A_full[need_art, n + m + np.arange(n_art)] = art_sign
    lo = np.concatenate([lo0, slack_lo, np.zeros(n_art)])
    hi = np.concatenate([hi0, slack_hi, np.full(n_art, math.inf)])
    x = np.concatenate([x_struct, np.zeros(m), np.zeros(n_art)])
    slack_val = np.clip(resid, slack_lo, slack_hi)
    x[n:n + m] = np.where(slack_ok, resid, np.where(np.isfinite(slack_val), slack_val, 0.0))
    basis = np.arange(n, n + m)
    basis[need_art] = n + m + np.arange(n_art)
    if n_art:
        x[n + m:] = np.abs(resid[need_art] - x[n + need_art])

    core = _Core(A_full, b, lo, hi, x, basis, feas_tol, opt_tol, iter_limit, n_struct=n)
    if n_art:
        c1 = np.zeros(N)
        c1[n + m:] = 1.0
        status = core.run(c1)
        if status == Status.ITER_LIMIT:
            return _finish(p, pre, Status.ITER_LIMIT, core, None, scale, 1.0, start)
        core.refactor()
        infeas = float(x[n + m:].sum())
        if infeas > feas_tol * max(1.0, float(np.abs(b).max(initial=0.0))):
            return _finish(p, pre, Status.INFEASIBLE, core, None, scale, 1.0, start)
        hi[n + m:] = 0.0
        x[n + m:] = np.clip(x[n + m:], 0.0, 0.0)
        core.refactor()

    cmax = float(np.abs(c0).max(initial=0.0))
    cscale = max(1.0, cmax)
    c = np.concatenate([c0 / cscale, np.zeros(m + n_art)])
    status = core.run(c)
    if status == Status.OPTIMAL:
        core.refactor()
        y = c[core.basis] @ core.Binv
        core.y, core.d = y, c - y @ A_full
    return _finish(p, pre, status, core, c, scale, cscale, start)


def _finish(p, pre, status, core, c, scale, cscale, start):
    n = pre["c"].size
    iters = core.iterations
    wall = time.perf_counter() - start
    if status != Status.OPTIMAL:
        return LpSolution(status, None, math.nan, iters, wall)
    x_full = pre["x_fixed"].copy()
    x_full[pre["keep_cols"]] = core.x[:n]
    obj = p.objective(x_full)

    m = core.m
    d = core.d
    nb = ~core.is_basic
    x = core.x
    # dual sign test on nonbasics (scaled costs)
    viol = np.zeros(core.n)
    viol = np.where(nb & (x < core.hi) & (d < 0), -d, viol)
    viol = np.where(nb & (x > core.lo) & (d > 0), np.maximum(viol, d), viol)
    primal = float(c @ x)
    dual = float(core.y @ core.b + np.dot(d[nb], x[nb]))
    duals = np.zeros(p.n_rows)
    duals[pre["row_ids"]] = core.y / scale * cscale if m else 0.0
    rc = np.zeros(p.n_vars)
    rc[pre["keep_cols"]] = d[:n] * cscale
    return LpSolution(
        Status.OPTIMAL, x_full, obj, iters, wall,
        duals=duals, reduced_costs=rc,
        dual_infeasibility=float(viol.max(initial=0.0)) * cscale,
        duality_gap=abs(primal - dual) * cscale,
        info={"primal_violation": p.max_violation(x_full), "rows": m, "cols": n},
    )
