"""Aggregate per-interval DOE results into tables, series files and a markdown report.

Everything here is a pure function of the persisted result rows, so a report
can always be rebuilt from ``results/*.json``.
"""

from __future__ import annotations

import csv
import io
import platform
from collections import defaultdict

import numpy as np

from . import __version__


def environment():
    return {"python": platform.python_version(), "numpy": np.__version__, "machine": platform.machine(),
            "system": platform.system(), "package": __version__}


def _group(results):
    groups = defaultdict(list)
    for r in results:
        groups[(r.direction, r.method)].append(r)
    for rows in groups.values():
        rows.sort(key=lambda r: r.interval)
    return dict(sorted(groups.items()))


def tightness(results):
    """Largest relative B1/B2 solver-objective difference per direction."""
    groups = _group(results)
    out = {}
    for direction in {d for d, _ in groups}:
        b1 = {r.interval: r for r in groups.get((direction, "B1"), [])}
        b2 = {r.interval: r for r in groups.get((direction, "B2"), [])}
        common = sorted(set(b1) & set(b2))
        if not common:
            continue
        rel = [abs(b2[t].objective - b1[t].objective) / max(1.0, abs(b1[t].objective)) for t in common]
        env = [float(np.abs(np.subtract(b2[t].envelope, b1[t].envelope)).max()) for t in common]
        out[direction] = {"max_rel_objective_gap": max(rel), "max_envelope_gap_kw": max(env), "intervals": len(common)}
    return out


def aggregate(results):
    """One row per (direction, method): totals and mean wall time."""
    rows = []
    for (direction, method), rs in _group(results).items():
        j3s = [r.j3_surrogate for r in rs if r.j3_surrogate is not None]
        rows.append({
            "direction": direction, "method": method, "intervals": len(rs),
            "J1": sum(r.j1 for r in rs), "J2": sum(r.j2 for r in rs), "J3": sum(r.j3 for r in rs),
            "J": sum(r.j for r in rs),
            "J3_surrogate": sum(j3s) if j3s else None,
            "max_dv": max(r.delta_verified["v"] for r in rs),
            "max_dol": max(r.delta_verified["ol"] for r in rs),
            "max_drpf": max(r.delta_verified["rpf"] for r in rs),
            "mean_time_s": float(np.mean([r.wall_time for r in rs])),
            "max_gap": max(r.gap for r in rs),
            "non_optimal": sum(r.status != "Optimal" for r in rs),
        })
    return rows


def series_csv(results):
    """Per-interval J1, J2, J3 and solve time for every method (plot-ready)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["direction", "method", "interval", "J1", "J2", "J3", "time_ms"])
    for (direction, method), rs in _group(results).items():
        for r in rs:
            w.writerow([direction, method, r.interval, repr(r.j1), repr(r.j2), repr(r.j3), repr(1000 * r.wall_time)])
    return buf.getvalue()


def aggregate_csv(results):
    rows = aggregate(results)
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def render_report(results, nmae=None, env=None):
    lines = ["# DOE benchmark report", ""]
    if nmae:
        lines += ["## Surrogate accuracy (held-out NMAE)", "", "| family | head | hidden | NMAE |", "|---|---|---|---|"]
        for family, heads in sorted(nmae.items()):
            for kind, rec in heads.items():
                lines.append(f"| {family} | {kind} | {rec.get('hidden')} | {rec['nmae']:.3g} |")
        lines.append("")
    cols = ["method", "intervals", "J1", "J2", "J3", "J", "J3_surrogate", "max_dv", "max_dol", "max_drpf",
            "mean_time_s", "max_gap", "non_optimal"]
    by_dir = defaultdict(list)
    for row in aggregate(results):
        by_dir[row["direction"]].append(row)
    for direction, rows in sorted(by_dir.items()):
        lines += [f"## Envelope direction: {direction}", "",
                  "J values are summed over intervals and verified with the full power flow.", "",
                  "| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
        for row in rows:
            lines.append("| " + " | ".join(_fmt(row[c]) for c in cols) + " |")
        lines.append("")
    tight = tightness(results)
    if tight:
        lines += ["## LP relaxation versus exact MILP", "", "| direction | intervals | max rel. objective gap | max envelope gap (kW) |",
                  "|---|---|---|---|"]
        for direction, t in sorted(tight.items()):
            lines.append(f"| {direction} | {t['intervals']} | {t['max_rel_objective_gap']:.3g} | {t['max_envelope_gap_kw']:.3g} |")
        lines.append("")
    env = env or environment()
    lines += ["## Environment", ""] + [f"- {k}: {v}" for k, v in env.items()] + [""]
    return "\n".join(lines)
