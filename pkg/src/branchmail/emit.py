"""Canonical JSON, CSV and SVG output, plus loaders for the JSON forms."""

from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .plan import Coupling, TrafficPlan, alpha_energy, alpha_mass, multiplicity
from .geometry import PolyCurve


class OutputError(OSError):
    """A file could not be read or written."""


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def write_text(path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc


# plain-data forms -----------------------------------------------------------


def coupling_to_dict(pi: Coupling) -> dict:
    return {
        "dim": pi.dim,
        "pairs": [{"src": s, "dst": t, "mass": m} for s, t, m in pi.pairs()],
    }


def coupling_from_dict(d: dict) -> Coupling:
    pairs = d["pairs"]
    if not pairs:
        return Coupling.empty(int(d.get("dim", 2)))
    return Coupling([p["src"] for p in pairs], [p["dst"] for p in pairs], [p["mass"] for p in pairs])


def plan_to_dict(p: TrafficPlan, alpha: float | None = None) -> dict:
    out = {
        "dim": p.dim,
        "atoms": [{"mass": a.mass, "curve": a.curve.vertices} for a in p.atoms],
    }
    if alpha is not None:
        out["alpha"] = alpha
        out["energy"] = alpha_energy(p, alpha)
        out["mass"] = alpha_mass(p, alpha)
    return out


def plan_from_dict(d: dict) -> TrafficPlan:
    atoms = d["atoms"]
    return TrafficPlan.from_curves([PolyCurve(a["curve"]) for a in atoms], [a["mass"] for a in atoms])


def network_edges(p: TrafficPlan, alpha: float) -> list[dict]:
    """Support edges with multiplicity and ``mult**alpha``, sorted by coordinates."""
    fld = multiplicity(p)
    P = fld.network.vertices
    rows = []
    for (a, b), m in zip(fld.network.edges, fld.edge_mult):
        if m > 0:
            pa, pb = sorted([P[a].tolist(), P[b].tolist()])
            rows.append({"from": pa, "to": pb, "mult": float(m), "weight": float(m) ** alpha})
    rows.sort(key=lambda r: (r["from"], r["to"]))
    return rows


def solve_result_to_dict(res, alpha: float) -> dict:
    return {
        "certificate": res.certificate,
        "energy": res.energy,
        "graph_cost": res.graph_cost,
        "explored": res.explored,
        "single_path": res.single_path,
        "path_indices": list(res.path_indices),
        "plan": plan_to_dict(res.plan),
        "network": network_edges(res.plan, alpha),
    }


def bundle_to_dict(b) -> dict:
    return {
        "eps": b.eps,
        "energy_P1": b.energy_P1,
        "energy_P2": b.energy_P2,
        "energy_competitor": b.energy_competitor,
        "energy_pm": b.energy_pm,
        "bound": b.bound,
        "coupling_exact": b.coupling_check,
        "coupling_difference": b.coupling_difference,
        "ledger_ok": b.ledger_ok,
        "certificates_ok": b.certificates_ok,
        "n0_ok": None if b.n0 is None else b.n0.ok,
        "residual_mass": b.residual_mass,
        "stage_energies": b.stage_energies,
        "competitor": plan_to_dict(b.competitor),
    }


def report_to_dict(r) -> dict:
    """Stability report without wall-clock time, so reruns compare byte for byte."""
    return {
        "name": r.name,
        "alpha": r.alpha,
        "limit_energy": r.limit_energy,
        "limit_hash": r.limit_hash,
        "limit_certificate": r.limit_certificate,
        "verdict": r.verdict,
        "tolerance": r.tolerance,
        "rows": [row.as_dict() for row in r.rows],
    }


ENERGY_COLUMNS = ["instance", "alpha", "energy", "mass", "simple_path", "single_path"]

REPORT_COLUMNS = ["n", "status", "energy", "gap", "bound", "reverse_bound", "eps", "certified", "plan_hash"]


def rows_to_csv(rows, columns=REPORT_COLUMNS) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        d = r if isinstance(r, dict) else r.as_dict()
        w.writerow(["" if d.get(c) is None else (repr(d[c]) if isinstance(d[c], float) else d[c]) for c in columns])
    return buf.getvalue()


# SVG ------------------------------------------------------------------------

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def _fmt(x: float) -> str:
    s = f"{x:.6f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def svg_network(p: TrafficPlan, alpha: float, size: float = 400.0, colors: dict | None = None, points=()) -> str:
    """One ``<line>`` per support edge, stroke width proportional to ``mult**alpha``.

    The layout is the bounding box of the support with a 5% margin and the
    y axis pointing up.  ``colors`` maps sorted edge endpoints to a palette
    index; ``points`` are drawn as small circles.
    """
    edges = network_edges(p, alpha)
    pts = [e["from"] for e in edges] + [e["to"] for e in edges] + [list(q) for q in points]
    if pts:
        P = np.array(pts, dtype=float)[:, :2]
        lo, hi = P.min(axis=0), P.max(axis=0)
    else:
        lo, hi = np.zeros(2), np.ones(2)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    pad = 0.05 * span
    lo = lo - pad
    span += 2 * pad
    scale = size / span
    unit = size / 100

    def xy(q):
        return (q[0] - lo[0]) * scale, size - (q[1] - lo[1]) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(size)}" height="{_fmt(size)}" viewBox="0 0 {_fmt(size)} {_fmt(size)}">'
    ]
    for e in edges:
        (x1, y1), (x2, y2) = xy(e["from"]), xy(e["to"])
        color = PALETTE[0]
        if colors is not None:
            k = colors.get((tuple(e["from"]), tuple(e["to"])))
            color = "#7f7f7f" if k is None else PALETTE[k % len(PALETTE)]
        out.append(
            f'  <line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            f'stroke="{color}" stroke-width="{_fmt(e["weight"] * unit)}" stroke-linecap="round" '
            f'data-mult="{_fmt(e["mult"])}" data-weight="{_fmt(e["weight"])}"/>'
        )
    for q in points:
        x, y = xy(q)
        out.append(f'  <circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{_fmt(unit)}" fill="black"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
