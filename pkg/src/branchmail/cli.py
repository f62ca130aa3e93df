"""Command line entry point.

Verbs: ``solve``, ``stability``, ``competitor``, ``cover``, ``components``,
``energy``.  Every verb can make its own input from ``--seed``; outputs go to
``--out`` (a directory) or, without it, the main JSON goes to stdout.

Exit codes: 0 success, 2 budget refusal, 3 invariant violation, 4 I/O.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import emit
from .competitor import build_competitor
from .components import (
    ComponentIntervalError,
    NotSinglePathError,
    OpenSetSpec,
    connected_components,
    component_multiplicity_check,
    component_optimality_audit,
    finiteness_experiment,
    grid_oracle,
)
from .connectors import GridDensity, SubcriticalExponentError, ball_cover
from .geometry import PolyCurve
from .harness import (
    CURATED,
    SCHEDULES,
    InstanceSpec,
    SolverConfig,
    StabilityExperiment,
    curated_instance,
    dilation_schedule,
    generate_instance,
    run_stability,
)
from .plan import AtomicMeasure, TrafficPlan, alpha_energy, alpha_mass, check_simple_path, check_single_path
from .solver import BudgetExceeded, branch_points, candidate_graph, solve_exact, solve_local

EXIT_OK, EXIT_BUDGET, EXIT_INVARIANT, EXIT_IO = 0, 2, 3, 4


class InvariantViolation(RuntimeError):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--radius", type=float, default=1.0, help="radius of the ball holding instances and the Steiner lattice")
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--config", help="JSON file with default values for any option")
    p.add_argument("--out", help="output directory; without it the JSON result goes to stdout")


def _instance_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--instance", default="generated", choices=["generated", *CURATED])
    p.add_argument("--input", help="coupling JSON instead of a generated instance")
    p.add_argument("--pairs", type=int, default=2)
    p.add_argument("--min-separation", type=float, default=0.2)
    p.add_argument("--pitch", type=float, default=0.125)
    p.add_argument("--max-path-len", type=int, default=2)
    p.add_argument("--knn", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="branchmail", description="Branched transport with prescribed couplings.")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("solve", help="optimal plan for a coupling on a Steiner lattice")
    _common(p)
    _instance_args(p)
    p.add_argument("--local", action="store_true", help="local search instead of the exhaustive solver")

    p = sub.add_parser("stability", help="solve a perturbation sequence and its competitors")
    _common(p)
    _instance_args(p)
    p.add_argument("--schedule", default="dilation", choices=sorted(SCHEDULES))
    p.add_argument("--delta", type=float, default=0.25)
    p.add_argument("--n-max", type=int, default=32)

    p = sub.add_parser("competitor", help="competitor plan for a perturbed coupling")
    _common(p)
    _instance_args(p)
    p.add_argument("--schedule", default="displacement", choices=sorted(SCHEDULES))
    p.add_argument("--delta", type=float, default=0.25)
    p.add_argument("--n", type=int, default=4)

    p = sub.add_parser("cover", help="ball cover with small weighted radius sum")
    _common(p)
    p.add_argument("--measure", default="uniform", choices=["uniform", "atomic"])
    p.add_argument("--atoms", type=int, default=10)

    p = sub.add_parser("components", help="components of a plan away from removed points")
    _common(p)
    _instance_args(p)
    p.add_argument("--plan", help="plan JSON instead of solving an instance")
    p.add_argument("--remove", action="append", default=[], help="removed point as comma separated coordinates")
    p.add_argument("--min-length", type=float, default=None)
    p.add_argument("--audit", action="store_true", help="re-solve every component and pair on the solver's lattice")
    p.add_argument("--audit-budget", type=int, default=100)

    p = sub.add_parser("energy", help="energies and path properties of a plan")
    _common(p)
    p.add_argument("--plan", help="plan JSON instead of a random plan")
    p.add_argument("--atoms", type=int, default=5)
    p.add_argument("--bends", type=int, default=2)
    return ap


def parse_args(argv=None) -> argparse.Namespace:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        cfg = emit.read_json(args.config)
        sub = ap._subparsers._group_actions[0].choices[args.verb]
        known = {a.dest for a in sub._actions}
        unknown = set(cfg) - known
        if unknown:
            raise SystemExit(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**cfg)
        args = ap.parse_args(argv)
    return args


# inputs ----------------------------------------------------------------------


def _coupling(args):
    if getattr(args, "input", None):
        return emit.coupling_from_dict(emit.read_json(args.input))
    if args.instance != "generated":
        return curated_instance(args.instance)
    return generate_instance(args.seed, args.pairs, InstanceSpec(args.dim, args.radius, args.min_separation))


def _solver(args) -> SolverConfig:
    return SolverConfig(pitch=args.pitch, grid_radius=args.radius, max_path_len=args.max_path_len, k=args.knn)


def _solve(args, pi):
    cfg = _solver(args)
    g = cfg.graph(pi)
    local = solve_local(pi, g, args.alpha, seed=args.seed)
    if getattr(args, "local", False):
        return local
    return solve_exact(pi, g, args.alpha, cfg.max_path_len, cfg.max_assignments, upper_bound=local)


def _random_plan(seed: int, atoms: int, bends: int, dim: int, radius: float) -> TrafficPlan:
    rng = np.random.default_rng(seed)
    curves, masses = [], []
    for _ in range(atoms):
        pts = rng.uniform(-radius, radius, size=(bends + 2, dim)) / np.sqrt(dim)
        curves.append(PolyCurve(pts))
        masses.append(rng.uniform(0.1, 1.0))
    return TrafficPlan.from_curves(curves, masses)


def _point(s: str) -> tuple:
    return tuple(float(x) for x in s.split(","))


# verbs -------------------------------------------------------------------------


def cmd_solve(args) -> dict:
    pi = _coupling(args)
    res = _solve(args, pi)
    mass = alpha_mass(res.plan, args.alpha)
    if abs(res.energy - mass) > 1e-9 * max(1.0, mass):
        raise InvariantViolation(f"energy {res.energy} differs from mass {mass} on a simple-path plan")
    out = {"coupling": emit.coupling_to_dict(pi), "alpha": args.alpha, "result": emit.solve_result_to_dict(res, args.alpha)}
    return {"solve.json": out, "solve.svg": emit.svg_network(res.plan, args.alpha)}


def cmd_stability(args) -> dict:
    pi = _coupling(args)
    ns = tuple(range(1, args.n_max + 1))
    if args.schedule == "dilation":
        sched = dilation_schedule(pi, args.delta)
    else:
        sched = SCHEDULES[args.schedule](pi, args.seed, args.delta)
    exp = StabilityExperiment(
        base=pi,
        schedule=sched,
        alpha=args.alpha,
        ns=ns,
        solver=_solver(args),
        radius=1.5 * args.radius,
        eps_bar=lambda n, d=args.delta: min(0.9, 10 * d / n),
        name=args.instance,
    )
    rep = run_stability(exp)
    bad = [r.n for r in rep.rows if r.status == "ok" and not (r.coupling_exact and r.ledger_ok)]
    out = emit.report_to_dict(rep)
    files = {"stability.json": out, "stability.csv": emit.rows_to_csv(rep.rows)}
    if bad:
        raise InvariantViolation(f"competitor coupling or energy ledger failed at n={bad}", files)
    return files


def cmd_competitor(args) -> dict:
    pi = _coupling(args)
    if args.schedule == "dilation":
        pi_n = dilation_schedule(pi, args.delta)(args.n)
    else:
        pi_n = SCHEDULES[args.schedule](pi, args.seed, args.delta)(args.n)
    base = _solve(args, pi)
    b = build_competitor(pi_n, pi, base.plan, args.alpha, args.eps, radius=1.5 * args.radius)
    out = {
        "alpha": args.alpha,
        "eps_bar": args.eps,
        "pi_n": emit.coupling_to_dict(pi_n),
        "pi_m": emit.coupling_to_dict(pi),
        "bundle": emit.bundle_to_dict(b),
    }
    files = {"competitor.json": out, "competitor.svg": emit.svg_network(b.competitor, args.alpha)}
    if not (b.coupling_check and b.ledger_ok):
        raise InvariantViolation("competitor coupling or energy ledger failed", files)
    return files


def cmd_cover(args) -> dict:
    if args.measure == "uniform":
        mu = GridDensity.uniform_box([0.0] * args.dim, [1.0] * args.dim)
    else:
        rng = np.random.default_rng(args.seed)
        mu = AtomicMeasure(rng.uniform(0, 1, size=(args.atoms, args.dim)), rng.uniform(0.1, 1.0, size=args.atoms))
    c = ball_cover(mu, args.alpha, args.eps)
    out = {
        "kind": c.kind,
        "alpha": args.alpha,
        "eps": args.eps,
        "n_balls": len(c),
        "certificate": c.certificate,
        "valid": c.valid,
        "extra": c.extra,
    }
    if c.kind == "atomic":
        out["balls"] = [{"center": x, "radius": r, "mass": m} for x, r, m in zip(c.centers, c.radii, c.masses)]
    if not c.valid:
        raise InvariantViolation("cover certificate is not below eps", {"cover.json": out})
    return {"cover.json": out}


def cmd_components(args) -> dict:
    if args.plan:
        plan = emit.plan_from_dict(emit.read_json(args.plan))
    else:
        plan = _solve(args, _coupling(args)).plan
    removed = [_point(s) for s in args.remove] or [tuple(b) for b in branch_points(plan).tolist()]
    dec = connected_components(plan, OpenSetSpec.minus(*removed))
    P = dec.network.vertices
    colors = {}
    comps = []
    for k, comp in enumerate(dec.components):
        for a, b in comp.edges:
            pa, pb = sorted([P[a].tolist(), P[b].tolist()])
            colors[(tuple(pa), tuple(pb))] = k
        comps.append(
            {
                "edges": sorted(sorted([P[a].tolist(), P[b].tolist()]) for a, b in comp.edges),
                "energy": alpha_energy(comp.plan, args.alpha),
                "plan": emit.plan_to_dict(comp.plan),
                "records": [list(r) for r in comp.records],
            }
        )
    out = {
        "alpha": args.alpha,
        "removed": [list(x) for x in removed],
        "count": len(dec),
        "energy": alpha_energy(plan, args.alpha),
        "multiplicity_check": component_multiplicity_check(plan, dec),
        "components": comps,
    }
    if args.min_length is not None and removed:
        f = finiteness_experiment(plan, removed[0], args.min_length, args.alpha)
        out["finiteness"] = {
            "count": f.count,
            "floors": f.floors,
            "energies": f.energies,
            "bound": f.bound,
            "certified": f.certified,
        }
    if args.audit:
        oracle = grid_oracle(args.pitch, radius=args.radius, max_path_len=args.max_path_len, alpha=args.alpha)
        rep = component_optimality_audit(plan, dec, args.audit_budget, args.alpha, oracle, hop_limit=args.max_path_len)
        out["audit"] = {
            "passed": rep.passed,
            "partial": rep.partial,
            "entries": [
                {"members": list(e.members), "energy": e.energy, "oracle_energy": e.oracle_energy, "passed": e.passed, "note": e.note}
                for e in rep.entries
            ],
        }
    files = {
        "components.json": out,
        "components.svg": emit.svg_network(plan, args.alpha, colors=colors, points=removed),
    }
    if not out["multiplicity_check"]:
        raise InvariantViolation("component multiplicities differ from the plan", files)
    if args.audit and not out["audit"]["passed"]:
        raise InvariantViolation("a component re-solve beat the plan", files)
    return files


def cmd_energy(args) -> dict:
    if args.plan:
        plan = emit.plan_from_dict(emit.read_json(args.plan))
    else:
        plan = _random_plan(args.seed, args.atoms, args.bends, args.dim, args.radius)
    sp = check_single_path(plan)
    out = {
        "alpha": args.alpha,
        "energy": alpha_energy(plan, args.alpha),
        "mass": alpha_mass(plan, args.alpha),
        "simple_path": check_simple_path(plan),
        "single_path": sp.ok,
        "single_path_witness": None if sp.ok else [sp.witness[0], sp.witness[1], sp.witness[2], sp.witness[3]],
        "weighted_length": float(sum(a.mass * a.curve.length for a in plan.atoms)),
        "plan": emit.plan_to_dict(plan),
        "network": emit.network_edges(plan, args.alpha),
    }
    if out["energy"] < out["mass"] - 1e-9 * max(1.0, out["mass"]):
        raise InvariantViolation("energy below mass", {"energy.json": out})
    row = {"instance": args.plan or f"seed-{args.seed}", **{k: out[k] for k in emit.ENERGY_COLUMNS[1:]}}
    return {
        "energy.json": out,
        "energy.csv": emit.rows_to_csv([row], emit.ENERGY_COLUMNS),
        "energy.svg": emit.svg_network(plan, args.alpha),
    }


VERBS = {
    "solve": cmd_solve,
    "stability": cmd_stability,
    "competitor": cmd_competitor,
    "cover": cmd_cover,
    "components": cmd_components,
    "energy": cmd_energy,
}


def _write(files: dict, out: str | None) -> None:
    if out is None:
        main_json = next(v for k, v in files.items() if k.endswith(".json"))
        sys.stdout.write(emit.canonical_json(main_json))
        return
    for name, content in files.items():
        text = emit.canonical_json(content) if name.endswith(".json") else content
        emit.write_text(Path(out) / name, text)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except emit.OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        files = VERBS[args.verb](args)
        _write(files, args.out)
        return EXIT_OK
    except (BudgetExceeded, SubcriticalExponentError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except InvariantViolation as exc:
        if len(exc.args) > 1:
            try:
                _write(exc.args[1], args.out)
            except emit.OutputError:
                pass
        print(f"invariant violation: {exc.args[0]}", file=sys.stderr)
        return EXIT_INVARIANT
    except (NotSinglePathError, ComponentIntervalError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except emit.OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
