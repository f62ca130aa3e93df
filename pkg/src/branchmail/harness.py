"""Instance generation and the stability experiment.

A stability experiment solves a limit coupling and a sequence of
perturbations of it exhaustively, and builds competitor plans both ways:
one with the perturbed coupling out of the limit plan and one with the limit
coupling out of the perturbed plan.  Each row records the signed energy gap
and whether the competitor bounds hold.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .competitor import build_competitor
from .plan import Coupling, TrafficPlan, multiplicity
from .solver import BudgetExceeded, SolveResult, candidate_graph, solve_exact, solve_local


@dataclass(frozen=True)
class InstanceSpec:
    dim: int = 2
    radius: float = 1.0
    min_separation: float = 0.0
    max_tries: int = 10_000


def _in_ball(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    out = np.empty((0, dim))
    while out.shape[0] < n:
        cand = rng.uniform(-radius, radius, size=(2 * n, dim))
        out = np.vstack([out, cand[np.linalg.norm(cand, axis=1) <= radius]])
    return out[:n]


def generate_instance(seed: int, n_pairs: int, spec: InstanceSpec = InstanceSpec()) -> Coupling:
    """Random coupling with ``n_pairs`` atoms inside the ball, total mass 1.

    With ``min_separation`` every source is at least that far from every sink.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(spec.max_tries):
        src = _in_ball(rng, n_pairs, spec.dim, spec.radius)
        dst = _in_ball(rng, n_pairs, spec.dim, spec.radius)
        gap = np.linalg.norm(src[:, None, :] - dst[None, :, :], axis=2).min()
        if gap >= spec.min_separation:
            break
    else:
        raise ValueError(f"no instance with separation {spec.min_separation} after {spec.max_tries} draws")
    w = rng.uniform(0.5, 1.5, size=n_pairs)
    return Coupling(src, dst, w / w.sum())


def _on_circle(deg: float) -> tuple:
    a = math.radians(deg)
    return (math.cos(a), math.sin(a))


#: small instances with terminals on the unit circle, each with one branch point
CURATED = {
    "two-to-one": ([_on_circle(150), _on_circle(210)], [_on_circle(0)] * 2, [0.5, 0.5]),
    "three-to-one": ([_on_circle(140), _on_circle(180), _on_circle(220)], [_on_circle(0)] * 3, [0.3, 0.4, 0.3]),
    "one-to-three": ([_on_circle(180)] * 3, [_on_circle(40), _on_circle(0), _on_circle(-40)], [0.25, 0.5, 0.25]),
}


def curated_instance(name: str) -> Coupling:
    src, dst, m = CURATED[name]
    return Coupling(src, dst, m)


# perturbation schedules: n -> coupling with the same total mass


def dilation_schedule(pi: Coupling, delta: float = 0.25) -> Callable[[int], Coupling]:
    """Every terminal pushed radially by the factor ``1 + delta/n``."""

    def at(n: int) -> Coupling:
        s = 1 + delta / n
        return Coupling(s * pi.sources, s * pi.targets, pi.masses, pi.tol)

    return at


def displacement_schedule(pi: Coupling, seed: int, delta: float = 0.25) -> Callable[[int], Coupling]:
    """Every terminal moved by ``delta/n`` in a fixed random direction."""
    rng = np.random.default_rng(seed)
    k = len(pi)
    u = rng.normal(size=(2 * k, pi.dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)

    def at(n: int) -> Coupling:
        return Coupling(pi.sources + delta / n * u[:k], pi.targets + delta / n * u[k:], pi.masses, pi.tol)

    return at


def jitter_schedule(pi: Coupling, seed: int, delta: float = 0.25) -> Callable[[int], Coupling]:
    """Masses scaled by ``1 + delta*xi/n`` with fixed ``xi`` in ``[-1, 1]``, renormalized."""
    rng = np.random.default_rng(seed)
    xi = rng.uniform(-1, 1, size=len(pi))

    def at(n: int) -> Coupling:
        w = pi.masses * (1 + delta * xi / n)
        return Coupling(pi.sources, pi.targets, w * pi.total / w.sum(), pi.tol)

    return at


SCHEDULES = {"dilation": dilation_schedule, "displacement": displacement_schedule, "jitter": jitter_schedule}


@dataclass(frozen=True)
class SolverConfig:
    pitch: float | None = 0.125
    grid_radius: float | None = 1.0
    box: tuple | None = None
    max_path_len: int = 2
    k: int | None = None
    max_assignments: int = 10**7

    def graph(self, pi: Coupling):
        return candidate_graph(pi, pitch=self.pitch, radius=self.grid_radius, box=self.box, k=self.k)

    def solve(self, pi: Coupling, alpha: float) -> tuple[SolveResult, object]:
        g = self.graph(pi)
        local = solve_local(pi, g, alpha)
        return solve_exact(pi, g, alpha, self.max_path_len, self.max_assignments, upper_bound=local), g


def support_hash(plan: TrafficPlan, digits: int = 9) -> str:
    """Hash of the support with its multiplicities, rounded to ``digits`` decimals."""
    fld = multiplicity(plan)
    P = np.round(fld.network.vertices, digits) + 0.0
    segs = []
    for (a, b), m in zip(fld.network.edges, fld.edge_mult):
        if m > 0:
            pa, pb = tuple(P[a].tolist()), tuple(P[b].tolist())
            segs.append((min(pa, pb), max(pa, pb), round(float(m), digits)))
    segs.sort()
    return hashlib.sha256(repr(segs).encode()).hexdigest()[:16]


@dataclass
class StabilityExperiment:
    base: Coupling
    schedule: Callable[[int], Coupling]
    alpha: float = 0.9
    ns: tuple = tuple(range(1, 33))
    solver: SolverConfig = SolverConfig()
    radius: float = 1.5
    eps_bar: Callable[[int], float] | float = 0.05
    tail: int = 4
    tolerance: float | None = None
    name: str = ""

    def eps_at(self, n: int) -> float:
        return self.eps_bar(n) if callable(self.eps_bar) else float(self.eps_bar)


@dataclass
class StabilityRow:
    n: int
    status: str
    energy: float | None = None
    gap: float | None = None
    bound: float | None = None
    reverse_bound: float | None = None
    eps: float | None = None
    eps_bar: float | None = None
    certified: str = ""
    bound_holds: bool | None = None
    reverse_holds: bool | None = None
    squeeze_holds: bool | None = None
    coupling_exact: bool | None = None
    certificates_ok: bool | None = None
    ledger_ok: bool | None = None
    single_path: bool | None = None
    explored: int = 0
    plan_hash: str = ""

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ExperimentReport:
    name: str
    alpha: float
    limit_energy: float
    limit_hash: str
    limit_certificate: str
    rows: list
    verdict: bool
    tolerance: float
    runtime: float = field(default=0.0, compare=False)
    limit: SolveResult | None = field(default=None, repr=False, compare=False)
    plans: dict = field(default_factory=dict, repr=False, compare=False)

    def gaps(self) -> list:
        return [r.gap for r in self.rows if r.gap is not None]


def _vertices_in_graph(plan: TrafficPlan, g) -> bool:
    P = plan.network.vertices
    if P.shape[0] == 0:
        return True
    d = np.linalg.norm(P[:, None, :] - g.vertices[None, :, :], axis=2).min(axis=1)
    return bool(np.all(d <= g.tol))


def run_stability(exp: StabilityExperiment, keep_plans: bool = False) -> ExperimentReport:
    t0 = time.perf_counter()
    limit, _ = exp.solver.solve(exp.base, exp.alpha)
    E = limit.energy
    rows = []
    plans = {}
    for n in exp.ns:
        pi_n = exp.schedule(n)
        if abs(pi_n.total - exp.base.total) > 1e-12 * max(1.0, exp.base.total):
            raise ValueError(f"schedule changes the total mass at n={n}")
        try:
            res, g = exp.solver.solve(pi_n, exp.alpha)
        except BudgetExceeded as exc:
            rows.append(StabilityRow(n, f"refused: {exc}"))
            continue
        if keep_plans:
            plans[n] = res
        eb = exp.eps_at(n)
        fwd = build_competitor(pi_n, exp.base, limit.plan, exp.alpha, eb, limit=exp.base, radius=exp.radius)
        rev = build_competitor(exp.base, pi_n, res.plan, exp.alpha, eb, limit=exp.base, radius=exp.radius)
        grid = _vertices_in_graph(fwd.competitor, g)
        slack = 1e-9
        rows.append(
            StabilityRow(
                n=n,
                status="ok",
                energy=res.energy,
                gap=res.energy - E,
                bound=fwd.bound,
                reverse_bound=rev.bound,
                eps=fwd.eps,
                eps_bar=eb,
                certified="grid-certified" if grid else "continuum-bound",
                bound_holds=bool(res.energy <= fwd.bound + slack),
                reverse_holds=bool(E <= rev.bound + slack),
                squeeze_holds=bool(res.energy <= E + fwd.energy_P1 + fwd.energy_P2 + slack and E + fwd.energy_P1 + fwd.energy_P2 <= E + 2 * fwd.eps),
                coupling_exact=bool(fwd.coupling_check and rev.coupling_check),
                certificates_ok=bool(fwd.certificates_ok and rev.certificates_ok),
                ledger_ok=bool(fwd.ledger_ok and rev.ledger_ok),
                single_path=res.single_path,
                explored=res.explored,
                plan_hash=support_hash(res.plan),
            )
        )
    pitch = exp.solver.pitch or 0.0
    tol = exp.tolerance if exp.tolerance is not None else 5 * (1 / max(exp.ns) + pitch)
    done = [r for r in rows if r.gap is not None]
    tail = done[-exp.tail :] if exp.tail else done
    verdict = bool(tail) and len(done) == len(rows) and all(abs(r.gap) < tol for r in tail)
    return ExperimentReport(
        exp.name,
        exp.alpha,
        E,
        support_hash(limit.plan),
        limit.certificate,
        rows,
        verdict,
        tol,
        time.perf_counter() - t0,
        limit,
        plans,
    )


def curated_experiment(name: str, delta: float = 0.25, ns=tuple(range(1, 33)), alpha: float = 0.9, pitch: float = 0.125) -> StabilityExperiment:
    pi = curated_instance(name)
    return StabilityExperiment(
        base=pi,
        schedule=dilation_schedule(pi, delta),
        alpha=alpha,
        ns=tuple(ns),
        solver=SolverConfig(pitch=pitch, grid_radius=1.0),
        radius=1.5,
        eps_bar=lambda n: min(0.9, 10 * delta / n),
        name=name,
    )
