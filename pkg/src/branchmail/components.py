"""Connected components of a plan inside ``R^d`` minus finitely many points.

Components live on the edge graph of the plan's network: removed points
split the edges they lie on, and two positive-multiplicity edges belong to
the same component when they share a vertex that is not removed.  On a
simple-path, single-path plan every atom meets each component along one
time interval, and restricting the atoms to those intervals gives one plan
per component.

Multiplicity needs no separate treatment here: on a discrete plan the
multiplicity at a point is by definition the mass of the atoms through it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Network, restrict
from .plan import Atom, Coupling, TrafficPlan, alpha_energy, check_simple_path, check_single_path, multiplicity


class NotSinglePathError(ValueError):
    """The plan fails the simple-path or single-path property."""


class ComponentIntervalError(RuntimeError):
    """An atom visits one component in two separate time intervals."""


@dataclass(frozen=True)
class OpenSetSpec:
    """Whole space with finitely many points taken out."""

    removed_points: tuple = ()

    @classmethod
    def minus(cls, *points) -> "OpenSetSpec":
        return cls(tuple(tuple(float(c) for c in p) for p in points))


@dataclass
class Component:
    edges: frozenset  # network edge keys (i, j)
    plan: TrafficPlan
    records: list  # (atom index, t1, t2)

    @property
    def vertices(self) -> frozenset:
        return frozenset(v for e in self.edges for v in e)


@dataclass
class ComponentDecomposition:
    components: list
    network: Network
    removed: frozenset
    edge_mult: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.components)

    def plans(self) -> list:
        return [c.plan for c in self.components]


def _find(parent: list[int], i: int) -> int:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def connected_components(p: TrafficPlan, u: OpenSetSpec = OpenSetSpec(), check: bool = True) -> ComponentDecomposition:
    if check:
        if not check_simple_path(p):
            raise NotSinglePathError("plan is not simple-path")
        rep = check_single_path(p)
        if not rep:
            x, y, i, j = rep.witness
            raise NotSinglePathError(f"atoms {i} and {j} join {x.tolist()} and {y.tolist()} along different arcs")
    net = Network(p.tol)
    net.add_curves(a.curve for a in p.atoms)
    removed = frozenset(net.add_point(x) for x in u.removed_points)
    fld = multiplicity(p, net)
    edges = net.edges
    live = [k for k, m in enumerate(fld.edge_mult) if m > 0]
    parent = list(range(len(edges)))
    at_vertex: dict[int, list[int]] = {}
    for k in live:
        for v in edges[k]:
            if v not in removed:
                at_vertex.setdefault(v, []).append(k)
    for ks in at_vertex.values():
        r0 = _find(parent, ks[0])
        for k in ks[1:]:
            r = _find(parent, k)
            if r != r0:
                parent[max(r, r0)] = min(r, r0)
                r0 = min(r, r0)
    label: dict[int, int] = {}
    groups: list[list[int]] = []
    for k in live:
        r = _find(parent, k)
        if r not in label:
            label[r] = len(groups)
            groups.append([])
        groups[label[r]].append(k)
    comp_of_edge = {k: label[_find(parent, k)] for k in live}

    pieces: list[list] = [[] for _ in groups]
    records: list[list] = [[] for _ in groups]
    for ai, (a, eids) in enumerate(zip(p.atoms, fld.traversals)):
        if eids.size == 0:
            continue
        _, times = net.traversal(a.curve)
        labs = [comp_of_edge[int(e)] for e in eids]
        runs: dict[int, tuple[int, int]] = {}
        for pos, c in enumerate(labs):
            if c in runs:
                start, end = runs[c]
                if end != pos - 1:
                    raise ComponentIntervalError(f"atom {ai} leaves component {c} and comes back")
                runs[c] = (start, pos)
            else:
                runs[c] = (pos, pos)
        for c, (start, end) in runs.items():
            t1, t2 = times[start], times[end + 1]
            pieces[c].append(Atom(restrict(a.curve, t1, t2), a.mass))
            records[c].append((ai, float(t1), float(t2)))
    comps = [
        Component(frozenset(edges[k] for k in g), TrafficPlan(pc, p.tol, dim=p.dim), rc)
        for g, pc, rc in zip(groups, pieces, records)
    ]
    mult = {edges[k]: float(fld.edge_mult[k]) for k in live}
    return ComponentDecomposition(comps, net, removed, mult)


def component_multiplicity_check(p: TrafficPlan, dec: ComponentDecomposition, atol: float = 1e-12) -> bool:
    """Each component plan carries the original multiplicity on its edges and nothing elsewhere."""
    net = dec.network
    for comp in dec.components:
        q = multiplicity(comp.plan, net).as_dict()
        for e in set(q) | set(comp.edges):
            want = dec.edge_mult.get(e, 0.0) if e in comp.edges else 0.0
            if abs(q.get(e, 0.0) - want) > atol:
                return False
    # edges of distinct components are disjoint and together cover the support
    seen: set = set()
    for comp in dec.components:
        if seen & comp.edges:
            return False
        seen |= comp.edges
    return seen == set(dec.edge_mult)


@dataclass
class AuditEntry:
    members: tuple
    energy: float
    oracle_energy: float | None
    passed: bool | None
    note: str = ""


@dataclass
class AuditReport:
    entries: list
    partial: bool

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries if e.passed is not None)

    @property
    def failures(self) -> list:
        return [e for e in self.entries if e.passed is False]


def grid_oracle(pitch: float, radius: float | None = None, box=None, max_path_len: int = 2, alpha: float = 0.9):
    """Oracle ``(coupling, hop budgets) -> optimal energy`` using the exhaustive grid solver.

    Without budgets every atom gets ``max_path_len`` hops.
    """
    from .solver import candidate_graph, solve_exact, solve_local

    def oracle(pi: Coupling, budgets=None) -> float:
        g = candidate_graph(pi, pitch=pitch, radius=radius, box=box)
        local = solve_local(pi, g, alpha)
        hops = max_path_len if budgets is None else budgets
        return solve_exact(pi, g, alpha, hops, upper_bound=local).energy

    return oracle


def _hop_budgets(dec: ComponentDecomposition, group: tuple, coupling: Coupling, hop_limit: int) -> list | None:
    """Per coupling atom, the hops a re-routed piece may use so the glued atom stays within ``hop_limit``.

    Pieces outside ``group`` keep their straight runs; what is left of the
    limit is shared among the atom's pieces inside ``group``, each first
    getting its own run count.  Pieces with equal endpoints travel together,
    so a coupling atom gets the smallest budget among its pieces.  Returns
    ``None`` when the plan's own pieces already exceed the limit.
    """
    inside: dict[int, list] = {}
    outside: dict[int, int] = {}
    for k, comp in enumerate(dec.components):
        for atom, (ai, _, _) in zip(comp.plan.atoms, comp.records):
            runs = len(atom.curve.vertices) - 1
            if k in group:
                inside.setdefault(ai, []).append((atom, runs))
            else:
                outside[ai] = outside.get(ai, 0) + runs
    pieces = []
    for ai, own in inside.items():
        spare = hop_limit - outside.get(ai, 0) - sum(r for _, r in own)
        if spare < 0:
            return None
        share, extra = divmod(spare, len(own))
        pieces += [(atom, r + share + (j < extra)) for j, (atom, r) in enumerate(own)]
    tol = coupling.tol
    budgets = []
    for x, y in zip(coupling.sources, coupling.targets):
        match = [
            b
            for atom, b in pieces
            if np.linalg.norm(atom.curve.start - x) <= tol and np.linalg.norm(atom.curve.end - y) <= tol
        ]
        budgets.append(min(match))
    return budgets


def component_optimality_audit(
    p: TrafficPlan,
    dec: ComponentDecomposition,
    oracle_budget: int,
    alpha: float,
    oracle,
    pairs: bool = True,
    atol: float = 1e-9,
    hop_limit: int | None = None,
) -> AuditReport:
    """Re-solve every component and every pair of components with their own coupling.

    ``oracle(coupling)`` returns the optimal energy or raises
    :class:`~branchmail.solver.BudgetExceeded`.  At most ``oracle_budget``
    oracle calls are made; the report is marked partial otherwise.

    With ``hop_limit`` set to the solver's ``max_path_len``, the oracle is
    called as ``oracle(coupling, budgets)`` with per-atom hop budgets chosen
    so that any cheaper answer, glued back into ``p``, is itself a plan the
    solver searched.  A failure then contradicts the exhaustive certificate
    rather than the hop limit, provided the oracle graph is a subgraph of
    the solver's.
    """
    from .solver import BudgetExceeded

    groups = [(k,) for k in range(len(dec))]
    if pairs:
        groups += list(itertools.combinations(range(len(dec)), 2))
    entries = []
    partial = False
    for calls, g in enumerate(groups):
        q = TrafficPlan([a for k in g for a in dec.components[k].plan.atoms], p.tol, dim=p.dim)
        e = alpha_energy(q, alpha)
        if calls >= oracle_budget:
            partial = True
            entries.append(AuditEntry(g, e, None, None, "over budget"))
            continue
        coupling = q.coupling()
        budgets = None
        if hop_limit is not None:
            budgets = _hop_budgets(dec, g, coupling, hop_limit)
            if budgets is None:
                partial = True
                entries.append(AuditEntry(g, e, None, None, "pieces exceed the hop limit"))
                continue
        try:
            o = oracle(coupling) if budgets is None else oracle(coupling, budgets)
        except BudgetExceeded as exc:
            partial = True
            entries.append(AuditEntry(g, e, None, None, f"refused: {exc}"))
            continue
        entries.append(AuditEntry(g, e, o, bool(e <= o + atol)))
    return AuditReport(entries, partial)


@dataclass
class FinitenessReport:
    count: int
    energies: list
    floors: list
    energy: float
    bound: float

    @property
    def certified(self) -> bool:
        ok = all(e >= f * (1 - 1e-12) for e, f in zip(self.energies, self.floors))
        return ok and self.count <= self.bound * (1 + 1e-12)


def finiteness_experiment(p: TrafficPlan, x, min_length: float, alpha: float) -> FinitenessReport:
    """Count components in the complement of ``x`` and bound the count by an energy floor.

    Each component costs at least ``min(min_length, reach) * m_min**alpha``
    where ``reach`` is the distance from ``x`` to the farthest vertex of the
    component: a component touching ``x`` spans at least that length, and one
    that does not touch ``x`` holds a whole atom.
    """
    x = np.asarray(x, dtype=float)
    for i, a in enumerate(p.atoms):
        if a.curve.length < min_length - p.tol:
            raise ValueError(f"atom {i} has length {a.curve.length:.6g} < min_length {min_length}")
    ends = np.vstack([p.starts, p.ends])
    if np.any(np.linalg.norm(ends - x, axis=1) <= p.tol):
        raise ValueError("x lies in the support of a marginal")
    dec = connected_components(p, OpenSetSpec.minus(x))
    P = dec.network.vertices
    m_min = float(p.masses.min())
    energies, floors = [], []
    for comp in dec.components:
        reach = float(np.max(np.linalg.norm(P[sorted(comp.vertices)] - x, axis=1)))
        floors.append(min(min_length, reach) * m_min**alpha)
        energies.append(alpha_energy(comp.plan, alpha))
    energy = alpha_energy(p, alpha)
    lowest = min(floors) if floors else math.inf
    bound = energy / lowest if lowest > 0 else math.inf
    return FinitenessReport(len(dec), energies, floors, energy, bound)
