"""Joining plans end to start.

Fibers over a shared intermediate point are paired by the product rule:
an incoming atom of mass ``a`` and an outgoing atom of mass ``b`` at a point
carrying mass ``nu`` give a joined atom of mass ``a * b / nu``.  Through a
single hub point the pairing can be steered to realize any coupling with the
right marginals, and two gluing steps extend that to three-leg routes.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ._points import PointIndex
from .geometry import PolyCurve
from .plan import Atom, AtomicMeasure, Coupling, TrafficPlan, coupling_of, marginals


def conc_curves(c1: PolyCurve, c2: PolyCurve) -> PolyCurve:
    """``c1`` followed by ``c2``; the constant curve at the origin if they do not meet."""
    tol = max(c1.tol, c2.tol)
    if np.linalg.norm(c1.end - c2.start) > tol:
        return PolyCurve(np.zeros(c1.dim), tol)
    return PolyCurve(np.vstack([c1.vertices, c2.vertices[1:]]), tol)


@dataclass
class PairPlan:
    """Weighted pairs of curves whose joins make up a concatenated plan."""

    pairs: tuple  # of (curve1, curve2, mass)
    tol: float

    def first(self) -> TrafficPlan:
        return TrafficPlan([Atom(c1, m) for c1, _, m in self.pairs], self.tol).merged()

    def second(self) -> TrafficPlan:
        return TrafficPlan([Atom(c2, m) for _, c2, m in self.pairs], self.tol).merged()

    def joined(self) -> TrafficPlan:
        return TrafficPlan([Atom(conc_curves(c1, c2), m) for c1, c2, m in self.pairs], self.tol).merged()

    def __add__(self, other: "PairPlan") -> "PairPlan":
        return PairPlan(self.pairs + other.pairs, min(self.tol, other.tol))

    def endpoints_match(self) -> bool:
        return all(np.linalg.norm(c1.end - c2.start) <= self.tol for c1, c2, _ in self.pairs)

    def witnesses(self, p1: TrafficPlan, p2: TrafficPlan, atol: float = 1e-12) -> bool:
        """True when the pairs join end to start and project onto ``p1`` and ``p2``."""
        return (
            self.endpoints_match()
            and plans_allclose(self.first(), p1, atol)
            and plans_allclose(self.second(), p2, atol)
        )


def plans_allclose(p: TrafficPlan, q: TrafficPlan, atol: float = 1e-12) -> bool:
    """Equality of plans as measures on curves."""
    index = PointIndex(max(p.tol, q.tol))
    a: dict[tuple, float] = defaultdict(float)
    b: dict[tuple, float] = defaultdict(float)
    for at in p.atoms:
        a[tuple(index.ids(at.curve.vertices))] += at.mass
    for at in q.atoms:
        b[tuple(index.ids(at.curve.vertices))] += at.mass
    scale = max(1.0, p.total, q.total)
    return all(abs(a.get(k, 0.0) - b.get(k, 0.0)) <= atol * scale for k in set(a) | set(b))


def _check_measures(mu: AtomicMeasure, nu: AtomicMeasure, what: str) -> None:
    diff = mu.first_difference(nu)
    if diff is not None:
        raise ValueError(f"{what}: {diff}")


def conc_plans(p1: TrafficPlan, p2: TrafficPlan) -> tuple[TrafficPlan, PairPlan]:
    """Product concatenation of ``p1`` and ``p2`` with its witness.

    Requires the final marginal of ``p1`` to equal the initial marginal of ``p2``.
    """
    _check_measures(marginals(p1)[1], marginals(p2)[0], "final marginal of p1 differs from initial marginal of p2")
    index = PointIndex(max(p1.tol, p2.tol))
    incoming: dict[int, list[Atom]] = defaultdict(list)
    outgoing: dict[int, list[Atom]] = defaultdict(list)
    for a in p1.atoms:
        incoming[index.id(a.curve.end)].append(a)
    for a in p2.atoms:
        outgoing[index.id(a.curve.start)].append(a)
    pairs = []
    for x in sorted(incoming):
        nu = sum(a.mass for a in incoming[x])
        for a in incoming[x]:
            for b in outgoing[x]:
                pairs.append((a.curve, b.curve, a.mass * b.mass / nu))
    witness = PairPlan(tuple(pairs), index.tol)
    return witness.joined(), witness


def _hub(p: TrafficPlan, which: str) -> np.ndarray | None:
    pts = p.ends if which == "end" else p.starts
    if pts.shape[0] == 0:
        return None
    if np.any(np.linalg.norm(pts - pts[0], axis=1) > p.tol):
        return None
    return pts[0]


def conc_through_delta(p1: TrafficPlan, p2: TrafficPlan, pi: Coupling) -> TrafficPlan:
    """Concatenate ``p1`` and ``p2`` through their common hub point, realizing ``pi``.

    ``p1`` must end entirely at one point x0 where ``p2`` starts entirely; the
    marginals of ``pi`` must be the initial marginal of ``p1`` and the final
    marginal of ``p2``.
    """
    tol = max(p1.tol, p2.tol)
    h1, h2 = _hub(p1, "end"), _hub(p2, "start")
    if h1 is None or h2 is None or np.linalg.norm(h1 - h2) > tol:
        raise ValueError("intermediate marginal is not a single Dirac mass shared by both plans")
    mu_src, mu_dst = pi.marginals()
    _check_measures(mu_src, marginals(p1)[0], "first marginal of pi differs from the start of p1")
    _check_measures(mu_dst, marginals(p2)[1], "second marginal of pi differs from the end of p2")
    index = PointIndex(tol)
    by_start: dict[int, list[Atom]] = defaultdict(list)
    by_end: dict[int, list[Atom]] = defaultdict(list)
    for a in p1.atoms:
        by_start[index.id(a.curve.start)].append(a)
    for a in p2.atoms:
        by_end[index.id(a.curve.end)].append(a)
    atoms = []
    for x, y, m in pi.pairs():
        fa = by_start[index.id(x)]
        fb = by_end[index.id(y)]
        sa = sum(a.mass for a in fa)
        sb = sum(b.mass for b in fb)
        for a in fa:
            for b in fb:
                atoms.append(Atom(conc_curves(a.curve, b.curve), m * (a.mass / sa) * (b.mass / sb)))
    return TrafficPlan(atoms, tol, dim=p1.dim).merged()


class TripleCoupling:
    """Atomic measure on a product of ``k`` copies of space.

    ``points`` has shape ``(n, k, d)``; atoms are merged.
    """

    def __init__(self, points, masses, tol: float):
        pts = np.asarray(points, dtype=float)
        m = np.asarray(masses, dtype=float).reshape(-1)
        self.tol = tol
        index = PointIndex(tol)
        acc: dict[tuple, float] = {}
        reps: dict[tuple, np.ndarray] = {}
        for row, w in zip(pts, m):
            key = tuple(index.ids(row))
            if key not in acc:
                acc[key] = 0.0
                reps[key] = row
            acc[key] += w
        keys = [k for k in acc if acc[k] > 0]
        self.points = np.array([reps[k] for k in keys]).reshape(len(keys), *pts.shape[1:])
        self.masses = np.array([acc[k] for k in keys])

    @classmethod
    def from_coupling(cls, pi: Coupling) -> "TripleCoupling":
        return cls(np.stack([pi.sources, pi.targets], axis=1), pi.masses, pi.tol)

    @property
    def arity(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.masses.shape[0]

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def marginal(self, axis: int) -> AtomicMeasure:
        return AtomicMeasure(self.points[:, axis, :], self.masses, self.tol)

    def project(self, *axes: int):
        """Coupling for two axes, a smaller multi-coupling otherwise."""
        if len(axes) == 1:
            return self.marginal(axes[0])
        if len(axes) == 2:
            return Coupling(self.points[:, axes[0], :], self.points[:, axes[1], :], self.masses, self.tol)
        return TripleCoupling(self.points[:, list(axes), :], self.masses, self.tol)


def _as_multi(c) -> TripleCoupling:
    return c if isinstance(c, TripleCoupling) else TripleCoupling.from_coupling(c)


def glue(pi1, pi2, axis1: int = -1, axis2: int = 0) -> TripleCoupling:
    """Glue two couplings along a shared marginal.

    With the defaults, ``pi1`` on (X, Y) and ``pi2`` on (Y, Z) give a measure
    on (X, Y, Z) projecting onto both.  In general the shared axis of ``pi2``
    is dropped and its remaining axes are appended.
    """
    a, b = _as_multi(pi1), _as_multi(pi2)
    axis1 %= a.arity
    axis2 %= b.arity
    _check_measures(a.marginal(axis1), b.marginal(axis2), "shared marginals of the glued couplings differ")
    index = PointIndex(max(a.tol, b.tol))
    groups: dict[int, list[int]] = defaultdict(list)
    for k in range(len(b)):
        groups[index.id(b.points[k, axis2])].append(k)
    nu: dict[int, float] = defaultdict(float)
    for k in range(len(a)):
        nu[index.id(a.points[k, axis1])] += a.masses[k]
    rest = [i for i in range(b.arity) if i != axis2]
    rows, masses = [], []
    for k in range(len(a)):
        y = index.id(a.points[k, axis1])
        for l in groups[y]:
            rows.append(np.concatenate([a.points[k], b.points[l, rest]], axis=0))
            masses.append(a.masses[k] * b.masses[l] / nu[y])
    if not rows:
        d = a.points.shape[2] if a.points.ndim == 3 else 0
        return TripleCoupling(np.zeros((0, a.arity + len(rest), d)), np.zeros(0), index.tol)
    return TripleCoupling(np.array(rows), masses, index.tol)


@dataclass
class TripleConcatParts:
    plan: TrafficPlan
    middle: TrafficPlan  # second and third legs joined through the hub
    quadruple: TripleCoupling


def triple_concat_parts(p0_coupling: Coupling, p1: TrafficPlan, p2: TrafficPlan, p3: TrafficPlan) -> TripleConcatParts:
    """Three-leg concatenation with its intermediate products; see :func:`triple_concat`."""
    stage = "p1 to p2 junction"
    diff = marginals(p1)[1].first_difference(marginals(p2)[0])
    if diff is not None:
        raise ValueError(f"triple_concat stage '{stage}': {diff}")
    stage = "hub of p2 and p3"
    h2, h3 = _hub(p2, "end"), _hub(p3, "start")
    if h2 is None or h3 is None or np.linalg.norm(h2 - h3) > max(p2.tol, p3.tol):
        raise ValueError(f"triple_concat stage '{stage}': legs do not meet in a single point")
    stage = "prescribed coupling"
    m0, m3 = p0_coupling.marginals()
    for got, want, side in ((m0, marginals(p1)[0], "first"), (m3, marginals(p3)[1], "second")):
        diff = got.first_difference(want)
        if diff is not None:
            raise ValueError(f"triple_concat stage '{stage}': {side} marginal mismatch, {diff}")

    pi1 = coupling_of(p1)
    pi2 = coupling_of(p2)
    xyz = glue(pi1, pi2)
    quad = glue(xyz, p0_coupling, axis1=0, axis2=0)  # axes x, y, z, w
    pi4 = quad.project(1, 3)
    middle = conc_through_delta(p2, p3, pi4)

    tol = max(p1.tol, middle.tol)
    index = PointIndex(tol)
    fib1: dict[tuple, list[Atom]] = defaultdict(list)
    fib4: dict[tuple, list[Atom]] = defaultdict(list)
    for a in p1.atoms:
        fib1[(index.id(a.curve.start), index.id(a.curve.end))].append(a)
    for a in middle.atoms:
        fib4[(index.id(a.curve.start), index.id(a.curve.end))].append(a)
    tot1 = {k: sum(a.mass for a in v) for k, v in fib1.items()}
    tot4 = {k: sum(a.mass for a in v) for k, v in fib4.items()}
    atoms = []
    for row, m in zip(quad.points, quad.masses):
        x, y, w = index.id(row[0]), index.id(row[1]), index.id(row[3])
        k1, k4 = (x, y), (y, w)
        for a in fib1[k1]:
            for b in fib4[k4]:
                atoms.append(Atom(conc_curves(a.curve, b.curve), m * (a.mass / tot1[k1]) * (b.mass / tot4[k4])))
    plan = TrafficPlan(atoms, tol, dim=p1.dim).merged()
    return TripleConcatParts(plan, middle, quad)


def triple_concat(p0_coupling: Coupling, p1: TrafficPlan, p2: TrafficPlan, p3: TrafficPlan) -> TrafficPlan:
    """Route ``p1``, then ``p2`` into a hub, then ``p3`` out of it, with coupling ``p0_coupling``.

    ``p1`` runs from mu1 to mu2, ``p2`` from mu2 into the hub point, ``p3``
    from the hub to mu3, and ``p0_coupling`` has marginals mu1 and mu3.
    """
    return triple_concat_parts(p0_coupling, p1, p2, p3).plan
