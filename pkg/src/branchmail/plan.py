"""Finite traffic plans, couplings, multiplicity and the two cost functionals.

A plan is a finite list of weighted polyline curves.  Multiplicity is the
mass of the atoms covering an edge, each atom counted once per edge however
often it runs along it.  The α-energy charges every traversal, the α-mass
charges every edge once; they agree exactly when no atom retraces an edge.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple

import numpy as np

from ._points import DEFAULT_TOL, PointIndex, lexsort_rows
from .geometry import Network, PolyCurve, double_points


@dataclass(frozen=True)
class InstanceConfig:
    d: int = 2
    R: float = 1.0
    alpha: float = 0.9
    C_stop: float = 10.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.C_stop <= 0:
            raise ValueError("C_stop must be positive")
        if self.d < 1 or self.R <= 0:
            raise ValueError("need d >= 1 and R > 0")

    @property
    def supercritical(self) -> bool:
        return self.alpha > 1 - 1 / self.d

    @property
    def tol(self) -> float:
        return DEFAULT_TOL * self.R


def _mass_scale(*totals: float) -> float:
    return max([1.0, *[abs(t) for t in totals]])


class AtomicMeasure:
    """Finite atomic measure with merged, lexicographically sorted atoms."""

    def __init__(self, points, masses, tol: float = DEFAULT_TOL, dim: int | None = None):
        pts = np.asarray(points, dtype=float)
        m = np.asarray(masses, dtype=float).reshape(-1)
        if pts.size == 0:
            d = dim if dim is not None else (pts.shape[1] if pts.ndim == 2 else 0)
            pts = np.zeros((0, d))
        elif pts.ndim == 1:
            pts = pts[None, :]
        if pts.shape[0] != m.shape[0]:
            raise ValueError("points and masses differ in length")
        if np.any(m < 0):
            raise ValueError("masses must be nonnegative")
        self.tol = tol
        if pts.shape[0]:
            index = PointIndex(tol)
            ids = np.array(index.ids(pts))
            merged = np.zeros(len(index))
            np.add.at(merged, ids, m)
            reps = index.array
            keep = merged > 0
            reps, merged = reps[keep], merged[keep]
            order = lexsort_rows(reps)
            pts, m = reps[order], merged[order]
        self.points = pts
        self.masses = m

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def __len__(self) -> int:
        return self.masses.shape[0]

    def __add__(self, other: "AtomicMeasure") -> "AtomicMeasure":
        return AtomicMeasure(
            np.vstack([self.points, other.points]),
            np.concatenate([self.masses, other.masses]),
            self.tol,
            dim=self.dim,
        )

    def scaled(self, c: float) -> "AtomicMeasure":
        return AtomicMeasure(self.points, self.masses * c, self.tol, dim=self.dim)

    def mass_at(self, x) -> float:
        if not len(self):
            return 0.0
        d = np.linalg.norm(self.points - np.asarray(x, dtype=float), axis=1)
        return float(self.masses[d <= self.tol].sum())

    def allclose(self, other: "AtomicMeasure", atol: float = 1e-12) -> bool:
        return self.first_difference(other, atol) is None

    def first_difference(self, other: "AtomicMeasure", atol: float = 1e-12) -> str | None:
        tol = max(self.tol, other.tol)
        index = PointIndex(tol)
        a: dict[int, float] = {}
        b: dict[int, float] = {}
        for p, m in zip(self.points, self.masses):
            k = index.id(p)
            a[k] = a.get(k, 0.0) + m
        for p, m in zip(other.points, other.masses):
            k = index.id(p)
            b[k] = b.get(k, 0.0) + m
        scale = _mass_scale(self.total, other.total)
        for k in sorted(set(a) | set(b)):
            if abs(a.get(k, 0.0) - b.get(k, 0.0)) > atol * scale:
                return f"point {index.coords(k).tolist()}: {a.get(k, 0.0)!r} vs {b.get(k, 0.0)!r}"
        return None

    def __repr__(self) -> str:
        return f"AtomicMeasure({len(self)} atoms, total={self.total:.6g})"


def dirac(x, mass: float = 1.0, tol: float = DEFAULT_TOL) -> AtomicMeasure:
    x = np.asarray(x, dtype=float)
    return AtomicMeasure(x[None, :], [mass], tol)


class Coupling:
    """Atomic measure on pairs (source, target), merged and sorted."""

    def __init__(self, sources, targets, masses, tol: float = DEFAULT_TOL, dim: int | None = None):
        src = np.asarray(sources, dtype=float)
        dst = np.asarray(targets, dtype=float)
        m = np.asarray(masses, dtype=float).reshape(-1)
        if src.size == 0:
            d = dim if dim is not None else (src.shape[1] if src.ndim == 2 else 0)
            src = np.zeros((0, d))
            dst = np.zeros((0, d))
        if src.ndim == 1:
            src, dst = src[None, :], dst[None, :]
        if not (src.shape == dst.shape and src.shape[0] == m.shape[0]):
            raise ValueError("sources, targets and masses disagree in shape")
        if np.any(m < 0):
            raise ValueError("masses must be nonnegative")
        self.tol = tol
        if m.shape[0]:
            index = PointIndex(tol)
            si = index.ids(src)
            ti = index.ids(dst)
            acc: dict[tuple[int, int], float] = {}
            for a, b, w in zip(si, ti, m):
                acc[(a, b)] = acc.get((a, b), 0.0) + w
            keys = [k for k, w in acc.items() if w > 0]
            P = index.array
            src = np.array([P[a] for a, _ in keys]).reshape(len(keys), -1)
            dst = np.array([P[b] for _, b in keys]).reshape(len(keys), -1)
            m = np.array([acc[k] for k in keys])
            if len(keys):
                order = lexsort_rows(np.hstack([src, dst]))
                src, dst, m = src[order], dst[order], m[order]
            else:
                d = P.shape[1]
                src, dst = np.zeros((0, d)), np.zeros((0, d))
        self.sources = src
        self.targets = dst
        self.masses = m

    @classmethod
    def from_pairs(cls, pairs, tol: float = DEFAULT_TOL) -> "Coupling":
        pairs = list(pairs)
        if not pairs:
            raise ValueError("use the constructor with dim= for an empty coupling")
        src = [p[0] for p in pairs]
        dst = [p[1] for p in pairs]
        m = [p[2] for p in pairs]
        return cls(src, dst, m, tol)

    @classmethod
    def empty(cls, dim: int, tol: float = DEFAULT_TOL) -> "Coupling":
        return cls(np.zeros((0, dim)), np.zeros((0, dim)), np.zeros(0), tol, dim=dim)

    @property
    def dim(self) -> int:
        return self.sources.shape[1]

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def __len__(self) -> int:
        return self.masses.shape[0]

    def pairs(self):
        for s, t, m in zip(self.sources, self.targets, self.masses):
            yield s, t, float(m)

    # shared block interface with TrafficPlan
    @property
    def starts(self) -> np.ndarray:
        return self.sources

    @property
    def ends(self) -> np.ndarray:
        return self.targets

    def subset(self, mask) -> "Coupling":
        mask = np.asarray(mask, dtype=bool)
        return Coupling(self.sources[mask], self.targets[mask], self.masses[mask], self.tol, dim=self.dim)

    def scaled(self, c: float) -> "Coupling":
        return Coupling(self.sources, self.targets, self.masses * c, self.tol, dim=self.dim)

    def prune(self, threshold: float) -> "Coupling":
        return self.subset(self.masses > threshold)

    def coupling(self) -> "Coupling":
        return self

    def __add__(self, other: "Coupling") -> "Coupling":
        return Coupling(
            np.vstack([self.sources, other.sources]),
            np.vstack([self.targets, other.targets]),
            np.concatenate([self.masses, other.masses]),
            self.tol,
            dim=self.dim,
        )

    def marginals(self) -> tuple[AtomicMeasure, AtomicMeasure]:
        return (
            AtomicMeasure(self.sources, self.masses, self.tol, dim=self.dim),
            AtomicMeasure(self.targets, self.masses, self.tol, dim=self.dim),
        )

    def mass_at(self, x, y) -> float:
        if not len(self):
            return 0.0
        ds = np.linalg.norm(self.sources - np.asarray(x, dtype=float), axis=1)
        dt = np.linalg.norm(self.targets - np.asarray(y, dtype=float), axis=1)
        return float(self.masses[(ds <= self.tol) & (dt <= self.tol)].sum())

    def first_difference(self, other: "Coupling", atol: float = 1e-12) -> str | None:
        tol = max(self.tol, other.tol)
        index = PointIndex(tol)
        a: dict[tuple[int, int], float] = {}
        b: dict[tuple[int, int], float] = {}
        for s, t, m in self.pairs():
            k = (index.id(s), index.id(t))
            a[k] = a.get(k, 0.0) + m
        for s, t, m in other.pairs():
            k = (index.id(s), index.id(t))
            b[k] = b.get(k, 0.0) + m
        scale = _mass_scale(self.total, other.total)
        for k in sorted(set(a) | set(b)):
            if abs(a.get(k, 0.0) - b.get(k, 0.0)) > atol * scale:
                s, t = index.coords(k[0]).tolist(), index.coords(k[1]).tolist()
                return f"pair {s} -> {t}: {a.get(k, 0.0)!r} vs {b.get(k, 0.0)!r}"
        return None

    def allclose(self, other: "Coupling", atol: float = 1e-12) -> bool:
        return self.first_difference(other, atol) is None

    def __repr__(self) -> str:
        return f"Coupling({len(self)} pairs, total={self.total:.6g})"


def product_coupling(mu: AtomicMeasure, nu: AtomicMeasure, rtol: float = 1e-9) -> Coupling:
    """Product of two measures of equal mass, normalized so its marginals are ``mu`` and ``nu``."""
    tm, tn = mu.total, nu.total
    if abs(tm - tn) > rtol * _mass_scale(tm, tn):
        raise ValueError(f"product of measures with different masses {tm!r} and {tn!r}")
    d = mu.dim if len(mu) else nu.dim
    if tm == 0 or not len(mu) or not len(nu):
        return Coupling.empty(d, mu.tol)
    src = np.repeat(mu.points, len(nu), axis=0)
    dst = np.tile(nu.points, (len(mu), 1))
    m = np.outer(mu.masses, nu.masses).reshape(-1) / tn
    return Coupling(src, dst, m, mu.tol)


class Atom(NamedTuple):
    curve: PolyCurve
    mass: float


class TrafficPlan:
    """Finite family of weighted curves.

    The plan's network is built lazily from all of its curves; every query
    that needs multiplicities runs on it.  Atoms of zero mass are dropped.
    """

    def __init__(self, atoms: Iterable = (), tol: float = DEFAULT_TOL, dim: int | None = None):
        kept = []
        for a in atoms:
            curve, mass = a
            mass = float(mass)
            if mass < 0:
                raise ValueError("atom masses must be nonnegative")
            if mass > 0:
                kept.append(Atom(curve, mass))
        self.atoms: tuple[Atom, ...] = tuple(kept)
        self.tol = tol
        if kept:
            self._dim = kept[0].curve.dim
        elif dim is not None:
            self._dim = dim
        else:
            self._dim = 0

    @classmethod
    def from_curves(cls, curves, masses, tol: float = DEFAULT_TOL) -> "TrafficPlan":
        return cls([Atom(c if isinstance(c, PolyCurve) else PolyCurve(c, tol), m) for c, m in zip(curves, masses)], tol)

    @property
    def dim(self) -> int:
        return self._dim

    def __len__(self) -> int:
        return len(self.atoms)

    def __iter__(self):
        return iter(self.atoms)

    @property
    def total(self) -> float:
        return float(sum(a.mass for a in self.atoms))

    @property
    def masses(self) -> np.ndarray:
        return np.array([a.mass for a in self.atoms], dtype=float)

    @property
    def starts(self) -> np.ndarray:
        if not self.atoms:
            return np.zeros((0, self.dim))
        return np.array([a.curve.start for a in self.atoms])

    @property
    def ends(self) -> np.ndarray:
        if not self.atoms:
            return np.zeros((0, self.dim))
        return np.array([a.curve.end for a in self.atoms])

    def subset(self, mask) -> "TrafficPlan":
        return TrafficPlan([a for a, keep in zip(self.atoms, mask) if keep], self.tol, dim=self.dim)

    def scaled(self, c: float) -> "TrafficPlan":
        return TrafficPlan([Atom(a.curve, a.mass * c) for a in self.atoms], self.tol, dim=self.dim)

    def prune(self, threshold: float) -> "TrafficPlan":
        return TrafficPlan([a for a in self.atoms if a.mass > threshold], self.tol, dim=self.dim)

    def reversed(self) -> "TrafficPlan":
        return TrafficPlan([Atom(a.curve.reversed(), a.mass) for a in self.atoms], self.tol, dim=self.dim)

    def coupling(self) -> Coupling:
        return coupling_of(self)

    def __add__(self, other: "TrafficPlan") -> "TrafficPlan":
        return TrafficPlan(self.atoms + other.atoms, self.tol, dim=self.dim or other.dim).merged()

    def merged(self) -> "TrafficPlan":
        """Atoms with identical curves (up to ``tol``) combined, in first-seen order."""
        index = PointIndex(self.tol)
        acc: dict[tuple, list] = {}
        for a in self.atoms:
            key = tuple(index.ids(a.curve.vertices))
            if key in acc:
                acc[key][1] += a.mass
            else:
                acc[key] = [a.curve, a.mass]
        return TrafficPlan([Atom(c, m) for c, m in acc.values()], self.tol, dim=self.dim)

    @cached_property
    def network(self) -> Network:
        net = Network(self.tol)
        net.add_curves(a.curve for a in self.atoms)
        return net

    def __repr__(self) -> str:
        return f"TrafficPlan({len(self)} atoms, total={self.total:.6g})"


def shared_network(*plans: TrafficPlan, tol: float | None = None) -> Network:
    """One network carrying the curves of every plan given."""
    if tol is None:
        tol = min((p.tol for p in plans), default=DEFAULT_TOL)
    net = Network(tol)
    for p in plans:
        net.add_curves(a.curve for a in p.atoms)
    return net


def coupling_of(p: TrafficPlan) -> Coupling:
    if not p.atoms:
        return Coupling.empty(p.dim, p.tol)
    return Coupling(p.starts, p.ends, p.masses, p.tol)


def marginals(p: TrafficPlan) -> tuple[AtomicMeasure, AtomicMeasure]:
    return (
        AtomicMeasure(p.starts, p.masses, p.tol, dim=p.dim),
        AtomicMeasure(p.ends, p.masses, p.tol, dim=p.dim),
    )


@dataclass
class MultiplicityField:
    """Per-edge and per-vertex multiplicity of a plan on a given network."""

    network: Network
    edge_mult: np.ndarray
    vertex_mult: dict
    traversals: list  # per atom: array of edge indices, repeats kept

    def __getitem__(self, edge: tuple[int, int]) -> float:
        return float(self.edge_mult[self.network.edge_id(*edge)])

    def at(self, x) -> float:
        """Multiplicity at a point of space."""
        where = self.network.locate(x)
        if where is None:
            return 0.0
        kind, k = where
        if kind == "vertex":
            return float(self.vertex_mult.get(k, 0.0))
        return float(self.edge_mult[k])

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {e: float(m) for e, m in zip(self.network.edges, self.edge_mult) if m > 0}


def multiplicity(p: TrafficPlan, network: Network | None = None) -> MultiplicityField:
    net = p.network if network is None else network
    for a in p.atoms:
        net.add_curve(a.curve)
    n_edges = len(net.edges)
    mult = np.zeros(n_edges)
    vmult: dict[int, float] = {}
    traversals = []
    for a in p.atoms:
        seq, _ = net.traversal(a.curve)
        eids = np.array([net.edge_id(u, v) for u, v in zip(seq[:-1], seq[1:])], dtype=int)
        traversals.append(eids)
        if eids.size:
            mult[np.unique(eids)] += a.mass
        for v in set(seq):
            vmult[v] = vmult.get(v, 0.0) + a.mass
    return MultiplicityField(net, mult, vmult, traversals)


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")


def alpha_energy(p: TrafficPlan, alpha: float, field: MultiplicityField | None = None) -> float:
    """Sum over atoms of mass times the multiplicity-weighted length of every traversal."""
    _check_alpha(alpha)
    f = multiplicity(p) if field is None else field
    lengths = f.network.edge_lengths
    total = 0.0
    for a, eids in zip(p.atoms, f.traversals):
        if eids.size == 0:
            continue
        m = f.edge_mult[eids]
        if np.any(m <= 0):
            raise AssertionError("traversed edge with zero multiplicity")
        total += a.mass * float(np.sum(lengths[eids] * m ** (alpha - 1)))
    return total


def alpha_mass(p: TrafficPlan, alpha: float, field: MultiplicityField | None = None) -> float:
    """Sum over edges of length times multiplicity to the power ``alpha``."""
    _check_alpha(alpha)
    f = multiplicity(p) if field is None else field
    m = f.edge_mult
    pos = m > 0
    return float(np.sum(f.network.edge_lengths[pos] * m[pos] ** alpha))


def weighted_length(p: TrafficPlan, weight, field: MultiplicityField | None = None) -> float:
    """Sum over atoms of mass times the ``weight``-weighted length of every traversal.

    ``weight`` is an array over the edges of the field's network.
    """
    f = multiplicity(p) if field is None else field
    lengths = f.network.edge_lengths
    w = np.asarray(weight, dtype=float)
    return float(sum(a.mass * np.sum(lengths[e] * w[e]) for a, e in zip(p.atoms, f.traversals) if e.size))


def check_tpc(p: TrafficPlan, C: float) -> bool:
    return sum(a.mass * a.curve.length for a in p.atoms) <= C


def decompose_by_products(p: TrafficPlan, parts) -> list[TrafficPlan]:
    """Split ``p`` into plans whose couplings are the normalized products in ``parts``.

    ``parts`` is a list of ``(mu_minus, mu_plus)`` pairs of equal mass.  Each
    atom is split across the parts in proportion to the parts' weights at its
    endpoint pair.
    """
    parts = list(parts)
    if len(parts) == 1:
        return [p]
    products = [product_coupling(a, b) for a, b in parts]
    total = products[0]
    for c in products[1:]:
        total = total + c
    diff = coupling_of(p).first_difference(total)
    if diff is not None:
        raise ValueError(f"coupling is not the sum of the given products: {diff}")
    index = PointIndex(p.tol)
    weights: list[dict[tuple[int, int], float]] = []
    for c in products:
        w: dict[tuple[int, int], float] = {}
        for s, t, m in c.pairs():
            k = (index.id(s), index.id(t))
            w[k] = w.get(k, 0.0) + m
        weights.append(w)
    out: list[list[Atom]] = [[] for _ in parts]
    for a in p.atoms:
        k = (index.id(a.curve.start), index.id(a.curve.end))
        ws = [w.get(k, 0.0) for w in weights]
        s = sum(ws)
        for i, wi in enumerate(ws):
            if wi > 0:
                out[i].append(Atom(a.curve, a.mass * wi / s))
    return [TrafficPlan(atoms, p.tol, dim=p.dim).merged() for atoms in out]


def check_simple_path(p: TrafficPlan) -> bool:
    return all(double_points(a.curve).length <= p.tol for a in p.atoms)


@dataclass(frozen=True)
class SinglePathReport:
    ok: bool
    witness: tuple | None = None  # (x, y, atom_i, atom_j)

    def __bool__(self) -> bool:
        return self.ok


def _first_visits(seq: list[int]) -> dict[int, int]:
    first: dict[int, int] = {}
    for k, v in enumerate(seq):
        first.setdefault(v, k)
    return first


def _edge_set(seq: list[int], i: int, j: int) -> frozenset:
    if i > j:
        i, j = j, i
    return frozenset((min(a, b), max(a, b)) for a, b in zip(seq[i:j], seq[i + 1 : j + 1]))


def check_single_path(p: TrafficPlan) -> SinglePathReport:
    """All atoms run between any two shared network points along the same edges.

    For each pair of atoms it is enough to compare the stretches between
    consecutive shared vertices (in the first atom's order): if these agree,
    any longer stretch is a union of them on both sides.
    """
    net = p.network
    seqs = [net.vertex_path(a.curve) for a in p.atoms]
    firsts = [_first_visits(s) for s in seqs]
    P = net.vertices
    for i in range(len(seqs)):
        for j in range(i + 1, len(seqs)):
            shared = set(firsts[i]) & set(firsts[j])
            if len(shared) < 2:
                continue
            order = sorted(shared, key=lambda v: firsts[i][v])
            for x, y in zip(order[:-1], order[1:]):
                ei = _edge_set(seqs[i], firsts[i][x], firsts[i][y])
                ej = _edge_set(seqs[j], firsts[j][x], firsts[j][y])
                if ei != ej:
                    return SinglePathReport(False, (P[x].copy(), P[y].copy(), i, j))
    return SinglePathReport(True)
