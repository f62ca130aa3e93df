"""Polyline curves and the planar (or d-dimensional) segment arrangement they live on.

Curves are stored in arc-length normal form: consecutive duplicate vertices
are dropped and vertices where the curve continues straight on are removed,
so two curves with the same image and the same traversal are equal.

A :class:`Network` is the arrangement of every segment registered on it:
segments are split at crossings, touching vertices and collinear overlaps,
so the resulting edges meet only at shared endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._points import DEFAULT_TOL, PointIndex


def _straight_through(a: np.ndarray, b: np.ndarray, c: np.ndarray, tol: float) -> bool:
    """True when ``b`` sits on the open segment ``ac`` (no turn, no reversal)."""
    ac = c - a
    L2 = float(ac @ ac)
    if L2 == 0.0:
        return False
    s = float((b - a) @ ac) / L2
    if not 0.0 < s < 1.0:
        return False
    return float(np.linalg.norm(a + s * ac - b)) <= tol


def _normal_form(vertices: np.ndarray, tol: float) -> np.ndarray:
    kept = [vertices[0]]
    for p in vertices[1:]:
        if np.linalg.norm(p - kept[-1]) > tol:
            kept.append(p)
    out = [kept[0]]
    for p in kept[1:]:
        while len(out) >= 2 and _straight_through(out[-2], out[-1], p, tol):
            out.pop()
        out.append(p)
    return np.array(out)


class PolyCurve:
    """Arc-length parametrized polyline, constant after its last vertex.

    Parameters
    ----------
    vertices : array_like, shape (k, d)
        Vertices in traversal order.  A single vertex gives the constant curve.
    tol : float
        Distance under which consecutive vertices are identified.
    """

    def __init__(self, vertices, tol: float = DEFAULT_TOL):
        v = np.asarray(vertices, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[0] == 0:
            raise ValueError("a curve needs at least one vertex")
        if not np.all(np.isfinite(v)):
            raise ValueError("curve vertices must be finite")
        v = _normal_form(v, tol)
        v.setflags(write=False)
        self.vertices = v
        self.tol = tol

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def start(self) -> np.ndarray:
        return self.vertices[0]

    @property
    def end(self) -> np.ndarray:
        return self.vertices[-1]

    @property
    def is_constant(self) -> bool:
        return self.vertices.shape[0] == 1

    @cached_property
    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)

    @cached_property
    def cumulative(self) -> np.ndarray:
        """Arc-length time at which each vertex is reached."""
        return np.concatenate([[0.0], np.cumsum(self.segment_lengths)])

    @property
    def length(self) -> float:
        return float(self.cumulative[-1])

    def reversed(self) -> "PolyCurve":
        return PolyCurve(self.vertices[::-1], self.tol)

    def translated(self, shift) -> "PolyCurve":
        return PolyCurve(self.vertices + np.asarray(shift, dtype=float), self.tol)

    def scaled(self, factor: float) -> "PolyCurve":
        return PolyCurve(self.vertices * factor, self.tol)

    def allclose(self, other: "PolyCurve", tol: float | None = None) -> bool:
        tol = self.tol if tol is None else tol
        if self.vertices.shape != other.vertices.shape:
            return False
        return bool(np.all(np.linalg.norm(self.vertices - other.vertices, axis=1) <= tol))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolyCurve):
            return NotImplemented
        return self.allclose(other)

    __hash__ = None

    def __repr__(self) -> str:
        pts = ", ".join("(" + ", ".join(f"{x:.6g}" for x in p) + ")" for p in self.vertices)
        return f"PolyCurve([{pts}])"

    def to_list(self) -> list[list[float]]:
        return self.vertices.tolist()

    @cached_property
    def _self_traversal(self) -> tuple[list[int], "Network"]:
        net = Network(self.tol)
        net.add_curve(self)
        return net.vertex_path(self), net


def stopping_time(c: PolyCurve) -> float:
    """Total length of the polyline; zero for a constant curve."""
    return c.length


def evaluate(c: PolyCurve, t: float) -> np.ndarray:
    """Position at arc-length time ``t``; the end point for every ``t >= T(c)``."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    cum = c.cumulative
    if t >= cum[-1]:
        return c.end.copy()
    k = int(np.searchsorted(cum, t, side="right")) - 1
    seg = c.segment_lengths[k]
    lam = (t - cum[k]) / seg
    return c.vertices[k] + lam * (c.vertices[k + 1] - c.vertices[k])


def restrict(c: PolyCurve, t1: float, t2: float) -> PolyCurve:
    """Image of ``c`` on ``[t1, t2]`` as a curve starting at time 0.

    Times past the stopping time are clamped to it.  The frozen parts outside
    the window are dropped rather than kept as constant stretches; energies
    and multiplicities do not see them.
    """
    if t1 < 0:
        raise ValueError("time must be nonnegative")
    if t1 > t2:
        raise ValueError(f"empty window: t1={t1} > t2={t2}")
    T = c.length
    t1, t2 = min(t1, T), min(t2, T)
    cum = c.cumulative
    inner = c.vertices[(cum > t1) & (cum < t2)]
    pts = [evaluate(c, t1)]
    pts.extend(inner)
    pts.append(evaluate(c, t2))
    return PolyCurve(np.array(pts), c.tol)


def is_simple(c: PolyCurve) -> bool:
    """True iff the curve never comes back to a point it has left."""
    if c.is_constant:
        return True
    path, _ = c._self_traversal
    return len(set(path)) == len(path)


@dataclass(frozen=True)
class DoublePoints:
    """Points visited at two distinct times.

    ``segments`` holds the one-dimensional part as arrangement edges and
    ``length`` its total length; ``points`` holds vertices of the arrangement
    visited more than once.
    """

    points: np.ndarray
    segments: tuple
    length: float

    @property
    def is_empty(self) -> bool:
        return self.points.shape[0] == 0 and not self.segments


def double_points(c: PolyCurve) -> DoublePoints:
    d = c.dim
    if c.is_constant:
        return DoublePoints(np.zeros((0, d)), (), 0.0)
    path, net = c._self_traversal
    counts: dict[int, int] = {}
    for v in path:
        counts[v] = counts.get(v, 0) + 1
    repeated_vertices = sorted(v for v, k in counts.items() if k > 1)
    edge_counts: dict[tuple[int, int], int] = {}
    for a, b in zip(path[:-1], path[1:]):
        e = (min(a, b), max(a, b))
        edge_counts[e] = edge_counts.get(e, 0) + 1
    repeated_edges = sorted(e for e, k in edge_counts.items() if k > 1)
    P = net.vertices
    segments = tuple((P[a].copy(), P[b].copy()) for a, b in repeated_edges)
    length = float(sum(np.linalg.norm(P[a] - P[b]) for a, b in repeated_edges))
    pts = P[repeated_vertices] if repeated_vertices else np.zeros((0, d))
    return DoublePoints(pts, segments, length)


class Network:
    """Arrangement of all registered segments.

    Registration snaps vertices into a shared pool (tolerance ``tol``) and
    marks the arrangement stale; it is recomputed lazily, splitting every
    segment at crossings and at pool vertices lying on it.  Vertex ids are
    stable across recomputations, so edge keys ``(i, j)`` with ``i < j`` stay
    meaningful as long as no later segment cuts them.

    Parameters
    ----------
    tol : float
        Snapping tolerance.
    radius : float, optional
        When given, curves leaving the closed ball of this radius are rejected.
    """

    def __init__(self, tol: float = DEFAULT_TOL, radius: float | None = None):
        self.tol = tol
        self.radius = radius
        self.pool = PointIndex(tol)
        self._segments: dict[tuple[int, int], None] = {}
        self._chains: dict[tuple[int, int], list[int]] = {}
        self._edges: list[tuple[int, int]] = []
        self._edge_ids: dict[tuple[int, int], int] = {}
        self._lengths = np.zeros(0)
        self._dirty = False

    # registration -----------------------------------------------------------

    def _check_inside(self, pts: np.ndarray) -> None:
        if self.radius is None:
            return
        norms = np.linalg.norm(pts, axis=1)
        if np.any(norms > self.radius + self.tol):
            raise ValueError(f"curve leaves the ball of radius {self.radius}")

    def add_point(self, p) -> int:
        p = np.asarray(p, dtype=float)
        self._check_inside(p[None, :])
        n = len(self.pool)
        i = self.pool.id(p)
        if len(self.pool) != n:
            self._dirty = True
        return i

    def add_curve(self, c: PolyCurve) -> list[int]:
        self._check_inside(c.vertices)
        n = len(self.pool)
        ids = self.pool.ids(c.vertices)
        if len(self.pool) != n:
            self._dirty = True
        for a, b in zip(ids[:-1], ids[1:]):
            if a == b:
                continue
            key = (min(a, b), max(a, b))
            if key not in self._segments:
                self._segments[key] = None
                self._dirty = True
        return ids

    def add_curves(self, curves) -> None:
        for c in curves:
            self.add_curve(c)

    def register(self, c: PolyCurve) -> list[tuple[int, int]]:
        """Add ``c`` and return its directed edge sequence."""
        self.add_curve(c)
        return self.edge_path(c)

    # arrangement ------------------------------------------------------------

    def _add_crossings(self, keys: list[tuple[int, int]]) -> None:
        P = self.pool.array
        tol = self.tol
        A = P[[k[0] for k in keys]]
        B = P[[k[1] for k in keys]]
        U = B - A
        lens = np.linalg.norm(U, axis=1)
        lo = np.minimum(A, B) - tol
        hi = np.maximum(A, B) + tol
        found = []
        for i in range(len(keys) - 1):
            j = np.arange(i + 1, len(keys))
            box = np.all((lo[j] <= hi[i]) & (hi[j] >= lo[i]), axis=1)
            j = j[box]
            if j.size == 0:
                continue
            u = U[i]
            v = U[j]
            w = A[i] - A[j]
            a = u @ u
            b = v @ u
            cc = np.einsum("ij,ij->i", v, v)
            dd = w @ u
            ee = np.einsum("ij,ij->i", v, w)
            den = a * cc - b * b
            ok = den > 1e-14 * a * cc
            if not np.any(ok):
                continue
            j, b, cc, dd, ee, den, v = j[ok], b[ok], cc[ok], dd[ok], ee[ok], den[ok], v[ok]
            s = (b * ee - cc * dd) / den
            t = (a * ee - b * dd) / den
            es = tol / lens[i]
            et = tol / lens[j]
            inside = (s > es) & (s < 1 - es) & (t > et) & (t < 1 - et)
            if not np.any(inside):
                continue
            p = A[i] + s[inside, None] * u
            q = A[j[inside]] + t[inside, None] * v[inside]
            close = np.linalg.norm(p - q, axis=1) <= tol
            for x in 0.5 * (p[close] + q[close]):
                found.append(x)
        for x in found:
            self.pool.id(x)

    def _rebuild(self) -> None:
        keys = sorted(self._segments)
        if keys:
            self._add_crossings(keys)
        P = self.pool.array
        tol = self.tol
        chains: dict[tuple[int, int], list[int]] = {}
        edges: set[tuple[int, int]] = set()
        for a, b in keys:
            pa, pb = P[a], P[b]
            u = pb - pa
            L2 = float(u @ u)
            s = (P - pa) @ u / L2
            mask = (s > 0) & (s < 1)
            mask[a] = mask[b] = False
            cand = np.nonzero(mask)[0]
            if cand.size:
                dist = np.linalg.norm(P[cand] - (pa + s[cand, None] * u), axis=1)
                cand = cand[dist <= tol]
            order = cand[np.argsort(s[cand], kind="stable")]
            chain = [a]
            for v in order.tolist():
                if v != chain[-1]:
                    chain.append(v)
            if chain[-1] != b:
                chain.append(b)
            chains[(a, b)] = chain
            for x, y in zip(chain[:-1], chain[1:]):
                edges.add((min(x, y), max(x, y)))
        self._chains = chains
        self._edges = sorted(edges)
        self._edge_ids = {e: k for k, e in enumerate(self._edges)}
        if self._edges:
            E = np.array(self._edges)
            self._lengths = np.linalg.norm(P[E[:, 0]] - P[E[:, 1]], axis=1)
        else:
            self._lengths = np.zeros(0)
        self._dirty = False

    def _fresh(self) -> None:
        if self._dirty:
            self._rebuild()

    # queries ----------------------------------------------------------------

    @property
    def vertices(self) -> np.ndarray:
        self._fresh()
        return self.pool.array

    @property
    def edges(self) -> list[tuple[int, int]]:
        self._fresh()
        return self._edges

    @property
    def edge_lengths(self) -> np.ndarray:
        self._fresh()
        return self._lengths

    def edge_id(self, u: int, v: int) -> int:
        self._fresh()
        return self._edge_ids[(min(u, v), max(u, v))]

    def total_length(self) -> float:
        return float(self.edge_lengths.sum())

    def traversal(self, c: PolyCurve) -> tuple[list[int], list[float]]:
        """Vertex ids visited by ``c`` in order, with the arc-length time of each."""
        self._fresh()
        ids = []
        for p in c.vertices:
            i = self.pool.find(p)
            if i is None:
                raise ValueError("curve is not registered on this network")
            ids.append(i)
        P = self.pool.array
        cum = c.cumulative
        seq, times = [ids[0]], [0.0]
        for k, (a, b) in enumerate(zip(ids[:-1], ids[1:])):
            if a == b:
                continue
            key = (min(a, b), max(a, b))
            if key not in self._chains:
                raise ValueError("curve is not registered on this network")
            chain = self._chains[key]
            if a > b:
                chain = chain[::-1]
            for w in chain[1:-1]:
                seq.append(w)
                times.append(float(cum[k] + np.linalg.norm(P[w] - c.vertices[k])))
            seq.append(chain[-1])
            times.append(float(cum[k + 1]))
        return seq, times

    def vertex_path(self, c: PolyCurve) -> list[int]:
        return self.traversal(c)[0]

    def edge_path(self, c: PolyCurve) -> list[tuple[int, int]]:
        seq = self.vertex_path(c)
        return list(zip(seq[:-1], seq[1:]))

    def locate(self, x) -> tuple[str, int] | None:
        """``("vertex", id)``, ``("edge", edge_index)`` or ``None``."""
        self._fresh()
        x = np.asarray(x, dtype=float)
        i = self.pool.find(x)
        if i is not None:
            return ("vertex", i)
        P = self.pool.array
        for k, (a, b) in enumerate(self._edges):
            u = P[b] - P[a]
            s = float((x - P[a]) @ u) / float(u @ u)
            if 0 < s < 1 and np.linalg.norm(P[a] + s * u - x) <= self.tol:
                return ("edge", k)
        return None

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist(), "edges": [list(e) for e in self.edges]}


def register(n: Network, c: PolyCurve) -> list[tuple[int, int]]:
    """Register ``c`` on ``n`` and return its directed edge sequence."""
    return n.register(c)
