"""Desk-scale optimal mailing on a candidate network.

A :class:`CandidateGraph` holds the terminals of a coupling plus a lattice of
Steiner candidates.  Its edges are called *hops*; a hop that passes over
other vertices is subdivided into *elementary* edges, so flows add up
correctly where straight hops overlap.  The cost of an assignment of one
path per atom is the alpha-mass ``sum_e len(e) * flow(e)**alpha`` over
elementary edges, which equals the geometric alpha-mass of the induced plan.

* :func:`solve_exact` minimizes that cost over every combination of simple
  paths with at most ``max_path_len`` hops (branch and bound with safe
  pruning, lexicographic tie-break).
* :func:`solve_local` reroutes one atom at a time with Dijkstra until no
  single move helps.
* :func:`refine_topology` moves branch points off the lattice with the
  combinatorics fixed.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from ._points import DEFAULT_TOL, PointIndex, lexsort_rows
from .geometry import PolyCurve
from .plan import Atom, Coupling, TrafficPlan, alpha_energy, alpha_mass, check_single_path, multiplicity

MAX_ASSIGNMENTS = 10**7
MAX_ATOMS = 5


class BudgetExceeded(RuntimeError):
    """The assignment space is too large for an exhaustive search."""


@dataclass
class CandidateGraph:
    vertices: np.ndarray
    n_terminals: int
    hops: np.ndarray
    hop_lengths: np.ndarray
    tol: float = DEFAULT_TOL
    pitch: float | None = None
    complete: bool = True
    _sub: dict = field(default_factory=dict, repr=False)
    _neighbours: list | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.vertices.shape[0]

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def terminals(self) -> np.ndarray:
        return self.vertices[: self.n_terminals]

    def vertex_id(self, x) -> int:
        d = np.linalg.norm(self.vertices - np.asarray(x, dtype=float), axis=1)
        i = int(np.argmin(d))
        if d[i] > self.tol:
            raise KeyError(f"{np.asarray(x).tolist()} is not a vertex of the candidate graph")
        return i

    def neighbours(self, u: int) -> np.ndarray:
        if self._neighbours is None:
            V = len(self)
            if self.complete:
                self._neighbours = [None] * V
            else:
                nb = [[] for _ in range(V)]
                for a, b in self.hops:
                    nb[a].append(b)
                    nb[b].append(a)
                self._neighbours = [np.array(sorted(x), dtype=int) for x in nb]
        if self.complete:
            return np.delete(np.arange(len(self)), u)
        return self._neighbours[u]

    def distance(self, u: int, vs) -> np.ndarray:
        return np.linalg.norm(self.vertices[vs] - self.vertices[u], axis=-1)

    def subdivide(self, u: int, v: int) -> tuple:
        """Vertex ids met along the straight hop from ``u`` to ``v``, both ends included."""
        key = (min(u, v), max(u, v))
        seq = self._sub.get(key)
        if seq is None:
            p, q = self.vertices[key[0]], self.vertices[key[1]]
            w = q - p
            ww = float(w @ w)
            rel = self.vertices - p
            t = rel @ w / ww
            off = np.linalg.norm(rel - t[:, None] * w, axis=1)
            scale = math.sqrt(ww)
            inside = (off <= self.tol) & (t * scale > self.tol) & ((1 - t) * scale > self.tol)
            mid = np.flatnonzero(inside)
            mid = mid[np.argsort(t[mid], kind="stable")]
            seq = (key[0], *mid.tolist(), key[1])
            self._sub[key] = seq
        return seq if u < v else seq[::-1]

    def expand(self, hop_path) -> tuple:
        """Elementary vertex sequence of a hop path."""
        out = [hop_path[0]]
        for a, b in zip(hop_path[:-1], hop_path[1:]):
            out.extend(self.subdivide(a, b)[1:])
        return tuple(out)

    def curve(self, seq) -> PolyCurve:
        return PolyCurve(self.vertices[list(seq)], self.tol)

    def hop_matrix(self) -> np.ndarray:
        """Dense symmetric matrix of hop lengths, 0 where there is no hop."""
        V = len(self)
        W = np.zeros((V, V))
        W[self.hops[:, 0], self.hops[:, 1]] = self.hop_lengths
        W[self.hops[:, 1], self.hops[:, 0]] = self.hop_lengths
        return W


def lattice_points(pitch: float, radius: float | None, box=None, dim: int = 2, center=None) -> np.ndarray:
    """Multiples of ``pitch`` inside the ball of ``radius`` (about ``center``) and the box."""
    if radius is None and box is None:
        raise ValueError("a Steiner lattice needs a radius or a box")
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    lo = np.full(dim, -np.inf)
    hi = np.full(dim, np.inf)
    if radius is not None:
        lo, hi = center - radius, center + radius
    if box is not None:
        blo, bhi = (np.asarray(b, dtype=float) for b in box)
        lo, hi = np.maximum(lo, blo), np.minimum(hi, bhi)
    eps = 1e-9 * pitch
    axes = [pitch * np.arange(math.ceil((lo[k] - eps) / pitch), math.floor((hi[k] + eps) / pitch) + 1) for k in range(dim)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    if radius is not None:
        pts = pts[np.linalg.norm(pts - center, axis=1) <= radius * (1 + 1e-12)]
    return pts


def candidate_graph(
    pi: Coupling,
    pitch: float | None = None,
    radius: float | None = None,
    box=None,
    k: int | None = None,
    tol: float | None = None,
    center=None,
) -> CandidateGraph:
    """Terminals of ``pi`` plus the Steiner lattice, joined completely or by ``k`` nearest neighbours.

    Terminals come first, sorted lexicographically; lattice points closer
    than ``tol`` to a terminal are dropped.
    """
    tol = pi.tol if tol is None else tol
    idx = PointIndex(tol)
    idx.ids(np.vstack([pi.sources, pi.targets]))
    term = idx.array
    term = term[lexsort_rows(term)]
    pts = [term]
    if pitch is not None:
        grid = lattice_points(pitch, radius, box, pi.dim, center)
        if grid.size:
            near = cKDTree(term).query(grid, distance_upper_bound=tol)[0]
            pts.append(grid[~np.isfinite(near)])
    V = np.vstack(pts)
    n = V.shape[0]
    if k is None or k >= n - 1:
        iu, ju = np.triu_indices(n, 1)
        complete = True
    else:
        _, nb = cKDTree(V).query(V, k + 1)
        pairs = {(min(i, int(j)), max(i, int(j))) for i in range(n) for j in nb[i, 1:]}
        arr = np.array(sorted(pairs), dtype=int)
        iu, ju = arr[:, 0], arr[:, 1]
        complete = False
    hops = np.stack([iu, ju], axis=1)
    lengths = np.linalg.norm(V[ju] - V[iu], axis=1)
    g = CandidateGraph(V, term.shape[0], hops, lengths, tol, pitch, complete)
    if n > 1:
        A = sparse.coo_matrix((np.ones(len(iu)), (iu, ju)), shape=(n, n))
        ncomp, _ = connected_components(A, directed=False)
        if ncomp > 1:
            raise ValueError(f"candidate graph is not connected ({ncomp} components); raise k")
    return g


@dataclass
class SolveResult:
    plan: TrafficPlan
    energy: float
    certificate: str
    explored: int
    paths: tuple = ()
    path_indices: tuple = ()
    graph_cost: float = 0.0
    single_path: bool = True

    @property
    def exhaustive(self) -> bool:
        return self.certificate == "exhaustive"


class _Flows:
    """Elementary-edge bookkeeping shared by both solvers."""

    def __init__(self, g: CandidateGraph):
        self.g = g
        self.ids: dict[tuple, int] = {}
        self.lengths: list[float] = []

    def edge(self, a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        e = self.ids.get(key)
        if e is None:
            e = len(self.lengths)
            self.ids[key] = e
            self.lengths.append(float(np.linalg.norm(self.g.vertices[a] - self.g.vertices[b])))
        return e

    def edges_of(self, seq) -> np.ndarray:
        return np.array([self.edge(a, b) for a, b in zip(seq[:-1], seq[1:])], dtype=int)

    def length_array(self) -> np.ndarray:
        return np.array(self.lengths)


def _cost(flow: np.ndarray, lengths: np.ndarray, alpha: float) -> float:
    pos = flow > 0
    return float(np.sum(lengths[pos] * flow[pos] ** alpha))


def _check_instance(pi: Coupling, alpha: float) -> None:
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if len(pi) == 0:
        raise ValueError("empty coupling")


def _build_plan(g: CandidateGraph, pi: Coupling, seqs) -> TrafficPlan:
    return TrafficPlan([Atom(g.curve(s), m) for s, m in zip(seqs, pi.masses)], g.tol, dim=pi.dim)


def _enumerate_paths(g: CandidateGraph, s: int, t: int, max_hops: int, max_len: float, limit: int) -> list[tuple]:
    """Simple hop paths from ``s`` to ``t`` with at most ``max_hops`` hops and length ``<= max_len``."""
    V = g.vertices
    to_t = np.linalg.norm(V - V[t], axis=1)
    slack = 1e-12 * max(1.0, max_len if math.isfinite(max_len) else 1.0)
    found: list[tuple] = []

    def rec(path: list[int], length: float):
        u = path[-1]
        nb = g.neighbours(u)
        if nb.size == 0:
            return
        step = g.distance(u, nb)
        total = length + step
        last = len(path) == max_hops
        if last:
            hit = nb == t
            if np.any(hit) and total[hit][0] <= max_len + slack:
                found.append((*path, t))
            return
        ok = total + to_t[nb] <= max_len + slack
        on_path = np.isin(nb, path)
        for v, L in zip(nb[ok & ~on_path].tolist(), total[ok & ~on_path].tolist()):
            if v == t:
                found.append((*path, t))
            else:
                rec(path + [v], L)
            if len(found) > limit:
                raise BudgetExceeded(f"more than {limit} candidate paths for one atom")

    if s == t:
        return [(s,)]
    rec([s], 0.0)
    return found


def _atom_paths(g, s, t, max_hops, max_len, limit, flows: _Flows):
    raw = _enumerate_paths(g, s, t, max_hops, max_len, limit)
    raw.sort(key=lambda p: (len(p), p))
    seen = set()
    hop_paths, seqs, edges = [], [], []
    for p in raw:
        seq = g.expand(p)
        if len(set(seq)) != len(seq) or seq in seen:
            continue
        seen.add(seq)
        hop_paths.append(p)
        seqs.append(seq)
        edges.append(flows.edges_of(seq))
    return hop_paths, seqs, edges


def _hop_count(g: CandidateGraph, seq) -> int:
    """Fewest hops covering an elementary vertex sequence."""
    if g.complete:
        # every maximal straight run joins two graph vertices
        return len(g.curve(tuple(seq)).vertices) - 1
    return len(seq) - 1


def _direct_assignment(g: CandidateGraph, terms, max_hops):
    """Shortest-path assignment if every path fits in its atom's hop budget, else ``None``."""
    W = g.hop_matrix()
    paths = []
    for (s, t), hops in zip(terms, max_hops):
        if s == t:
            paths.append((s,))
            continue
        _, pred = dijkstra(W, directed=False, indices=s, return_predecessors=True)
        p = [t]
        while p[-1] != s:
            p.append(int(pred[p[-1]]))
        p = tuple(p[::-1])
        if len(p) - 1 > hops:
            return None
        paths.append(p)
    return paths


def solve_exact(
    pi: Coupling,
    g: CandidateGraph,
    alpha: float,
    max_path_len: int | Sequence[int] = 2,
    max_assignments: int = MAX_ASSIGNMENTS,
    upper_bound: SolveResult | None = None,
) -> SolveResult:
    """Minimal alpha-mass assignment over all simple paths of at most ``max_path_len`` hops.

    ``max_path_len`` is one budget for every atom or one budget per atom of
    ``pi`` in its canonical order.

    Paths whose cost lower bound already exceeds a feasible assignment are
    never enumerated: since every flow is at most the total mass ``M``,
    any assignment costs at least ``M**(alpha-1) * sum_i m_i * len(path_i)``.
    Ties are broken towards the lexicographically smallest tuple of path
    indices, paths of each atom being sorted by hop count then vertex ids.
    """
    _check_instance(pi, alpha)
    n = len(pi)
    if n > MAX_ATOMS:
        raise BudgetExceeded(f"{n} coupling atoms; exhaustive search is limited to {MAX_ATOMS}")
    terms = [(g.vertex_id(s), g.vertex_id(t)) for s, t in zip(pi.sources, pi.targets)]
    hops = [int(max_path_len)] * n if np.ndim(max_path_len) == 0 else [int(h) for h in max_path_len]
    if len(hops) != n:
        raise ValueError(f"{len(hops)} hop budgets for {n} coupling atoms")
    m = pi.masses
    M = pi.total
    V = g.vertices
    dist = np.array([np.linalg.norm(V[s] - V[t]) for s, t in terms])
    flows = _Flows(g)

    # feasible reference assignments for pruning
    ub = math.inf
    refs = []
    direct = _direct_assignment(g, terms, hops)
    if direct is not None:
        refs.append([g.expand(p) for p in direct])
    if upper_bound is not None:
        seqs = [tuple(p) for p in upper_bound.paths]
        if all(_hop_count(g, p) <= h for p, h in zip(upper_bound.paths, hops)):
            refs.append([g.expand(p) for p in seqs])
    for seqs in refs:
        if all(len(set(q)) == len(q) for q in seqs):
            f = np.zeros(0)
            for q, mi in zip(seqs, m):
                e = flows.edges_of(q)
                L = len(flows.lengths)
                if f.size < L:
                    f = np.concatenate([f, np.zeros(L - f.size)])
                f[e] += mi
            ub = min(ub, _cost(f, flows.length_array()[: f.size], alpha))
    tie = 1e-12 * max(1.0, ub if math.isfinite(ub) else 1.0)

    per_atom = []
    base = float(np.sum(m * dist))
    for i, (s, t) in enumerate(terms):
        if math.isfinite(ub):
            max_len = (ub * M ** (1 - alpha) - (base - m[i] * dist[i])) / m[i] + tie
        else:
            max_len = math.inf
        per_atom.append(_atom_paths(g, s, t, hops[i], max_len, max_assignments, flows))
    counts = [len(p[0]) for p in per_atom]
    if min(counts) == 0:
        raise BudgetExceeded("no admissible path for some atom within max_path_len hops")
    space = math.prod(counts)
    if space > max_assignments:
        raise BudgetExceeded(f"{space} assignments exceed the cap of {max_assignments}")

    lengths = flows.length_array()
    E = lengths.size
    # remaining atoms add at least d_k * (M**a - (M - m_k)**a) each
    rest_lb = dist * (M**alpha - np.maximum(M - m, 0.0) ** alpha)
    tail_lb = np.concatenate([np.cumsum(rest_lb[::-1])[::-1], [0.0]])
    last = per_atom[-1][2]
    rows = np.repeat(np.arange(len(last)), [len(e) for e in last])
    cols = np.concatenate(last) if rows.size else np.zeros(0, dtype=int)
    A_last = sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(len(last), E))
    A_last.sum_duplicates()

    best = {"cost": ub + tie if math.isfinite(ub) else math.inf, "idx": None}
    explored = 0
    flow = np.zeros(E)
    chosen = [0] * n

    def finish(partial: float):
        nonlocal explored
        mi = m[-1]
        inc = lengths * ((flow + mi) ** alpha - np.where(flow > 0, flow, 0.0) ** alpha)
        costs = partial + A_last @ inc
        explored += costs.size
        j = int(np.argmin(costs))
        cmin = float(costs[j])
        cand = np.flatnonzero(costs <= cmin + tie)
        j = int(cand[0])
        if best["idx"] is None:
            take = cmin <= best["cost"]
        else:
            take = cmin < best["cost"] - tie
        if take:
            best["cost"] = cmin
            best["idx"] = (*chosen[:-1], j)

    def rec(i: int, partial: float):
        if i == n - 1:
            finish(partial)
            return
        mi = m[i]
        for j, e in enumerate(per_atom[i][2]):
            f0 = flow[e]
            add = float(np.sum(lengths[e] * ((f0 + mi) ** alpha - np.where(f0 > 0, f0, 0.0) ** alpha)))
            c = partial + add
            if c + tail_lb[i + 1] > best["cost"] + tie:
                continue
            flow[e] += mi
            chosen[i] = j
            rec(i + 1, c)
            flow[e] -= mi
            np.maximum(flow, 0.0, out=flow)

    rec(0, 0.0)
    if best["idx"] is None:
        raise BudgetExceeded("search found no assignment below the reference bound")
    idx = best["idx"]
    seqs = [per_atom[i][1][j] for i, j in enumerate(idx)]
    plan = _build_plan(g, pi, seqs)
    energy = alpha_energy(plan, alpha)
    return SolveResult(
        plan,
        energy,
        "exhaustive",
        explored,
        tuple(seqs),
        tuple(idx),
        float(best["cost"]),
        bool(check_single_path(plan)),
    )


def _line_corrections(g: CandidateGraph, flows: _Flows, flow: np.ndarray, mi: float, alpha: float, W: np.ndarray, base_w: np.ndarray):
    """Exact hop weights for hops lying over elementary edges that carry flow."""
    V = g.vertices
    inv = {e: k for k, e in flows.ids.items()}
    done_lines = set()
    for e in np.flatnonzero(flow > 0).tolist():
        a, b = inv[e]
        p, q = V[a], V[b]
        w = (q - p) / np.linalg.norm(q - p)
        rel = V - p
        t = rel @ w
        off = np.linalg.norm(rel - t[:, None] * w, axis=1)
        on = np.flatnonzero(off <= g.tol)
        on = on[np.argsort(t[on], kind="stable")]
        key = tuple(on.tolist())
        if key in done_lines:
            continue
        done_lines.add(key)
        tt = t[on]
        seg = np.diff(tt)
        fl = np.array([flow[flows.ids[k]] if (k := (min(x, y), max(x, y))) in flows.ids else 0.0 for x, y in zip(on[:-1], on[1:])])
        inc = seg * ((fl + mi) ** alpha - np.where(fl > 0, fl, 0.0) ** alpha)
        pref = np.concatenate([[0.0], np.cumsum(inc)])
        ii, jj = np.triu_indices(on.size, 1)
        ui, vj = on[ii], on[jj]
        mask = base_w[ui, vj] > 0
        vals = pref[jj] - pref[ii]
        W[ui[mask], vj[mask]] = vals[mask]
        W[vj[mask], ui[mask]] = vals[mask]


def _best_single(g: CandidateGraph, flows: _Flows, flow: np.ndarray, s: int, t: int, mi: float, alpha: float, L: np.ndarray):
    W = L * mi**alpha
    _line_corrections(g, flows, flow, mi, alpha, W, L)
    _, pred = dijkstra(W, directed=False, indices=s, return_predecessors=True)
    p = [t]
    while p[-1] != s:
        p.append(int(pred[p[-1]]))
    return tuple(p[::-1])


def solve_local(pi: Coupling, g: CandidateGraph, alpha: float, seed: int = 0, max_rounds: int = 200) -> SolveResult:
    """Shortest paths first, then single-atom rerouting until no move gains more than ``1e-12``.

    ``seed`` fixes the order atoms are visited in each round.
    """
    _check_instance(pi, alpha)
    terms = [(g.vertex_id(s), g.vertex_id(t)) for s, t in zip(pi.sources, pi.targets)]
    m = pi.masses
    n = len(pi)
    L = g.hop_matrix()
    flows = _Flows(g)
    hop_paths = _direct_assignment(g, terms, [len(g)] * len(terms))
    seqs = [g.expand(p) for p in hop_paths]
    edges = [flows.edges_of(q) for q in seqs]

    def flow_without(skip: int | None):
        f = np.zeros(len(flows.lengths))
        for k, e in enumerate(edges):
            if k != skip:
                f[e] += m[k]
        return f

    current = _cost(flow_without(None), flows.length_array(), alpha)
    rng = np.random.default_rng(seed)
    explored = 0
    for _ in range(max_rounds):
        improved = False
        for i in rng.permutation(n).tolist():
            s, t = terms[i]
            if s == t:
                continue
            f = flow_without(i)
            hp = _best_single(g, flows, f, s, t, m[i], alpha, L)
            explored += 1
            seq = g.expand(hp)
            if len(set(seq)) != len(seq) or seq == seqs[i]:
                continue
            e = flows.edges_of(seq)
            f = np.concatenate([f, np.zeros(len(flows.lengths) - f.size)])
            f[e] += m[i]
            cost = _cost(f, flows.length_array(), alpha)
            if cost < current - 1e-12:
                current = cost
                hop_paths[i], seqs[i], edges[i] = hp, seq, e
                improved = True
        if not improved:
            break
    plan = _build_plan(g, pi, seqs)
    energy = alpha_energy(plan, alpha)
    return SolveResult(
        plan,
        energy,
        "local-optimum",
        explored,
        tuple(seqs),
        (),
        current,
        bool(check_single_path(plan)),
    )


@dataclass
class RefineResult:
    plan: TrafficPlan
    energy_before: float
    energy_after: float
    is_tree: bool
    flag: str | None = None
    moved: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.plan, self.flag))


def _fermat_step(x: np.ndarray, nbrs: np.ndarray, w: np.ndarray) -> np.ndarray:
    """One Weiszfeld step for ``min sum w_k |x - nbrs_k|``, snapping to a neighbour when it is optimal."""
    diff = x - nbrs
    d = np.linalg.norm(diff, axis=1)
    close = d <= 1e-15
    if np.any(close):
        k = int(np.flatnonzero(close)[0])
        others = ~close
        pull = np.sum(w[others, None] * (nbrs[others] - x) / d[others, None], axis=0)
        if np.linalg.norm(pull) <= w[k] + 1e-15:
            return x
        # step off the neighbour along the pull direction
        step = pull / np.linalg.norm(pull)
        return x + 1e-9 * step
    inv = w / d
    y = (inv[:, None] * nbrs).sum(axis=0) / inv.sum()
    # test whether some neighbour is the exact minimizer
    for k in np.argsort(d, kind="stable")[:1]:
        others = np.arange(len(w)) != k
        dk = np.linalg.norm(nbrs[others] - nbrs[k], axis=1)
        if np.all(dk > 0):
            pull = np.sum(w[others, None] * (nbrs[others] - nbrs[k]) / dk[:, None], axis=0)
            if np.linalg.norm(pull) <= w[k]:
                return nbrs[k].copy()
    return y


def refine_topology(plan: TrafficPlan, alpha: float, max_iter: int = 2000, tol: float = 1e-13) -> RefineResult:
    """Move non-terminal vertices of degree at least 3 to lower the alpha-mass.

    Edges keep their weights ``mult**alpha``; each branch point in turn is
    sent to the weighted Fermat point of its neighbours.  Support that is
    not a forest is returned unchanged with ``flag="not-a-tree"``.
    """
    before = alpha_mass(plan, alpha)
    if len(plan) == 0:
        return RefineResult(plan, before, before, True)
    fld = multiplicity(plan)
    net = fld.network
    edges = [e for e, mu in zip(net.edges, fld.edge_mult) if mu > 0]
    weights = {e: float(mu) ** alpha for e, mu in zip(net.edges, fld.edge_mult) if mu > 0}
    used = sorted({v for e in edges for v in e})
    nV = len(net.vertices)
    A = sparse.coo_matrix((np.ones(len(edges)), ([a for a, _ in edges], [b for _, b in edges])), shape=(nV, nV))
    ncomp, labels = connected_components(A, directed=False)
    comps = len({labels[v] for v in used})
    if len(edges) != len(used) - comps:
        return RefineResult(plan, before, before, False, "not-a-tree")
    terminals = set()
    for a in plan.atoms:
        seq = net.vertex_path(a.curve)
        terminals.update((seq[0], seq[-1]))
    adj: dict[int, list[int]] = {v: [] for v in used}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    movable = [v for v in used if v not in terminals and len(adj[v]) >= 3]
    X = net.vertices.copy()
    if movable:
        for _ in range(max_iter):
            shift = 0.0
            for v in movable:
                nb = np.array(adj[v])
                w = np.array([weights[(min(v, u), max(v, u))] for u in nb])
                y = _fermat_step(X[v], X[nb], w)
                shift = max(shift, float(np.linalg.norm(y - X[v])))
                X[v] = y
            if shift <= tol:
                break
    atoms = []
    for a in plan.atoms:
        seq = net.vertex_path(a.curve)
        atoms.append(Atom(PolyCurve(X[seq], plan.tol), a.mass))
    new = TrafficPlan(atoms, plan.tol, dim=plan.dim)
    after = alpha_mass(new, alpha)
    moved = {v: X[v].copy() for v in movable}
    if after > before * (1 + 1e-12) + 1e-15 or alpha_energy(new, alpha) > after * (1 + 1e-9) + 1e-12:
        return RefineResult(plan, before, before, True, "no-improvement", moved)
    return RefineResult(new, before, after, True, None, moved)


def branch_points(plan: TrafficPlan) -> np.ndarray:
    """Non-terminal vertices of degree at least 3, plus terminals where flows merge or split."""
    fld = multiplicity(plan)
    net = fld.network
    deg: dict[int, int] = {}
    for (a, b), mu in zip(net.edges, fld.edge_mult):
        if mu > 0:
            deg[a] = deg.get(a, 0) + 1
            deg[b] = deg.get(b, 0) + 1
    pts = [net.vertices[v] for v, k in sorted(deg.items()) if k >= 3]
    if not pts:
        return np.zeros((0, plan.dim))
    return np.array(pts)


def merge_point(plan: TrafficPlan) -> np.ndarray | None:
    """First vertex shared by the first two atoms, in the order the first one visits them."""
    if len(plan) < 2:
        return None
    net = plan.network
    a = net.vertex_path(plan.atoms[0].curve)
    b = set(net.vertex_path(plan.atoms[1].curve))
    for v in a:
        if v in b:
            return net.vertices[v].copy()
    return None
