"""Competitor plans for a perturbed coupling built from a plan for a nearby one.

Given couplings ``pi_n`` and ``pi_m`` close to a limit coupling and a plan
``p_m`` with coupling ``pi_m``, the construction returns a plan with coupling
exactly ``pi_n`` whose energy exceeds ``E(p_m)`` only by the energies of two
short connection plans:

1. cover the limit marginals by small balls and cut them into disjoint cells;
2. split both sides into blocks by the cells of the start and end points,
   rescaling each block to the smaller of the two masses;
3. inside each start cell, connect the n-block starts to the m-block starts;
4. inside each end cell, send the m-block ends to the ball center and from
   there to the n-block ends;
5. glue the pieces block by block so the coupling comes out as ``pi_n``;
6. route everything left over through the domain center.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .concat import conc_plans, triple_concat_parts
from .connectors import (
    BallCover,
    ConnectorReport,
    ball_cover,
    impl_constant,
    irrigate_from_point,
    mailing_connector,
    require_supercritical,
)
from .plan import (
    AtomicMeasure,
    Coupling,
    TrafficPlan,
    alpha_energy,
    coupling_of,
    decompose_by_products,
    dirac,
    product_coupling,
)

#: masses below this fraction of the total are treated as rounding noise
NOISE = 1e-14


@dataclass
class CellDecomposition:
    minus: BallCover
    plus: BallCover
    n_minus: int
    n_plus: int
    limit_minus: AtomicMeasure
    limit_plus: AtomicMeasure
    cell_mass_minus: np.ndarray
    cell_mass_plus: np.ndarray
    eps_bar: float
    alpha: float

    def cover(self, side: str) -> BallCover:
        return self.minus if side == "minus" else self.plus

    def count(self, side: str) -> int:
        return self.n_minus if side == "minus" else self.n_plus

    def cell_of(self, points: np.ndarray, side: str) -> np.ndarray:
        """Index of the retained cell holding each point, ``-1`` outside all of them."""
        cover = self.cover(side)
        pts = np.atleast_2d(points)
        out = np.full(pts.shape[0], -1, dtype=int)
        for i in range(self.count(side)):
            inside = np.linalg.norm(pts - cover.centers[i], axis=1) < cover.radii[i]
            out[(out < 0) & inside] = i
        return out

    def center(self, j: int, side: str = "plus") -> np.ndarray:
        return self.cover(side).centers[j]


def _retained_count(cover: BallCover, mu: AtomicMeasure, eps_bar: float, cells) -> tuple[int, np.ndarray]:
    if eps_bar >= 1:
        return 0, np.zeros(0)
    target = mu.total * (1 - eps_bar)
    for N in range(1, len(cover) + 1):
        idx = cells(mu.points, N)
        covered = mu.masses[idx >= 0].sum()
        if covered > target:
            masses = np.array([mu.masses[idx == i].sum() for i in range(N)])
            return N, masses
    idx = cells(mu.points, len(cover))
    return len(cover), np.array([mu.masses[idx == i].sum() for i in range(len(cover))])


def _cells_fn(cover: BallCover):
    def fn(points, N):
        out = np.full(points.shape[0], -1, dtype=int)
        for i in range(N):
            inside = np.linalg.norm(points - cover.centers[i], axis=1) < cover.radii[i]
            out[(out < 0) & inside] = i
        return out

    return fn


def build_cells(mu_minus: AtomicMeasure, mu_plus: AtomicMeasure, alpha: float, eps_bar: float) -> CellDecomposition:
    """Ball covers of both limit marginals with certificate below ``eps_bar**alpha``."""
    require_supercritical(alpha, mu_minus.dim)
    covers = []
    counts = []
    cell_masses = []
    for mu in (mu_minus, mu_plus):
        cover = ball_cover(mu, alpha, eps_bar**alpha)
        N, masses = _retained_count(cover, mu, eps_bar, _cells_fn(cover))
        keep = masses > 0
        if not np.all(keep):
            raise AssertionError("a retained cell carries no limit mass")
        covers.append(cover)
        counts.append(N)
        cell_masses.append(masses)
    return CellDecomposition(
        covers[0], covers[1], counts[0], counts[1], mu_minus, mu_plus, cell_masses[0], cell_masses[1], eps_bar, alpha
    )


@dataclass
class N0Report:
    ok: bool
    violations: list = field(default_factory=list)

    @property
    def witness(self):
        return self.violations[0] if self.violations else None

    def __bool__(self) -> bool:
        return self.ok


def _block_masses(obj, cells: CellDecomposition) -> np.ndarray:
    i = cells.cell_of(obj.starts, "minus")
    j = cells.cell_of(obj.ends, "plus")
    M = np.zeros((cells.n_minus, cells.n_plus))
    inside = (i >= 0) & (j >= 0)
    np.add.at(M, (i[inside], j[inside]), obj.masses[inside])
    return M


def verify_n0_conditions(pi_n: Coupling, pi_m: Coupling, cells: CellDecomposition, eps_bar: float) -> N0Report:
    """Check that both couplings are close enough to the limit for the cell bounds."""
    slack = 1e-12
    violations = []
    for name, pi in (("n", pi_n), ("m", pi_m)):
        for side, pts, limit in (
            ("minus", pi.sources, cells.cell_mass_minus),
            ("plus", pi.targets, cells.cell_mass_plus),
        ):
            idx = cells.cell_of(pts, side)
            for i in range(cells.count(side)):
                got = float(pi.masses[idx == i].sum())
                if got > 2 * limit[i] + slack:
                    violations.append(
                        {"condition": "cell-mass", "coupling": name, "side": side, "cell": i, "value": got, "bound": 2 * float(limit[i])}
                    )
            outside = float(pi.masses[idx < 0].sum())
            if outside > 2 * eps_bar + slack:
                violations.append(
                    {"condition": "outside-mass", "coupling": name, "side": side, "value": outside, "bound": 2 * eps_bar}
                )
    if cells.n_minus and cells.n_plus:
        bound = eps_bar / (cells.n_minus * cells.n_plus)
        diff = np.abs(_block_masses(pi_n, cells) - _block_masses(pi_m, cells))
        for i, j in zip(*np.nonzero(diff > bound + slack)):
            violations.append(
                {"condition": "block-mass", "cell": (int(i), int(j)), "value": float(diff[i, j]), "bound": bound}
            )
    return N0Report(not violations, violations)


@dataclass
class SplitPlan:
    """Cell blocks of a plan or coupling, their rescalings and the two residuals."""

    source: object
    blocks: dict
    factors: dict
    rescaled: dict
    res_rescale: object
    res_outside: object

    @property
    def residual(self):
        return (self.res_rescale + self.res_outside).prune(NOISE * max(1.0, self.source.total))

    def reassembled(self):
        out = self.res_rescale + self.res_outside
        for key in sorted(self.rescaled):
            out = out + self.rescaled[key]
        return out


def _empty_like(obj):
    if isinstance(obj, Coupling):
        return Coupling.empty(obj.dim, obj.tol)
    return TrafficPlan([], obj.tol, dim=obj.dim)


def split_plan(p, cells: CellDecomposition, counterpart) -> SplitPlan:
    """Blocks of ``p`` by start and end cell, rescaled against ``counterpart``.

    ``p`` and ``counterpart`` may each be a :class:`TrafficPlan` or a
    :class:`Coupling`.  A block's factor is ``min(1, counterpart mass / mass)``;
    a missing counterpart block gives factor 0.
    """
    i = cells.cell_of(p.starts, "minus")
    j = cells.cell_of(p.ends, "plus")
    other = _block_masses(counterpart, cells)
    blocks, factors, rescaled = {}, {}, {}
    res_rescale = _empty_like(p)
    for a in range(cells.n_minus):
        for b in range(cells.n_plus):
            mask = (i == a) & (j == b)
            if not np.any(mask):
                continue
            block = p.subset(mask)
            mass = block.total
            factor = min(1.0, other[a, b] / mass)
            blocks[(a, b)] = block
            factors[(a, b)] = factor
            if factor > 0:
                rescaled[(a, b)] = block.scaled(factor)
            if factor < 1:
                res_rescale = res_rescale + block.scaled(1 - factor)
    res_outside = p.subset((i < 0) | (j < 0))
    return SplitPlan(p, blocks, factors, rescaled, res_rescale, res_outside)


@dataclass
class Connections:
    """Connection plans per cell and their per-block pieces."""

    initial: dict  # i -> ConnectorReport, starts of n-blocks to starts of m-blocks
    to_center: dict  # j -> ConnectorReport, ends of m-blocks into the center of ball j
    from_center: dict  # j -> ConnectorReport, center of ball j to ends of n-blocks
    initial_pieces: dict  # (i, j) -> TrafficPlan
    to_center_pieces: dict
    from_center_pieces: dict

    def energies(self) -> dict:
        return {
            "initial": sum(r.energy for r in self.initial.values()),
            "to_center": sum(r.energy for r in self.to_center.values()),
            "from_center": sum(r.energy for r in self.from_center.values()),
        }


def _measures(obj, which: str) -> AtomicMeasure:
    pts = obj.starts if which == "start" else obj.ends
    return AtomicMeasure(pts, obj.masses, obj.tol, dim=obj.dim)


def _matched_keys(split_n: SplitPlan, split_m: SplitPlan) -> list:
    keys = sorted(set(split_n.rescaled) | set(split_m.rescaled))
    out = []
    for key in keys:
        a = split_n.rescaled.get(key)
        b = split_m.rescaled.get(key)
        ma = a.total if a is not None else 0.0
        mb = b.total if b is not None else 0.0
        if abs(ma - mb) > 1e-9 * max(1.0, ma, mb):
            raise ValueError(f"rescaled blocks {key} carry different masses {ma!r} and {mb!r}")
        if a is not None and b is not None and ma > 0:
            out.append(key)
    return out


def build_connections(split_n: SplitPlan, split_m: SplitPlan, cells: CellDecomposition, alpha: float) -> Connections:
    keys = _matched_keys(split_n, split_m)
    initial, to_center, from_center = {}, {}, {}
    ini_pieces, to_pieces, from_pieces = {}, {}, {}

    for i in sorted({k[0] for k in keys}):
        row = [k for k in keys if k[0] == i]
        parts = [(_measures(split_n.rescaled[k], "start"), _measures(split_m.rescaled[k], "start")) for k in row]
        pi = product_coupling(*parts[0])
        for a, b in parts[1:]:
            pi = pi + product_coupling(a, b)
        rep = mailing_connector(pi, alpha)
        initial[i] = rep
        for k, piece in zip(row, decompose_by_products(rep.plan, parts)):
            ini_pieces[k] = piece

    for j in sorted({k[1] for k in keys}):
        col = [k for k in keys if k[1] == j]
        x = cells.center(j, "plus")
        m_ends = [_measures(split_m.rescaled[k], "end") for k in col]
        n_ends = [_measures(split_n.rescaled[k], "end") for k in col]
        total_m = m_ends[0]
        for mu in m_ends[1:]:
            total_m = total_m + mu
        total_n = n_ends[0]
        for mu in n_ends[1:]:
            total_n = total_n + mu
        rep_in = irrigate_from_point(total_m, x, alpha)
        rep_in.plan = rep_in.plan.reversed()
        rep_out = irrigate_from_point(total_n, x, alpha)
        to_center[j], from_center[j] = rep_in, rep_out
        parts_in = [(mu, dirac(x, mu.total, mu.tol)) for mu in m_ends]
        parts_out = [(dirac(x, mu.total, mu.tol), mu) for mu in n_ends]
        for k, piece in zip(col, decompose_by_products(rep_in.plan, parts_in)):
            to_pieces[k] = piece
        for k, piece in zip(col, decompose_by_products(rep_out.plan, parts_out)):
            from_pieces[k] = piece
    return Connections(initial, to_center, from_center, ini_pieces, to_pieces, from_pieces)


@dataclass
class ResidualConnections:
    """Leftover mass routed through the domain center; ``None`` when nothing is left."""

    n_residual: Coupling | None
    m_residual: TrafficPlan | None
    initial: ConnectorReport | None = None
    to_center: ConnectorReport | None = None
    from_center: ConnectorReport | None = None
    center: np.ndarray | None = None


def build_residual_connections(split_n: SplitPlan, split_m: SplitPlan, alpha: float, center=None) -> ResidualConnections:
    res_n = split_n.residual
    res_m = split_m.residual
    d = res_n.dim or res_m.dim
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    if res_n.total == 0 and res_m.total == 0:
        return ResidualConnections(None, None, center=center)
    if abs(res_n.total - res_m.total) > 1e-9 * max(1.0, split_n.source.total):
        raise ValueError(f"residual masses differ: {res_n.total!r} vs {res_m.total!r}")
    if res_n.total == 0 or res_m.total == 0:
        raise ValueError("one residual is empty while the other is not")
    n_starts, n_ends = _measures(res_n, "start"), _measures(res_n, "end")
    m_starts, m_ends = _measures(res_m, "start"), _measures(res_m, "end")
    initial = mailing_connector(product_coupling(n_starts, m_starts), alpha)
    to_center = irrigate_from_point(m_ends, center, alpha)
    to_center.plan = to_center.plan.reversed()
    from_center = irrigate_from_point(n_ends, center, alpha)
    return ResidualConnections(res_n, res_m, initial, to_center, from_center, center)


@dataclass
class CompetitorBundle:
    P1: TrafficPlan
    P2: TrafficPlan
    competitor: TrafficPlan
    energy_P1: float
    energy_P2: float
    energy_competitor: float
    energy_pm: float
    eps: float
    coupling_check: bool
    coupling_difference: str | None
    stage_energies: dict = field(default_factory=dict)
    n0: N0Report | None = None
    residual_mass: float = 0.0

    @property
    def ledger_ok(self) -> bool:
        return self.energy_competitor <= self.energy_P1 + self.energy_pm + self.energy_P2 + 1e-9

    @property
    def certificates_ok(self) -> bool:
        return self.energy_P1 <= self.eps and self.energy_P2 <= self.eps

    @property
    def bound(self) -> float:
        return self.energy_P1 + self.energy_pm + self.energy_P2


def assemble_competitor(
    pi_n: Coupling,
    p_m: TrafficPlan,
    splits: tuple,
    connections: Connections,
    residual: ResidualConnections,
    alpha: float,
    eps_bar: float,
    diam: float,
) -> CompetitorBundle:
    """Glue blocks, connections and residual routes into a plan with coupling ``pi_n``."""
    split_n, split_m = splits
    d = pi_n.dim
    tol = pi_n.tol
    pieces, initial_parts, middle_parts = [], [], []
    for key in sorted(connections.initial_pieces):
        p0 = split_n.rescaled[key].coupling()
        first, _ = conc_plans(connections.initial_pieces[key], split_m.rescaled[key])
        parts = triple_concat_parts(p0, first, connections.to_center_pieces[key], connections.from_center_pieces[key])
        pieces.append(parts.plan)
        middle_parts.append(parts.middle)
        initial_parts.append(connections.initial_pieces[key])

    stage = {"initial_blocks": 0.0, "final_blocks": 0.0, "residual_initial": 0.0, "residual_final": 0.0}
    stage.update({f"conn_{k}": v for k, v in connections.energies().items()})
    if residual.initial is not None:
        first, _ = conc_plans(residual.initial.plan, residual.m_residual)
        parts = triple_concat_parts(residual.n_residual, first, residual.to_center.plan, residual.from_center.plan)
        pieces.append(parts.plan)
        middle_parts.append(parts.middle)
        initial_parts.append(residual.initial.plan)
        stage["residual_initial"] = residual.initial.energy
        stage["residual_final"] = alpha_energy(parts.middle, alpha)

    def total(plans):
        out = TrafficPlan([], tol, dim=d)
        for p in plans:
            out = out + p
        return out

    competitor = total(pieces)
    P1 = total(initial_parts)
    P2 = total(middle_parts)
    diff = coupling_of(competitor).first_difference(pi_n)
    e1, e2 = alpha_energy(P1, alpha), alpha_energy(P2, alpha)
    stage["initial_blocks"] = e1 - stage["residual_initial"]
    stage["final_blocks"] = e2 - stage["residual_final"]
    eps = 14 * impl_constant(alpha, d) * (1 + diam) * eps_bar**alpha
    res_mass = residual.n_residual.total if residual.n_residual is not None else 0.0
    return CompetitorBundle(
        P1,
        P2,
        competitor,
        e1,
        e2,
        alpha_energy(competitor, alpha),
        alpha_energy(p_m, alpha),
        eps,
        diff is None,
        diff,
        stage,
        residual_mass=res_mass,
    )


def build_competitor(
    pi_n: Coupling,
    pi_m: Coupling,
    p_m: TrafficPlan,
    alpha: float,
    eps_bar: float,
    limit: Coupling | None = None,
    radius: float = 1.0,
) -> CompetitorBundle:
    """Run the whole construction; cells come from ``limit`` (default ``pi_m``)."""
    if abs(pi_n.total - pi_m.total) > 1e-12 * max(1.0, pi_n.total):
        raise ValueError("couplings must carry the same total mass")
    diff = coupling_of(p_m).first_difference(pi_m)
    if diff is not None:
        raise ValueError(f"p_m does not have coupling pi_m: {diff}")
    limit = pi_m if limit is None else limit
    mu_minus, mu_plus = limit.marginals()
    cells = build_cells(mu_minus, mu_plus, alpha, eps_bar)
    n0 = verify_n0_conditions(pi_n, pi_m, cells, eps_bar)
    split_n = split_plan(pi_n, cells, p_m)
    split_m = split_plan(p_m, cells, pi_n)
    connections = build_connections(split_n, split_m, cells, alpha)
    residual = build_residual_connections(split_n, split_m, alpha)
    bundle = assemble_competitor(pi_n, p_m, (split_n, split_m), connections, residual, alpha, eps_bar, 2 * radius)
    bundle.n0 = n0
    return bundle
