"""Constructions with explicit energy bounds.

* :func:`irrigate_from_point` sends mass from one point to an atomic measure
  along a tree of nested dyadic cube centers.
* :func:`mailing_connector` realizes any coupling by routing everything
  through one source point with two such trees.
* :func:`ball_cover` covers a measure by balls with a small weighted radius
  sum, for atomic measures and for bounded densities on a box.

All three need the exponent to be supercritical, ``alpha > 1 - 1/d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .concat import conc_through_delta
from .geometry import PolyCurve
from .plan import Atom, AtomicMeasure, Coupling, TrafficPlan, alpha_energy


class SubcriticalExponentError(ValueError):
    """The exponent is too small for the geometric series behind the bounds."""


def covering_exponent(alpha: float, d: int) -> float:
    """``1 + alpha*d - d``; positive exactly in the supercritical regime."""
    return 1 + alpha * d - d


def require_supercritical(alpha: float, d: int) -> None:
    e = covering_exponent(alpha, d)
    if e <= 0:
        raise SubcriticalExponentError(
            f"alpha={alpha} is not above 1 - 1/d for d={d}: exponent 1+alpha*d-d = {e:.6g} <= 0, "
            "the dyadic series does not converge"
        )


def impl_constant(alpha: float, d: int) -> float:
    """Constant of the dyadic tree bound, ``sqrt(d) * (1 + 2 / (1 - q))`` with ``q = 2**(d(1-alpha)-1)``."""
    require_supercritical(alpha, d)
    q = 2.0 ** (d * (1 - alpha) - 1)
    return math.sqrt(d) * (1 + 2 / (1 - q))


@dataclass
class ConnectorReport:
    plan: TrafficPlan
    energy: float
    bound: float
    constant_achieved: float
    side: float = 0.0
    level_costs: tuple = ()
    level_bounds: tuple = ()

    @property
    def within_bound(self) -> bool:
        return self.energy <= self.bound * (1 + 1e-12) + 1e-15

    @property
    def levels_within_bound(self) -> bool:
        return all(c <= b * (1 + 1e-12) + 1e-15 for c, b in zip(self.level_costs, self.level_bounds))


def _as_measure(mu) -> AtomicMeasure:
    if isinstance(mu, AtomicMeasure):
        return mu
    pts, masses = mu
    return AtomicMeasure(pts, masses)


def irrigate_from_point(mu: AtomicMeasure, x0, alpha: float) -> ConnectorReport:
    """Tree from ``x0`` to every atom of ``mu`` through nested dyadic cube centers.

    The enclosing cube is the smallest axis-aligned cube anchored at the lower
    corner of the bounding box of ``supp(mu)`` and ``x0``.  An atom leaves the
    shared trunk at the first level where its cube holds no other atom and
    then goes straight to its position.
    """
    mu = _as_measure(mu)
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[0]
    require_supercritical(alpha, d)
    const = impl_constant(alpha, d)
    tol = mu.tol
    if len(mu) == 0:
        return ConnectorReport(TrafficPlan([], tol, dim=d), 0.0, 0.0, 0.0)
    pts, masses = mu.points, mu.masses
    total = mu.total
    allpts = np.vstack([pts, x0[None, :]])
    lower = allpts.min(axis=0)
    side = float((allpts.max(axis=0) - lower).max())
    if side <= tol:
        plan = TrafficPlan([Atom(PolyCurve(p, tol), m) for p, m in zip(pts, masses)], tol)
        return ConnectorReport(plan, 0.0, 0.0, 0.0, side)

    n = len(mu)
    max_level = 50

    cells = [np.zeros((n, d), dtype=np.int64)]
    exit_level = np.full(n, -1, dtype=int)
    if n == 1:
        exit_level[0] = 0
    k = 0
    while np.any(exit_level < 0):
        _, inverse, counts = np.unique(cells[k], axis=0, return_inverse=True, return_counts=True)
        alone = (counts[inverse.reshape(-1)] == 1) & (exit_level < 0)
        exit_level[alone] = k
        if k == max_level:
            exit_level[exit_level < 0] = k
            break
        k += 1
        h = side / 2**k
        cells.append(np.clip(np.floor((pts - lower) / h), 0, 2**k - 1).astype(np.int64))

    def cell_key(i: int, k: int) -> tuple:
        return (k, *cells[k][i].tolist())

    def centre(i: int, k: int) -> np.ndarray:
        h = side / 2**k
        return lower + (cells[k][i] + 0.5) * h

    # tree edges keyed by (parent, child) node ids, mass and level recorded
    edge_mass: dict[tuple, float] = {}
    edge_len: dict[tuple, float] = {}
    edge_level: dict[tuple, int] = {}
    atoms = []
    for i in range(n):
        K = int(exit_level[i])
        nodes = [("root",)] + [cell_key(i, k) for k in range(K)] + [("atom", i)]
        coords = [x0] + [centre(i, k) for k in range(K)] + [pts[i]]
        for lvl, (a, b, pa, pb) in enumerate(zip(nodes[:-1], nodes[1:], coords[:-1], coords[1:])):
            key = (a, b)
            edge_mass[key] = edge_mass.get(key, 0.0) + masses[i]
            edge_len[key] = float(np.linalg.norm(pb - pa))
            edge_level[key] = lvl
        atoms.append(Atom(PolyCurve(np.array(coords), tol), masses[i]))
    plan = TrafficPlan(atoms, tol)

    top = max(edge_level.values()) + 1
    level_costs = [0.0] * top
    for key, m in edge_mass.items():
        level_costs[edge_level[key]] += edge_len[key] * m**alpha
    q = 2.0 ** (d * (1 - alpha) - 1)
    level_bounds = [math.sqrt(d) * side * total**alpha * q**k for k in range(top)]
    energy = alpha_energy(plan, alpha)
    bound = const * side * total**alpha
    return ConnectorReport(
        plan,
        energy,
        bound,
        energy / (side * total**alpha),
        side,
        tuple(level_costs),
        tuple(level_bounds),
    )


def mailing_connector(pi: Coupling, alpha: float) -> ConnectorReport:
    """Plan with coupling exactly ``pi`` routed through the smallest source point."""
    d = pi.dim
    require_supercritical(alpha, d)
    tol = pi.tol
    if len(pi) == 0:
        return ConnectorReport(TrafficPlan([], tol, dim=d), 0.0, 0.0, 0.0)
    mu_minus, mu_plus = pi.marginals()
    x0 = mu_minus.points[0]
    into = irrigate_from_point(mu_minus, x0, alpha).plan.reversed()
    out = irrigate_from_point(mu_plus, x0, alpha).plan
    plan = conc_through_delta(into, out, pi)
    allpts = np.vstack([mu_minus.points, mu_plus.points])
    side = float((allpts.max(axis=0) - allpts.min(axis=0)).max())
    energy = alpha_energy(plan, alpha)
    scale = side * pi.total**alpha
    bound = 2 * impl_constant(alpha, d) * scale
    return ConnectorReport(plan, energy, bound, energy / scale if scale > 0 else 0.0, side)


@dataclass(frozen=True)
class GridDensity:
    """Bounded density on an axis-aligned box; ``sup`` bounds it from above."""

    lower: tuple
    upper: tuple
    sup: float = 1.0

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(np.asarray(self.upper) - np.asarray(self.lower)))

    @classmethod
    def uniform_box(cls, lower, upper) -> "GridDensity":
        vol = float(np.prod(np.asarray(upper, dtype=float) - np.asarray(lower, dtype=float)))
        return cls(tuple(map(float, lower)), tuple(map(float, upper)), 1.0 / vol)


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass
class BallCover:
    """Balls with the masses they carry and the weighted radius sum as certificate.

    For a density cover ``masses`` are upper bounds ``sup * |B_i|``, so the
    certificate is an upper bound on the sum of ``r_i * mu(B_i)**alpha``.
    """

    centers: np.ndarray
    radii: np.ndarray
    masses: np.ndarray
    alpha: float
    eps: float
    kind: str
    certificate: float
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.radii.shape[0]

    @property
    def valid(self) -> bool:
        return bool(self.certificate < self.eps and np.all(self.radii > 0))

    def connector_bound(self) -> float:
        """Sum of mailing-connector bounds over the balls (diameter ``2 r_i``)."""
        d = self.centers.shape[1]
        return float(2 * impl_constant(self.alpha, d) * np.sum(2 * self.radii * self.masses**self.alpha))

    def contains(self, i: int, x) -> bool:
        return bool(np.linalg.norm(np.asarray(x) - self.centers[i]) < self.radii[i])


def ball_cover(mu, alpha: float, eps: float) -> BallCover:
    """Ball cover with ``sum r_i mu(B_i)**alpha < eps``.

    For an atomic measure there is one ball per atom, heaviest first, with
    ``r_i = min(eps / (2**(i+1) * max(m_i**alpha, 1)), dist_i / 2)`` where
    ``dist_i`` is the distance to the nearest other atom.  For a
    :class:`GridDensity` the box is tiled by cubes inscribed in balls of one
    radius ``r0`` chosen from ``r0**(1+alpha*d-d) * (|X| + 1) * sup**alpha < eps``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(mu, GridDensity):
        return _grid_cover(mu, alpha, eps)
    mu = _as_measure(mu)
    d = mu.dim
    require_supercritical(alpha, d)
    order = np.lexsort(tuple(mu.points.T[::-1]) + (-mu.masses,))
    pts, m = mu.points[order], mu.masses[order]
    n = len(m)
    if n > 1:
        D = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        np.fill_diagonal(D, np.inf)
        half = D.min(axis=1) / 2
    else:
        half = np.full(n, np.inf)
    radii = np.array([min(eps / (2 ** (i + 1) * max(m[i] ** alpha, 1.0)), half[i]) for i in range(n)])
    cert = float(np.sum(radii * m**alpha))
    return BallCover(pts, radii, m, alpha, eps, "atomic", cert)


def _grid_cover(mu: GridDensity, alpha: float, eps: float) -> BallCover:
    d = mu.dim
    expo = covering_exponent(alpha, d)
    require_supercritical(alpha, d)
    leb = mu.volume
    estimate_factor = (leb + 1) * mu.sup**alpha
    r_star = (eps / estimate_factor) ** (1 / expo)
    lower = np.asarray(mu.lower, dtype=float)
    upper = np.asarray(mu.upper, dtype=float)
    omega = unit_ball_volume(d)

    def tile(r0: float):
        h = 2 * r0 / math.sqrt(d)
        counts = np.maximum(np.ceil((upper - lower) / h).astype(int), 1)
        axes = [lower[k] + h * (np.arange(counts[k]) + 0.5) for k in range(d)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        return grid

    r0 = 0.99 * r_star
    while True:
        centers = tile(r0)
        n = centers.shape[0]
        ball_mass = min(mu.sup * omega * r0**d, mu.sup * leb)
        cert = n * r0 * ball_mass**alpha
        if cert < eps:
            break
        r0 *= 0.9
    radii = np.full(n, r0)
    masses = np.full(n, ball_mass)
    extra = {
        "r0": r0,
        "r0_threshold": r_star,
        "exponent": expo,
        "estimate": r0**expo * estimate_factor,
        "sum_r_pow_d": float(n * r0**d),
        "lebesgue": leb,
        "n_balls": n,
    }
    return BallCover(centers, radii, masses, alpha, eps, "grid", float(cert), extra)
