"""Random instance builders shared by the tests."""

from __future__ import annotations

import numpy as np

from branchmail import Coupling, PolyCurve, TrafficPlan
from branchmail.plan import Atom


def random_polyline(rng: np.random.Generator, start, end, bends: int, spread: float = 3.0, lattice: bool = True) -> np.ndarray:
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    mids = rng.uniform(-spread, spread, size=(bends, start.shape[0]))
    if lattice:
        mids = np.round(mids)
    return np.vstack([start, mids, end]) if bends else np.vstack([start, end])


def random_plan(rng: np.random.Generator, atoms: int, bends: int = 2, spread: float = 3.0, lattice: bool = True, dim: int = 2) -> TrafficPlan:
    curves, masses = [], []
    for _ in range(atoms):
        a = rng.uniform(-spread, spread, size=dim)
        b = rng.uniform(-spread, spread, size=dim)
        if lattice:
            a, b = np.round(a), np.round(b)
        curves.append(PolyCurve(random_polyline(rng, a, b, bends, spread, lattice)))
        masses.append(float(rng.uniform(0.1, 1.0)))
    return TrafficPlan.from_curves(curves, masses)


def random_fibers(rng: np.random.Generator, hubs: int = 3, spread: float = 3.0, lattice: bool = True):
    """Two plans meeting over ``hubs`` shared points with matching marginals."""
    ys = rng.uniform(-spread, spread, size=(hubs, 2))
    if lattice:
        ys = np.unique(np.round(ys), axis=0)
    p1, p2 = [], []
    for y in ys:
        nu = float(rng.uniform(0.2, 1.0))
        k_in, k_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        w_in = rng.dirichlet(np.ones(k_in)) * nu
        w_out = rng.dirichlet(np.ones(k_out)) * nu
        for w in w_in:
            x = rng.uniform(-spread, spread, size=2)
            x = np.round(x) if lattice else x
            p1.append(Atom(PolyCurve(random_polyline(rng, x, y, int(rng.integers(0, 3)), spread, lattice)), float(w)))
        for w in w_out:
            z = rng.uniform(-spread, spread, size=2)
            z = np.round(z) if lattice else z
            p2.append(Atom(PolyCurve(random_polyline(rng, y, z, int(rng.integers(0, 3)), spread, lattice)), float(w)))
    return TrafficPlan(p1), TrafficPlan(p2)


def random_coupling(rng: np.random.Generator, n: int, spread: float = 1.0, dim: int = 2, lattice_pitch: float | None = None) -> Coupling:
    src = rng.uniform(-spread, spread, size=(n, dim))
    dst = rng.uniform(-spread, spread, size=(n, dim))
    if lattice_pitch:
        src = np.round(src / lattice_pitch) * lattice_pitch
        dst = np.round(dst / lattice_pitch) * lattice_pitch
    m = rng.uniform(0.1, 1.0, size=n)
    return Coupling(src, dst, m)


def hub_plans(rng: np.random.Generator, pi: Coupling, hub=None):
    """Plans from the first marginal into a hub and from the hub to the second marginal."""
    mu, nu = pi.marginals()
    hub = np.zeros(pi.dim) if hub is None else np.asarray(hub, dtype=float)
    into = TrafficPlan([Atom(PolyCurve(random_polyline(rng, x, hub, int(rng.integers(0, 2)), 1.0, False)), m) for x, m in zip(mu.points, mu.masses)])
    out = TrafficPlan([Atom(PolyCurve(random_polyline(rng, hub, y, int(rng.integers(0, 2)), 1.0, False)), m) for y, m in zip(nu.points, nu.masses)])
    return into, out
