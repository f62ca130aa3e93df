import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from branchmail import (
    AtomicMeasure,
    Coupling,
    InstanceConfig,
    PolyCurve,
    TrafficPlan,
    alpha_energy,
    alpha_mass,
    check_simple_path,
    check_single_path,
    check_tpc,
    coupling_of,
    decompose_by_products,
    marginals,
    multiplicity,
    product_coupling,
)
from branchmail.concat import plans_allclose
from branchmail.plan import Atom

from helpers import random_plan
from oracles import lattice_energy, lattice_is_simple, lattice_mass, lattice_multiplicity, lattice_walk, self_avoiding_walk

alphas = st.floats(0.05, 1.0)
seeds = st.integers(0, 2**32 - 1)


def seg(*pts):
    return PolyCurve(pts)


def test_instance_config_flags():
    assert InstanceConfig(d=2, alpha=0.6).supercritical
    assert not InstanceConfig(d=2, alpha=0.5).supercritical
    with pytest.raises(ValueError):
        InstanceConfig(alpha=0.0)


def test_coupling_examples():
    p = TrafficPlan.from_curves([seg((0, 0), (1, 0))], [1.0])
    pi = coupling_of(p)
    assert len(pi) == 1 and pi.mass_at((0, 0), (1, 0)) == 1.0
    const = TrafficPlan.from_curves([PolyCurve([(2, 3)])], [1.0])
    assert coupling_of(const).mass_at((2, 3), (2, 3)) == 1.0
    twice = TrafficPlan.from_curves([seg((0, 0), (1, 0)), seg((0, 0), (0, 1), (1, 0))], [0.5, 0.5])
    assert len(coupling_of(twice)) == 1 and coupling_of(twice).total == pytest.approx(1.0)


def test_marginals_add_and_match_the_coupling():
    rng = np.random.default_rng(3)
    p, q = random_plan(rng, 3), random_plan(rng, 4)
    mp, mq, ms = marginals(p), marginals(q), marginals(p + q)
    assert ms[0].allclose(mp[0] + mq[0]) and ms[1].allclose(mp[1] + mq[1])
    a, b = coupling_of(p).marginals()
    assert a.allclose(mp[0]) and b.allclose(mp[1])


def test_multiplicity_examples():
    shared = TrafficPlan.from_curves([seg((0, 0), (1, 0)), seg((0, 0), (1, 0))], [0.5, 0.5]).merged()
    assert multiplicity(shared).at((0.5, 0)) == pytest.approx(1.0)
    back = TrafficPlan.from_curves([seg((0, 0), (1, 0), (0, 0))], [1.0])
    f = multiplicity(back)
    assert f.at((0.5, 0)) == pytest.approx(1.0)
    assert f.at((5, 5)) == 0.0


def test_energy_and_mass_examples():
    single = TrafficPlan.from_curves([seg((0, 0), (3, 4))], [0.3])
    assert alpha_energy(single, 0.7) == pytest.approx(0.3**0.7 * 5)
    assert alpha_mass(single, 0.7) == pytest.approx(0.3**0.7 * 5)
    two = TrafficPlan.from_curves([seg((0, 0), (1, 0)), seg((0, 0), (1, 0))], [0.5, 0.5])
    assert alpha_energy(two, 0.5) == pytest.approx(1.0)
    back = TrafficPlan.from_curves([seg((0, 0), (1, 0), (0, 0))], [1.0])
    assert alpha_energy(back, 0.3) == pytest.approx(2.0)
    assert alpha_mass(back, 0.3) == pytest.approx(1.0)
    vee = TrafficPlan.from_curves([seg((-1, 0), (0, 0)), seg((0, 1), (0, 0))], [0.5, 0.5])
    assert alpha_mass(vee, 0.5) == pytest.approx(2 * 0.5**0.5)


def test_check_tpc():
    p = TrafficPlan.from_curves([seg((0, 0), (2, 0))], [1.0])
    assert check_tpc(p, 2.0) and not check_tpc(p, 1.9)


def test_single_path_examples():
    one = TrafficPlan.from_curves([seg((0, 0), (1, 0), (1, 1))], [1.0])
    assert check_single_path(one)
    same = TrafficPlan.from_curves([seg((0, 0), (1, 0), (1, 1)), seg((0, 0), (1, 0), (1, 1), (2, 1))], [0.5, 0.5])
    assert check_single_path(same)
    square = TrafficPlan.from_curves([seg((0, 0), (1, 0), (1, 1)), seg((0, 0), (0, 1), (1, 1))], [0.5, 0.5])
    rep = check_single_path(square)
    assert not rep
    x, y, i, j = rep.witness
    assert {tuple(x), tuple(y)} == {(0.0, 0.0), (1.0, 1.0)} and {i, j} == {0, 1}


def test_simple_path_examples():
    assert check_simple_path(TrafficPlan.from_curves([seg((0, 0), (1, 0), (1, 1))], [1.0]))
    assert not check_simple_path(TrafficPlan.from_curves([seg((0, 0), (1, 0), (0, 0))], [1.0]))


def test_decompose_identity_and_disjoint():
    p = TrafficPlan.from_curves([seg((0, 0), (1, 0)), seg((5, 5), (6, 5))], [1.0, 2.0])
    assert decompose_by_products(p, [marginals(p)]) == [p]
    parts = [
        (AtomicMeasure([(0, 0)], [1.0]), AtomicMeasure([(1, 0)], [1.0])),
        (AtomicMeasure([(5, 5)], [2.0]), AtomicMeasure([(6, 5)], [2.0])),
    ]
    a, b = decompose_by_products(p, parts)
    assert a.total == pytest.approx(1.0) and b.total == pytest.approx(2.0)
    assert np.allclose(a.starts, [[0, 0]]) and np.allclose(b.starts, [[5, 5]])


def test_decompose_overlapping_products_split_fibers_proportionally():
    x, y = (0.0, 0.0), (1.0, 0.0)
    p = TrafficPlan.from_curves([seg(x, y), seg(x, (0, 1), y)], [0.6, 0.9])
    parts = [
        (AtomicMeasure([x], [1.0]), AtomicMeasure([y], [1.0])),
        (AtomicMeasure([x], [0.5]), AtomicMeasure([y], [0.5])),
    ]
    a, b = decompose_by_products(p, parts)
    assert coupling_of(a).allclose(product_coupling(*parts[0]))
    assert coupling_of(b).allclose(product_coupling(*parts[1]))
    assert plans_allclose(a + b, p)
    # ratio 2:1 inside the fiber
    assert a.atoms[0].mass / b.atoms[0].mass == pytest.approx(2.0)
    with pytest.raises(ValueError):
        decompose_by_products(p, parts[:1] + [parts[0]])


def test_subadditivity_on_one_edge():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b, alpha = rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0.01, 1)
        assert (a + b) ** alpha <= a**alpha + b**alpha + 1e-12


@settings(max_examples=80, deadline=None)
@given(seeds, alphas)
def test_lattice_oracle_agrees(seed, alpha):
    rng = np.random.default_rng(seed)
    walks = [lattice_walk(rng, rng.integers(-2, 3, size=2), int(rng.integers(1, 7))) for _ in range(int(rng.integers(1, 5)))]
    masses = rng.uniform(0.1, 1.0, size=len(walks))
    p = TrafficPlan.from_curves([PolyCurve(w) for w in walks], masses)
    assert alpha_energy(p, alpha) == pytest.approx(lattice_energy(walks, masses, alpha), rel=1e-9, abs=1e-12)
    assert alpha_mass(p, alpha) == pytest.approx(lattice_mass(walks, masses, alpha), rel=1e-9, abs=1e-12)
    f = multiplicity(p)
    for e, m in lattice_multiplicity(walks, masses).items():
        mid = (np.array(e[0]) + np.array(e[1])) / 2
        assert f.at(mid) == pytest.approx(m)
    assert check_simple_path(p) == all(lattice_is_simple(w) for w in walks)


@settings(max_examples=60, deadline=None)
@given(seeds, alphas)
def test_energy_dominates_mass_with_equality_on_simple_plans(seed, alpha):
    rng = np.random.default_rng(seed)
    p = random_plan(rng, int(rng.integers(1, 5)), bends=int(rng.integers(0, 4)))
    E, M = alpha_energy(p, alpha), alpha_mass(p, alpha)
    assert E >= M - 1e-9
    if check_simple_path(p):
        assert E == pytest.approx(M, rel=1e-9, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seeds, alphas)
def test_reversal_invariance(seed, alpha):
    rng = np.random.default_rng(seed)
    p = random_plan(rng, 3)
    flip = TrafficPlan([Atom(a.curve.reversed() if k % 2 else a.curve, a.mass) for k, a in enumerate(p.atoms)])
    assert alpha_mass(flip, alpha) == pytest.approx(alpha_mass(p, alpha), rel=1e-12)
    assert alpha_energy(flip, alpha) == pytest.approx(alpha_energy(p, alpha), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_alpha_one_is_weighted_length(seed):
    rng = np.random.default_rng(seed)
    p = random_plan(rng, 4, lattice=False)
    assert alpha_energy(p, 1.0) == pytest.approx(sum(a.mass * a.curve.length for a in p.atoms), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_decompose_sums_back(seed):
    rng = np.random.default_rng(seed)
    xs = [tuple(map(float, rng.integers(-3, 3, size=2))) for _ in range(2)]
    ys = [tuple(map(float, rng.integers(4, 8, size=2))) for _ in range(2)]
    parts = []
    for _ in range(int(rng.integers(1, 4))):
        a = rng.uniform(0.1, 1, size=2)
        b = rng.uniform(0.1, 1, size=2)
        b *= a.sum() / b.sum()
        parts.append((AtomicMeasure(xs, a), AtomicMeasure(ys, b)))
    total = product_coupling(*parts[0])
    for part in parts[1:]:
        total = total + product_coupling(*part)
    atoms = []
    for s, t, m in total.pairs():
        w = rng.dirichlet(np.ones(2))
        atoms.append(Atom(PolyCurve([s, t]), m * w[0]))
        atoms.append(Atom(PolyCurve([s, (0.0, 10.0), t]), m * w[1]))
    p = TrafficPlan(atoms)
    out = decompose_by_products(p, parts)
    acc = out[0]
    for q in out[1:]:
        acc = acc + q
    assert plans_allclose(acc, p)
    for q, part in zip(out, parts):
        assert coupling_of(q).allclose(product_coupling(*part))


def test_semicontinuity_smoke():
    # two separate atoms converging onto one shared segment
    alpha = 0.6
    limit = TrafficPlan.from_curves([seg((0, 0), (1, 0)), seg((0, 0), (1, 0))], [0.5, 0.5])
    E = alpha_energy(limit, alpha)
    values = []
    for n in range(1, 40):
        h = 1.0 / n
        pn = TrafficPlan.from_curves([seg((0, 0), (1, 0)), seg((0, 0), (0.5, h), (1, 0))], [0.5, 0.5])
        assert check_tpc(pn, 10.0)
        values.append(alpha_energy(pn, alpha))
    assert min(values[-10:]) >= E - 1e-6


def test_probability_total():
    rng = np.random.default_rng(1)
    p = random_plan(rng, 5)
    q = p.scaled(1 / p.total)
    assert math.isclose(q.total, 1.0, abs_tol=1e-12)
