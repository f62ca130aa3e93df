import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from branchmail import (
    BudgetExceeded,
    Coupling,
    PolyCurve,
    TrafficPlan,
    alpha_energy,
    alpha_mass,
    candidate_graph,
    check_single_path,
    coupling_of,
    refine_topology,
    solve_exact,
    solve_local,
)
from branchmail.solver import branch_points, merge_point

from oracles import all_simple_paths, polyline_lattice_mass, y_oracle

seeds = st.integers(0, 2**32 - 1)


def y_coupling(sink_height=1.0):
    return Coupling([(-1, 0), (1, 0)], [(0, sink_height), (0, sink_height)], [0.5, 0.5])


def brute_force(pi, g, alpha, max_hops):
    """Minimum over every assignment of simple hop paths, costed on the integer lattice."""
    ints = np.round(g.vertices / g.pitch).astype(int)
    assert np.allclose(ints * g.pitch, g.vertices)
    terms = [(g.vertex_id(s), g.vertex_id(t)) for s, t in zip(pi.sources, pi.targets)]
    options = [list(all_simple_paths(len(g), s, t, max_hops)) for s, t in terms]
    best = math.inf
    for choice in itertools.product(*options):
        cost = polyline_lattice_mass([ints[list(p)] for p in choice], pi.masses, alpha, g.pitch)
        best = min(best, cost)
    return best


def lattice_coupling(rng, n, lo=0, hi=2):
    src = rng.integers(lo, hi + 1, size=(n, 2)).astype(float)
    dst = rng.integers(lo, hi + 1, size=(n, 2)).astype(float)
    keep = np.any(src != dst, axis=1)
    if not keep.any():
        dst[0, 0] = hi if src[0, 0] != hi else lo
        keep[0] = True
    return Coupling(src[keep], dst[keep], rng.uniform(0.1, 1, size=int(keep.sum())))


# graphs --------------------------------------------------------------------------


def test_candidate_graph_layout():
    pi = Coupling([(0.5, 0.5)], [(-0.5, 0)], [1.0])
    g = candidate_graph(pi, pitch=0.5, box=((-1, 0), (1, 1)))
    assert g.n_terminals == 2 and np.allclose(g.terminals, [(-0.5, 0), (0.5, 0.5)])
    assert len(g) == 15  # 5 x 3 lattice, terminals already on it
    assert g.subdivide(g.vertex_id((-1, 0)), g.vertex_id((1, 0))) == tuple(
        g.vertex_id((x, 0)) for x in (-1, -0.5, 0, 0.5, 1)
    )


def test_candidate_graph_knn_must_connect():
    pi = Coupling([(0, 0), (10, 0)], [(0, 1), (10, 1)], [0.5, 0.5])
    with pytest.raises(ValueError, match="not connected"):
        candidate_graph(pi, k=1)
    assert not candidate_graph(pi, k=2).complete


# brute force equivalence -------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(seeds, st.sampled_from([0.3, 0.5, 0.75, 0.9]))
def test_exact_matches_brute_force(seed, alpha):
    rng = np.random.default_rng(seed)
    pi = lattice_coupling(rng, int(rng.integers(1, 4)), 0, 2)
    g = candidate_graph(pi, pitch=1.0, box=((0, 0), (2, 1)))
    hops = int(rng.integers(1, 3))
    try:
        res = solve_exact(pi, g, alpha, max_path_len=hops)
    except BudgetExceeded:
        pytest.skip("no admissible path within the hop bound")
    assert res.exhaustive
    want = brute_force(pi, g, alpha, hops)
    assert res.energy == pytest.approx(want, rel=1e-9, abs=1e-12)
    assert res.graph_cost == pytest.approx(want, rel=1e-9, abs=1e-12)
    assert coupling_of(res.plan).allclose(pi)


def test_exact_y_on_coarse_grid_matches_brute_force():
    pi = y_coupling()
    g = candidate_graph(pi, pitch=0.5, box=((-1, 0), (1, 1)))
    res = solve_exact(pi, g, 0.5, max_path_len=2)
    assert res.energy == pytest.approx(brute_force(pi, g, 0.5, 2), rel=1e-12)


# local search ------------------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(seeds, st.sampled_from([0.5, 0.75, 0.9]))
def test_local_never_beats_exact(seed, alpha):
    rng = np.random.default_rng(seed)
    pi = lattice_coupling(rng, int(rng.integers(1, 4)), 0, 2)
    g = candidate_graph(pi, pitch=1.0, box=((0, 0), (2, 1)))
    local = solve_local(pi, g, alpha, seed=seed % 1000)
    # every simple path of the complete graph has at most len(g) - 1 hops
    exact = solve_exact(pi, g, alpha, max_path_len=len(g) - 1, upper_bound=local)
    assert exact.energy <= local.energy + 1e-9


def test_alpha_one_takes_straight_segments():
    rng = np.random.default_rng(1)
    pi = Coupling(rng.uniform(-1, 1, (4, 2)), rng.uniform(-1, 1, (4, 2)), rng.uniform(0.1, 1, 4))
    g = candidate_graph(pi, pitch=0.5, radius=1.0)
    res = solve_local(pi, g, 1.0)
    direct = float(np.sum(pi.masses * np.linalg.norm(pi.sources - pi.targets, axis=1)))
    assert res.energy == pytest.approx(direct, rel=1e-12)


def test_solvers_are_deterministic():
    pi = Coupling([(-1, 0), (1, 0), (0, -1)], [(0, 1), (0, 1), (0, 1)], [0.3, 0.3, 0.4])
    g1 = candidate_graph(pi, pitch=0.5, radius=1.0)
    g2 = candidate_graph(pi, pitch=0.5, radius=1.0)
    a, b = solve_local(pi, g1, 0.8, seed=3), solve_local(pi, g2, 0.8, seed=3)
    assert a.paths == b.paths and a.energy == b.energy
    c, d = solve_exact(pi, g1, 0.8), solve_exact(pi, g2, 0.8)
    assert c.paths == d.paths and c.path_indices == d.path_indices and c.energy == d.energy


@pytest.mark.parametrize("k", [0.5, 3.0])
def test_mass_scaling(k):
    pi = y_coupling()
    g = candidate_graph(pi, pitch=0.25, box=((-1, 0), (1, 1)))
    base = solve_exact(pi, g, 0.75)
    big = solve_exact(pi.scaled(k), g, 0.75)
    assert big.energy == pytest.approx(k**0.75 * base.energy, rel=1e-12)
    assert big.paths == base.paths


def test_finer_grid_never_worse():
    pi = y_coupling()
    coarse = solve_exact(pi, candidate_graph(pi, pitch=0.2, box=((-1, 0), (1, 1))), 0.75)
    fine = solve_exact(pi, candidate_graph(pi, pitch=0.1, box=((-1, 0), (1, 1))), 0.75)
    assert fine.energy <= coarse.energy + 1e-12


def test_exact_plans_are_single_path():
    for h in (1.0, 2.0):
        pi = y_coupling(h)
        res = solve_exact(pi, candidate_graph(pi, pitch=0.25, box=((-1, 0), (1, h))), 0.75)
        assert res.single_path and check_single_path(res.plan)


def test_budget_limits():
    pi = Coupling(np.zeros((6, 2)) + np.arange(6)[:, None], np.ones((6, 2)), np.full(6, 1 / 6))
    with pytest.raises(BudgetExceeded, match="limited"):
        solve_exact(pi, candidate_graph(pi), 0.9)
    pi = y_coupling()
    g = candidate_graph(pi, pitch=0.1, box=((-1, 0), (1, 1)))
    with pytest.raises(BudgetExceeded, match="candidate paths|cap"):
        solve_exact(pi, g, 0.9, max_path_len=3, max_assignments=10)


def test_rejects_bad_alpha():
    pi = y_coupling()
    with pytest.raises(ValueError):
        solve_exact(pi, candidate_graph(pi), 1.5)


# topology refinement -----------------------------------------------------------------


def test_refine_moves_branch_to_oracle_height():
    h_star, e_star = y_oracle(0.75, 2.0)
    pi = y_coupling(2.0)
    rough = solve_exact(pi, candidate_graph(pi, pitch=0.25, box=((-1, 0), (1, 2))), 0.75)
    out = refine_topology(rough.plan, 0.75)
    assert out.flag is None and out.is_tree
    assert out.energy_after <= out.energy_before
    assert out.energy_after == pytest.approx(e_star, abs=1e-9)
    (bp,) = branch_points(out.plan)
    assert bp[0] == pytest.approx(0.0, abs=1e-9) and bp[1] == pytest.approx(h_star, abs=1e-6)


def test_refine_flags_cycles():
    square = TrafficPlan.from_curves(
        [PolyCurve([(0, 0), (1, 0), (1, 1)]), PolyCurve([(0, 0), (0, 1), (1, 1)])], [0.5, 0.5]
    )
    out = refine_topology(square, 0.5)
    assert not out.is_tree and out.flag == "not-a-tree" and out.plan is square
    plan, flag = out
    assert flag == "not-a-tree"


def test_refine_keeps_plans_without_branches():
    line = TrafficPlan.from_curves([PolyCurve([(0, 0), (1, 0), (2, 1)])], [1.0])
    out = refine_topology(line, 0.5)
    assert out.energy_after == pytest.approx(out.energy_before) and not out.moved


def test_refine_snaps_v_shape_to_sink():
    # at alpha 0.5 with the sink at height 1 the joint sits on the sink
    pi = y_coupling(1.0)
    res = solve_exact(pi, candidate_graph(pi, pitch=0.25, box=((-1, 0), (1, 1))), 0.5)
    assert res.energy == pytest.approx(2.0, abs=1e-12)
    assert np.allclose(merge_point(res.plan), (0, 1))


def test_merge_point_and_branch_points_of_y():
    y = TrafficPlan.from_curves(
        [PolyCurve([(-1, 0), (0, 0.5), (0, 1)]), PolyCurve([(1, 0), (0, 0.5), (0, 1)])], [0.5, 0.5]
    )
    assert np.allclose(merge_point(y), (0, 0.5))
    assert np.allclose(branch_points(y), [(0, 0.5)])
    assert alpha_mass(y, 0.5) == pytest.approx(alpha_energy(y, 0.5))


def test_per_atom_hop_budgets():
    pi = y_coupling()
    g = candidate_graph(pi, pitch=0.25, box=((-1, 0), (1, 1)))
    same = solve_exact(pi, g, 0.75, [2, 2])
    assert same.energy == solve_exact(pi, g, 0.75, 2).energy
    # one hop forces the straight segment for that atom
    one = solve_exact(pi, g, 0.75, [1, 2])
    assert len(one.plan.atoms[0].curve.vertices) == 2
    assert one.energy >= same.energy - 1e-12
    with pytest.raises(ValueError, match="hop budgets"):
        solve_exact(pi, g, 0.75, [2])
