import numpy as np
import pytest

from branchmail import Coupling, StabilityExperiment, generate_instance, run_stability
from branchmail.harness import (
    CURATED,
    InstanceSpec,
    SolverConfig,
    curated_experiment,
    curated_instance,
    dilation_schedule,
    displacement_schedule,
    jitter_schedule,
    support_hash,
)


def test_generated_instances_are_reproducible():
    a = generate_instance(7, 3, InstanceSpec(min_separation=0.2))
    b = generate_instance(7, 3, InstanceSpec(min_separation=0.2))
    assert a.allclose(b, atol=0) and a.total == pytest.approx(1.0)
    assert np.all(np.linalg.norm(a.sources, axis=1) <= 1.0)
    gap = np.linalg.norm(a.sources[:, None] - a.targets[None], axis=2).min()
    assert gap >= 0.2
    assert not a.allclose(generate_instance(8, 3))


def test_generated_instance_in_three_dimensions():
    pi = generate_instance(0, 2, InstanceSpec(dim=3, radius=2.0))
    assert pi.dim == 3 and np.all(np.linalg.norm(pi.targets, axis=1) <= 2.0)


def test_generation_errors():
    with pytest.raises(ValueError):
        generate_instance(0, 0)
    with pytest.raises(ValueError, match="separation"):
        generate_instance(0, 3, InstanceSpec(min_separation=5.0, max_tries=5))


@pytest.mark.parametrize("name", sorted(CURATED))
def test_curated_instances(name):
    pi = curated_instance(name)
    assert pi.total == pytest.approx(1.0)
    assert np.allclose(np.linalg.norm(np.vstack([pi.sources, pi.targets]), axis=1), 1.0)


@pytest.mark.parametrize(
    "make",
    [
        lambda pi: dilation_schedule(pi, 0.25),
        lambda pi: displacement_schedule(pi, 3, 0.25),
        lambda pi: jitter_schedule(pi, 3, 0.25),
    ],
)
def test_schedules_keep_mass_and_converge(make):
    pi = curated_instance("three-to-one")
    at = make(pi)
    for n in (1, 2, 8):
        assert at(n).total == pytest.approx(pi.total, abs=1e-12)
    far = at(10**9)

    def rows(c):
        r = np.hstack([c.sources, c.targets, c.masses[:, None]])
        return r[np.lexsort(np.round(r, 6).T[::-1])]

    assert np.allclose(rows(far), rows(pi), atol=1e-8)
    assert not at(1).allclose(pi)


def test_support_hash():
    pi = curated_instance("two-to-one")
    res, _ = SolverConfig(pitch=0.25).solve(pi, 0.9)
    again, _ = SolverConfig(pitch=0.25).solve(pi, 0.9)
    assert support_hash(res.plan) == support_hash(again.plan)
    other, _ = SolverConfig(pitch=0.25).solve(curated_instance("three-to-one"), 0.9)
    assert support_hash(res.plan) != support_hash(other.plan)


def test_short_stability_run():
    exp = curated_experiment("two-to-one", ns=(1, 2, 4, 8), pitch=0.25)
    rep = run_stability(exp, keep_plans=True)
    assert rep.limit_certificate == "exhaustive"
    assert [r.n for r in rep.rows] == [1, 2, 4, 8]
    for r in rep.rows:
        assert r.status == "ok"
        assert r.coupling_exact and r.ledger_ok and r.single_path
        assert r.bound_holds and r.reverse_holds
        assert r.certified in ("grid-certified", "continuum-bound")
    assert set(rep.plans) == {1, 2, 4, 8}
    assert rep.tolerance == pytest.approx(5 * (1 / 8 + 0.25))
    assert rep.gaps() == [r.gap for r in rep.rows]


def test_refusals_fail_the_verdict():
    pi = curated_instance("two-to-one")

    def too_many_atoms(n):
        # six distinct atoms exceed the exhaustive solver's atom limit
        src = np.repeat(pi.sources, 3, axis=0) + np.tile([[0, 0], [0.01, 0], [0, 0.01]], (2, 1)) / n
        return Coupling(src, np.repeat(pi.targets, 3, axis=0), np.repeat(pi.masses, 3) / 3)

    exp = StabilityExperiment(base=pi, schedule=too_many_atoms, ns=(1, 2), solver=SolverConfig(pitch=0.25))
    rep = run_stability(exp)
    assert all(r.status.startswith("refused") for r in rep.rows)
    assert not rep.verdict


def test_schedule_must_keep_mass():
    pi = curated_instance("two-to-one")
    exp = StabilityExperiment(base=pi, schedule=lambda n: pi.scaled(2), ns=(1,), solver=SolverConfig(pitch=0.25))
    with pytest.raises(ValueError, match="total mass"):
        run_stability(exp)
