import numpy as np
import pytest

from servicechoice import (
    Constant,
    Linear,
    social_objective,
    solve_optimum,
    solve_optimum_k2,
    threshold_partition,
    total_social_cost,
    transport_cost,
    verify_cns,
    weighted_partition,
)
from tests.helpers import beach, make_scenario, preset


def test_social_cost_without_queues_is_transport():
    s = make_scenario([0, 1], [0.2, 0.7], [Constant(0), Constant(0)], n=300)
    part = weighted_partition(s, np.zeros(2))
    assert total_social_cost(s, part) == pytest.approx(transport_cost(s, part), abs=1e-15)


def test_social_cost_symmetric_beach_midpoint():
    s = beach(0.0, n=1000)
    part = threshold_partition(s, 0.0)
    assert total_social_cost(s, part) == pytest.approx(transport_cost(s, part) + 0.5, abs=1e-12)


def test_optimum_beach(beach01):
    res = solve_optimum(beach01)
    assert res.converged and res.uniqueness_certified
    assert res.loads[0] == pytest.approx(0.519231, abs=2e-3)
    assert res.cns_residual <= 1e-6
    assert res.total_cost == pytest.approx(transport_cost(beach01, res.partition) + float(np.sum(beach01.total_waits(res.loads))))


def test_optimum_k2_continuum_profile():
    s = beach(0.1, n=2000)
    res = solve_optimum_k2(s, mass_fn=lambda t: min(max(t + 0.5, 0.0), 1.0))
    assert res.threshold == pytest.approx(0.1 / 5.2, abs=1e-9)
    assert res.loads[0] == pytest.approx(0.5 + 0.1 / 5.2, abs=1e-6)


def test_optimum_k2_symmetric_case():
    res = solve_optimum_k2(beach(0.0, n=2000))
    assert res.threshold == pytest.approx(0.0, abs=1e-12)
    assert res.loads[0] == pytest.approx(0.5, abs=1e-12)


def test_optimum_symmetric_loads():
    s = make_scenario([0, 1], [0.3, 0.7], [Linear(0, 2), Linear(0, 2)], n=500)
    np.testing.assert_allclose(solve_optimum(s).loads, [0.5, 0.5], atol=1e-8)


def test_optimum_jap():
    s = preset("jap")
    res = solve_optimum(s)
    assert res.loads[0] == pytest.approx(0.001, abs=2e-4)
    assert not res.uniqueness_certified
    assert res.cns_advisory


def test_cns_midpoint_beach_fails(beach01):
    part = threshold_partition(beach01, 0.0)
    assert verify_cns(beach01, part) > 1e-3


def test_cns_voronoi_no_queues():
    s = make_scenario([[0, 1], [0, 1]], [(0.2, 0.3), (0.7, 0.8)], [Constant(0), Constant(0)], n=30)
    assert verify_cns(s, weighted_partition(s, np.zeros(2))) <= 1e-12


def test_optimum_beats_random_loads(rng):
    s = make_scenario([[0, 1], [0, 1]], [(0.2, 0.3), (0.7, 0.8), (0.8, 0.1)], [Linear(0, 1), Linear(0.1, 0.5), Linear(0, 2)], n=16)
    res = solve_optimum(s)
    best = social_objective(s, res.loads)
    assert total_social_cost(s, res.partition) == pytest.approx(best, abs=1e-8)
    for _ in range(200):
        c = rng.dirichlet(np.ones(3))
        assert social_objective(s, c) >= best - 1e-8


def test_optimum_stationary_on_simplex():
    s = make_scenario([[0, 1], [0, 1]], [(0.2, 0.3), (0.7, 0.8), (0.8, 0.1)], [Linear(0, 1), Linear(0.1, 0.5), Linear(0, 2)], n=16)
    res = solve_optimum(s)
    f0 = social_objective(s, res.loads)
    # moving a little mass between any two sites never helps
    for i in range(3):
        for j in range(3):
            if i != j and res.loads[i] > 1e-3:
                c = res.loads.copy()
                c[i] -= 1e-3
                c[j] += 1e-3
                assert social_objective(s, c) >= f0 - 1e-9


def test_optimum_k2_rejects_k3():
    s = make_scenario([0, 1], [0.1, 0.5, 0.9], [Linear(0, 1)] * 3)
    with pytest.raises(ValueError):
        solve_optimum_k2(s)
