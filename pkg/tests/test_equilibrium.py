import numpy as np
import pytest

from servicechoice import (
    Constant,
    Linear,
    PiecewiseLinear,
    dual_certificate,
    dominates,
    individual_cost_field,
    pareto_spot_check,
    queue_gap,
    solve_equilibrium_general,
    solve_equilibrium_k2,
    solve_optimum,
    threshold_partition,
    threshold_residual,
    verify_ce,
    weighted_partition,
)
from tests.helpers import beach, make_scenario, preset


def test_queue_gap_examples(beach01):
    assert queue_gap(beach01, 0.0) == pytest.approx(0.05, abs=1e-4)
    sym = beach(0.0, n=1000)
    assert queue_gap(sym, 0.0) == pytest.approx(0.0, abs=1e-12)
    osc = preset("oscillator")
    t = np.linspace(-1, 1, 41)
    np.testing.assert_allclose(queue_gap(osc, t), 1 - t, atol=1e-12)


def test_threshold_residual_increasing(beach01):
    t = np.linspace(-1, 1, 500)
    assert np.all(np.diff(threshold_residual(beach01, t)) > 0)


def test_equilibrium_k2_beach(beach01):
    res = solve_equilibrium_k2(beach01)
    assert res.loads[0] == pytest.approx(0.5 + 0.1 / 6.2, abs=2e-3)
    assert res.ce_residual <= 1e-12
    assert res.dual_feasible
    assert abs(queue_gap(beach01, res.t_bar, atomic=True) - res.t_bar) <= 1e-3


def test_equilibrium_k2_symmetric():
    res = solve_equilibrium_k2(beach(0.0, n=1000))
    assert res.t_bar == pytest.approx(0.0, abs=1e-10)


def test_equilibrium_jap():
    res = solve_equilibrium_k2(preset("jap"))
    assert res.loads[0] <= 1e-5


def test_equilibrium_k2_refuses_non_monotone():
    s = make_scenario([0, 1], [0.2, 0.8], [Linear(1, -0.5), Linear(0, 1)])
    with pytest.raises(ValueError):
        solve_equilibrium_k2(s)
    res = solve_equilibrium_general(s)
    assert not res.uniqueness_certified
    assert res.ce_residual <= 1e-6


def test_general_agrees_with_k2(beach01):
    a = solve_equilibrium_k2(beach01).loads
    b = solve_equilibrium_general(beach01).loads
    assert np.max(np.abs(a - b)) <= 2 / 20_000 + 1e-8


def test_general_k3_mirror_symmetry():
    s = make_scenario([0, 1], [0.2, 0.5, 0.8], [Linear(0, 1)] * 3, n=999)
    res = solve_equilibrium_general(s)
    assert res.loads[0] == pytest.approx(res.loads[2], abs=1e-6)
    assert res.ce_residual <= 1e-6


def test_constant_queues_give_voronoi():
    s = make_scenario([0, 1], [0.2, 0.7], [Constant(1), Constant(1)], n=400)
    res = solve_equilibrium_general(s)
    np.testing.assert_allclose(res.loads, weighted_partition(s, np.zeros(2)).masses, atol=1e-8)


def test_individual_cost_at_origin(beach01):
    res = solve_equilibrium_k2(beach01)
    cost = individual_cost_field(beach01, res.partition)
    assert cost[0] == pytest.approx(0.0625 + 0.516129, abs=2e-3)


def test_ce_of_optimum_is_positive(beach01):
    opt = solve_optimum(beach01)
    assert verify_ce(beach01, opt.partition) > 1e-3


def test_dual_certificate_cases(beach01):
    eq = solve_equilibrium_k2(beach01)
    assert dual_certificate(beach01, eq).feasible
    assert not dual_certificate(beach01, threshold_partition(beach01, 0.0)).feasible
    s = make_scenario([0, 1], [0.2, 0.7], [Constant(0), Constant(0)], n=100)
    cert = dual_certificate(s, weighted_partition(s, np.zeros(2)))
    assert cert.feasible
    np.testing.assert_allclose(cert.v, 0.0)
    np.testing.assert_allclose(cert.u, s.costs.min(axis=1))


def test_pareto_spot_check(beach01):
    eq = solve_equilibrium_k2(beach01)
    assert not pareto_spot_check(beach01, eq.partition, trials=100).dominated


def test_jap_optimum_does_not_dominate_equilibrium():
    s = preset("jap")
    eq = solve_equilibrium_k2(s)
    opt = solve_optimum(s)
    assert not dominates(s, opt.partition, eq.partition)
    costs_opt = individual_cost_field(s, opt.partition)
    costs_eq = individual_cost_field(s, eq.partition)
    # the few citizens sent to the slow site pay about 100 more
    assert np.max(costs_opt - costs_eq) > 90


def test_identical_costs_only_for_identical_partitions():
    s = beach(0.1, n=500)
    eq = solve_equilibrium_k2(s)
    other = threshold_partition(s, eq.t_bar + 0.01)
    assert not np.allclose(individual_cost_field(s, other), individual_cost_field(s, eq.partition))


def test_general_on_piecewise_queue():
    s = make_scenario([0, 1], [0.1, 0.9], [PiecewiseLinear(((0, 0), (0.5, 1), (1, 3))), Linear(0.2, 1)], p=1.0, n=800)
    res = solve_equilibrium_general(s)
    assert res.ce_residual <= 1e-6
    assert dual_certificate(s, res).max_violation <= 1e-6
