import numpy as np
import pytest

from servicechoice import (
    ChoiceField,
    Constant,
    FixedPrudence,
    GlobalMemory,
    Linear,
    Power,
    TRAJECTORY_COLUMNS,
    Weighted,
    Window,
    geometric_recency,
    harmonic_prudence,
    lipschitz_estimate,
    memory_step,
    prudence_bound,
    prudence_step,
    run_memory,
    run_prudence,
    run_standard,
    solve_equilibrium_k2,
    standard_step,
    trajectory_export,
)
from tests.helpers import beach, make_scenario, preset


@pytest.fixture(scope="module")
def oscillator():
    return preset("oscillator")


@pytest.fixture(scope="module")
def prudence2():
    return preset("prudence2")


@pytest.fixture(scope="module")
def memory3():
    return preset("memory3cycle")


def test_standard_step_examples(oscillator):
    assert standard_step(oscillator, 0.0) == pytest.approx(1.0, abs=1e-12)
    assert standard_step(oscillator, 1.0) == pytest.approx(0.0, abs=1e-12)
    assert standard_step(beach(0.1, n=2000), 0.0) == pytest.approx(0.05, abs=1e-12)


def test_standard_step_fixed_point():
    s = beach(0.1, n=2000)
    t_bar = solve_equilibrium_k2(s).t_bar
    # the atomic root and the spread profile differ by at most a cell, times (1 + Lip G)
    assert standard_step(s, t_bar) == pytest.approx(t_bar, abs=3.1 / 2000)


def test_run_standard_cycle(oscillator):
    traj = run_standard(oscillator, t0=0.0, max_days=10)
    assert traj.verdict.kind == "cycle" and traj.verdict.period == 2
    assert sorted(traj.verdict.values) == pytest.approx([0.0, 1.0], abs=1e-6)


def test_run_standard_contraction():
    s = preset("contraction")
    assert lipschitz_estimate(s, (-1.0, 1.0)) < 1
    traj = run_standard(s, t0=-0.4)
    assert traj.verdict.kind == "converged"
    assert abs(traj.t[-1]) <= 1e-8


def test_run_standard_from_fixed_point(oscillator):
    traj = run_standard(oscillator, t0=0.5)
    assert traj.verdict.kind == "converged"
    assert traj.n_days <= 5


def test_lipschitz_estimates(oscillator, memory3):
    assert lipschitz_estimate(oscillator, (-1, 1)) == pytest.approx(1.0, abs=1e-6)
    assert lipschitz_estimate(memory3, (-3, 3)) == pytest.approx(2.0, abs=1e-6)
    flat = make_scenario([0, 1], [0.0, 1.0], [Constant(1), Constant(2)], p=1.0, n=100)
    assert lipschitz_estimate(flat, (-1, 1)) == 0.0
    with pytest.raises(ValueError):
        lipschitz_estimate(flat, (1, 1))


def test_prudence_step_examples(prudence2):
    psi = ChoiceField.uniform(prudence2, 0.3)
    np.testing.assert_array_equal(prudence_step(prudence2, psi, 1.0).psi, psi.psi)
    psi0 = ChoiceField.uniform(prudence2, 0.25)
    psi1 = prudence_step(prudence2, psi0, 1 / 3)
    np.testing.assert_allclose(psi1.psi, 0.75, atol=1e-15)
    psi2 = prudence_step(prudence2, psi1, 1 / 3)
    np.testing.assert_allclose(psi2.psi, 0.25, atol=1e-15)
    with pytest.raises(ValueError):
        prudence_step(prudence2, psi0, 1.5)


def test_prudence_zero_is_standard():
    s = beach(0.1, n=1000)
    psi = ChoiceField.from_threshold(s, 0.0)
    t1 = standard_step(s, 0.0)
    # the field gives the atomic load, the standard step the spread one
    np.testing.assert_allclose(prudence_step(s, psi, 0.0).psi, ChoiceField.from_threshold(s, t1).psi)


def test_prudence_equilibrium_field_is_stationary():
    s = beach(0.1, n=1000)
    eq = solve_equilibrium_k2(s)
    psi = ChoiceField.from_threshold(s, eq.t_bar)
    moved = prudence_step(s, psi, 0.5).psi != psi.psi
    assert s.mass[moved].sum() <= 1e-3 + 1e-12


def test_prudence_runs(prudence2):
    cyc = run_prudence(prudence2, FixedPrudence(1 / 3), ChoiceField.uniform(prudence2, 0.25))
    assert cyc.verdict.kind == "cycle" and cyc.verdict.period == 2
    conv = run_prudence(prudence2, FixedPrudence(0.95), ChoiceField.uniform(prudence2, 0.25))
    assert conv.verdict.kind == "converged"
    assert conv.S1[-1] < 1e-6 and conv.S2[-1] < 1e-6


def test_prudence_contraction_identity(prudence2):
    traj = run_prudence(prudence2, FixedPrudence(0.95), ChoiceField.uniform(prudence2, 0.25), max_days=200)
    s1, s2 = traj.S1, traj.S2
    for j in range(1, traj.n_days - 1):
        if s1[j] >= s2[j] and s1[j] > 1e-9:
            assert s1[j + 1] == pytest.approx(0.95 * s1[j], abs=1e-12 + 1e-3)


def test_prudence_sign_preservation(prudence2):
    traj = run_prudence(prudence2, FixedPrudence(0.95), ChoiceField.uniform(prudence2, 0.25), max_days=400)
    diff = traj.S1 - traj.S2
    first = np.flatnonzero(diff >= 0)
    if first.size:
        assert np.all(diff[first[0]:] >= -1e-3)


def test_prudence_bounds(prudence2):
    b = prudence_bound(prudence2)
    assert b.K == pytest.approx(20.0)
    assert b.L == pytest.approx(0.5, rel=1e-6)
    assert b.rho_bar == pytest.approx(1 - 1 / 11, abs=1e-6)
    flat = make_scenario([0, 1], [0.0, 1.0], [Constant(1), Constant(2)], p=1.0, n=100)
    assert prudence_bound(flat).rho_bar == 0.0
    bb = prudence_bound(beach(0.1, n=2000))
    assert bb.rho_bar == pytest.approx(1 - 1 / 3.1, abs=1e-6)
    steep = make_scenario([0, 1], [0.0, 1.0], [Power(1, 0.5), Linear(0, 1)], p=1.0, n=100)
    assert prudence_bound(steep).rho_bar == 1.0


def test_prudence_beach_converges_at_bound():
    s = beach(0.1, n=2000)
    traj = run_prudence(s, FixedPrudence(0.7))
    assert traj.verdict.kind == "converged"


def test_harmonic_prudence_schedule():
    sched = harmonic_prudence()
    np.testing.assert_allclose(sched.rhos(1, 4), [0.0, 0.5, 2 / 3, 0.75])


def test_memory_step_examples(memory3, oscillator):
    assert memory_step(memory3, [-1, -1], Window(2)) == pytest.approx(2.0, abs=1e-12)
    assert memory_step(memory3, [-1, 2], Window(2)) == pytest.approx(-1.0, abs=1e-12)
    for t in (-0.3, 0.2, 0.9):
        assert memory_step(oscillator, [t], Window(1)) == pytest.approx(standard_step(oscillator, t))
    with pytest.raises(ValueError):
        memory_step(memory3, [0.0], Window(2))


def test_memory_runs(memory3, oscillator):
    cyc = run_memory(memory3, Window(2), [-1, -1])
    assert cyc.verdict.kind == "cycle" and cyc.verdict.period == 3
    conv = run_memory(memory3, Window(3), [-1, -1, -1])
    assert conv.verdict.kind == "converged" and abs(conv.t[-1]) <= 1e-6
    osc = run_memory(oscillator, Window(2), [0, 1])
    assert osc.verdict.kind == "converged" and osc.t[-1] == pytest.approx(0.5, abs=1e-6)
    with pytest.raises(ValueError):
        run_memory(memory3, Window(3), [-1, -1])


def test_global_memory_converges(memory3, oscillator):
    for s, t_bar in ((oscillator, 0.5), (memory3, 0.0)):
        traj = run_memory(s, GlobalMemory(), [0.9], max_days=20_000, conv_tol=1e-6)
        assert abs(traj.t[-1] - t_bar) <= 1e-3


def test_memory_fixed_point_seeds(memory3):
    traj = run_memory(memory3, Window(2), [0.0, 0.0], max_days=20)
    np.testing.assert_allclose(traj.t, 0.0, atol=1e-12)


def test_weighted_memory_validation(oscillator):
    scheme = Weighted(geometric_recency, label="geometric")
    np.testing.assert_allclose(scheme.weights(3).sum(), 1.0)
    assert np.all(np.diff(scheme.weights(5)) >= 0)
    with pytest.raises(ValueError):
        Weighted(lambda n, m: 2.0 ** -m / (1 - 2.0 ** -n))  # favours the oldest day
    traj = run_memory(oscillator, scheme, [0.0], max_days=5000)
    assert traj.verdict.kind == "converged"


def test_trajectory_export_rows(oscillator):
    traj = run_standard(oscillator, t0=0.0, max_days=3, detect_cycles=False)
    rows = trajectory_export(traj)
    assert len(rows) == 3 and len(rows[0]) == len(TRAJECTORY_COLUMNS)
    cyc = trajectory_export(run_standard(oscillator, t0=0.0, max_days=50))
    assert cyc[-1][1] == pytest.approx(cyc[-3][1], abs=1e-8)


def test_threshold_field_load_matches_profile():
    s = beach(0.1, n=999)
    for t in (-0.3, 0.0, 0.123):
        load = ChoiceField.from_threshold(s, t).load(s)
        assert abs(load - s.gap_profile.smooth(t)) <= 1 / 999 + 1e-12
