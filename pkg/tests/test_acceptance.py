"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""
import contextlib
import time

import numpy as np
import pytest

from servicechoice import (
    ChoiceField,
    Constant,
    FixedPrudence,
    Linear,
    Window,
    dual_certificate,
    dual_ascent,
    harmonic_prudence,
    lp_oracle,
    pareto_spot_check,
    prudence_bound,
    prudence_step,
    run_memory,
    run_prudence,
    run_standard,
    solve_equilibrium_general,
    solve_equilibrium_k2,
    solve_optimum,
    solve_optimum_k2,
    threshold_partition,
    total_social_cost,
    travel_cost_gap,
    wasserstein,
)
from tests.helpers import beach, make_scenario, preset


@pytest.fixture
def criterion(capsys):
    @contextlib.contextmanager
    def report(number, label):
        start = time.perf_counter()
        try:
            yield
        except BaseException as exc:
            with capsys.disabled():
                print(f"\n[FAIL] criterion {number}: {label} ({type(exc).__name__}: {exc})")
            raise
        with capsys.disabled():
            print(f"\n[PASS] criterion {number}: {label} ({time.perf_counter() - start:.2f} s)")

    return report


def test_criterion_01_beach_optimum(criterion):
    with criterion(1, "beach optimum split 0.519231 and cheaper than 200 random cuts, < 5 s"):
        start = time.perf_counter()
        s = beach(0.1, n=20_000)
        res = solve_optimum(s)
        elapsed = time.perf_counter() - start
        assert abs(res.loads[0] - 0.519231) <= 2e-3, res.loads
        rng = np.random.default_rng(1)
        gaps = travel_cost_gap(s)
        for cut in rng.uniform(gaps.min(), gaps.max(), size=200):
            assert res.total_cost <= total_social_cost(s, threshold_partition(s, cut)) + 1e-12
        assert elapsed < 5.0, elapsed


def test_criterion_02_beach_equilibrium(criterion):
    with criterion(2, "beach equilibrium split 0.516129, eq <= opt for three epsilons, < 2 s"):
        start = time.perf_counter()
        res = solve_equilibrium_k2(beach(0.1, n=20_000))
        elapsed = time.perf_counter() - start
        assert abs(res.loads[0] - 0.516129) <= 2e-3, res.loads
        for eps in (0.05, 0.1, 0.2):
            s = beach(eps, n=20_000)
            lam_eq = solve_equilibrium_k2(s).loads[0]
            lam_opt = solve_optimum(s).loads[0]
            assert lam_eq <= lam_opt, (eps, lam_eq, lam_opt)
        assert elapsed < 2.0, elapsed


def test_criterion_03_jap(criterion):
    with criterion(3, "jap: equilibrium c1 = 0, optimum c1 = 0.001, optimum cheaper, < 10 s"):
        start = time.perf_counter()
        s = preset("jap")
        eq = solve_equilibrium_k2(s)
        opt = solve_optimum(s)
        elapsed = time.perf_counter() - start
        assert abs(eq.loads[0]) <= 1e-4, eq.loads
        assert abs(opt.loads[0] - 0.001) <= 2e-4, opt.loads
        assert opt.total_cost < total_social_cost(s, eq.partition)
        assert elapsed < 10.0, elapsed


def test_criterion_04_standard_oscillation(criterion):
    with criterion(4, "oscillator: period-2 cycle {0, 1}, no convergence in 1000 days"):
        s = preset("oscillator")
        traj = run_standard(s, t0=0.0)
        assert traj.verdict.kind == "cycle" and traj.verdict.period == 2
        assert sorted(traj.verdict.values) == pytest.approx([0.0, 1.0], abs=1e-6)
        long = run_standard(s, t0=0.0, max_days=1000, detect_cycles=False)
        assert long.verdict.kind == "max_days"
        assert np.max(np.abs(long.t[0::2] - 0.0)) <= 1e-6
        assert np.max(np.abs(long.t[1::2] - 1.0)) <= 1e-6


def test_criterion_05_memory(criterion):
    with criterion(5, "memory: window 2 cycles (-1, -1, 2), window 3 converges to 0, oscillator to 0.5"):
        s = preset("memory3cycle")
        cyc = run_memory(s, Window(2), [-1.0, -1.0])
        assert cyc.verdict.kind == "cycle" and cyc.verdict.period == 3
        values = np.array(cyc.verdict.values)
        # compare as a cyclic sequence
        assert any(np.max(np.abs(np.roll(values, r) - [-1, -1, 2])) <= 1e-6 for r in range(3)), values
        conv = run_memory(s, Window(3), [-1.0, -1.0, -1.0])
        assert conv.verdict.kind == "converged" and abs(conv.verdict.limit) <= 1e-6
        osc = run_memory(preset("oscillator"), Window(2), [0.0, 1.0])
        assert osc.verdict.kind == "converged" and abs(osc.verdict.limit - 0.5) <= 1e-6


def test_criterion_06_prudence(criterion):
    with criterion(6, "prudence: 1/3 alternates 1/4 <-> 3/4, 0.95 and 1 - 1/j converge"):
        s = preset("prudence2")
        cell = float(s.mass.max())
        psi0 = ChoiceField.uniform(s, 0.25)
        cyc = run_prudence(s, FixedPrudence(1 / 3), psi0)
        assert cyc.verdict.kind == "cycle" and cyc.verdict.period == 2
        a = cyc.final_psi
        b = prudence_step(s, a, 1 / 3)
        for field in (a, b):
            low = s.mass[np.abs(field.psi - 0.25) > 1e-9].sum()
            high = s.mass[np.abs(field.psi - 0.75) > 1e-9].sum()
            assert min(low, high) <= cell
        assert {round(float(np.median(a.psi)), 6), round(float(np.median(b.psi)), 6)} == {0.25, 0.75}

        bound = prudence_bound(s)
        assert bound.rho_bar == pytest.approx(1 - 1 / 11, abs=1e-4)
        assert 0.95 > bound.rho_bar
        conv = run_prudence(s, FixedPrudence(0.95), psi0)
        assert conv.verdict.kind == "converged"
        assert conv.S1[-1] < 1e-6 and conv.S2[-1] < 1e-6

        # the wrong-side mass decays like 1/j under rho_j = 1 - 1/j
        inc = run_prudence(s, harmonic_prudence(1.0), psi0, max_days=2_000_000, conv_tol=1e-6)
        assert inc.verdict.kind == "converged", str(inc.verdict)


def _random_scenario(rng):
    k = int(rng.integers(2, 5))
    dim = int(rng.integers(1, 3))
    n = int(rng.integers(20, 200)) if dim == 1 else int(rng.integers(5, 14))
    box = [[0, 1]] * dim if dim == 2 else [0, 1]
    sites = [tuple(rng.uniform(0, 1, dim)) for _ in range(k)]
    p = float(rng.choice([1.0, 1.5, 2.0, 3.0]))
    density = rng.uniform(0.1, 2.0, n ** dim)
    return make_scenario(box, sites, [Constant(0)] * k, p=p, n=n, density=density)


def test_criterion_07_transport_primal_dual(criterion):
    with criterion(7, "transport: dual value matches the LP on 20 random instances, dual feasible"):
        rng = np.random.default_rng(7)
        for _ in range(20):
            s = _random_scenario(rng)
            assert s.grid.n_cells <= 200
            c = rng.dirichlet(np.ones(s.k))
            value, _ = wasserstein(s, c)
            exact = lp_oracle(s, c)
            assert abs(value - exact) <= 1e-6 * (1 + abs(value)), (value, exact)
            w = dual_ascent(s, c)
            u = (s.costs + w).min(axis=1)
            assert np.max(u[:, None] - w[None, :] - s.costs) <= 1e-9


def test_criterion_08_dual_certificate(criterion):
    with criterion(8, "every returned equilibrium has a feasible dual certificate; midpoint split fails"):
        b = beach(0.1, n=20_000)
        three = make_scenario([0, 1], [0.2, 0.5, 0.8], [Linear(0, 1), Linear(0.1, 2), Linear(0, 1)], n=999)
        results = [
            solve_equilibrium_k2(b),
            solve_equilibrium_general(b),
            solve_equilibrium_k2(preset("jap")),
            solve_equilibrium_k2(preset("prudence2")),
            solve_equilibrium_general(preset("prudence2")),
            solve_equilibrium_k2(preset("oscillator")),
            solve_equilibrium_k2(preset("memory3cycle")),
            solve_equilibrium_general(three),
        ]
        scenarios = [b, b, preset("jap"), preset("prudence2"), preset("prudence2"), preset("oscillator"), preset("memory3cycle"), three]
        for s, res in zip(scenarios, results):
            cert = dual_certificate(s, res)
            assert cert.feasible, (cert.max_violation, cert.identity_gap)
            assert cert.identity_gap <= 1e-9
        assert not dual_certificate(b, threshold_partition(b, 0.0)).feasible


def test_criterion_09_pareto(criterion):
    with criterion(9, "no dominating partition in 500 perturbations of the beach equilibrium"):
        s = beach(0.1, n=20_000)
        eq = solve_equilibrium_k2(s)
        report = pareto_spot_check(s, eq.partition, trials=500, seed=9)
        assert report.trials == 500
        assert not report.dominated


def test_criterion_10_convexity(criterion):
    with criterion(10, "transport value is convex along 100 random segments (k = 3)"):
        s = make_scenario([[0, 1], [0, 1]], [(0.2, 0.2), (0.8, 0.4), (0.4, 0.85)], [Constant(0)] * 3, n=40)
        rng = np.random.default_rng(10)
        for _ in range(100):
            c, d = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
            fc, fd = wasserstein(s, c)[0], wasserstein(s, d)[0]
            for t in (0.25, 0.5, 0.75):
                mid = wasserstein(s, t * c + (1 - t) * d)[0]
                assert mid <= t * fc + (1 - t) * fd + 1e-6


def test_criterion_11_cross_agreement(criterion):
    with criterion(11, "k = 2 and general solvers agree on beach and prudence2"):
        for s in (beach(0.1, n=20_000), preset("prudence2")):
            slack = 2 * float(s.mass.max()) + 1e-6
            a = solve_equilibrium_k2(s).loads
            b = solve_equilibrium_general(s).loads
            assert np.max(np.abs(a - b)) <= slack, (a, b)
        s = beach(0.1, n=20_000)
        a = solve_optimum_k2(s).loads
        b = solve_optimum(s).loads
        assert np.max(np.abs(a - b)) <= 2 * float(s.mass.max()) + 1e-6, (a, b)
