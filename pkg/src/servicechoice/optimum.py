"""Global optimum of travel plus queueing time.

The social cost of a partition is the transport cost plus ``sum_i c_i h_i(c_i)``.
Minimising over partitions with loads ``c`` fixed is an optimal transport
problem, so the optimum is the minimiser over the simplex of

    J(c) = W(c) + sum_i c_i h_i(c_i),

``W`` being the (convex) transport value. At the optimum the cells are the
weighted-Voronoi cells of the marginal waits ``h_i(c_i) + c_i h_i'(c_i)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .city import Scenario
from .queues import PiecewiseLinear
from .threshold import ThresholdRoot, solve_threshold, threshold_partition
from .transport import (
    Partition,
    dual_ascent,
    plan_for_demand,
    relax_weights,
    transport_cost,
    transport_plan,
    wasserstein,
    weighted_partition,
)

__all__ = [
    "OptimumResult",
    "total_social_cost",
    "social_objective",
    "verify_cns",
    "solve_optimum",
    "solve_optimum_k2",
    "project_to_simplex",
]


@dataclass(frozen=True, eq=False)
class OptimumResult:
    """Optimal partition and diagnostics.

    ``cns_residual`` is the largest excess of a used site's adjusted cost over
    the cheapest one. ``cns_advisory`` is set when a load sits near a kink of
    a piecewise-linear queue, where the first-order test is not meaningful.
    ``threshold`` is only filled by the two-service solver.
    """

    partition: Partition
    loads: np.ndarray
    total_cost: float
    cns_residual: float
    converged: bool
    uniqueness_certified: bool
    cns_advisory: bool = False
    threshold: Optional[float] = None
    iterations: int = 0


def total_social_cost(scenario: Scenario, partition: Partition) -> float:
    """Transport cost plus ``sum_i c_i h_i(c_i)``."""
    c = partition.masses
    return transport_cost(scenario, partition) + float(np.sum(scenario.total_waits(c)))


def social_objective(scenario: Scenario, c) -> float:
    """``J(c) = W(c) + sum_i c_i h_i(c_i)`` for loads on the simplex."""
    value, _ = wasserstein(scenario, c)
    return value + float(np.sum(scenario.total_waits(c)))


def verify_cns(scenario: Scenario, partition: Partition, share_tol: float = 1e-12) -> float:
    """Largest gap between the adjusted cost of a used site and the cheapest site.

    The adjusted cost of site ``j`` is ``|x - x_j|**p + h_j(c_j) + c_j h_j'(c_j)``.
    """
    adjusted = scenario.costs + scenario.marginal_waits(partition.masses)
    best = adjusted.min(axis=1, keepdims=True)
    used = partition.shares > share_tol
    return float(np.max(np.where(used, adjusted - best, 0.0)))


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{c >= 0, sum c = 1}`` (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def _advisory(scenario: Scenario, loads: np.ndarray) -> bool:
    for q, c in zip(scenario.queues, loads):
        if isinstance(q, PiecewiseLinear):
            width = 2.0 * q.min_knot_spacing
            if np.any(np.abs(np.asarray(q.knots)[1:-1, 0] - c) < width):
                return True
    return False


def _subgradient_descent(
    scenario: Scenario, c0: np.ndarray, max_iter: int, tol: float, patience: int = 50
) -> tuple[np.ndarray, float, int]:
    """Projected subgradient on ``J`` with steps ``a / sqrt(iter)``; returns the best iterate."""
    c = c0.copy()
    best_c, best_val = c.copy(), np.inf
    stall, scale = 0, None
    it = 0
    for it in range(1, max_iter + 1):
        value, sub = wasserstein(scenario, c)
        value += float(np.sum(scenario.total_waits(c)))
        grad = sub + scenario.marginal_waits(c)
        grad -= grad.mean()
        if value < best_val - tol:
            best_c, best_val, stall = c.copy(), value, 0
        else:
            stall += 1
            if stall >= patience:
                break
        norm = float(np.linalg.norm(grad))
        if norm == 0.0:
            break
        if scale is None:
            # first step moves the loads by at most 0.1
            scale = 0.1 / norm
        c = project_to_simplex(c - scale / np.sqrt(it) * grad)
    return best_c, best_val, it


def _marginal_demand(scenario: Scenario):
    queues = scenario.queues

    def demand(w, eps):
        bounds = np.array([q.marginal_wait_preimage(float(wj), eps) for q, wj in zip(queues, w)])
        return bounds[:, 0], bounds[:, 1]

    return demand


def _scan_two_sites(scenario: Scenario) -> tuple[Partition, float]:
    """Exact minimiser of the social cost over cuts along the gap (any queues).

    For two sites every optimal transport plan is such a cut, so scanning the
    cut position, with the boundary cell split continuously, is exhaustive.
    """
    profile = scenario.gap_profile
    order = profile.order
    mu = scenario.mass[order]
    d1, d2 = scenario.costs[order, 0], scenario.costs[order, 1]
    q1, q2 = scenario.queues
    loads = np.concatenate([[0.0], np.cumsum(mu)])
    loads[-1] = 1.0
    # cost when the first i sorted cells use site 1
    head = np.concatenate([[0.0], np.cumsum(mu * d1)])
    tail = np.concatenate([np.cumsum((mu * d2)[::-1])[::-1], [0.0]])
    travel = head + tail
    total = travel + q1.total_wait(loads) + q2.total_wait(1.0 - loads)
    i_best = int(np.argmin(total))
    best = (float(total[i_best]), i_best, 0.0)

    # split the next or previous cell fractionally
    for i in (i_best - 1, i_best):
        if i < 0 or i >= mu.size:
            continue

        def cost(frac, i=i):
            load = min(loads[i] + frac * mu[i], 1.0)
            return (
                travel[i]
                + frac * mu[i] * (d1[i] - d2[i])
                + float(q1.total_wait(load))
                + float(q2.total_wait(1.0 - load))
            )

        res = minimize_scalar(cost, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-12})
        if res.fun < best[0]:
            best = (float(res.fun), i, float(res.x))
    _, i, frac = best
    shares = np.zeros((mu.size, 2))
    shares[order[:i], 0] = 1.0
    shares[order[i:], 1] = 1.0
    if frac > 0 and i < mu.size:
        shares[order[i]] = (frac, 1.0 - frac)
    return Partition.from_shares(shares, scenario.mass), best[0]


def solve_optimum(
    scenario: Scenario,
    tol: float = 1e-8,
    max_iter: int = 100,
    seed: int = 0,
) -> OptimumResult:
    """Minimise the social cost.

    Convex total waits: projected subgradient from the nearest-site loads,
    then an exact dual relaxation whose demand is the preimage of the
    marginal waits. Non-convex: an exhaustive cut scan for two sites, or the
    best of several subgradient runs otherwise (a stationary point, flagged
    through ``uniqueness_certified = False``).
    """
    convex = all(q.has_convex_total_wait for q in scenario.queues)
    voronoi = weighted_partition(scenario, np.zeros(scenario.k)).masses
    if convex:
        c, _, iters = _subgradient_descent(scenario, voronoi, max_iter, tol)
        demand = _marginal_demand(scenario)
        w, residual, polish = relax_weights(scenario, demand, scenario.marginal_waits(c), tol=1e-12)
        partition = plan_for_demand(scenario, w, demand)
        converged = residual <= max(tol, 1e-9)
        iters += polish
    elif scenario.k == 2:
        partition, _ = _scan_two_sites(scenario)
        converged, iters = True, partition.masses.size
    else:
        rng = np.random.default_rng(seed)
        starts = [voronoi] + [rng.dirichlet(np.ones(scenario.k)) for _ in range(4)]
        runs = [_subgradient_descent(scenario, s, max_iter, tol) for s in starts]
        c, _, iters = min(runs, key=lambda r: r[1])
        partition = transport_plan(scenario, dual_ascent(scenario, c), c)
        converged = True
    loads = partition.masses
    return OptimumResult(
        partition=partition,
        loads=loads,
        total_cost=total_social_cost(scenario, partition),
        cns_residual=verify_cns(scenario, partition),
        converged=bool(converged),
        uniqueness_certified=convex,
        cns_advisory=_advisory(scenario, loads),
        iterations=int(iters),
    )


def solve_optimum_k2(
    scenario: Scenario,
    tol: float = 1e-12,
    mass_fn: Optional[Callable[[float], float]] = None,
) -> OptimumResult:
    """Two-service optimum from the first-order condition alone.

    Finds the cut ``t`` solving ``t = mw_2(1 - m(t)) - mw_1(m(t))`` with ``mw``
    the marginal waits. Requires convex total waits (so the map is
    monotone); otherwise defers to ``solve_optimum``. ``mass_fn`` substitutes
    an exact continuum ``m`` for the grid one.
    """
    if scenario.k != 2:
        raise ValueError(f"solve_optimum_k2 needs 2 services, got {scenario.k}")
    if not all(q.has_convex_total_wait for q in scenario.queues):
        return solve_optimum(scenario)
    q1, q2 = scenario.queues
    root: ThresholdRoot = solve_threshold(
        scenario,
        lambda s: float(q1.marginal_wait(s)),
        lambda s: float(q2.marginal_wait(s)),
        mass_fn=mass_fn,
        tol=tol,
    )
    partition = (
        threshold_partition(scenario, root.t)
        if mass_fn
        else threshold_partition(scenario, root.t, root.load, root.load2)
    )
    loads = np.array([root.load, 1.0 - root.load]) if mass_fn else partition.masses
    return OptimumResult(
        partition=partition,
        loads=loads,
        total_cost=total_social_cost(scenario, partition),
        cns_residual=verify_cns(scenario, partition),
        converged=root.residual <= max(tol, 1e-9),
        uniqueness_certified=True,
        cns_advisory=_advisory(scenario, loads),
        threshold=root.t,
    )
