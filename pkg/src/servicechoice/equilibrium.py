"""Nash equilibrium of the service-choice game.

A partition is an equilibrium when no citizen can lower their own cost
``|x - x_i|**p + h_i(c_i)`` by switching site. Two solvers are provided:

* two services, non-decreasing queues: the cut ``t`` solving
  ``t = h_2(1 - m(t)) - h_1(m(t))``;
* any number of services: the social optimum of a surrogate scenario whose
  queues are the running averages ``g_i``, since ``t g_i(t)`` has derivative
  ``h_i(t)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .city import Scenario
from .optimum import solve_optimum
from .queues import AveragedQueue
from .threshold import solve_threshold, threshold_partition
from .transport import Partition, transport_cost

__all__ = [
    "EquilibriumResult",
    "DualCertificate",
    "ParetoReport",
    "queue_gap",
    "threshold_residual",
    "solve_equilibrium_k2",
    "solve_equilibrium_general",
    "individual_cost_field",
    "verify_ce",
    "dual_certificate",
    "dominates",
    "pareto_spot_check",
]

FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class EquilibriumResult:
    partition: Partition
    loads: np.ndarray
    queue_times: np.ndarray
    ce_residual: float
    dual_feasible: bool
    uniqueness_certified: bool
    t_bar: Optional[float] = None


@dataclass(frozen=True, eq=False)
class DualCertificate:
    """Kantorovich pair built from an equilibrium candidate.

    ``u`` is the individual cost field and ``v_i = -h_i(c_i)``. ``feasible``
    means ``u(x) + v_j <= |x - x_j|**p`` everywhere (to 1e-9) and the pair
    reproduces the transport cost of the partition.
    """

    u: np.ndarray
    v: np.ndarray
    feasible: bool
    max_violation: float
    identity_gap: float


@dataclass(frozen=True, eq=False)
class ParetoReport:
    dominated: bool
    trials: int
    witness: Optional[Partition] = None


def _require_two(scenario: Scenario) -> None:
    if scenario.k != 2:
        raise ValueError(f"operation needs exactly 2 services, scenario has {scenario.k}")


def queue_gap(scenario: Scenario, t, atomic: bool = False):
    """``G(t) = h_2(1 - m(t)) - h_1(m(t))``: the cut citizens react to the next day.

    By default ``m`` spreads each cell's mass over its gap range, so ``G`` is
    continuous; ``atomic=True`` uses the strict mass below ``t`` instead.
    """
    _require_two(scenario)
    q1, q2 = scenario.queues
    profile = scenario.gap_profile
    m = profile.below(t) if atomic else profile.smooth(t)
    return q2.value(1.0 - m) - q1.value(m)


def threshold_residual(scenario: Scenario, t, atomic: bool = False):
    """``U(t) = t - G(t)``; its root is the equilibrium cut."""
    return t - queue_gap(scenario, t, atomic)


def individual_cost_field(scenario: Scenario, partition: Partition) -> np.ndarray:
    """Per-cell cost ``|x - x_i|**p + h_i(c_i)``, share-weighted for split cells."""
    full = scenario.costs + scenario.queue_values(partition.masses)
    return np.sum(partition.shares * full, axis=1)


def verify_ce(scenario: Scenario, partition: Partition, share_tol: float = 1e-12) -> float:
    """Largest amount by which some citizen could gain by switching site."""
    full = scenario.costs + scenario.queue_values(partition.masses)
    best = full.min(axis=1, keepdims=True)
    used = partition.shares > share_tol
    return float(np.max(np.where(used, full - best, 0.0)))


def dual_certificate(scenario: Scenario, partition) -> DualCertificate:
    """Check the transport duality that characterises equilibria."""
    if isinstance(partition, EquilibriumResult):
        partition = partition.partition
    u = individual_cost_field(scenario, partition)
    v = -scenario.queue_values(partition.masses)
    violation = float(np.max(u[:, None] + v[None, :] - scenario.costs))
    identity = abs(transport_cost(scenario, partition) - (scenario.mass @ u + partition.masses @ v))
    feasible = violation <= FEASIBILITY_TOL and identity <= FEASIBILITY_TOL
    return DualCertificate(u, v, bool(feasible), max(violation, 0.0), float(identity))


def _result(scenario: Scenario, partition: Partition, certified: bool, t_bar=None) -> EquilibriumResult:
    loads = partition.masses
    return EquilibriumResult(
        partition=partition,
        loads=loads,
        queue_times=scenario.queue_values(loads),
        ce_residual=verify_ce(scenario, partition),
        dual_feasible=dual_certificate(scenario, partition).feasible,
        uniqueness_certified=certified,
        t_bar=t_bar,
    )


def solve_equilibrium_k2(scenario: Scenario, tol: float = 1e-10) -> EquilibriumResult:
    """Equilibrium cut for two services with non-decreasing queues.

    Raises ``ValueError`` when a queue is not monotone: uniqueness then fails
    and ``solve_equilibrium_general`` should be used instead.
    """
    _require_two(scenario)
    if not all(q.is_monotone for q in scenario.queues):
        raise ValueError("queues must be non-decreasing for the threshold solver")
    q1, q2 = scenario.queues
    root = solve_threshold(scenario, lambda s: float(q1.value(s)), lambda s: float(q2.value(s)), tol=tol)
    partition = threshold_partition(scenario, root.t, root.load, root.load2)
    return _result(scenario, partition, True, t_bar=root.t)


def solve_equilibrium_general(
    scenario: Scenario, tol: float = 1e-8, max_iter: int = 100
) -> EquilibriumResult:
    """Equilibrium as the social optimum of the averaged-queue surrogate."""
    surrogate = scenario.with_queues([AveragedQueue(q) for q in scenario.queues])
    opt = solve_optimum(surrogate, tol=tol, max_iter=max_iter)
    certified = all(q.is_monotone for q in scenario.queues)
    return _result(scenario, opt.partition, certified)


def dominates(scenario: Scenario, other: Partition, base: Partition, tol: float = 1e-12) -> bool:
    """True when ``other`` costs no citizen more than ``base`` and some positive mass strictly less."""
    c_other = individual_cost_field(scenario, other)
    c_base = individual_cost_field(scenario, base)
    if np.any(c_other > c_base + tol):
        return False
    return bool(scenario.mass[c_other < c_base - tol].sum() > 0)


def pareto_spot_check(
    scenario: Scenario, partition: Partition, trials: int = 500, seed: int = 0
) -> ParetoReport:
    """Hunt for a partition that dominates ``partition``.

    Two services: random shifts of the cut. Otherwise: random perturbations
    of the equilibrium weights ``h_i(c_i)``. Finding one on an instance with
    strictly increasing queues would contradict the theory, so it flags a bug.
    """
    from .transport import weighted_partition

    rng = np.random.default_rng(seed)
    costs = scenario.costs
    spread = float(np.ptp(costs)) + 1e-12
    base_w = scenario.queue_values(partition.masses)
    for _ in range(trials):
        # perturbation sizes spread over several decades
        scale = spread * 10 ** rng.uniform(-4.0, -0.5)
        if scenario.k == 2:
            gaps = costs[:, 0] - costs[:, 1]
            cut = float(np.quantile(gaps, partition.masses[0])) + rng.normal(scale=scale)
            other = threshold_partition(scenario, cut)
        else:
            other = weighted_partition(scenario, base_w + rng.normal(scale=scale, size=scenario.k))
        if dominates(scenario, other, partition):
            return ParetoReport(True, trials, other)
    return ParetoReport(False, trials)
