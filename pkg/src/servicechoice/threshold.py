"""Two-service threshold machinery.

With two services every sensible partition is a cut along the travel-cost
gap ``tau(x) = |x - x_1|**p - |x - x_2|**p``: cells with ``tau < t`` use
site 1. Both the equilibrium and the optimum solve a scalar equation

    t = a_2(1 - m(t)) - a_1(m(t))

for non-decreasing per-site prices ``a_i`` (``h_i`` for the equilibrium,
the marginal waits for the optimum). On the grid ``m`` jumps at each cell's
gap, so the root may sit on a jump; the cells at that gap are then split so
that the equation holds exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .city import Scenario, travel_cost_gap
from .transport import Partition

__all__ = ["ThresholdRoot", "solve_threshold", "threshold_partition", "price_bracket"]

Price = Callable[[float], float]


@dataclass(frozen=True)
class ThresholdRoot:
    """Root of the threshold equation.

    ``load`` is the site-1 load at the root; it differs from the strict mass
    below ``t`` when the root sits on a jump and boundary cells are split.
    """

    t: float
    load: float
    residual: float
    on_jump: bool
    load2: Optional[float] = None

    @property
    def loads(self) -> tuple[float, float]:
        return self.load, (1.0 - self.load if self.load2 is None else self.load2)


def price_bracket(scenario: Scenario, price1: Price, price2: Price) -> tuple[float, float]:
    """Interval guaranteed to contain the root: outside the gap range the map is ``t - const``."""
    profile = scenario.gap_profile
    spread = sum(abs(f(s)) for f in (price1, price2) for s in (0.0, 1.0))
    return float(profile.gaps[0]) - spread - 1.0, float(profile.gaps[-1]) + spread + 1.0


def _balance(t: float, load: float, price1: Price, price2: Price) -> float:
    return t - price2(1.0 - load) + price1(load)


def solve_threshold(
    scenario: Scenario,
    price1: Price,
    price2: Price,
    mass_fn: Optional[Callable[[float], float]] = None,
    tol: float = 1e-12,
) -> ThresholdRoot:
    """Root of ``t - price2(1 - m(t)) + price1(m(t))`` for non-decreasing prices.

    ``mass_fn`` replaces the grid's ``m`` by an exact continuum profile; the
    bisection then runs to ``tol`` and no cells are split.
    """
    profile = scenario.gap_profile
    lo, hi = price_bracket(scenario, price1, price2)
    mass = mass_fn if mass_fn is not None else profile.below

    def balance(t):
        return _balance(t, min(max(mass(t), 0.0), 1.0), price1, price2)

    if balance(lo) >= 0 or balance(hi) < 0:
        raise RuntimeError("threshold bracket has no sign change; are the prices non-decreasing?")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or (mass_fn is not None and hi - lo <= tol):
            break
        if balance(mid) >= 0:
            hi = mid
        else:
            lo = mid
    if mass_fn is not None:
        t = 0.5 * (lo + hi)
        load = float(mass_fn(t))
        return ThresholdRoot(t, load, abs(_balance(t, load, price1, price2)), False)

    # balance(lo) < 0 <= balance(hi) with lo, hi adjacent floats. The mass
    # below t is left-continuous, so a jump sits at a gap value in [lo, hi).
    j = int(np.searchsorted(profile.gaps, lo, side="left"))
    if j < profile.gaps.size and profile.gaps[j] < hi:
        jump = float(profile.gaps[j])
        m_left, m_right = profile.below(jump), profile.at_or_below(jump)
        if _balance(jump, m_left, price1, price2) >= 0:
            t, load, on_jump = price2(1 - m_left) - price1(m_left), m_left, False
        elif _balance(jump, m_right, price1, price2) < 0:
            t, load, on_jump = price2(1 - m_right) - price1(m_right), m_right, False
        else:
            return _split_root(scenario, jump, m_left, m_right, price1, price2)
    else:
        load = profile.below(hi)
        t = price2(1 - load) - price1(load)
        on_jump = False
    return ThresholdRoot(float(t), float(load), abs(_balance(t, load, price1, price2)), on_jump)


def _split_root(scenario: Scenario, jump: float, m_left: float, m_right: float, price1: Price, price2: Price) -> ThresholdRoot:
    """Root on a jump: bisect the load of the cells whose gap equals ``jump``.

    The smaller of the two loads is bisected directly, summed from its own
    side, so a tiny load is not lost to cancellation in ``1 - m``.
    """
    gaps = travel_cost_gap(scenario)
    mu = scenario.mass
    if m_left <= 0.5:
        a, b = m_left, m_right

        def pair(x):
            return x, 1.0 - x
    else:
        above = float(mu[gaps > jump].sum())
        a, b = above, above + float(mu[gaps == jump].sum())

        def pair(x):
            return 1.0 - x, x

    def bal(x):
        l1, l2 = pair(x)
        return jump - price2(l2) + price1(l1)

    increasing = m_left <= 0.5
    for _ in range(200):
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break
        if (bal(mid) >= 0) == increasing:
            b = mid
        else:
            a = mid
    # pick the end with the smaller residual
    x = a if abs(bal(a)) <= abs(bal(b)) else b
    l1, l2 = pair(x)
    # only report the site-2 load when it was the one bisected
    return ThresholdRoot(jump, float(l1), abs(bal(x)), True, load2=None if increasing else float(l2))


def threshold_partition(
    scenario: Scenario, t: float, load: Optional[float] = None, load2: Optional[float] = None
) -> Partition:
    """Cells with gap below ``t`` to site 1, above to site 2.

    Cells whose gap equals ``t`` go to site 2 unless ``load`` asks for more
    site-1 mass, in which case they are split evenly to reach it. ``load2``,
    when given, fixes the split from the site-2 side instead.
    """
    gaps = travel_cost_gap(scenario)
    mu = scenario.mass
    shares = np.zeros((gaps.size, 2))
    below = gaps < t
    shares[below, 0] = 1.0
    shares[~below, 1] = 1.0
    at = gaps == t
    pool = mu[at].sum()
    if load2 is not None and pool > 0:
        frac2 = np.clip((load2 - mu[gaps > t].sum()) / pool, 0.0, 1.0)
        shares[at, 0] = 1.0 - frac2
        shares[at, 1] = frac2
    elif load is not None and pool > 0:
        frac = np.clip((load - mu[below].sum()) / pool, 0.0, 1.0)
        shares[at, 0] = frac
        shares[at, 1] = 1.0 - frac
    return Partition.from_shares(shares, mu)
