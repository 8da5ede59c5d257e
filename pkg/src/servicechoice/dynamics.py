"""Day-by-day adjustment dynamics for two services.

Each day citizens observe yesterday's queues and pick a site. With the
threshold ``t`` (a cell uses site 1 when its gap ``tau < t``) and the site-1
load ``m``, tomorrow's threshold is ``G`` applied to today's load:
``h_2(1 - m) - h_1(m)``. Three behaviours are simulated:

* standard: everyone best-responds, ``t_{j+1} = G(t_j)``;
* prudence: a cell only moves a fraction ``1 - rho`` of its population;
* memory: citizens react to an average of ``G`` over past days.

A choice field ``psi`` holds, per cell, the fraction of the population
going to site 2.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .city import Scenario, travel_cost_gap
from .equilibrium import queue_gap, solve_equilibrium_k2, threshold_residual

__all__ = [
    "ChoiceField",
    "Verdict",
    "Trajectory",
    "FixedPrudence",
    "IncreasingPrudence",
    "harmonic_prudence",
    "Window",
    "GlobalMemory",
    "Weighted",
    "geometric_recency",
    "PrudenceBound",
    "standard_step",
    "run_standard",
    "lipschitz_estimate",
    "prudence_step",
    "run_prudence",
    "prudence_bound",
    "memory_step",
    "run_memory",
    "trajectory_export",
    "TRAJECTORY_COLUMNS",
]

HISTORY = 256
MAX_PERIOD = 64
CYCLE_RATIO = 1e-6
TRAJECTORY_COLUMNS = ("day", "t", "m", "queue1", "queue2", "S1", "S2")


def _require_two(scenario: Scenario) -> None:
    if scenario.k != 2:
        raise ValueError(f"dynamics need exactly 2 services, scenario has {scenario.k}")


# --------------------------------------------------------------------------
# data types
# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ChoiceField:
    """Per-cell fraction of the population choosing site 2."""

    psi: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        if psi.ndim != 1 or np.any(~np.isfinite(psi)) or np.any(psi < 0) or np.any(psi > 1):
            raise ValueError("choice field entries must lie in [0, 1]")
        object.__setattr__(self, "psi", psi)

    @classmethod
    def from_threshold(cls, scenario: Scenario, t: float) -> "ChoiceField":
        """Deterministic field: site 1 where the gap is below ``t``."""
        return cls((travel_cost_gap(scenario) >= t).astype(float))

    @classmethod
    def uniform(cls, scenario: Scenario, value: float) -> "ChoiceField":
        return cls(np.full(scenario.grid.n_cells, float(value)))

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.psi == 0) | (self.psi == 1)))

    def load(self, scenario: Scenario) -> float:
        """Mass going to site 1."""
        return float(scenario.mass @ (1.0 - self.psi))


@dataclass(frozen=True)
class Verdict:
    """Outcome of a run: ``converged``, ``cycle`` or ``max_days``."""

    kind: str
    limit: Optional[float] = None
    period: Optional[int] = None
    values: tuple = ()

    def __str__(self) -> str:
        if self.kind == "converged":
            return f"converged t={self.limit:.17g}"
        if self.kind == "cycle":
            return f"cycle period={self.period}"
        return "max days reached"


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Per-day columns plus the verdict.

    ``t[j]`` is the threshold that produced day ``j``'s choices (``nan`` when
    day 0 was given as a field rather than a threshold). ``S1``/``S2`` are
    the masses on the wrong side of the equilibrium cut (``nan`` when no
    unique equilibrium is available).
    """

    t: np.ndarray
    m: np.ndarray
    queue1: np.ndarray
    queue2: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    verdict: Verdict
    final_psi: ChoiceField
    t_bar: Optional[float] = None

    @property
    def n_days(self) -> int:
        return int(self.t.size)


# --------------------------------------------------------------------------
# shared pieces
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class _Reference:
    t_bar: float
    m_bar: float


def _reference(scenario: Scenario) -> Optional[_Reference]:
    try:
        eq = solve_equilibrium_k2(scenario, tol=1e-10)
    except ValueError:
        return None
    return _Reference(float(eq.t_bar), float(eq.loads[0]))


def _next_threshold(scenario: Scenario, m):
    """``h_2(1 - m) - h_1(m)``, vectorised over loads."""
    q1, q2 = scenario.queues
    m = np.clip(m, 0.0, 1.0)
    return q2.value(1.0 - m) - q1.value(m)


def _threshold_split(scenario: Scenario, ref: Optional[_Reference], t: np.ndarray):
    """Wrong-side masses for deterministic threshold fields at each ``t``."""
    if ref is None:
        nan = np.full(t.shape, np.nan)
        return nan, nan
    profile = scenario.gap_profile
    bar_below, bar_upto = profile.below(ref.t_bar), profile.at_or_below(ref.t_bar)
    below = profile.below(t)
    # going to site 1 but gap above the cut, and the reverse
    s1 = np.maximum(below - bar_upto, 0.0)
    s2 = np.maximum(bar_below - below, 0.0)
    return s1, s2


def _find_period(history: Sequence[float], tol: float, span: int = 1) -> Optional[int]:
    """Shortest period p >= 2 whose last ``max(p, span)`` values repeat within ``tol``."""
    h = np.asarray(history, dtype=float)
    n = h.size
    for p in range(2, MAX_PERIOD + 1):
        need = max(p, span)
        if n < p + need:
            break
        if abs(h[-1] - h[-1 - p]) > tol:
            continue
        # decaying oscillations and slow drifts are not cycles: the repeat
        # must be tight compared with how far the values move
        mismatch = float(np.max(np.abs(h[n - need:] - h[n - need - p: n - p])))
        if mismatch <= min(tol, CYCLE_RATIO * np.ptp(h[n - need - p:])):
            return p
    return None


def _is_converged(steps: deque, residual: float, tol: float) -> bool:
    return len(steps) == 3 and max(steps) < tol and abs(residual) < 10.0 * tol


# --------------------------------------------------------------------------
# standard evolution
# --------------------------------------------------------------------------
def standard_step(scenario: Scenario, t: float) -> float:
    """Tomorrow's threshold ``G(t)``."""
    return float(queue_gap(scenario, t))


def _pack(scenario, t, m, ref, verdict, final_psi, s1=None, s2=None) -> Trajectory:
    q1, q2 = scenario.queues
    t = np.asarray(t, dtype=float)
    m = np.asarray(m, dtype=float)
    if s1 is None:
        s1, s2 = _threshold_split(scenario, ref, t)
    return Trajectory(
        t=t,
        m=m,
        queue1=q1.value(np.clip(m, 0, 1)),
        queue2=q2.value(np.clip(1 - m, 0, 1)),
        S1=np.asarray(s1, dtype=float),
        S2=np.asarray(s2, dtype=float),
        verdict=verdict,
        final_psi=final_psi,
        t_bar=None if ref is None else ref.t_bar,
    )


def run_standard(
    scenario: Scenario,
    t0: float = 0.0,
    max_days: int = 10_000,
    conv_tol: float = 1e-8,
    detect_cycles: bool = True,
) -> Trajectory:
    """Iterate ``t_{j+1} = G(t_j)`` from ``t0`` (default: everyone to the nearest site).

    Converged: three consecutive steps below ``conv_tol`` and
    ``|U(t)| < 10 conv_tol``. Cycles are matched over the last 256 days.
    """
    _require_two(scenario)
    ref = _reference(scenario)
    ts = [float(t0)]
    steps: deque = deque(maxlen=3)
    verdict = Verdict("max_days")
    for _ in range(max_days - 1):
        nxt = standard_step(scenario, ts[-1])
        steps.append(abs(nxt - ts[-1]))
        ts.append(nxt)
        if _is_converged(steps, threshold_residual(scenario, ts[-2]), conv_tol):
            verdict = Verdict("converged", limit=nxt)
            break
        if detect_cycles:
            p = _find_period(ts[-2 * HISTORY:], conv_tol)
            if p is not None:
                start = len(ts) - 2 * p
                verdict = Verdict("cycle", period=p, values=tuple(ts[start:start + p]))
                break
    m = scenario.gap_profile.smooth(np.asarray(ts))
    final = ChoiceField.from_threshold(scenario, ts[-1])
    return _pack(scenario, ts, m, ref, verdict, final)


def lipschitz_estimate(scenario: Scenario, interval: tuple[float, float], samples: int = 1001) -> float:
    """Largest slope of ``G`` between consecutive points of a uniform sample.

    A lower bound on the true Lipschitz constant that is tight up to the
    sampling resolution (jumps narrower than the spacing are averaged).
    """
    _require_two(scenario)
    lo, hi = map(float, interval)
    if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
        raise ValueError(f"degenerate interval {interval!r}")
    if samples < 2:
        raise ValueError("need at least 2 samples")
    t = np.linspace(lo, hi, samples)
    g = queue_gap(scenario, t)
    return float(np.max(np.abs(np.diff(g)) / np.diff(t)))


# --------------------------------------------------------------------------
# prudence
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class FixedPrudence:
    rho: float

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"prudence must lie in [0, 1], got {self.rho}")

    def rhos(self, first_day: int, count: int) -> np.ndarray:
        return np.full(count, float(self.rho))


@dataclass(frozen=True)
class IncreasingPrudence:
    """Day-dependent prudence ``rule(j)``; the step into day ``j`` uses ``rule(j)``."""

    rule: Callable[[int], float]
    label: str = "custom"

    def rhos(self, first_day: int, count: int) -> np.ndarray:
        out = np.array([self.rule(j) for j in range(first_day, first_day + count)], dtype=float)
        if np.any(~(out >= 0)) or np.any(out > 1):
            raise ValueError("scheduled prudence outside [0, 1]")
        return out


def harmonic_prudence(scale: float = 1.0) -> IncreasingPrudence:
    """``rho_j = max(0, 1 - scale / j)``: tends to 1 with a divergent sum of ``1 - rho_j``."""
    return IncreasingPrudence(lambda j: max(0.0, 1.0 - scale / j), label=f"harmonic({scale:g})")


PrudenceSchedule = Union[FixedPrudence, IncreasingPrudence]


def prudence_step(scenario: Scenario, psi: ChoiceField, rho: float) -> ChoiceField:
    """One day with prudence ``rho``: each cell moves a fraction ``1 - rho`` toward its best reply."""
    _require_two(scenario)
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"prudence must lie in [0, 1], got {rho}")
    t_next = float(_next_threshold(scenario, psi.load(scenario)))
    below = travel_cost_gap(scenario) < t_next
    # psi + (1 - rho)(1 - psi) is 1 - rho (1 - psi), exact when rho = 1
    new = np.where(below, rho * psi.psi, psi.psi + (1.0 - rho) * (1.0 - psi.psi))
    return ChoiceField(new)


@dataclass(frozen=True)
class PrudenceBound:
    """Sufficient prudence for convergence: ``1 - 1 / (K L + 1)``.

    ``K`` bounds the slopes of the queues, ``L`` the slope of ``m``. Both are
    over-estimates, so ``rho_bar`` is sufficient, not necessary.
    """

    K: float
    L: float
    rho_bar: float


def _mass_slope(scenario: Scenario) -> float:
    gaps = travel_cost_gap(scenario)
    grid = scenario.grid
    if grid.dim == 1:
        density = scenario.mass / grid.volumes
        slope = np.abs(np.gradient(gaps, grid.centers[:, 0]))
        with np.errstate(divide="ignore"):
            return float(np.max(np.where(density > 0, density / slope, 0.0)))
    # 2D: histogram of the gap with bins a few cells wide
    width = 4.0 * float(np.max(np.abs(np.diff(np.sort(gaps)))) + np.ptp(gaps) / np.sqrt(gaps.size))
    bins = max(int(np.ptp(gaps) / width), 1)
    hist, edges = np.histogram(gaps, bins=bins, weights=scenario.mass)
    return float(np.max(hist / np.diff(edges)))


def prudence_bound(scenario: Scenario) -> PrudenceBound:
    _require_two(scenario)
    K = float(sum(q.lipschitz_constant for q in scenario.queues))
    L = _mass_slope(scenario)
    if not np.isfinite(K * L):
        return PrudenceBound(K, L, 1.0)
    return PrudenceBound(K, L, 1.0 - 1.0 / (K * L + 1.0))


class _PrudenceEngine:
    """Exact prudence simulation that skips through stretches of equal cuts.

    While the cut keeps the same set of cells below it, cells below evolve as
    ``psi <- psi * P`` and cells above as ``1 - psi <- (1 - psi) * P`` with
    ``P`` the running product of the prudences. So a block of days needs only
    a few masses and a cumulative product; the field is rebuilt at the end.
    """

    def __init__(self, scenario: Scenario, ref: Optional[_Reference]):
        profile = scenario.gap_profile
        self.scenario = scenario
        self.order = profile.order
        self.gaps = profile.gaps
        self.mu = scenario.mass[self.order]
        if ref is None:
            self.wrong1 = self.wrong2 = None
        else:
            self.wrong1 = self.gaps > ref.t_bar  # should use site 2
            self.wrong2 = self.gaps < ref.t_bar  # should use site 1

    def block(self, psi: np.ndarray, cut: int, P: np.ndarray):
        """Loads and wrong-side masses on each day of a block with a fixed cut index."""
        mu = self.mu
        below, above = slice(0, cut), slice(cut, None)
        mu_b = mu[below].sum()
        m = mu_b - P * (mu[below] @ psi[below]) + P * (mu[above] @ (1 - psi[above]))
        if self.wrong1 is None:
            nan = np.full(P.shape, np.nan)
            return m, nan, nan
        w1, w2 = self.wrong1, self.wrong2
        # S1: site-1 mass on cells that should use site 2; S2 the reverse
        s1 = (mu[below] @ w1[below]) - P * (mu[below] @ (w1[below] * psi[below])) + P * (
            mu[above] @ (w1[above] * (1 - psi[above]))
        )
        s2 = P * (mu[below] @ (w2[below] * psi[below])) + (mu[above] @ w2[above]) - P * (
            mu[above] @ (w2[above] * (1 - psi[above]))
        )
        return m, s1, s2

    @staticmethod
    def advance(psi: np.ndarray, cut: int, P: float) -> np.ndarray:
        out = psi.copy()
        out[:cut] *= P
        out[cut:] = 1.0 - (1.0 - out[cut:]) * P
        return out

    def wrong_side(self, psi: np.ndarray):
        if self.wrong1 is None:
            return np.nan, np.nan
        return float(self.mu @ (self.wrong1 * (1 - psi))), float(self.mu @ (self.wrong2 * psi))


def run_prudence(
    scenario: Scenario,
    schedule: PrudenceSchedule,
    psi0: Optional[ChoiceField] = None,
    max_days: int = 10_000,
    conv_tol: float = 1e-8,
    max_block: int = 1 << 16,
) -> Trajectory:
    """Simulate prudent citizens.

    Day 0 is ``psi0`` (default: everyone to the nearest site, recorded with
    ``t = 0``). Converged when both wrong-side masses are below ``conv_tol``
    and ``|m - m_bar|`` is within ``conv_tol`` plus one cell mass: the cell
    straddling the equilibrium cut keeps switching branches on a grid and
    never settles. Cycles are matched on the whole field.
    """
    _require_two(scenario)
    ref = _reference(scenario)
    engine = _PrudenceEngine(scenario, ref)
    if psi0 is None:
        psi0, t0 = ChoiceField.from_threshold(scenario, 0.0), 0.0
    else:
        t0 = np.nan
    psi = psi0.psi[engine.order]
    m0 = float(engine.mu @ (1 - psi))
    s1_0, s2_0 = engine.wrong_side(psi)
    cols = {"t": [np.array([t0])], "m": [np.array([m0])], "S1": [np.array([s1_0])], "S2": [np.array([s2_0])]}

    cell_mass = float(scenario.mass.max())

    def done(m, s1, s2):
        if ref is None:
            return np.zeros(np.shape(m), dtype=bool)
        return (s1 < conv_tol) & (s2 < conv_tol) & (np.abs(m - ref.m_bar) < conv_tol + cell_mass)

    verdict = Verdict("max_days")
    if done(np.array([m0]), np.array([s1_0]), np.array([s2_0]))[0]:
        verdict = Verdict("converged", limit=t0)
    seen: deque = deque(maxlen=HISTORY)
    seen.append((0, psi.copy()))
    day, m, length = 0, m0, 1
    while verdict.kind == "max_days" and day < max_days - 1:
        t_next = float(_next_threshold(scenario, m))
        cut = int(np.searchsorted(engine.gaps, t_next, side="left"))
        length = min(length, max_days - 1 - day)
        P = np.cumprod(schedule.rhos(day + 1, length))
        ms, s1, s2 = engine.block(psi, cut, P)
        follow = _next_threshold(scenario, ms)
        same = np.searchsorted(engine.gaps, follow, side="left") == cut
        # day + r is valid while every earlier day in the block kept the cut
        accepted = length if same[:-1].all() else int(np.argmin(same)) + 1
        ts = np.concatenate([[t_next], follow[: accepted - 1]])
        hit = done(ms[:accepted], s1[:accepted], s2[:accepted])
        if hit.any():
            accepted = int(np.argmax(hit)) + 1
            ts = ts[:accepted]
            verdict = Verdict("converged", limit=float(ts[-1]))
        for key, arr in (("t", ts), ("m", ms), ("S1", s1), ("S2", s2)):
            cols[key].append(arr[:accepted])
        psi = engine.advance(psi, cut, float(P[accepted - 1]))
        day += accepted
        m = float(engine.mu @ (1 - psi))
        length = min(2 * length, max_block) if accepted == length else max(accepted, 1)
        if verdict.kind == "max_days":
            states = list(seen)
            for i, (old_day, old) in enumerate(states):
                mismatch = float(np.max(np.abs(psi - old)))
                if mismatch > conv_tol:
                    continue
                # the field must leave the old state, and come back tightly
                moved = max((float(np.max(np.abs(later - old))) for _, later in states[i + 1:]), default=0.0)
                if mismatch <= CYCLE_RATIO * moved:
                    period = day - old_day
                    t_all = np.concatenate(cols["t"])
                    verdict = Verdict("cycle", period=period, values=tuple(t_all[old_day + 1: day + 1]))
                    break
            seen.append((day, psi.copy()))
    field = np.empty_like(psi)
    field[engine.order] = psi
    joined = {k: np.concatenate(v) for k, v in cols.items()}
    return _pack(scenario, joined["t"], joined["m"], ref, verdict, ChoiceField(field), joined["S1"], joined["S2"])


# --------------------------------------------------------------------------
# memory
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class Window:
    """Average of ``G`` over the last ``kappa`` days."""

    kappa: int

    def __post_init__(self):
        if int(self.kappa) < 1:
            raise ValueError("window length must be at least 1")

    @property
    def min_history(self) -> int:
        return int(self.kappa)

    def weights(self, n: int) -> np.ndarray:
        w = np.zeros(n)
        w[n - self.kappa:] = 1.0 / self.kappa
        return w


@dataclass(frozen=True)
class GlobalMemory:
    """Plain average of ``G`` over every past day."""

    min_history = 1

    def weights(self, n: int) -> np.ndarray:
        return np.full(n, 1.0 / n)


@dataclass(frozen=True)
class Weighted:
    """Weights ``coeff(n, m)`` on day ``m`` of ``n`` (1-based, ``m = n`` most recent).

    Validated on construction for ``n <= check_up_to`` and again on use: each
    row must be in [0, 1], sum to 1 and not decrease toward recent days.
    """

    coeff: Callable[[int, int], float]
    check_up_to: int = 64
    label: str = "custom"
    min_history = 1

    def __post_init__(self):
        for n in range(1, self.check_up_to + 1):
            self.weights(n)

    def weights(self, n: int) -> np.ndarray:
        w = np.array([self.coeff(n, m) for m in range(1, n + 1)], dtype=float)
        if np.any(w < 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"memory weights for n={n} must lie in [0, 1] and sum to 1")
        if np.any(np.diff(w) < -1e-15):
            raise ValueError(f"memory weights for n={n} must not favour older days")
        return w


def geometric_recency(n: int, m: int) -> float:
    """Halving weights by age: day ``m`` of ``n`` gets ``2**-(n-m+1) / (1 - 2**-n)``."""
    return 2.0 ** -(n - m + 1) / (1.0 - 2.0 ** -n)


MemoryScheme = Union[Window, GlobalMemory, Weighted]


def memory_step(scenario: Scenario, history: Sequence[float], scheme: MemoryScheme) -> float:
    """Next threshold: the scheme's weighted mean of ``G`` over ``history`` (oldest first)."""
    _require_two(scenario)
    h = np.asarray(history, dtype=float)
    if h.size < scheme.min_history:
        raise ValueError(f"scheme needs at least {scheme.min_history} past days, got {h.size}")
    return float(scheme.weights(h.size) @ queue_gap(scenario, h))


def run_memory(
    scenario: Scenario,
    scheme: MemoryScheme,
    seeds: Sequence[float],
    max_days: int = 10_000,
    conv_tol: float = 1e-8,
) -> Trajectory:
    """Iterate a memory scheme from the seed days.

    Window schemes detect cycles on the tuple of the last ``kappa`` values;
    the other schemes have unbounded state and only test convergence.
    """
    _require_two(scenario)
    seeds = [float(s) for s in seeds]
    if isinstance(scheme, Window) and len(seeds) != scheme.kappa:
        raise ValueError(f"window of {scheme.kappa} days needs {scheme.kappa} seeds, got {len(seeds)}")
    if len(seeds) < scheme.min_history:
        raise ValueError("not enough seed days")
    ref = _reference(scenario)
    ts = list(seeds)
    gs = list(queue_gap(scenario, np.asarray(ts)))
    running = float(np.sum(gs))
    steps: deque = deque(maxlen=3)
    verdict = Verdict("max_days")
    span = scheme.kappa if isinstance(scheme, Window) else 1
    while len(ts) < max_days:
        n = len(ts)
        if isinstance(scheme, Window):
            nxt = float(np.mean(gs[n - scheme.kappa:]))
        elif isinstance(scheme, GlobalMemory):
            nxt = running / n
        else:
            nxt = float(scheme.weights(n) @ np.asarray(gs))
        steps.append(abs(nxt - ts[-1]))
        ts.append(nxt)
        g = float(queue_gap(scenario, nxt))
        gs.append(g)
        running += g
        if _is_converged(steps, nxt - g, conv_tol):
            verdict = Verdict("converged", limit=nxt)
            break
        if isinstance(scheme, Window):
            p = _find_period(ts[-2 * HISTORY:], conv_tol, span=span)
            if p is not None:
                start = len(ts) - p - max(p, span)
                verdict = Verdict("cycle", period=p, values=tuple(ts[start:start + p]))
                break
    m = scenario.gap_profile.smooth(np.asarray(ts))
    final = ChoiceField.from_threshold(scenario, ts[-1])
    return _pack(scenario, ts, m, ref, verdict, final)


def trajectory_export(trajectory: Trajectory) -> list[tuple]:
    """Rows ``(day, t, m, queue1, queue2, S1, S2)``, one per day."""
    cols = (trajectory.t, trajectory.m, trajectory.queue1, trajectory.queue2, trajectory.S1, trajectory.S2)
    return [(day, *(float(c[day]) for c in cols)) for day in range(trajectory.n_days)]
