"""Semi-discrete optimal transport from the gridded population to the sites.

Weights ``w`` act as additive offsets: a cell goes to the site minimising
``|x - x_j|**p + w_j``. ``w`` is the negative of the Kantorovich potential
on the sites and is canonicalised so that the last entry is zero.

The dual is maximised by an exact ascent along subset directions
(``_relax``): shift the weights of a group of sites together, choose the
step by exact line search, repeat until the Hall-type conditions for a
tie-splitting plan hold. Cells that end up tied between sites are split
fractionally, so any target on the simplex is met exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .city import Scenario

__all__ = [
    "Partition",
    "DualAscentError",
    "weighted_partition",
    "transport_cost",
    "transport_plan",
    "dual_ascent",
    "wasserstein",
    "lp_oracle",
    "check_simplex",
]

LP_MAX_CELLS = 10_000
LP_MAX_SITES = 8


class DualAscentError(RuntimeError):
    """Raised when the dual ascent stops before meeting its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of every cell's population to the sites.

    ``shares[x, j]`` is the fraction of cell ``x`` sent to site ``j``; rows
    sum to one. Deterministic partitions have 0/1 rows. ``masses`` are the
    resulting service loads.
    """

    shares: np.ndarray
    masses: np.ndarray

    @classmethod
    def from_assignment(cls, assign, mass: np.ndarray, k: int) -> "Partition":
        assign = np.asarray(assign, dtype=np.intp)
        if assign.shape != mass.shape:
            raise ValueError("assignment and density sizes differ")
        if assign.size and (assign.min() < 0 or assign.max() >= k):
            raise ValueError("site index out of range")
        shares = np.zeros((assign.size, k))
        shares[np.arange(assign.size), assign] = 1.0
        return cls(shares, np.bincount(assign, weights=mass, minlength=k))

    @classmethod
    def from_shares(cls, shares, mass: np.ndarray) -> "Partition":
        shares = np.asarray(shares, dtype=float)
        if shares.ndim != 2 or shares.shape[0] != mass.size:
            raise ValueError("shares must be (n_cells, k)")
        if np.any(shares < -1e-15) or np.any(np.abs(shares.sum(axis=1) - 1) > 1e-9):
            raise ValueError("share rows must be nonnegative and sum to 1")
        return cls(shares, mass @ shares)

    @property
    def k(self) -> int:
        return self.shares.shape[1]

    @property
    def assign(self) -> np.ndarray:
        """Main site of every cell (lowest index on equal shares)."""
        return np.argmax(self.shares, axis=1)

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.shares == 0) | (self.shares == 1)))

    @property
    def split_cells(self) -> np.ndarray:
        return np.flatnonzero(np.count_nonzero(self.shares, axis=1) > 1)


def check_simplex(c, k: int, tol: float = 1e-9) -> np.ndarray:
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.size != k:
        raise ValueError(f"expected {k} loads, got {c.size}")
    if np.any(~np.isfinite(c)) or np.any(c < -tol) or abs(c.sum() - 1.0) > tol:
        raise ValueError(f"loads are not on the unit simplex: {c}")
    c = np.clip(c, 0.0, None)
    return c / c.sum()


def weighted_partition(scenario: Scenario, weights) -> Partition:
    """Send each cell to ``argmin_j |x - x_j|**p + w_j`` (lowest index on ties)."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (scenario.k,) or np.any(np.isnan(w)):
        raise ValueError("weights must be a length-k vector")
    assign = np.argmin(scenario.costs + w, axis=1)
    return Partition.from_assignment(assign, scenario.mass, scenario.k)


def transport_cost(scenario: Scenario, partition: Partition) -> float:
    """``sum_x mass(x) * sum_j share(x, j) * |x - x_j|**p``."""
    return float(np.sum(scenario.mass * np.sum(partition.shares * scenario.costs, axis=1)))


# --------------------------------------------------------------------------
# exact dual ascent
# --------------------------------------------------------------------------
Demand = Callable[[np.ndarray, float], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class _Subsets:
    member: np.ndarray  # (n_subsets, k) bool
    reach: np.ndarray  # (n_subsets, 2**k) cells whose tie set meets T
    inside: np.ndarray  # (n_subsets, 2**k) cells whose tie set lies in T

    @classmethod
    def build(cls, k: int, include_full: bool) -> "_Subsets":
        top = 2**k if include_full else 2**k - 1
        codes = np.arange(1, top)
        masks = np.arange(2**k)
        member = ((codes[:, None] >> np.arange(k)) & 1).astype(bool)
        reach = (codes[:, None] & masks[None, :]) != 0
        inside = ((masks[None, :] & ~codes[:, None]) == 0) & (masks[None, :] != 0)
        return cls(member, reach.astype(float), inside.astype(float))


def _tie_codes(adj: np.ndarray, eps: float) -> np.ndarray:
    u = adj.min(axis=1)
    tied = adj <= u[:, None] + eps
    return tied @ (1 << np.arange(adj.shape[1]))


def _first_crossing(
    violation: Callable[[float], float],
    breaks: np.ndarray,
    scale: float,
    slack: float,
    eps: float,
    fallback: float,
) -> float:
    """Smallest ``s >= 0`` with ``violation(s) <= slack`` for a non-increasing map.

    ``breaks`` are sorted points where ``violation`` may jump. Cells count
    as tied within ``eps``, so a crossing found just below a break is moved
    onto it; the cell then ties exactly instead of hovering past tolerance.
    When rounding keeps ``violation`` above ``slack`` forever, the looser
    ``fallback`` is used instead.
    """
    hi = max(scale, 1e-12)
    first_loose = None
    for _ in range(200):
        v = violation(hi)
        if v <= slack:
            break
        if first_loose is None and v <= fallback:
            first_loose = hi
        hi *= 2.0
    else:
        if first_loose is None:
            raise DualAscentError("line search found no bracket", float(violation(hi)))
        hi, slack = first_loose, fallback
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if violation(mid) <= slack:
            hi = mid
        else:
            lo = mid
    if breaks.size:
        j = np.searchsorted(breaks, lo, side="left")
        if j < breaks.size and breaks[j] <= hi + 2.0 * eps:
            return float(breaks[j])
    return hi


def _relax(
    costs: np.ndarray,
    mu: np.ndarray,
    demand: Demand,
    w0: np.ndarray,
    tol: float,
    max_iter: int,
    gauge_free: bool,
) -> tuple[np.ndarray, float, int]:
    """Maximise ``sum_x mu_x min_j(costs_xj + w_j) - sum_j conj_j(w_j)``.

    ``demand(w, eps)`` returns the interval ``[lo_j, hi_j]`` of loads the
    sites accept at weights ``w`` (the subdifferential of the conjugate).
    Returns weights, final Hall residual, iterations used.
    """
    n, k = costs.shape
    subsets = _Subsets.build(k, include_full=not gauge_free)
    w = np.array(w0, dtype=float)
    scale = float(np.max(np.abs(costs))) + 1.0
    residual = np.inf
    for it in range(max_iter + 1):
        eps = 1e-12 * (scale + float(np.max(np.abs(w))))
        adj = costs + w
        codes = _tie_codes(adj, eps)
        by_mask = np.bincount(codes, weights=mu, minlength=2**k)
        lo, hi = demand(w, eps)
        down = subsets.member @ lo - subsets.reach @ by_mask
        up = subsets.inside @ by_mask - subsets.member @ hi
        i_down, i_up = int(np.argmax(down)), int(np.argmax(up))
        residual = max(down[i_down], up[i_up], 0.0)
        if residual <= tol or it == max_iter:
            break
        going_down = down[i_down] >= up[i_up]
        T = subsets.member[i_down if going_down else i_up]
        best_in = adj[:, T].min(axis=1)
        best_out = adj[:, ~T].min(axis=1) if (~T).any() else np.full(n, np.inf)
        if going_down:
            # lowering w_T by s pulls in every cell with gap <= s
            gap = best_in - best_out
            order = np.argsort(gap, kind="stable")
            breaks = gap[order]
            cum = np.concatenate([[0.0], np.cumsum(mu[order])])

            def violation(s, T=T, breaks=breaks, cum=cum):
                shifted = w.copy()
                shifted[T] -= s
                reach = cum[np.searchsorted(breaks, s + eps, side="right")]
                return demand(shifted, eps)[0][T].sum() - reach

            step = _first_crossing(violation, breaks[breaks > 0], scale, min(0.5 * tol, 1e-13), eps, 0.5 * tol)
            w[T] -= step
        else:
            # raising w_T by s releases every cell with gap <= s
            gap = best_out - best_in
            order = np.argsort(gap, kind="stable")
            breaks = gap[order]
            cum_tail = np.concatenate([np.cumsum(mu[order][::-1])[::-1], [0.0]])

            def violation(s, T=T, breaks=breaks, cum_tail=cum_tail):
                shifted = w.copy()
                shifted[T] += s
                inside = cum_tail[np.searchsorted(breaks, s + eps, side="right")]
                return inside - demand(shifted, eps)[1][T].sum()

            step = _first_crossing(
                violation, breaks[np.isfinite(breaks) & (breaks > 0)], scale, min(0.5 * tol, 1e-13), eps, 0.5 * tol
            )
            w[T] += step
    return w, float(residual), it


def _fixed_demand(target: np.ndarray) -> Demand:
    return lambda w, eps: (target, target)


def _split_ties(
    costs: np.ndarray, mu: np.ndarray, w: np.ndarray, lo: np.ndarray, hi: np.ndarray
) -> np.ndarray:
    """Shares supported on the cheapest sites with site loads in ``[lo, hi]``."""
    n, k = costs.shape
    adj = costs + w
    eps = 1e-12 * (float(np.max(np.abs(costs))) + float(np.max(np.abs(w))) + 1.0)
    tied = adj <= adj.min(axis=1)[:, None] + eps
    multi = tied.sum(axis=1) > 1
    shares = np.zeros((n, k))
    single = ~multi
    shares[single, np.argmax(tied[single], axis=1)] = 1.0
    if not multi.any():
        return shares
    fixed = mu @ shares
    lo_r, hi_r = lo - fixed, hi - fixed
    cells = np.flatnonzero(multi)
    if k == 2:
        pool = mu[cells].sum()
        x_lo = max(0.0, lo_r[0], pool - hi_r[1])
        x_hi = min(pool, hi_r[0], pool - lo_r[1])
        x = 0.5 * (x_lo + x_hi) if x_lo <= x_hi else min(max(lo_r[0], 0.0), pool)
        frac = x / pool if pool > 0 else 0.5
        shares[cells, 0] = frac
        shares[cells, 1] = 1.0 - frac
        return shares
    pairs = [(c, j) for c in cells for j in np.flatnonzero(tied[c])]
    n_var = len(pairs)
    rows = {c: r for r, c in enumerate(cells)}
    a_eq = sparse.lil_matrix((len(cells), n_var))
    a_site = sparse.lil_matrix((k, n_var))
    for v, (c, j) in enumerate(pairs):
        a_eq[rows[c], v] = 1.0
        a_site[j, v] = 1.0
    a_site = a_site.tocsr()
    res = linprog(
        np.zeros(n_var),
        A_ub=sparse.vstack([a_site, -a_site]),
        b_ub=np.concatenate([hi_r, -lo_r]) + 1e-13,
        A_eq=a_eq.tocsr(),
        b_eq=mu[cells],
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10},
    )
    x = res.x if res.status == 0 else np.array([mu[c] / tied[c].sum() for c, _ in pairs])
    x = np.clip(x, 0.0, None)
    for v, (c, j) in enumerate(pairs):
        shares[c, j] = x[v]
    row = shares[cells].sum(axis=1)
    shares[cells] /= row[:, None]
    return shares


def _canonical(w: np.ndarray) -> np.ndarray:
    return w - w[-1]


def _dual_solve(scenario: Scenario, c: np.ndarray, tol: float, max_iter: int):
    w, residual, _ = _relax(
        scenario.costs, scenario.mass, _fixed_demand(c), np.zeros(scenario.k), tol, max_iter, True
    )
    if residual > tol:
        raise DualAscentError("dual ascent did not converge", residual)
    return _canonical(w)


def dual_ascent(scenario: Scenario, target, tol: float = 1e-8, max_iter: int = 10_000) -> np.ndarray:
    """Weights whose optimal transport plan has loads ``target``.

    Sites with zero target get a sentinel weight above every adjusted cost,
    so ``weighted_partition`` never uses them. When a target is not a sum of
    whole cells the boundary cells are tied; ``transport_plan`` splits them.
    """
    c = check_simplex(target, scenario.k)
    w = _dual_solve(scenario, c, tol, max_iter)
    empty = c == 0
    if empty.any():
        adj = scenario.costs[:, ~empty] + w[~empty]
        sentinel = float(np.max(adj.min(axis=1)[:, None] - scenario.costs[:, empty])) + 1.0
        w = w.copy()
        w[empty] = np.maximum(w[empty], sentinel)
        w = _canonical(w)
    return w


def transport_plan(scenario: Scenario, weights, target) -> Partition:
    """Optimal plan at ``weights`` with tied cells split to hit ``target``."""
    c = check_simplex(target, scenario.k)
    shares = _split_ties(scenario.costs, scenario.mass, np.asarray(weights, float), c, c)
    return Partition.from_shares(shares, scenario.mass)


def wasserstein(scenario: Scenario, c, tol: float = 1e-10, max_iter: int = 10_000):
    """``W_p**p`` from the population to the atomic measure with loads ``c``.

    Returns ``(value, subgradient)``; the subgradient is ``-w`` and is only
    meaningful up to a common additive constant. For empty sites the entry
    is the marginal value of the first unit of mass there.
    """
    c = check_simplex(c, scenario.k)
    w = _dual_solve(scenario, c, tol, max_iter)
    adj = scenario.costs + w
    u = adj.min(axis=1)
    value = float(scenario.mass @ u - c @ w)
    empty = c == 0
    if empty.any():
        # smallest weight that keeps the site unused: the tight dual value
        w = w.copy()
        w[empty] = np.max(u[:, None] - scenario.costs[:, empty], axis=0)
    return value, -w


def lp_oracle(scenario: Scenario, c) -> float:
    """Exact optimum of the finite transportation problem (HiGHS)."""
    n, k = scenario.grid.n_cells, scenario.k
    if n > LP_MAX_CELLS or k > LP_MAX_SITES:
        raise ValueError(f"instance too large for the LP oracle ({n} cells, {k} sites)")
    c = check_simplex(c, k)
    rows_cell = sparse.kron(sparse.eye(n), np.ones((1, k)), format="csr")
    rows_site = sparse.kron(np.ones((1, n)), sparse.eye(k), format="csr")
    res = linprog(
        scenario.costs.ravel(),
        A_eq=sparse.vstack([rows_cell, rows_site[:-1]]).tocsr(),
        b_eq=np.concatenate([scenario.mass, c[:-1]]),
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"LP oracle failed: {res.message}")
    return float(res.fun)


def relax_weights(
    scenario: Scenario,
    demand: Demand,
    w0: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 10_000,
) -> tuple[np.ndarray, float, int]:
    """Exact dual ascent with load-dependent demands (no gauge freedom)."""
    return _relax(scenario.costs, scenario.mass, demand, w0, tol, max_iter, False)


def plan_for_demand(
    scenario: Scenario, weights: np.ndarray, demand: Demand, eps: Optional[float] = None
) -> Partition:
    w = np.asarray(weights, dtype=float)
    if eps is None:
        eps = 1e-12 * (float(np.max(np.abs(scenario.costs))) + float(np.max(np.abs(w))) + 1.0)
    lo, hi = demand(w, eps)
    shares = _split_ties(scenario.costs, scenario.mass, w, lo, hi)
    return Partition.from_shares(shares, scenario.mass)
