"""Discretised city: grid cells, population density, service sites."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np

from .queues import QueueFunction

__all__ = [
    "Grid",
    "Density",
    "Service",
    "Scenario",
    "ThresholdProfile",
    "build_grid",
    "evaluate_density",
    "travel_cost_gap",
    "mass_below",
]


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform cell grid over an axis-aligned box.

    ``centers`` has shape ``(n_cells, dim)``; cells are ordered C-style over
    the per-axis ``shape``.
    """

    lo: np.ndarray
    hi: np.ndarray
    shape: tuple[int, ...]
    centers: np.ndarray
    volumes: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_cells(self) -> int:
        return int(self.volumes.size)

    @property
    def box(self) -> list[tuple[float, float]]:
        return [(float(a), float(b)) for a, b in zip(self.lo, self.hi)]

    @property
    def cell_widths(self) -> np.ndarray:
        return (self.hi - self.lo) / np.asarray(self.shape)

    def contains(self, point) -> bool:
        x = np.asarray(point, dtype=float)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))


def _normalise_box(box) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(box, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] not in (1, 2):
        raise ValueError("box must be (lo, hi) or a list of (lo, hi) pairs for 1 or 2 axes")
    lo, hi = arr[:, 0], arr[:, 1]
    if not (np.all(np.isfinite(arr)) and np.all(hi > lo)):
        raise ValueError(f"degenerate box {box!r}")
    return lo, hi


def build_grid(box, resolution: Union[int, Sequence[int]]) -> Grid:
    """Uniform grid with ``resolution`` cells per axis (at least 2)."""
    lo, hi = _normalise_box(box)
    dim = lo.size
    res = (int(resolution),) * dim if np.ndim(resolution) == 0 else tuple(int(r) for r in resolution)
    if len(res) != dim:
        raise ValueError(f"resolution has {len(res)} axes, box has {dim}")
    if min(res) < 2:
        raise ValueError(f"resolution must be at least 2 per axis, got {res}")
    axes = [lo[a] + (np.arange(res[a]) + 0.5) * (hi[a] - lo[a]) / res[a] for a in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    volume = float(np.prod((hi - lo) / np.asarray(res)))
    volumes = np.full(centers.shape[0], volume)
    return Grid(lo=lo, hi=hi, shape=res, centers=centers, volumes=volumes)


@dataclass(frozen=True, eq=False)
class Density:
    """Per-cell population mass, normalised to total 1."""

    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float)
        if m.ndim != 1 or np.any(~np.isfinite(m)) or np.any(m < 0):
            raise ValueError("density masses must be finite and nonnegative")
        if abs(m.sum() - 1.0) > 1e-12:
            raise ValueError("density masses must sum to 1")
        object.__setattr__(self, "mass", m)


DensitySpec = Union[str, Callable[[np.ndarray], np.ndarray], Sequence[float], np.ndarray]


def evaluate_density(spec: DensitySpec, grid: Grid) -> Density:
    """Sample a density descriptor on ``grid``.

    ``spec`` is ``"uniform"``, a callable mapping ``(n, dim)`` centres to
    values, or a per-cell table. Masses are ``value * volume`` normalised.
    """
    if isinstance(spec, str):
        if spec != "uniform":
            raise ValueError(f"unknown density descriptor {spec!r}")
        values = np.ones(grid.n_cells)
    elif callable(spec):
        values = np.asarray(spec(grid.centers), dtype=float).reshape(-1)
    else:
        values = np.asarray(spec, dtype=float).reshape(-1)
    if values.size != grid.n_cells:
        raise ValueError(f"density has {values.size} values for {grid.n_cells} cells")
    if np.any(~np.isfinite(values)) or np.any(values < 0):
        raise ValueError("density must be finite and nonnegative at every cell centre")
    raw = values * grid.volumes
    total = raw.sum()
    if total <= 0:
        raise ValueError("density has zero total mass")
    mass = raw / total
    # push the rounding residue into the largest cell so the sum is 1 to the last bit
    mass[np.argmax(mass)] += 1.0 - mass.sum()
    return Density(mass)


@dataclass(frozen=True)
class Service:
    location: tuple[float, ...]
    queue: QueueFunction

    def __post_init__(self):
        loc = tuple(float(v) for v in np.atleast_1d(self.location))
        object.__setattr__(self, "location", loc)


@dataclass(frozen=True)
class ThresholdProfile:
    """Cells sorted by travel-cost gap, with cumulative masses.

    Used for the k = 2 threshold machinery: ``below(t)`` is the mass of
    cells whose gap is strictly below ``t``. ``smooth(t)`` instead spreads
    each cell's mass uniformly over the range the gap takes inside the cell,
    which gives a continuous, piecewise-linear ``m``.
    """

    order: np.ndarray
    gaps: np.ndarray
    cum_mass: np.ndarray
    knots_t: np.ndarray
    knots_m: np.ndarray

    def smooth(self, t):
        out = np.interp(t, self.knots_t, self.knots_m, left=0.0, right=1.0)
        return float(out) if np.ndim(t) == 0 else out

    def below(self, t):
        idx = np.searchsorted(self.gaps, t, side="left")
        out = np.where(idx > 0, self.cum_mass[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if np.ndim(t) == 0 else out

    def at_or_below(self, t):
        idx = np.searchsorted(self.gaps, t, side="right")
        out = np.where(idx > 0, self.cum_mass[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if np.ndim(t) == 0 else out


@dataclass(frozen=True, eq=False)
class Scenario:
    """Problem instance: grid, density, services, travel-cost exponent ``p``."""

    grid: Grid
    density: Density
    services: tuple[Service, ...]
    p: float = 2.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "services", tuple(self.services))
        if len(self.services) < 2:
            raise ValueError("need at least two services")
        if not self.p >= 1:
            raise ValueError("p must be >= 1")
        if self.density.mass.size != self.grid.n_cells:
            raise ValueError("density and grid sizes differ")
        for i, s in enumerate(self.services):
            if len(s.location) != self.grid.dim:
                raise ValueError(f"service {i} location has wrong dimension")
            if not self.grid.contains(s.location):
                raise ValueError(f"service {i} location {s.location} outside the box")
        locs = [s.location for s in self.services]
        if len(set(locs)) != len(locs):
            raise ValueError("service locations must be pairwise distinct")

    @property
    def k(self) -> int:
        return len(self.services)

    @property
    def queues(self) -> tuple[QueueFunction, ...]:
        return tuple(s.queue for s in self.services)

    @property
    def mass(self) -> np.ndarray:
        return self.density.mass

    @cached_property
    def sites(self) -> np.ndarray:
        return np.array([s.location for s in self.services], dtype=float)

    @cached_property
    def costs(self) -> np.ndarray:
        """``|center - x_j|**p`` for every cell (rows) and site (columns)."""
        diff = self.grid.centers[:, None, :] - self.sites[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=2))
        return dist if self.p == 1 else dist**self.p

    @cached_property
    def gap_profile(self) -> ThresholdProfile:
        gaps = travel_cost_gap(self)
        order = np.argsort(gaps, kind="stable")
        knots_t, knots_m = _spread_profile(self)
        mu = self.mass[order]
        head = np.cumsum(mu)
        # past the median, count from the top so that small complements stay exact
        tail = np.concatenate([np.cumsum(mu[::-1])[::-1][1:], [0.0]])
        cum = np.where(head > 0.5, 1.0 - tail, head)
        return ThresholdProfile(
            order=order,
            gaps=gaps[order],
            cum_mass=np.maximum.accumulate(cum),
            knots_t=knots_t,
            knots_m=knots_m,
        )

    def queue_values(self, loads) -> np.ndarray:
        return np.array([q.value(c) for q, c in zip(self.queues, loads)])

    def marginal_waits(self, loads) -> np.ndarray:
        return np.array([q.marginal_wait(c) for q, c in zip(self.queues, loads)])

    def total_waits(self, loads) -> np.ndarray:
        return np.array([q.total_wait(c) for q, c in zip(self.queues, loads)])

    def with_queues(self, queues: Sequence[QueueFunction]) -> "Scenario":
        services = tuple(Service(s.location, q) for s, q in zip(self.services, queues))
        return Scenario(self.grid, self.density, services, self.p, self.name)


def _gap_at(scenario: "Scenario", points: np.ndarray) -> np.ndarray:
    d = [np.sqrt(np.sum((points - scenario.sites[j]) ** 2, axis=-1)) ** scenario.p for j in (0, 1)]
    return d[0] - d[1]


def _spread_profile(scenario: "Scenario") -> tuple[np.ndarray, np.ndarray]:
    """Knots of ``m(t)`` when each cell's mass is spread over its gap range.

    The range is taken over the cell centre and corners; a cell on which the
    gap is (numerically) constant gets a tiny width instead of a jump.
    """
    grid = scenario.grid
    half = grid.cell_widths / 2.0
    signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * grid.dim, indexing="ij")).reshape(grid.dim, -1).T
    probes = np.concatenate([grid.centers[None], grid.centers[None] + (signs * half)[:, None, :]])
    values = _gap_at(scenario, probes)
    lo, hi = values.min(axis=0), values.max(axis=0)
    floor = 1e-12 * (1.0 + np.abs(lo))
    narrow = hi - lo < floor
    lo, hi = np.where(narrow, lo - floor, lo), np.where(narrow, hi + floor, hi)
    rate = scenario.mass / (hi - lo)
    events = np.concatenate([lo, hi])
    deltas = np.concatenate([rate, -rate])
    order = np.argsort(events, kind="stable")
    events, slope = events[order], np.cumsum(deltas[order])
    m = np.concatenate([[0.0], np.cumsum(slope[:-1] * np.diff(events))])
    m = np.clip(np.maximum.accumulate(m), 0.0, 1.0)
    m[-1] = 1.0
    return events, m


def _require_two(scenario: Scenario) -> None:
    if scenario.k != 2:
        raise ValueError(f"operation needs exactly 2 services, scenario has {scenario.k}")


def travel_cost_gap(scenario: Scenario) -> np.ndarray:
    """Per-cell ``|x - x_1|**p - |x - x_2|**p`` (two-service scenarios only)."""
    _require_two(scenario)
    return scenario.costs[:, 0] - scenario.costs[:, 1]


def mass_below(gaps: np.ndarray, density: Density, t):
    """Population mass of cells whose gap is strictly below ``t``."""
    gaps = np.asarray(gaps, dtype=float)
    if np.ndim(t) == 0:
        return float(density.mass[gaps < t].sum())
    t = np.asarray(t, dtype=float)
    return np.array([density.mass[gaps < s].sum() for s in t.ravel()]).reshape(t.shape)
