"""JSON scenario configuration.

Top-level fields are exactly ``domain``, ``density``, ``services``, ``p``,
``solver`` and ``run``; unknown fields anywhere are rejected so typos cannot
silently fall back to defaults. See the README for the full schema.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Union

import numpy as np

from .city import Scenario, Service, build_grid, evaluate_density
from .queues import queue_from_dict

__all__ = [
    "ConfigError",
    "DomainConfig",
    "ServiceConfig",
    "SolverConfig",
    "RunConfig",
    "ScenarioConfig",
    "parse_config",
    "config_from_dict",
    "serialize_config",
    "build_scenario",
]

DEFAULT_RESOLUTION = {1: 4096, 2: 256}
MODES = ("optimum", "equilibrium", "simulate")
DYNAMICS = ("standard", "prudence", "memory")
MEMORY_KINDS = ("window", "global", "weighted")
PRUDENCE_KINDS = ("fixed", "harmonic")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class DomainConfig:
    box: tuple[tuple[float, float], ...]
    resolution: tuple[int, ...]


@dataclass(frozen=True)
class ServiceConfig:
    location: tuple[float, ...]
    queue: dict


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 10_000
    max_days: int = 10_000


@dataclass(frozen=True)
class RunConfig:
    """What to do with the scenario.

    ``prudence`` is ``{"kind": "fixed", "rho": r}`` or
    ``{"kind": "harmonic", "scale": s}`` (``rho_j = 1 - s / j``); ``memory`` is
    ``{"kind": "window", "kappa": n}``, ``{"kind": "global"}`` or
    ``{"kind": "weighted"}`` (halving weights by age).
    """

    mode: str = "equilibrium"
    dynamics: str = "standard"
    t0: float = 0.0
    seeds: Optional[tuple[float, ...]] = None
    prudence: Optional[dict] = None
    memory: Optional[dict] = None
    initial_psi: Optional[float] = None


@dataclass(frozen=True)
class ScenarioConfig:
    domain: DomainConfig
    density: Union[str, dict]
    services: tuple[ServiceConfig, ...]
    p: float = 2.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    run: RunConfig = field(default_factory=RunConfig)
    name: str = field(default="", compare=False)


def _check_keys(obj: Any, where: str, required: set, optional: set = frozenset()) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(obj) - required - set(optional)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing field(s) {sorted(missing)}")
    return obj


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise ConfigError(f"{where}: expected a finite number, got {value!r}")
    return float(value)


def _integer(value: Any, where: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{where}: expected an integer >= {minimum}, got {value!r}")
    return value


def _domain(obj: Any) -> DomainConfig:
    obj = _check_keys(obj, "domain", {"box"}, {"resolution"})
    box = obj["box"]
    if isinstance(box, list) and len(box) == 2 and all(isinstance(v, (int, float)) for v in box):
        box = [box]
    if not isinstance(box, list) or len(box) not in (1, 2):
        raise ConfigError("domain.box: expected [lo, hi] or a list of 1 or 2 [lo, hi] pairs")
    pairs = []
    for a, pair in enumerate(box):
        if not isinstance(pair, list) or len(pair) != 2:
            raise ConfigError(f"domain.box[{a}]: expected [lo, hi]")
        lo, hi = (_number(v, f"domain.box[{a}]") for v in pair)
        if not hi > lo:
            raise ConfigError(f"domain.box[{a}]: need lo < hi")
        pairs.append((lo, hi))
    dim = len(pairs)
    res = obj.get("resolution", DEFAULT_RESOLUTION[dim])
    res = [res] * dim if isinstance(res, int) and not isinstance(res, bool) else res
    if not isinstance(res, list) or len(res) != dim:
        raise ConfigError(f"domain.resolution: expected an integer or {dim} integers")
    return DomainConfig(tuple(pairs), tuple(_integer(r, "domain.resolution", 2) for r in res))


def _density(obj: Any) -> Union[str, dict]:
    if obj == "uniform":
        return obj
    if isinstance(obj, dict):
        _check_keys(obj, "density", {"table"})
        table = obj["table"]
        if not isinstance(table, list) or not table:
            raise ConfigError("density.table: expected a non-empty list")
        values = [_number(v, "density.table") for v in table]
        if any(v < 0 for v in values):
            raise ConfigError("density.table: values must be nonnegative")
        return {"table": values}
    raise ConfigError('density: expected "uniform" or {"table": [...]}')


def _services(obj: Any, dim: int) -> tuple[ServiceConfig, ...]:
    if not isinstance(obj, list) or len(obj) < 2:
        raise ConfigError("services: expected a list of at least 2 services")
    out = []
    for i, item in enumerate(obj):
        where = f"services[{i}]"
        _check_keys(item, where, {"location", "queue"})
        loc = item["location"]
        loc = [loc] if isinstance(loc, (int, float)) and not isinstance(loc, bool) else loc
        if not isinstance(loc, list) or len(loc) != dim:
            raise ConfigError(f"{where}.location: expected {dim} coordinate(s)")
        loc = tuple(_number(v, f"{where}.location") for v in loc)
        try:
            queue_from_dict(item["queue"])  # validate before normalising
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}.queue: {exc}") from None
        out.append(ServiceConfig(loc, queue_from_dict(item["queue"]).to_dict()))
    return tuple(out)


def _solver(obj: Any) -> SolverConfig:
    obj = _check_keys(obj, "solver", set(), {"tol", "max_iter", "max_days"})
    base = SolverConfig()
    tol = _number(obj.get("tol", base.tol), "solver.tol")
    if tol <= 0:
        raise ConfigError("solver.tol: must be positive")
    return SolverConfig(
        tol=tol,
        max_iter=_integer(obj.get("max_iter", base.max_iter), "solver.max_iter", 1),
        max_days=_integer(obj.get("max_days", base.max_days), "solver.max_days", 1),
    )


def _run(obj: Any) -> RunConfig:
    obj = _check_keys(obj, "run", set(), {"mode", "dynamics", "t0", "seeds", "prudence", "memory", "initial_psi"})
    mode = obj.get("mode", "equilibrium")
    if mode not in MODES:
        raise ConfigError(f"run.mode: expected one of {MODES}, got {mode!r}")
    dynamics = obj.get("dynamics", "standard")
    if dynamics not in DYNAMICS:
        raise ConfigError(f"run.dynamics: expected one of {DYNAMICS}, got {dynamics!r}")
    seeds = obj.get("seeds")
    if seeds is not None:
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("run.seeds: expected a non-empty list of numbers")
        seeds = tuple(_number(v, "run.seeds") for v in seeds)
    prudence = obj.get("prudence")
    if prudence is not None:
        kind = prudence.get("kind") if isinstance(prudence, dict) else None
        if kind == "fixed":
            _check_keys(prudence, "run.prudence", {"kind", "rho"})
            rho = _number(prudence["rho"], "run.prudence.rho")
            if not 0 <= rho <= 1:
                raise ConfigError("run.prudence.rho: must lie in [0, 1]")
            prudence = {"kind": "fixed", "rho": rho}
        elif kind == "harmonic":
            _check_keys(prudence, "run.prudence", {"kind"}, {"scale"})
            prudence = {"kind": "harmonic", "scale": _number(prudence.get("scale", 1.0), "run.prudence.scale")}
        else:
            raise ConfigError(f"run.prudence.kind: expected one of {PRUDENCE_KINDS}")
    memory = obj.get("memory")
    if memory is not None:
        kind = memory.get("kind") if isinstance(memory, dict) else None
        if kind == "window":
            _check_keys(memory, "run.memory", {"kind", "kappa"})
            memory = {"kind": "window", "kappa": _integer(memory["kappa"], "run.memory.kappa", 1)}
        elif kind in ("global", "weighted"):
            _check_keys(memory, "run.memory", {"kind"})
            memory = {"kind": kind}
        else:
            raise ConfigError(f"run.memory.kind: expected one of {MEMORY_KINDS}")
    psi = obj.get("initial_psi")
    if psi is not None:
        psi = _number(psi, "run.initial_psi")
        if not 0 <= psi <= 1:
            raise ConfigError("run.initial_psi: must lie in [0, 1]")
    return RunConfig(
        mode=mode,
        dynamics=dynamics,
        t0=_number(obj.get("t0", 0.0), "run.t0"),
        seeds=seeds,
        prudence=prudence,
        memory=memory,
        initial_psi=psi,
    )


def config_from_dict(obj: Any, name: str = "") -> ScenarioConfig:
    """Validate a decoded JSON document and check it builds a scenario."""
    obj = _check_keys(obj, "config", {"domain", "density", "services"}, {"p", "solver", "run"})
    domain = _domain(obj["domain"])
    p = _number(obj.get("p", 2.0), "p")
    if p < 1:
        raise ConfigError("p: p must be >= 1")
    config = ScenarioConfig(
        domain=domain,
        density=_density(obj["density"]),
        services=_services(obj["services"], len(domain.box)),
        p=p,
        solver=_solver(obj.get("solver", {})),
        run=_run(obj.get("run", {})),
        name=name,
    )
    build_scenario(config)
    return config


def parse_config(text: str, name: str = "") -> ScenarioConfig:
    """Parse a UTF-8 JSON document into a validated ``ScenarioConfig``."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return config_from_dict(obj, name)


def _to_plain(config: ScenarioConfig) -> dict:
    run = {k: v for k, v in asdict(config.run).items() if v is not None}
    if "seeds" in run:
        run["seeds"] = list(run["seeds"])
    return {
        "domain": {
            "box": [list(pair) for pair in config.domain.box],
            "resolution": list(config.domain.resolution),
        },
        "density": config.density,
        "services": [{"location": list(s.location), "queue": s.queue} for s in config.services],
        "p": config.p,
        "solver": asdict(config.solver),
        "run": run,
    }


def serialize_config(config: ScenarioConfig) -> str:
    """JSON text that ``parse_config`` maps back to an equal config."""
    return json.dumps(_to_plain(config), indent=2, sort_keys=True)


def build_scenario(config: ScenarioConfig) -> Scenario:
    """Turn a config into a ``Scenario``; city-model violations become ``ConfigError``."""
    box = [list(pair) for pair in config.domain.box]
    grid = build_grid(box, list(config.domain.resolution))
    try:
        density = evaluate_density(
            "uniform" if config.density == "uniform" else config.density["table"], grid
        )
    except ValueError as exc:
        raise ConfigError(f"density: {exc}") from None
    services = []
    for i, s in enumerate(config.services):
        if not grid.contains(s.location):
            raise ConfigError(f"services[{i}].location: {s.location} lies outside the box")
        services.append(Service(s.location, queue_from_dict(s.queue)))
    try:
        return Scenario(grid, density, tuple(services), p=config.p, name=config.name)
    except ValueError as exc:
        raise ConfigError(f"services: {exc}") from None
