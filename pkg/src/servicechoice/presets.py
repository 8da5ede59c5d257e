"""Named scenarios with reference values.

Every preset is built from a plain dictionary and validated through
``config_from_dict``, so presets obey exactly the same schema as user files.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .config import ConfigError, ScenarioConfig, config_from_dict
from .queues import step_queue

__all__ = ["Expected", "Preset", "load_preset", "get_preset", "preset_names"]


@dataclass(frozen=True)
class Expected:
    """A reference value, its tolerance and where it comes from."""

    value: float
    tol: float
    provenance: str


@dataclass(frozen=True)
class Preset:
    name: str
    config: ScenarioConfig
    expected: dict
    description: str


def _linear(b: float, a: float = 0.0) -> dict:
    return {"variant": "linear", "a": a, "b": b}


def _constant(a: float) -> dict:
    return {"variant": "constant", "a": a}


def _two_sites(box, x1, x2, q1, q2, p, resolution, run, solver=None) -> dict:
    return {
        "domain": {"box": list(box), "resolution": resolution},
        "density": "uniform",
        "services": [{"location": [x1], "queue": q1}, {"location": [x2], "queue": q2}],
        "p": p,
        "solver": solver or {},
        "run": run,
    }


def _beach(eps: float):
    doc = _two_sites([0.0, 1.0], 0.25, 0.75, _linear(1.0), _linear(1.0 + eps), 2.0, 20_000, {"mode": "equilibrium"})
    expected = {
        "optimum_load1": Expected(0.5 + eps / (5 + 2 * eps), 2e-3, "closed form 1/2 + e/(5+2e) for linear queues"),
        "equilibrium_load1": Expected(0.5 + eps / (6 + 2 * eps), 2e-3, "closed form 1/2 + e/(6+2e) for linear queues"),
    }
    return doc, expected, f"two shops at 1/4 and 3/4 on a unit beach, h1(t)=t, h2(t)=(1+{eps:g})t"


def _jap():
    h2 = step_queue(0.999, 0.0, 1.0, ramp_width=1e-4).to_dict()
    doc = _two_sites([0.0, 1.0], 0.0, 1.0, _constant(100.0), h2, 1.0, 100_000, {"mode": "optimum"})
    expected = {
        "equilibrium_load1": Expected(0.0, 1e-4, "nobody accepts the constant 100 wait"),
        "optimum_load1": Expected(0.001, 2e-4, "planner diverts the overflow beyond the step at 0.999"),
        "optimum_cost": Expected(0.599, 1e-3, "0.1 + 0.499 for the nearest 0.001 mass; derived by hand"),
        "equilibrium_cost": Expected(1.5, 1e-3, "0.5 travel + 1.0 queue at full load"),
    }
    return doc, expected, "constant queue of 100 against a ramped step queue; equilibrium is inefficient"


def _oscillator():
    doc = _two_sites([0.0, 1.0], 0.0, 1.0, _constant(0.0), _linear(2.0), 1.0, 1000,
                     {"mode": "simulate", "dynamics": "standard", "t0": 0.0})
    expected = {
        "t_bar": Expected(0.5, 1e-6, "fixed point of G(t) = 1 - t"),
        "cycle_low": Expected(0.0, 1e-6, "standard dynamics from t0 = 0 alternate 0, 1"),
        "cycle_high": Expected(1.0, 1e-6, "standard dynamics from t0 = 0 alternate 0, 1"),
        "lipschitz": Expected(1.0, 1e-6, "slope of G on [-1, 1]"),
    }
    return doc, expected, "G(t) = 1 - t: standard dynamics oscillate with period 2"


def _prudence2():
    doc = _two_sites([0.0, 1.0], 0.0, 1.0, _linear(10.0), _linear(10.0), 1.0, 1000,
                     {"mode": "simulate", "dynamics": "prudence", "initial_psi": 0.25,
                      "prudence": {"kind": "fixed", "rho": 1.0 / 3.0}})
    expected = {
        "rho_bar": Expected(1.0 - 1.0 / 11.0, 1e-6, "1 - 1/(K L + 1) with K = 20, L = 1/2"),
        "psi_low": Expected(0.25, 1e-3, "prudence 1/3 alternates psi between 1/4 and 3/4"),
        "psi_high": Expected(0.75, 1e-3, "prudence 1/3 alternates psi between 1/4 and 3/4"),
        "equilibrium_load1": Expected(0.5, 1e-3, "symmetric queues"),
    }
    return doc, expected, "steep symmetric queues: low prudence oscillates, high prudence converges"


def _memory3cycle():
    doc = _two_sites([0.0, 3.0], 0.0, 3.0, _linear(12.0), _constant(6.0), 1.0, 1200,
                     {"mode": "simulate", "dynamics": "memory", "seeds": [-1.0, -1.0],
                      "memory": {"kind": "window", "kappa": 2}})
    expected = {
        "t_bar": Expected(0.0, 1e-6, "fixed point of G(t) = -2t"),
        "lipschitz": Expected(2.0, 1e-6, "slope of G on [-3, 3]"),
        "cycle": Expected(float("nan"), 1e-6, "two-day window from (-1, -1) cycles through -1, -1, 2"),
    }
    return doc, expected, "G(t) = -2t: a two-day memory cycles with period 3, three days converge"


def _contraction():
    doc = _two_sites([0.0, 1.0], 0.25, 0.75, _linear(0.1), _linear(0.1), 2.0, 1000,
                     {"mode": "simulate", "dynamics": "standard", "t0": -0.4})
    expected = {"t_bar": Expected(0.0, 1e-8, "symmetric instance; G is a contraction")}
    return doc, expected, "beach geometry with flat queues: standard dynamics contract to the equilibrium"


_FIXED = {
    "jap": _jap,
    "oscillator": _oscillator,
    "prudence2": _prudence2,
    "memory3cycle": _memory3cycle,
    "contraction": _contraction,
}
_BEACH = re.compile(r"^beach(?:\(\s*([-+0-9.eE]+)\s*\))?$")


def preset_names() -> list[str]:
    return ["beach(eps)"] + sorted(_FIXED)


def get_preset(name: str) -> Preset:
    """Preset by name; ``beach`` alone means ``beach(0.1)``."""
    match = _BEACH.match(name.strip())
    if match:
        try:
            eps = float(match.group(1)) if match.group(1) else 0.1
        except ValueError:
            raise ConfigError(f"preset {name!r}: cannot read epsilon") from None
        if eps <= -1:
            raise ConfigError(f"preset {name!r}: epsilon must exceed -1")
        doc, expected, description = _beach(eps)
        name = f"beach({eps:g})"
    elif name in _FIXED:
        doc, expected, description = _FIXED[name]()
    else:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(preset_names())}")
    return Preset(name, config_from_dict(doc, name=name), expected, description)


def load_preset(name: str) -> ScenarioConfig:
    return get_preset(name).config
