"""Queue-time functions: waiting time at a service as a function of its load.

Every variant is defined on loads ``t`` in ``[0, 1]`` and evaluates
vectorised over numpy arrays. Besides the value ``h(t)`` each queue exposes

* ``derivative``  - ``h'(t)`` (right slope at 0, left slope elsewhere),
* ``average``     - ``g(t) = (1/t) * int_0^t h(s) ds`` with ``g(0) = h(0)``,
* ``total_wait``    - ``t * h(t)``, the total time spent in the queue,
* ``marginal_wait`` - ``h(t) + t * h'(t)`` with the convention ``0 * h'(0) = 0``.

The ``*_preimage`` methods invert the monotone maps ``h`` and ``marginal_wait``
as closed intervals; the exact dual solver relies on them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QueueFunction",
    "Constant",
    "Linear",
    "Power",
    "PiecewiseLinear",
    "AveragedQueue",
    "step_queue",
    "queue_from_dict",
    "queue_eval",
    "queue_derivative",
    "queue_average",
    "total_wait",
    "marginal_wait",
]

_LOAD_SLACK = 1e-12


def _loads(t):
    arr = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < -_LOAD_SLACK) or np.any(arr > 1 + _LOAD_SLACK):
        raise ValueError(f"load outside [0, 1]: {t!r}")
    return np.clip(arr, 0.0, 1.0)


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


class QueueFunction:
    """Base class; subclasses implement the ``_h``/``_dh``/``_g`` kernels."""

    kind = "abstract"

    def value(self, t):
        t = _loads(t)
        return _out(self._h(t), t)

    def derivative(self, t):
        t = _loads(t)
        return _out(self._dh(t), t)

    def average(self, t):
        t = _loads(t)
        return _out(self._g(t), t)

    def total_wait(self, t):
        t = _loads(t)
        return _out(t * self._h(t), t)

    def marginal_wait(self, t):
        t = _loads(t)
        with np.errstate(invalid="ignore"):
            slope = np.where(t > 0, t * self._dh(t), 0.0)
        return _out(self._h(t) + slope, t)

    def __call__(self, t):
        return self.value(t)

    # monotone preimages -------------------------------------------------
    def value_preimage(self, y: float, eps: float = 0.0) -> tuple[float, float]:
        return _bisect_preimage(lambda s: float(self._h(np.asarray(s))), y, eps)

    def marginal_wait_preimage(self, y: float, eps: float = 0.0) -> tuple[float, float]:
        return _bisect_preimage(lambda s: float(self.marginal_wait(s)), y, eps)

    # structural flags -----------------------------------------------------
    @property
    def is_monotone(self) -> bool:
        raise NotImplementedError

    @property
    def is_strictly_increasing(self) -> bool:
        raise NotImplementedError

    @property
    def has_convex_total_wait(self) -> bool:
        raise NotImplementedError

    @property
    def lipschitz_constant(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


def _bisect_preimage(f, y: float, eps: float, iters: int = 100) -> tuple[float, float]:
    """Closed preimage of ``y`` under a non-decreasing ``f`` on ``[0, 1]``."""
    if f(0.0) > y + eps:
        return 0.0, 0.0
    if f(1.0) < y - eps:
        return 1.0, 1.0

    def first_at_least(target):
        if f(0.0) >= target:
            return 0.0
        lo, hi = 0.0, 1.0
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if f(mid) >= target:
                hi = mid
            else:
                lo = mid
            if hi - lo <= 1e-16:
                break
        return hi

    def last_at_most(target):
        if f(1.0) <= target:
            return 1.0
        lo, hi = 0.0, 1.0
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if f(mid) <= target:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-16:
                break
        return lo

    lo = first_at_least(y - eps)
    hi = last_at_most(y + eps)
    if hi < lo:
        hi = lo
    return lo, hi


def _segment_preimage(segments, y: float, eps: float) -> tuple[float, float]:
    """Preimage for a non-decreasing function given as linear pieces.

    ``segments`` holds ``(t0, t1, f0, f1)`` with ``f`` linear on ``(t0, t1)``,
    ``f0``/``f1`` the one-sided limits. Jumps between pieces are allowed.
    """
    first, last = segments[0], segments[-1]
    if first[2] > y + eps:
        return 0.0, 0.0
    if last[3] < y - eps:
        return 1.0, 1.0
    target = y - eps
    lo = 1.0
    for t0, t1, f0, f1 in segments:
        if f1 >= target:
            if f0 >= target or f1 == f0:
                lo = t0
            else:
                lo = t0 + (target - f0) / (f1 - f0) * (t1 - t0)
            break
    target = y + eps
    hi = 0.0
    for t0, t1, f0, f1 in reversed(segments):
        if f0 <= target:
            if f1 <= target or f1 == f0:
                hi = t1
            else:
                hi = t0 + (target - f0) / (f1 - f0) * (t1 - t0)
            break
    lo = min(max(lo, 0.0), 1.0)
    hi = min(max(hi, lo), 1.0)
    return lo, hi


@dataclass(frozen=True)
class Constant(QueueFunction):
    """``h(t) = a``."""

    a: float
    kind = "constant"

    def __post_init__(self):
        if not (math.isfinite(self.a) and self.a >= 0):
            raise ValueError(f"constant queue needs a >= 0, got {self.a}")

    def _h(self, t):
        return np.full(np.shape(t), float(self.a))

    def _dh(self, t):
        return np.zeros(np.shape(t))

    def _g(self, t):
        return self._h(t)

    def value_preimage(self, y, eps=0.0):
        return _segment_preimage([(0.0, 1.0, self.a, self.a)], y, eps)

    def marginal_wait_preimage(self, y, eps=0.0):
        return self.value_preimage(y, eps)

    is_monotone = True
    is_strictly_increasing = False
    has_convex_total_wait = True

    @property
    def lipschitz_constant(self):
        return 0.0

    def to_dict(self):
        return {"variant": "constant", "a": self.a}


@dataclass(frozen=True)
class Linear(QueueFunction):
    """``h(t) = a + b t``; ``b < 0`` is allowed as long as ``h(1) >= 0``."""

    a: float
    b: float
    kind = "linear"

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError("linear queue parameters must be finite")
        if self.a < 0 or self.a + self.b < 0:
            raise ValueError(f"linear queue negative on [0, 1]: a={self.a}, b={self.b}")

    def _h(self, t):
        return self.a + self.b * t

    def _dh(self, t):
        return np.full(np.shape(t), float(self.b))

    def _g(self, t):
        return self.a + 0.5 * self.b * t

    def value_preimage(self, y, eps=0.0):
        if self.b < 0:
            return super().value_preimage(y, eps)
        return _segment_preimage([(0.0, 1.0, self.a, self.a + self.b)], y, eps)

    def marginal_wait_preimage(self, y, eps=0.0):
        if self.b < 0:
            return super().marginal_wait_preimage(y, eps)
        return _segment_preimage([(0.0, 1.0, self.a, self.a + 2 * self.b)], y, eps)

    @property
    def is_monotone(self):
        return self.b >= 0

    @property
    def is_strictly_increasing(self):
        return self.b > 0

    @property
    def has_convex_total_wait(self):
        return self.b >= 0

    @property
    def lipschitz_constant(self):
        return abs(self.b)

    def to_dict(self):
        return {"variant": "linear", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Power(QueueFunction):
    """``h(t) = a t**q`` with ``0 < q <= 1``."""

    a: float
    q: float
    kind = "power"

    def __post_init__(self):
        if not (math.isfinite(self.a) and self.a >= 0):
            raise ValueError(f"power queue needs a >= 0, got {self.a}")
        if not (0 < self.q <= 1):
            raise ValueError(f"power queue needs q in (0, 1], got {self.q}")

    def _h(self, t):
        return self.a * np.power(t, self.q)

    def _dh(self, t):
        if self.q == 1:
            return np.full(np.shape(t), float(self.a))
        with np.errstate(divide="ignore"):
            return np.where(t > 0, self.a * self.q * np.power(t, self.q - 1), np.inf if self.a > 0 else 0.0)

    def _g(self, t):
        return self.a * np.power(t, self.q) / (self.q + 1)

    def _invert(self, y, scale, eps):
        if scale == 0:
            return _segment_preimage([(0.0, 1.0, 0.0, 0.0)], y, eps)
        if y + eps < 0:
            return 0.0, 0.0
        lo = min(max(y - eps, 0.0) / scale, 1.0) ** (1 / self.q)
        hi = min((y + eps) / scale, 1.0) ** (1 / self.q)
        return lo, hi

    def value_preimage(self, y, eps=0.0):
        return self._invert(y, self.a, eps)

    def marginal_wait_preimage(self, y, eps=0.0):
        return self._invert(y, self.a * (self.q + 1), eps)

    is_monotone = True
    has_convex_total_wait = True

    @property
    def is_strictly_increasing(self):
        return self.a > 0

    @property
    def lipschitz_constant(self):
        if self.a == 0:
            return 0.0
        return self.a if self.q == 1 else math.inf

    def to_dict(self):
        return {"variant": "power", "a": self.a, "q": self.q}


@dataclass(frozen=True)
class PiecewiseLinear(QueueFunction):
    """Linear interpolation of sorted ``(t, value)`` knots spanning ``[0, 1]``."""

    knots: tuple[tuple[float, float], ...]
    kind = "piecewise_linear"
    _t: np.ndarray = field(init=False, repr=False, compare=False)
    _v: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = tuple((float(a), float(b)) for a, b in self.knots)
        object.__setattr__(self, "knots", pts)
        if len(pts) < 2:
            raise ValueError("piecewise-linear queue needs at least two knots")
        t = np.array([p[0] for p in pts])
        v = np.array([p[1] for p in pts])
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError("knots must be finite")
        if t[0] != 0.0 or t[-1] != 1.0:
            raise ValueError("knots must start at t=0 and end at t=1")
        if np.any(np.diff(t) <= 0):
            raise ValueError("knot abscissae must be strictly increasing")
        if np.any(v < 0):
            raise ValueError("queue values must be nonnegative")
        object.__setattr__(self, "_t", t)
        object.__setattr__(self, "_v", v)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self._v) / np.diff(self._t)

    def _segment_index(self, t):
        # left slope at interior knots, right slope at t = 0
        idx = np.searchsorted(self._t, t, side="left") - 1
        return np.clip(idx, 0, len(self._t) - 2)

    def _h(self, t):
        return np.interp(t, self._t, self._v)

    def _dh(self, t):
        return self.slopes[self._segment_index(t)]

    def _g(self, t):
        t = np.asarray(t, dtype=float)
        dt = np.diff(self._t)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (self._v[:-1] + self._v[1:]) * dt)])
        idx = self._segment_index(t)
        t0 = self._t[idx]
        v0 = self._v[idx]
        vt = self._h(t)
        integral = cum[idx] + 0.5 * (v0 + vt) * (t - t0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(t > 0, integral / np.where(t > 0, t, 1.0), self._v[0])

    def _pieces(self, f_left, f_right):
        return [
            (self._t[i], self._t[i + 1], f_left(i), f_right(i))
            for i in range(len(self._t) - 1)
        ]

    def value_preimage(self, y, eps=0.0):
        if not self.is_monotone:
            return super().value_preimage(y, eps)
        return _segment_preimage(self._pieces(lambda i: self._v[i], lambda i: self._v[i + 1]), y, eps)

    def marginal_wait_preimage(self, y, eps=0.0):
        if not self.has_convex_total_wait:
            return super().marginal_wait_preimage(y, eps)
        s = self.slopes
        # total_wait' = v_i + s_i (t - t_i) + t s_i on piece i
        return _segment_preimage(
            self._pieces(
                lambda i: self._v[i] + s[i] * self._t[i],
                lambda i: self._v[i + 1] + s[i] * self._t[i + 1],
            ),
            y,
            eps,
        )

    @property
    def is_monotone(self):
        return bool(np.all(np.diff(self._v) >= 0))

    @property
    def is_strictly_increasing(self):
        return bool(np.all(np.diff(self._v) > 0))

    @property
    def has_convex_total_wait(self):
        s = self.slopes
        return bool(np.all(s >= 0) and np.all(np.diff(s) >= 0))

    @property
    def lipschitz_constant(self):
        return float(np.max(np.abs(self.slopes)))

    @property
    def min_knot_spacing(self) -> float:
        return float(np.min(np.diff(self._t)))

    def to_dict(self):
        return {"variant": "piecewise_linear", "knots": [list(p) for p in self.knots]}


def step_queue(at: float, low: float, high: float, ramp_width: float = 1e-3) -> PiecewiseLinear:
    """Step from ``low`` to ``high`` just after load ``at``, smoothed by a linear ramp.

    ``h = low`` on ``[0, at]``, ``h = high`` on ``[at + ramp_width, 1]``.
    """
    if not (0 < at < 1) or ramp_width <= 0:
        raise ValueError("step needs 0 < at < 1 and a positive ramp width")
    end = at + ramp_width
    if end >= 1:
        return PiecewiseLinear(((0.0, low), (at, low), (1.0, high)))
    return PiecewiseLinear(((0.0, low), (at, low), (end, high), (1.0, high)))


@dataclass(frozen=True)
class AveragedQueue(QueueFunction):
    """Queue whose value is the running average ``g`` of ``base``.

    Its ``marginal_wait`` is ``base.value``, which is what turns the social-cost
    minimisation into the equilibrium problem.
    """

    base: QueueFunction
    kind = "averaged"

    def _h(self, t):
        return self.base._g(t)

    def _dh(self, t):
        h = self.base._h(t)
        g = self.base._g(t)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(t > 0, (h - g) / np.where(t > 0, t, 1.0), 0.5 * self.base._dh(t))

    def _g(self, t):
        from scipy.integrate import quad

        t = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t)
        out = np.empty_like(flat)
        for i, s in enumerate(flat):
            if s == 0:
                out[i] = float(self.base._h(np.asarray(0.0)))
            else:
                out[i] = quad(lambda r: float(self.base._g(np.asarray(r))), 0.0, s)[0] / s
        return out.reshape(t.shape)

    def marginal_wait(self, t):
        return self.base.value(t)

    def marginal_wait_preimage(self, y, eps=0.0):
        return self.base.value_preimage(y, eps)

    @property
    def is_monotone(self):
        return self.base.is_monotone

    @property
    def is_strictly_increasing(self):
        return self.base.is_strictly_increasing

    @property
    def has_convex_total_wait(self):
        return self.base.is_monotone

    @property
    def lipschitz_constant(self):
        return self.base.lipschitz_constant

    def to_dict(self):
        return {"variant": "averaged", "base": self.base.to_dict()}


def queue_from_dict(spec: dict) -> QueueFunction:
    """Build a queue from its JSON form (``{"variant": ..., params}``)."""
    spec = dict(spec)
    variant = spec.pop("variant", None)
    builders = {
        "constant": (Constant, {"a"}),
        "linear": (Linear, {"a", "b"}),
        "power": (Power, {"a", "q"}),
        "piecewise_linear": (PiecewiseLinear, {"knots"}),
    }
    if variant not in builders:
        raise ValueError(f"unknown queue variant {variant!r}")
    cls, keys = builders[variant]
    if set(spec) != keys:
        raise ValueError(f"{variant} queue expects fields {sorted(keys)}, got {sorted(spec)}")
    if variant == "piecewise_linear":
        return PiecewiseLinear(tuple(tuple(k) for k in spec["knots"]))
    return cls(**{k: float(v) for k, v in spec.items()})


# functional spellings ------------------------------------------------------
def queue_eval(q: QueueFunction, t):
    return q.value(t)


def queue_derivative(q: QueueFunction, t):
    return q.derivative(t)


def queue_average(q: QueueFunction, t):
    return q.average(t)


def total_wait(q: QueueFunction, t):
    return q.total_wait(t)


def marginal_wait(q: QueueFunction, t):
    return q.marginal_wait(t)
