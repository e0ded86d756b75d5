"""Adaptive Dormand-Prince 5(4) integration of the fluid-limit fields.

The integrator keeps the per-step continuous extension so trajectories can
be evaluated at any time in range, locates events by root refinement on the
interpolant, and rejects (never clips) trial steps that leave the closed
nonnegative orthant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .models import DomainError, ModelKind, ModelSpec, build_model

# Dormand-Prince tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = _A[6]
# difference between the 5th and embedded 4th order weights
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)
# continuous extension (Hairer, Norsett & Wanner, dopri5 "contd5")
_D = (
    -12715105075 / 11282082432,
    0.0,
    87487479700 / 32700410799,
    -10690763975 / 1880347072,
    701980252875 / 199316789632,
    -1453857185 / 822651844,
    69997945 / 29380423,
)

# interior points where the continuous extension is checked for positivity
_S = np.linspace(0.0, 1.0, 9)[1:-1, None]

HORIZON = "horizon"
EVENT = "event"
BLOW_UP = "blow_up"
STEP_UNDERFLOW = "step_underflow"


@dataclass(frozen=True)
class IntegratorSettings:
    horizon: float
    rtol: float = 1e-9
    atol: float | np.ndarray = 1e-11  # scalar or per component
    max_step: float = math.inf
    first_step: Optional[float] = None
    blow_up: float = 1e12
    enforce_positivity: bool = True

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if not (self.rtol > 0 and np.all(np.asarray(self.atol) > 0)):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")


@dataclass(frozen=True)
class EventSpec:
    """Scalar event function ``g(state, t)``; ``direction`` is "any", "up" or "down"."""

    g: Callable[[np.ndarray, float], float]
    direction: str = "any"
    terminal: bool = False
    name: str = "event"

    def __post_init__(self):
        if self.direction not in ("any", "up", "down"):
            raise ValueError(f"bad event direction {self.direction!r}")

    def crossed(self, g0: float, g1: float) -> bool:
        up = g0 < 0 <= g1
        down = g0 > 0 >= g1
        if self.direction == "up":
            return up
        if self.direction == "down":
            return down
        return up or down


@dataclass(frozen=True)
class EventHit:
    name: str
    t: float
    state: np.ndarray
    terminal: bool


@dataclass
class OdeTrajectory:
    t: np.ndarray
    y: np.ndarray
    reason: str
    events: list[EventHit] = field(default_factory=list)
    error_norms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    labels: Optional[tuple[str, ...]] = None
    _t0: np.ndarray = field(default=None, repr=False)
    _h: np.ndarray = field(default=None, repr=False)
    _cont: np.ndarray = field(default=None, repr=False)

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def final(self) -> np.ndarray:
        return self.y[-1]

    def __call__(self, t):
        """Evaluate the dense output at scalar or array ``t`` within range."""
        scalar = np.ndim(t) == 0
        tq = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.t[0], self.t[-1]
        if np.any(tq < lo - 1e-12 * max(1.0, abs(lo))) or np.any(tq > hi + 1e-12 * max(1.0, abs(hi))):
            raise ValueError(f"requested time outside [{lo}, {hi}]")
        if len(self._h) == 0:
            out = np.repeat(self.y[:1], len(tq), axis=0)
        else:
            idx = np.clip(np.searchsorted(self._t0, tq, side="right") - 1, 0, len(self._h) - 1)
            s = ((tq - self._t0[idx]) / self._h[idx])[:, None]
            s1 = 1.0 - s
            c = self._cont[idx]
            out = c[:, 0] + s * (c[:, 1] + s1 * (c[:, 2] + s * (c[:, 3] + s1 * c[:, 4])))
        return out[0] if scalar else out

    def component(self, label: str) -> np.ndarray:
        if self.labels is None:
            raise ValueError("trajectory has no component labels")
        return self.y[:, self.labels.index(label)]

    def event_times(self, name: str) -> list[float]:
        return [e.t for e in self.events if e.name == name]


def _rms(v):
    return math.sqrt(float(np.dot(v, v)) / len(v))


def _initial_step(fun, t0, y0, f0, rtol, atol):
    sc = atol + rtol * np.abs(y0)
    d0 = _rms(y0 / sc)
    d1 = _rms(f0 / sc)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    try:
        f1 = fun(t0 + h0, y0 + h0 * f0)
        d2 = _rms((f1 - f0) / sc) / h0
    except (DomainError, ZeroDivisionError, FloatingPointError):
        return h0
    if not math.isfinite(d2):
        return h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)


def solve(
    fun: Callable[[float, np.ndarray], np.ndarray],
    initial,
    settings: IntegratorSettings,
    events: Sequence[EventSpec] = (),
    labels: Optional[tuple[str, ...]] = None,
) -> OdeTrajectory:
    """Integrate the possibly time-dependent system ``y' = fun(t, y)`` from t = 0."""
    y = np.array(initial, dtype=float)
    T = float(settings.horizon)
    rtol, atol = settings.rtol, settings.atol
    t = 0.0
    f = np.asarray(fun(t, y), dtype=float)
    if not np.all(np.isfinite(f)):
        raise DomainError(f"field is not finite at the initial state {y.tolist()}")
    h = settings.first_step or _initial_step(fun, t, y, f, rtol, atol)

    ts, ys, errs = [t], [y], []
    seg_t0, seg_h, seg_c = [], [], []
    hits: list[EventHit] = []
    g_prev = [float(ev.g(y, t)) for ev in events]
    reason = HORIZON
    rejected = False
    stage_errors = (DomainError, ZeroDivisionError, FloatingPointError, OverflowError)

    while t < T:
        h = min(h, settings.max_step, T - t)
        if h < 1e-14 * max(abs(t), 1.0):
            reason = STEP_UNDERFLOW
            break
        k = [f]
        try:
            for i in range(1, 7):
                a = _A[i]
                yi = y + h * sum(a[j] * k[j] for j in range(i) if a[j] != 0.0)
                if i == 6:
                    y_new = yi
                k.append(np.asarray(fun(t + _C[i] * h, yi), dtype=float))
            ok = np.all(np.isfinite(k[6]))
        except stage_errors as exc:
            if not settings.enforce_positivity:
                raise DomainError(f"field evaluation failed near t={t}, state {y.tolist()}: {exc}") from exc
            ok = False
        if ok and settings.enforce_positivity and np.any(y_new < 0):
            ok = False
        if not ok:
            h *= 0.5
            rejected = True
            continue

        err = h * sum(e * kk for e, kk in zip(_E, k) if e != 0.0)
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        en = _rms(err / sc)
        if en > 1.0:
            h *= max(0.2, 0.9 * en ** -0.2)
            rejected = True
            continue

        ydiff = y_new - y
        bspl = h * k[0] - ydiff
        cont = np.array([
            y,
            ydiff,
            bspl,
            ydiff - h * k[6] - bspl,
            h * sum(d * kk for d, kk in zip(_D, k) if d != 0.0),
        ])
        if settings.enforce_positivity and np.any(np.minimum(y, y_new) <= np.abs(cont[1:]).sum(axis=0)):
            # the interpolant may undershoot a component sitting near zero
            inner = cont[0] + _S * (cont[1] + (1 - _S) * (cont[2] + _S * (cont[3] + (1 - _S) * cont[4])))
            if np.any(inner < 0):
                h *= 0.5
                rejected = True
                continue

        # accepted
        t_new = t + h if T - (t + h) > 1e-15 * max(1.0, T) else T
        seg_t0.append(t)
        seg_h.append(h)
        seg_c.append(cont)
        errs.append(en)

        stop_at = None
        for n, ev in enumerate(events):
            g_new = float(ev.g(y_new, t_new))
            if ev.crossed(g_prev[n], g_new):
                def gs(tau, ev=ev, t0=t, hh=h, c=cont):
                    s = (tau - t0) / hh
                    s1 = 1.0 - s
                    yy = c[0] + s * (c[1] + s1 * (c[2] + s * (c[3] + s1 * c[4])))
                    return ev.g(yy, tau)
                if g_new == 0.0:
                    te = t_new
                else:
                    te = brentq(gs, t, t_new, xtol=1e-14, rtol=1e-10)
                s = (te - t) / h
                ye = cont[0] + s * (cont[1] + (1 - s) * (cont[2] + s * (cont[3] + (1 - s) * cont[4])))
                hits.append(EventHit(ev.name, te, ye, ev.terminal))
                if ev.terminal and (stop_at is None or te < stop_at[0]):
                    stop_at = (te, ye)
            g_prev[n] = g_new
        if stop_at is not None:
            hits = [e for e in hits if e.t <= stop_at[0]]
            ts.append(stop_at[0])
            ys.append(stop_at[1])
            reason = EVENT
            break

        t, y, f = t_new, y_new, k[6]
        ts.append(t)
        ys.append(y)
        if np.any(np.abs(y) > settings.blow_up):
            reason = BLOW_UP
            break

        factor = min(5.0, max(0.2, 0.9 * en ** -0.2)) if en > 0 else 5.0
        if rejected:
            factor = min(factor, 1.0)
        h *= factor
        rejected = False

    hits.sort(key=lambda e: e.t)
    return OdeTrajectory(
        t=np.array(ts),
        y=np.array(ys),
        reason=reason,
        events=hits,
        error_norms=np.array(errs),
        labels=labels,
        _t0=np.array(seg_t0),
        _h=np.array(seg_h),
        _cont=np.array(seg_c).reshape(len(seg_c), 5, len(y)),
    )


def integrate(
    field: Callable[[np.ndarray], np.ndarray],
    initial,
    settings: IntegratorSettings,
    events: Sequence[EventSpec] = (),
    labels: Optional[tuple[str, ...]] = None,
) -> OdeTrajectory:
    """Integrate the autonomous system ``s' = field(s)``."""
    return solve(lambda t, s: field(s), initial, settings, events, labels)


def integrate_model(
    model: ModelSpec,
    initial,
    settings: IntegratorSettings,
    events: Sequence[EventSpec] = (),
) -> OdeTrajectory:
    """Integrate a model's fluid limit after validating the initial state."""
    s0 = model.check_point(initial)
    return integrate(model.field, s0, settings, events, labels=model.labels)


def threshold_event(index: int, level: float, name: str, terminal: bool = False) -> EventSpec:
    """Up-crossing of ``state[index] == level``."""
    return EventSpec(lambda s, t: s[index] - level, "up", terminal, name)


@dataclass
class MonitorSeries:
    t: np.ndarray
    values: np.ndarray

    def is_nonincreasing(self, slack: float = 0.0) -> bool:
        return bool(np.all(np.diff(self.values) <= slack))

    def is_strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.values) < 0))

    def local_maxima(self) -> np.ndarray:
        v = self.values
        inner = (v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:])
        return self.t[1:-1][inner]


def monitor(
    trajectory: OdeTrajectory,
    functional: Callable[[np.ndarray], float],
    n_grid: int = 1001,
    window: Optional[tuple[float, float]] = None,
) -> MonitorSeries:
    """Evaluate ``functional`` on a uniform grid merged with the accepted nodes."""
    t0, t1 = window if window is not None else (trajectory.t[0], trajectory.t_end)
    grid = np.linspace(t0, t1, n_grid)
    nodes = trajectory.t[(trajectory.t >= t0) & (trajectory.t <= t1)]
    ts = np.unique(np.concatenate([grid, nodes]))
    states = trajectory(ts)
    return MonitorSeries(ts, np.array([functional(s) for s in states]))


# -- Deterministic First Chunk divergence ------------------------------------

class PreconditionError(ValueError):
    pass


def dfc_relations(lam: float, s) -> dict[str, bool]:
    """The three invariant inequalities of the divergent DFC region."""
    a, b, x, y = s
    return {
        "x > b > lambda": bool(x > b > lam),
        "y < lambda/2": bool(y < lam / 2),
        "a > (x+y)*lambda/(2x)": bool(a > (x + y) * lam / (2 * x)),
    }


@dataclass
class DivergenceVerdict:
    relations_hold: bool
    x_crossing: Optional[float]
    b_crossing: Optional[float]
    y_decreasing: bool
    a_final: float
    y_final: float
    a_tolerance: float
    threshold: float
    lam: float
    min_gap: float = math.nan

    @property
    def a_converged(self) -> bool:
        return abs(self.a_final - self.lam / 2) <= self.a_tolerance * self.lam / 2

    @property
    def divergent(self) -> bool:
        return (
            self.relations_hold
            and self.x_crossing is not None
            and self.b_crossing is not None
            and self.y_decreasing
            and self.a_converged
        )


def _dfc_with_gap(lam, s):
    """DFC field augmented with g = a - (x+y)*lam/(2x).

    The gap shrinks like y/x, far below what the ``a`` coordinate resolves,
    so it is carried as its own component with relative error control:
    g' = -x/(x+y) g + (lam/2)(y/x)(x'/x - y'/y).
    """
    a, b, x, y, g = s.tolist()
    r = x + y
    dx_x = (a - y) / r
    dy_y = (b - x) / r
    return np.array([
        lam / 2 - a * x / r,
        lam / 2 - b * y / r,
        dx_x * x,
        dy_y * y,
        -x / r * g + lam / 2 * (y / x) * (dx_x - dy_y),
    ])


def dfc_divergence_run(
    lam: float,
    initial,
    horizon: float = 1e4,
    threshold: float = 1e3,
    a_tolerance: float = 0.01,
    settings: Optional[IntegratorSettings] = None,
    n_grid: int = 20001,
) -> tuple[OdeTrajectory, DivergenceVerdict]:
    """Integrate the DFC limit from a start inside the divergent region and check it stays there.

    Returns the (a, b, x, y) trajectory and the verdict. ``a_tolerance`` is
    relative to lambda/2.
    """
    model = build_model(ModelKind.DFC, lam)
    s0 = model.check_point(initial)
    for name, holds in dfc_relations(lam, s0).items():
        if not holds:
            raise PreconditionError(f"initial state violates {name}: {s0.tolist()}")
    settings = settings or IntegratorSettings(horizon=horizon)
    settings = replace(
        settings,
        horizon=horizon,
        atol=np.r_[np.broadcast_to(settings.atol, 4), 1e-300],
    )
    a0, _, x0, y0 = s0
    gap0 = a0 - (x0 + y0) * lam / (2 * x0)
    events = [threshold_event(2, threshold, "x-crossing"), threshold_event(1, threshold, "b-crossing")]
    full = integrate(
        partial(_dfc_with_gap, lam), np.r_[s0, gap0], settings, events, labels=model.labels + ("gap",)
    )

    grid = np.unique(np.concatenate([np.linspace(0, full.t_end, n_grid), full.t]))
    states = full(grid)
    relations = bool(
        np.all(states[:, 2] > states[:, 1])
        and np.all(states[:, 1] > lam)
        and np.all(states[:, 3] < lam / 2)
        and np.all(states[:, 4] > 0)
    )
    xs, bs = full.event_times("x-crossing"), full.event_times("b-crossing")
    traj = OdeTrajectory(
        t=full.t,
        y=full.y[:, :4],
        reason=full.reason,
        events=full.events,
        error_norms=full.error_norms,
        labels=model.labels,
        _t0=full._t0,
        _h=full._h,
        _cont=full._cont[:, :, :4],
    )
    verdict = DivergenceVerdict(
        relations_hold=relations,
        x_crossing=xs[0] if xs else None,
        b_crossing=bs[0] if bs else None,
        y_decreasing=bool(np.all(np.diff(states[:, 3]) <= 0)),
        a_final=float(full.final[0]),
        y_final=float(full.final[3]),
        a_tolerance=a_tolerance,
        threshold=threshold,
        lam=lam,
        min_gap=float(states[:, 4].min()),
    )
    return traj, verdict
