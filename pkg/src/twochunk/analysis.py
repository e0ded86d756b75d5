"""Equilibria, linearization, Lyapunov and decay diagnostics for the fluid limits."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import ctmc
from .models import (
    DomainError,
    ModelKind,
    ModelSpec,
    build_model,
    enforced_to_transformed,
    transformed_field,
)
from .ode import (
    EventSpec,
    IntegratorSettings,
    OdeTrajectory,
    PreconditionError,
    dfc_divergence_run,
    integrate,
    integrate_model,
    monitor,
    solve,
    threshold_event,
)

REPORT_SCHEMA = "twochunk.stability_report/1"

RESIDUAL_TOL = 1e-10
ZERO_REAL_PART = 1e-9


# -- equilibria ------------------------------------------------------------------

@dataclass
class EquilibriumSet:
    kind: str  # "single_point" or "curve"
    point: Optional[np.ndarray] = None
    curve: Optional[Callable[[float], np.ndarray]] = None
    theta_interval: Optional[tuple[float, float]] = None
    residual: float = 0.0

    def sample(self, thetas: Sequence[float]) -> list[np.ndarray]:
        if self.kind == "single_point":
            return [self.point]
        lo, hi = self.theta_interval
        for th in thetas:
            if not lo < th < hi:
                raise DomainError(f"theta {th} outside ({lo}, {hi})")
        return [self.curve(th) for th in thetas]


def dfc_equilibrium(lam: float, theta: float) -> np.ndarray:
    """Point of the DFC equilibrium curve, theta in (lam/2, inf)."""
    if not theta > lam / 2:
        raise DomainError(f"theta must exceed lambda/2 = {lam / 2}, got {theta}")
    c = lam * theta / (2 * theta - lam)
    return np.array([theta, c, c, theta])


def equilibria(model: ModelSpec) -> EquilibriumSet:
    lam = model.lam
    kind = model.kind
    if kind is ModelKind.DFC:
        eq = EquilibriumSet("curve", curve=lambda th: dfc_equilibrium(lam, th), theta_interval=(lam / 2, math.inf))
        probe = [0.6 * lam, lam, 2 * lam, 10 * lam]
        eq.residual = max(float(np.max(np.abs(model.field(p)))) for p in eq.sample(probe))
    else:
        if kind is ModelKind.ENFORCED:
            point = np.array([4 * lam / 3, lam, lam])
        else:
            point = np.full(model.dimension, lam)
        eq = EquilibriumSet("single_point", point=point)
        eq.residual = float(np.max(np.abs(model.field(point))))
    if eq.residual > RESIDUAL_TOL * max(1.0, lam):
        raise AssertionError(f"{model.name}: equilibrium residual {eq.residual}")
    return eq


# -- Jacobians ---------------------------------------------------------------------

def _plain_jacobian(lam, s):
    x, y = s
    r2 = (x + y) ** 2
    return np.array([
        [(lam - y) * y / r2, -x * (x + lam) / r2],
        [-y * (y + lam) / r2, (lam - x) * x / r2],
    ])


def _friedman_jacobian(lam, s):
    x, y = s
    r2 = (x + y) ** 2
    return np.array([
        [-y * (y + lam) / r2, (lam - x) * x / r2],
        [(lam - y) * y / r2, -x * (x + lam) / r2],
    ])


_ANALYTIC = {ModelKind.PLAIN: _plain_jacobian, ModelKind.FRIEDMAN: _friedman_jacobian}


def denominator_stripped_field(point, lam: float = 1.0, model: Optional[ModelSpec] = None) -> np.ndarray:
    """Delayed Friedman field times x + y, in coordinates (a, b, x, y) = (x1, x2, x3, x4).

    Shares trajectories (up to a time change) with the original field.
    """
    if model is not None:
        if model.kind is not ModelKind.DELAYED:
            raise DomainError(f"stripped field is defined for the delayed model, got {model.name}")
        lam = model.lam
    x1, x2, x3, x4 = (float(v) for v in point)
    return np.array([lam * x4 - x1 * x3, lam * x3 - x2 * x4, (x1 - x4) * x3, (x2 - x3) * x4])


def _stripped_jacobian(point, lam: float = 1.0):
    x1, x2, x3, x4 = (float(v) for v in point)
    return np.array([
        [-x3, 0.0, -x1, lam],
        [0.0, -x4, lam, -x2],
        [x3, 0.0, x1 - x4, -x3],
        [0.0, x4, -x4, x2 - x3],
    ])


denominator_stripped_field.jacobian = _stripped_jacobian


def jacobian(field, point, scheme: str = "central", h: float = 1e-6) -> np.ndarray:
    """Jacobian of ``field`` (a ModelSpec or a callable) at ``point``.

    ``scheme`` is "central" (central differences with step ``h``, relative
    to the coordinate size) or "analytic" where a closed form is coded.
    """
    p = np.asarray(point, dtype=float)
    if isinstance(field, ModelSpec):
        model = field
        model.check_point(p)
        if scheme == "analytic":
            if model.kind not in _ANALYTIC:
                raise NotImplementedError(f"no analytic Jacobian for {model.name}")
            return _ANALYTIC[model.kind](model.lam, p)
        fn = model.field
    else:
        if scheme == "analytic":
            jac = getattr(field, "jacobian", None)
            if jac is None:
                raise NotImplementedError("no analytic Jacobian for this field")
            return jac(p)
        fn = field
    if scheme != "central":
        raise ValueError(f"unknown scheme {scheme!r}")
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    d = len(p)
    J = np.empty((d, d))
    for j in range(d):
        hj = h * max(1.0, abs(p[j]))
        e = np.zeros(d)
        e[j] = hj
        if np.any(p - e < 0):
            raise DomainError(f"stencil leaves the domain at {p.tolist()} (component {j})")
        J[:, j] = (np.asarray(fn(p + e)) - np.asarray(fn(p - e))) / (2 * hj)
    return J


# -- eigenstructure ------------------------------------------------------------------

def characteristic_polynomial(M) -> np.ndarray:
    """Coefficients of det(zI - M), highest degree first (Faddeev-LeVerrier)."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    coeffs = [1.0]
    N = np.zeros_like(M)
    for k in range(1, n + 1):
        N = M @ N + coeffs[-1] * np.eye(n)
        coeffs.append(-np.trace(M @ N) / k)
    return np.array(coeffs)


@dataclass
class EigenReport:
    matrix: np.ndarray
    eigenvalues: list[complex]  # with multiplicity
    distinct: list[complex]
    algebraic: list[int]
    geometric: list[int]
    classification: str
    charpoly: np.ndarray

    def charpoly_residuals(self) -> list[float]:
        return [abs(np.polyval(self.charpoly, mu)) for mu in self.eigenvalues]

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "eigenvalues": [[mu.real, mu.imag] for mu in self.eigenvalues],
            "multiplicities": [
                {"value": [mu.real, mu.imag], "algebraic": a, "geometric": g}
                for mu, a, g in zip(self.distinct, self.algebraic, self.geometric)
            ],
            "classification": self.classification,
            "zero_real_part_threshold": ZERO_REAL_PART,
        }


def _clean(z: complex, tol: float) -> complex:
    re = 0.0 if abs(z.real) < tol else z.real
    im = 0.0 if abs(z.imag) < tol else z.imag
    return complex(re, im)


def classify(eigenvalues: Sequence[complex], tol: float = ZERO_REAL_PART) -> str:
    re = np.array([mu.real for mu in eigenvalues])
    if any(abs(mu) <= tol for mu in eigenvalues):
        return "degenerate"
    if np.any(np.abs(re) <= tol):
        return "center-like"
    if np.all(re < 0):
        return "sink"
    if np.all(re > 0):
        return "source"
    return "saddle"


def eigen(matrix, cluster_tol: float = 1e-6) -> EigenReport:
    """Eigenvalues from the characteristic polynomial, with multiplicities.

    Roots of a repeated factor come back from the companion matrix split by
    about sqrt(machine eps); they are clustered and replaced by the cluster
    mean, which is well conditioned.
    """
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"eigen needs a square matrix, got shape {M.shape}")
    n = M.shape[0]
    cp = characteristic_polynomial(M)
    roots = [complex(r) for r in np.roots(cp)] if n > 0 else []
    scale = max(1.0, float(np.max(np.abs(M))))
    clusters: list[list[complex]] = []
    for r in sorted(roots, key=lambda z: (round(z.real, 5), round(z.imag, 5))):
        for c in clusters:
            if abs(np.mean(c) - r) <= cluster_tol * scale:
                c.append(r)
                break
        else:
            clusters.append([r])
    distinct = [_clean(complex(np.mean(c)), 1e-13 * scale) for c in clusters]
    algebraic = [len(c) for c in clusters]
    geometric = []
    for mu in distinct:
        sv = np.linalg.svd(M - mu * np.eye(n), compute_uv=False)
        rank = int(np.sum(sv > 1e-7 * scale))
        geometric.append(n - rank)
    values = [mu for mu, a in zip(distinct, algebraic) for _ in range(a)]
    return EigenReport(M, values, distinct, algebraic, geometric, classify(values), cp)


# -- Lyapunov function of the Friedman limit ------------------------------------------

def friedman_lyapunov(lam: float, s) -> float:
    return (s[0] - lam) ** 2 + (s[1] - lam) ** 2


def friedman_lyapunov_rate(lam: float, s) -> float:
    """Closed-form dV/dt = -(2/(x+y)) ((x-lam)^2 y + (y-lam)^2 x)."""
    x, y = s[0], s[1]
    return -2.0 / (x + y) * ((x - lam) ** 2 * y + (y - lam) ** 2 * x)


@dataclass
class LyapunovVerdict:
    strictly_decreasing: bool
    components_monotone: bool
    identity_max_residual: float
    rate_negative: bool
    floor: float
    floor_time: Optional[float]
    n_samples: int
    identity_tolerance: float = 1e-8

    @property
    def passes(self) -> bool:
        return (
            self.strictly_decreasing
            and self.components_monotone
            and self.rate_negative
            and self.identity_max_residual <= self.identity_tolerance
        )


def lyapunov_verdict(
    model: ModelSpec, trajectory: OdeTrajectory, n_grid: int = 2001, floor: float = 1e-16
) -> LyapunovVerdict:
    """Monotone decrease of V = (x-lam)^2 + (y-lam)^2 and the dV/dt identity.

    Strict decrease is judged only while V exceeds ``floor``; below it the
    sample-to-sample change of V is at the level of the integration error.
    The identity compares grad V . F with the closed-form rate.
    """
    if model.kind is not ModelKind.FRIEDMAN:
        raise DomainError(f"Lyapunov verdict applies to the Friedman limit, got {model.name}")
    lam = model.lam
    series = monitor(trajectory, lambda s: friedman_lyapunov(lam, s), n_grid=n_grid)
    above = series.values > floor
    cut = len(above) if above.all() else int(np.argmin(above))
    floor_time = None if cut == len(above) else float(series.t[cut])
    v = series.values[: cut + 1] if cut < len(above) else series.values
    at_equilibrium = bool(np.all(series.values == 0.0))
    strictly = at_equilibrium or bool(np.all(np.diff(v) < 0))

    states = trajectory(series.t[: max(cut, 2)])
    dev = states - lam
    monotone = True
    for j in range(2):
        dj = np.abs(dev[:, j])
        monotone &= bool(np.all(np.diff(dj) <= 1e-12 * max(1.0, lam)))

    resid = 0.0
    negative = True
    for s in trajectory(series.t):
        chain = float(np.dot(2 * (s - lam), model.field(s)))
        closed = friedman_lyapunov_rate(lam, s)
        resid = max(resid, abs(chain - closed) / max(1.0, abs(closed)))
        if friedman_lyapunov(lam, s) > floor and not closed < 0:
            negative = False
    return LyapunovVerdict(strictly, monotone, resid, negative, floor, floor_time, len(series.t))


# -- beta * rho^2 in the Enforced Friedman limit ----------------------------------------

def betarho2(transformed_state) -> float:
    _, rho, beta = transformed_state
    return beta * rho * rho


def betarho2_rate(transformed_state) -> float:
    """Rate -(3/2) beta (1 - beta) z asserted for d/dt(beta rho^2), lambda = 1."""
    z, _, beta = transformed_state
    return -1.5 * beta * (1 - beta) * z


def betarho2_rate_chain_rule(transformed_state) -> float:
    """d/dt(beta rho^2) from the chain rule on the transformed field.

    beta rho^2 = (x - y)^2, and differentiating gives
    -(3/2) beta (1 - beta) z rho: the asserted rate times rho.
    """
    z, rho, beta = transformed_state
    return -1.5 * beta * (1 - beta) * z * rho


def integrate_transformed(start, settings: IntegratorSettings, events: Sequence[EventSpec] = ()) -> OdeTrajectory:
    """Integrate the Enforced limit (lambda = 1) directly in (z, rho, beta)."""
    z, rho, beta = (float(v) for v in start)
    if not (z > 0 and rho > 0 and 0 <= beta < 1):
        raise DomainError(f"need z > 0, rho > 0, 0 <= beta < 1, got {start}")
    return integrate(transformed_field, [z, rho, beta], settings, events, labels=("z", "rho", "beta"))


@dataclass
class BetaRho2Verdict:
    nonincreasing: bool
    identity_max_rel_error: float  # against betarho2_rate
    chain_rule_max_rel_error: float  # against betarho2_rate_chain_rule
    identity_samples: int
    beta_final: float
    t_final: float
    rel_tolerance: float = 1e-6

    @property
    def passes(self) -> bool:
        return self.nonincreasing and self.identity_max_rel_error <= self.rel_tolerance


def betarho2_verdict(
    trajectory: OdeTrajectory,
    n_grid: int = 2001,
    delta: float = 1e-2,
    significance: float = 1e-4,
) -> BetaRho2Verdict:
    """Check beta*rho^2 is nonincreasing and compare its slope with two closed forms.

    ``trajectory`` holds (z, rho, beta) states. A fourth-order central
    difference (step ``delta``) of the monitored series is compared with
    :func:`betarho2_rate` (which decides ``passes``) and with
    :func:`betarho2_rate_chain_rule`, at samples where the rate is at least
    ``significance`` times its largest magnitude along the path (below that
    the relative comparison measures only interpolation noise).
    """
    series = monitor(trajectory, betarho2, n_grid=n_grid)
    beta = trajectory.y[:, 2]
    if np.any(beta < 0) or np.any(beta >= 1):
        raise DomainError("beta left [0, 1) along the trajectory")
    scale = max(1.0, float(np.max(np.abs(series.values))))
    nonincreasing = bool(np.all(np.diff(series.values) <= 1e-12 * scale))

    t0, t1 = trajectory.t[0], trajectory.t_end
    ts = series.t[(series.t >= t0 + 2 * delta) & (series.t <= t1 - 2 * delta)]
    g = lambda tt: np.array([betarho2(s) for s in trajectory(tt)])
    numeric = (-g(ts + 2 * delta) + 8 * g(ts + delta) - 8 * g(ts - delta) + g(ts - 2 * delta)) / (12 * delta)
    states = trajectory(ts)
    chain = np.array([betarho2_rate_chain_rule(s) for s in states])
    peak = float(np.max(np.abs(chain))) if len(chain) else 0.0
    keep = np.abs(chain) >= significance * peak if peak > 0 else np.zeros(len(chain), bool)

    def rel_error(closed):
        if keep.any():
            return float(np.max(np.abs(numeric[keep] - closed[keep]) / np.abs(closed[keep])))
        return float(np.max(np.abs(numeric))) if len(numeric) else 0.0

    asserted = np.array([betarho2_rate(s) for s in states])
    return BetaRho2Verdict(nonincreasing, rel_error(asserted), rel_error(chain), int(keep.sum()),
                           float(trajectory.final[2]), float(t1))


# -- decay rate -----------------------------------------------------------------------

@dataclass
class DecayFit:
    window: tuple[float, float]
    slope: float
    intercept: float
    residual: float
    n_samples: int
    shrunk: bool = False
    envelope: Optional[float] = None
    residual_limit: float = 0.1

    @property
    def flagged(self) -> bool:
        return self.residual > self.residual_limit

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flagged"] = self.flagged
        return d


def decay_fit(
    trajectory: Callable,
    equilibrium,
    window: tuple[float, float],
    n_samples: int = 2000,
    envelope: Optional[float] = None,
    underflow: float = 1e-13,
) -> DecayFit:
    """Least-squares slope of log distance-to-equilibrium against log t.

    ``trajectory`` is any callable t -> state (array t -> array of states).
    Samples are log-spaced over ``window``. With ``envelope`` set, each sample
    is the largest distance over the preceding ``envelope`` time units,
    which removes the oscillation of a rotating approach.
    """
    t1, t2 = (float(v) for v in window)
    if not 0 < t1 < t2:
        raise ValueError(f"window must satisfy 0 < t1 < t2, got {window}")
    if isinstance(trajectory, OdeTrajectory) and t2 > trajectory.t_end * (1 + 1e-12):
        raise ValueError(f"window end {t2} beyond trajectory end {trajectory.t_end}")
    eq = np.asarray(equilibrium, dtype=float)
    ts = np.geomspace(t1, t2, n_samples)

    def dist(tt):
        return np.linalg.norm(np.asarray(trajectory(tt)) - eq, axis=-1)

    if envelope:
        sub = np.linspace(0.0, 1.0, 33)
        lo = np.maximum(ts - envelope, 0.0)
        grid = lo[:, None] + (ts - lo)[:, None] * sub[None, :]
        d = dist(grid.ravel()).reshape(grid.shape).max(axis=1)
    else:
        d = dist(ts)

    shrunk = False
    small = d < underflow
    if small.any():
        k = int(np.argmax(small))
        if k < 2:
            raise ValueError("distance underflows at the start of the window")
        ts, d = ts[:k], d[:k]
        t2 = float(ts[-1])
        shrunk = True
    A = np.vstack([np.log(ts), np.ones_like(ts)]).T
    coef, *_ = np.linalg.lstsq(A, np.log(d), rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - np.log(d)) ** 2)))
    return DecayFit((t1, t2), float(coef[0]), float(coef[1]), resid, len(ts), shrunk, envelope)


# -- comparison lemma -------------------------------------------------------------------

@dataclass
class LemmaVerdict:
    positive: bool
    tail_window: tuple[float, float]
    tail_min: float
    tail_max: float
    lower: float
    upper: float
    tolerance: float

    @property
    def within(self) -> bool:
        return self.lower - self.tolerance <= self.tail_min and self.tail_max <= self.upper + self.tolerance

    @property
    def passes(self) -> bool:
        return self.positive and self.within


def lemma_bounds_check(
    a: Callable[[float], float],
    b: Callable[[float], float],
    u0: float,
    horizon: float,
    liminf_a: float,
    limsup_a: float,
    liminf_b: float,
    limsup_b: float,
    tolerance: float = 1e-3,
    n_grid: int = 20001,
) -> LemmaVerdict:
    """Integrate u' = b - a u and compare its tail with [liminf b/limsup a, limsup b/liminf a].

    The liminf/limsup values are declared by the caller; only sampled
    positivity of ``a`` and ``b`` is validated. The tail is the last decade
    of time, [horizon/10, horizon].
    """
    if u0 < 0:
        raise PreconditionError(f"u0 must be nonnegative, got {u0}")
    grid = np.linspace(0.0, horizon, n_grid)
    a_s = np.array([a(t) for t in grid])
    b_s = np.array([b(t) for t in grid])
    if np.any(a_s <= 0) or np.any(b_s <= 0):
        raise PreconditionError("a and b must be positive on [0, horizon]")
    settings = IntegratorSettings(horizon=horizon, rtol=1e-10, atol=1e-12, enforce_positivity=False,
                                  max_step=horizon / 1000)
    traj = solve(lambda t, u: np.array([b(t) - a(t) * u[0]]), [float(u0)], settings)
    u_grid = traj(grid)[:, 0]
    positive = bool(np.all(u_grid[1:] > 0) and np.all(traj.y[1:, 0] > 0))
    tail = grid >= horizon / 10
    return LemmaVerdict(
        positive=positive,
        tail_window=(horizon / 10, horizon),
        tail_min=float(u_grid[tail].min()),
        tail_max=float(u_grid[tail].max()),
        lower=liminf_b / limsup_a,
        upper=limsup_b / liminf_a,
        tolerance=tolerance,
    )


# -- aggregated report ---------------------------------------------------------------------

@dataclass
class StabilityReport:
    model: str
    lam: float
    equilibria: dict
    eigen: dict
    ode: list[dict] = field(default_factory=list)
    ctmc: list[dict] = field(default_factory=list)
    summary: str = ""

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, **asdict(self)}

    def text(self) -> str:
        lines = [f"[{self.model}] lambda={self.lam:g}: {self.summary}"]
        lines.append(f"  equilibria: {self.equilibria['description']} (residual {self.equilibria['residual']:.2e})")
        lines.append(f"  linearization: {self.eigen['classification']}")
        for o in self.ode:
            lines.append(f"  ode start {o['start']}: {o['verdict']}")
        for c in self.ctmc:
            lines.append(f"  ctmc start {c['start']}: {c['verdict']}")
        return "\n".join(lines)


@dataclass(frozen=True)
class CtmcScenario:
    start: tuple[int, ...]
    horizon: float
    replicas: int
    master_seed: int = 0
    workers: int = 1


def _equilibrium_block(model: ModelSpec) -> tuple[dict, np.ndarray]:
    eq = equilibria(model)
    lam = model.lam
    if eq.kind == "curve":
        point = eq.curve(lam)
        desc = "curve theta -> (theta, lam*theta/(2theta-lam), lam*theta/(2theta-lam), theta), theta > lam/2"
        block = {"kind": "curve", "description": desc, "theta_interval": [lam / 2, "inf"],
                 "samples": {repr(th): eq.curve(th).tolist() for th in (0.6 * lam, lam, 2 * lam, 10 * lam)}}
    else:
        point = eq.point
        block = {"kind": "single_point", "description": f"point {np.round(point, 12).tolist()}", "point": point.tolist()}
    block["residual"] = eq.residual
    block["residual_tolerance"] = RESIDUAL_TOL
    return block, point


def _eigen_block(model: ModelSpec, point) -> dict:
    scheme = "analytic" if model.kind in _ANALYTIC else "central"
    rep = eigen(jacobian(model, point, scheme=scheme))
    out = rep.to_dict()
    out["jacobian_scheme"] = scheme
    if model.kind is ModelKind.DELAYED:
        stripped = eigen(_stripped_jacobian(point / model.lam, 1.0))
        out["stripped"] = stripped.to_dict()
        out["note"] = ("original-field eigenvalues equal the stripped ones times 1/(x+y) = 1/(2 lambda) "
                       "at equilibrium (and lambda rescales the stripped system); nonhyperbolic, stability "
                       "is judged by the decay fit")
    return out


def _ode_block(model: ModelSpec, start, horizon: float) -> dict:
    lam = model.lam
    start = [float(v) for v in start]
    kind = model.kind
    out: dict = {"start": start, "horizon": horizon}
    settings = IntegratorSettings(horizon=horizon)
    if kind is ModelKind.DFC:
        try:
            _, v = dfc_divergence_run(lam, start, horizon=horizon, threshold=1e3)
        except PreconditionError as exc:
            traj = integrate_model(model, start, settings)
            out.update(final=traj.final.tolist(), reason=traj.reason, ok=False, verdict=f"integrated ({exc})")
            return out
        out.update(divergent=v.divergent, x_crossing=v.x_crossing, b_crossing=v.b_crossing,
                   a_final=v.a_final, y_final=v.y_final, threshold=v.threshold, ok=v.divergent,
                   verdict="divergence confirmed (threshold crossing 1e3)" if v.divergent else "divergence not confirmed")
        return out
    events = []
    if kind is ModelKind.PLAIN:
        ix = model.index("X") if start[0] > start[1] else model.index("Y")
        events = [threshold_event(ix, 1e3, "escape", terminal=True)]
    traj = integrate_model(model, start, settings, events)
    out.update(final=traj.final.tolist(), reason=traj.reason, t_end=traj.t_end)
    if kind is ModelKind.PLAIN:
        hit = traj.event_times("escape")
        out["escape_time"] = hit[0] if hit else None
        out["ok"] = bool(hit)
        out["verdict"] = "divergence confirmed (threshold crossing 1e3)" if hit else "no threshold crossing"
    elif kind is ModelKind.FRIEDMAN:
        lv = lyapunov_verdict(model, traj)
        err = float(np.max(np.abs(traj.final - lam)))
        ok = lv.passes and err <= 1e-6
        out.update(lyapunov=asdict(lv), final_error=err, final_error_tolerance=1e-6, ok=ok,
                   verdict="monotone V, converged" if ok else "check failed")
    elif kind is ModelKind.DELAYED:
        s = monitor(traj, lambda p: p[2] + p[3], n_grid=20001)
        late = s.t >= min(10.0, horizon / 2)
        out.update(min_x_plus_y=float(s.values[late].min()), x_plus_y_maxima=int(len(s.local_maxima())),
                   distance_final=float(np.linalg.norm(traj.final - lam)), ok=True,
                   verdict="oscillating approach (basin evidence only)")
    elif kind is ModelKind.ENFORCED:
        eq = np.array([4 * lam / 3, lam, lam])
        err = float(np.max(np.abs(traj.final - eq)))
        out.update(final_error=err, final_error_tolerance=1e-6)
        try:
            scaled = integrate_transformed(enforced_to_transformed(np.array(start) / lam),
                                           IntegratorSettings(horizon=horizon, rtol=1e-11, atol=1e-13))
        except DomainError as exc:
            out.update(betarho2=None, ok=err <= 1e-6, verdict=f"converged, beta*rho^2 not monitored ({exc})"
                       if err <= 1e-6 else "check failed")
            return out
        bv = betarho2_verdict(scaled)
        out["betarho2"] = asdict(bv)
        ok = bv.nonincreasing and bv.beta_final <= 1e-3 and err <= 1e-6
        out["ok"] = ok
        out["verdict"] = "beta -> 0, beta*rho^2 monotone, converged" if ok else "check failed"
    return out


def _ctmc_block(model: ModelSpec, sc: CtmcScenario) -> dict:
    lam = model.lam
    tmpl = ctmc.ensemble_template(model, sc.start, sc.horizon, average_window=(sc.horizon / 2, sc.horizon),
                                  checkpoints=(sc.horizon / 2, sc.horizon))
    seeds = ctmc.replica_seeds(sc.master_seed, sc.replicas)
    out = {"start": list(sc.start), "horizon": sc.horizon, "replicas": sc.replicas, "master_seed": sc.master_seed}
    if model.kind is ModelKind.PLAIN:
        ens = ctmc.run_ensemble(tmpl, seeds, workers=sc.workers)
        ix, iy = model.index("X"), model.index("Y")
        mxy = lambda s: max(s[ix], s[iy])
        m_half = float(np.median(ens.checkpoint_values(sc.horizon / 2, mxy)))
        m_end = float(np.median(ens.checkpoint_values(sc.horizon, mxy)))
        min_mean = float(np.median(ens.min_xy_means()))
        escaped = m_end > m_half and min_mean <= 2
        out.update(median_max_xy_half=m_half, median_max_xy_end=m_end, median_min_xy_mean=min_mean,
                   verdict="escape confirmed" if escaped else "escape not confirmed")
    else:
        level = 3 * lam + 1
        ens = ctmc.run_ensemble(tmpl, seeds, target=ctmc.max_xy_at_most(model, level), workers=sc.workers)
        frac = ens.hit_fraction()
        out.update(target=f"max(X,Y) <= {level:g}", hit_fraction=frac, censored=ens.n_censored,
                   hitting_time_quantiles=ctmc._jsonable_quantiles(ens.quantiles(ens.hitting_times())))
        label = "hitting time finite" if model.kind is ModelKind.FRIEDMAN else "empirical stability evidence"
        out["verdict"] = f"{label} in {100 * frac:.1f}% of replicas"
    return out


def stability_report(
    model: ModelSpec,
    ode_starts: Sequence[Sequence[float]] = (),
    ode_horizon: float = 1000.0,
    ctmc_scenarios: Sequence[CtmcScenario] = (),
) -> StabilityReport:
    """Collect the equilibrium, linearization, ODE and CTMC evidence for one model."""
    eq_block, point = _equilibrium_block(model)
    eig_block = _eigen_block(model, point)
    ode = [_ode_block(model, s, ode_horizon) for s in ode_starts]
    runs = [_ctmc_block(model, sc) for sc in ctmc_scenarios]

    ode_ok = all(o["ok"] for o in ode)
    k = model.kind
    if k is ModelKind.FRIEDMAN:
        summary = f"ODE: {'globally stable evidence (monotone V on all scenario starts)' if ode_ok else 'stability check failed'}"
    elif k is ModelKind.PLAIN:
        summary = f"ODE: {eig_block['classification']} at (lam,lam), {'divergence confirmed' if ode_ok else 'divergence not confirmed'}"
    elif k is ModelKind.DFC:
        summary = f"ODE: equilibrium curve, {'divergent region confirmed' if ode_ok else 'divergence not confirmed'}"
    elif k is ModelKind.DELAYED:
        summary = f"ODE: {eig_block['classification']} (nonhyperbolic), oscillating approach"
    else:
        summary = f"ODE: {eig_block['classification']}, {'beta -> 0, beta*rho^2 monotone' if ode_ok else 'check failed'}"
    if runs:
        summary += "; CTMC: " + "; ".join(r["verdict"] for r in runs)
        if k in (ModelKind.DFC, ModelKind.DELAYED, ModelKind.ENFORCED):
            summary += " (conjecture, not theorem)"
    return StabilityReport(model.name, model.lam, eq_block, eig_block, ode, runs, summary)
