"""Exact-event simulation of the two-chunk jump processes.

Random numbers
--------------
A run with seed ``s`` draws from ``numpy.random.Generator(PCG64(SeedSequence(s)))``.
Uniforms are consumed in pairs per event: ``u1`` gives the waiting time
``-log(1 - u1) / R`` (inverse transform, ``R`` the total rate) and ``u2``
selects the rule whose cumulative rate, in rate-table order, first exceeds
``u2 * R``. Replica ``i`` of an ensemble with master seed ``m`` uses the
64-bit seed ``replica_seed(m, i)``, taken from ``SeedSequence(m, spawn_key=(i,))``.

At a change of arrival rate (piecewise-constant schedules) the pending
waiting time is discarded and redrawn from the switch time, which is exact
by memorylessness.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .models import DomainError, ModelKind, ModelSpec, build_model

EVERY_EVENT = "every_event"
GRID = "grid"
STATISTICS = "statistics"
RECORD_MODES = (EVERY_EVENT, GRID, STATISTICS)

_BLOCK = 4096


def replica_seed(master_seed: int, index: int) -> int:
    """Deterministic 64-bit seed of replica ``index`` under ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def replica_seeds(master_seed: int, n: int) -> list[int]:
    return [replica_seed(master_seed, i) for i in range(n)]


@dataclass(frozen=True)
class SimConfig:
    model: ModelSpec
    initial: tuple[int, ...]
    horizon: float
    seed: int
    record: str = EVERY_EVENT
    grid_step: Optional[float] = None
    event_cap: int = 10_000_000
    # summary instrumentation
    average_window: Optional[tuple[float, float]] = None
    checkpoints: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "initial", self.model.check_state(self.initial))
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.event_cap < 1:
            raise ValueError("event_cap must be at least 1")
        if self.record not in RECORD_MODES:
            raise ValueError(f"record mode must be one of {RECORD_MODES}, got {self.record!r}")
        if self.record == GRID and not (self.grid_step and self.grid_step > 0):
            raise ValueError("grid recording needs a positive grid_step")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.average_window is not None:
            w0, w1 = self.average_window
            if not 0 <= w0 < w1:
                raise ValueError(f"bad averaging window {self.average_window}")


@dataclass
class PathSummary:
    terminal_state: tuple[int, ...]
    final_time: float
    n_events: int
    max_components: tuple[int, ...]
    min_components: tuple[int, ...]
    window: tuple[float, float]
    window_means: tuple[float, ...]
    min_xy_mean: float
    checkpoints: dict[float, tuple[int, ...]]
    hitting_time: Optional[float] = None


@dataclass
class CtmcTrajectory:
    model: str
    labels: tuple[str, ...]
    seed: int
    times: np.ndarray
    states: np.ndarray
    event_labels: list[str]
    terminated_by: str
    summary: PathSummary

    def state_at(self, t: float) -> np.ndarray:
        """State holding at time ``t`` (right-continuous); needs every-event recording."""
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.states[max(i, 0)]

    def component(self, label: str) -> np.ndarray:
        return self.states[:, self.labels.index(label)]


# -- targets (picklable so ensembles can run in worker processes) -----------

@dataclass(frozen=True)
class MaxAtMost:
    """max over the listed components (all if empty) <= level."""

    level: float
    indices: tuple[int, ...] = ()

    def __call__(self, state) -> bool:
        comps = [state[i] for i in self.indices] if self.indices else state
        return max(comps) <= self.level


@dataclass(frozen=True)
class MinAtMost:
    level: float
    indices: tuple[int, ...]

    def __call__(self, state) -> bool:
        return min(state[i] for i in self.indices) <= self.level


@dataclass(frozen=True)
class StateEquals:
    state: tuple[int, ...]

    def __call__(self, state) -> bool:
        return tuple(state) == self.state


def max_xy_at_most(model: ModelSpec, level: float) -> MaxAtMost:
    return MaxAtMost(level, (model.index("X"), model.index("Y")))


def min_xy_at_most(model: ModelSpec, level: float) -> MinAtMost:
    return MinAtMost(level, (model.index("X"), model.index("Y")))


# -- core loop -----------------------------------------------------------------

def _run(
    segments: Sequence[tuple[float, ModelSpec]],
    initial: tuple[int, ...],
    seed: int,
    record: str,
    grid_step: Optional[float],
    event_cap: int,
    average_window: Optional[tuple[float, float]],
    checkpoints: Sequence[float],
    target: Optional[Callable] = None,
    target_after: float = 0.0,
) -> CtmcTrajectory:
    model0 = segments[0][1]
    horizon = segments[-1][0]
    d = model0.dimension
    ix, iy = model0.index("X"), model0.index("Y")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    buf = rng.random(_BLOCK)
    pos = 0

    s = list(initial)
    t = 0.0
    w0, w1 = average_window if average_window is not None else (0.0, horizon)
    area = [0.0] * d
    area_min = 0.0
    smax = list(s)
    smin = list(s)
    cps = sorted(set(float(c) for c in checkpoints if 0 <= c <= horizon))
    cp_out: dict[float, tuple[int, ...]] = {}
    cp_i = 0

    times, states, labels = [], [], []
    grid_t, grid_i = [], 0
    if record == EVERY_EVENT:
        times.append(0.0)
        states.append(tuple(s))
        labels.append("init")
    elif record == GRID:
        n_grid = int(math.floor(horizon / grid_step + 1e-9)) + 1
        grid_t = [k * grid_step for k in range(n_grid)]

    hit = None
    if target is not None and target_after <= 0.0 and target(s):
        hit = 0.0

    def hold(t_a, t_b):
        # state s holds on [t_a, t_b)
        nonlocal area_min, cp_i, grid_i
        lo, hi = max(t_a, w0), min(t_b, w1)
        if hi > lo:
            dt = hi - lo
            for i in range(d):
                area[i] += s[i] * dt
            area_min += min(s[ix], s[iy]) * dt
        while cp_i < len(cps) and cps[cp_i] < t_b:
            cp_out[cps[cp_i]] = tuple(s)
            cp_i += 1
        while grid_i < len(grid_t) and grid_t[grid_i] < t_b:
            times.append(grid_t[grid_i])
            states.append(tuple(s))
            labels.append("")
            grid_i += 1

    n_events = 0
    terminated = "horizon"
    seg = 0
    seg_end, model = segments[0]
    rules = model.transitions
    while hit is None:
        rates = [r.rate(s) for r in rules]
        total = sum(rates)
        if pos + 2 > _BLOCK:
            buf = rng.random(_BLOCK)
            pos = 0
        u1, u2 = buf[pos], buf[pos + 1]
        pos += 2
        t_next = t - math.log1p(-u1) / total if total > 0 else math.inf
        if t_next >= seg_end:
            hold(t, seg_end)
            t = seg_end
            seg += 1
            if seg == len(segments):
                break
            seg_end, model = segments[seg]
            rules = model.transitions
            if target is not None and t >= target_after and target(s):
                hit = t
            continue
        hold(t, t_next)
        x = u2 * total
        acc = 0.0
        chosen = None
        for k, r in enumerate(rates):
            if r > 0:
                chosen = k
                acc += r
                if x < acc:
                    break
        rule = rules[chosen]
        for i, v in enumerate(rule.delta):
            if v:
                s[i] += v
                if s[i] > smax[i]:
                    smax[i] = s[i]
                elif s[i] < smin[i]:
                    smin[i] = s[i]
        t = t_next
        n_events += 1
        if record == EVERY_EVENT:
            times.append(t)
            states.append(tuple(s))
            labels.append(rule.label)
        if target is not None and t >= target_after and target(s):
            hit = t
            break
        if n_events >= event_cap:
            terminated = "event_cap"
            break
    if hit is not None:
        terminated = "target_hit"
    # points at exactly the stopping time (e.g. the horizon) see the final state
    while cp_i < len(cps) and cps[cp_i] <= t:
        cp_out[cps[cp_i]] = tuple(s)
        cp_i += 1
    while grid_i < len(grid_t) and grid_t[grid_i] <= t:
        times.append(grid_t[grid_i])
        states.append(tuple(s))
        labels.append("")
        grid_i += 1

    span = max(0.0, min(t, w1) - w0)
    summary = PathSummary(
        terminal_state=tuple(s),
        final_time=t,
        n_events=n_events,
        max_components=tuple(smax),
        min_components=tuple(smin),
        window=(w0, w1),
        window_means=tuple(a / span if span > 0 else math.nan for a in area),
        min_xy_mean=area_min / span if span > 0 else math.nan,
        checkpoints=cp_out,
        hitting_time=hit,
    )
    return CtmcTrajectory(
        model=model0.name,
        labels=model0.labels,
        seed=int(seed),
        times=np.array(times, dtype=float),
        states=np.array(states, dtype=np.int64).reshape(len(states), d),
        event_labels=labels,
        terminated_by=terminated,
        summary=summary,
    )


def simulate(config: SimConfig) -> CtmcTrajectory:
    """Exact stochastic simulation of ``config.model`` up to the horizon or event cap."""
    return _run(
        [(config.horizon, config.model)],
        config.initial,
        config.seed,
        config.record,
        config.grid_step,
        config.event_cap,
        config.average_window,
        config.checkpoints,
    )


@dataclass(frozen=True)
class HittingResult:
    time: Optional[float]
    censored_at: Optional[float]
    trajectory: CtmcTrajectory

    @property
    def censored(self) -> bool:
        return self.time is None


def hitting_time(config: SimConfig, target: Callable, after: float = 0.0) -> HittingResult:
    """First time at or after ``after`` at which the state satisfies ``target``."""
    traj = _run(
        [(config.horizon, config.model)],
        config.initial,
        config.seed,
        config.record,
        config.grid_step,
        config.event_cap,
        config.average_window,
        config.checkpoints,
        target,
        after,
    )
    hit = traj.summary.hitting_time
    return HittingResult(hit, None if hit is not None else traj.summary.final_time, traj)


def simulate_schedule(
    kind: "ModelKind | str",
    schedule: Sequence[tuple[float, float]],
    initial,
    seed: int,
    record: str = STATISTICS,
    grid_step: Optional[float] = None,
    event_cap: int = 10_000_000,
    average_window: Optional[tuple[float, float]] = None,
    checkpoints: Sequence[float] = (),
    target: Optional[Callable] = None,
    target_after: float = 0.0,
) -> CtmcTrajectory:
    """Simulate with a piecewise-constant arrival rate; ``schedule`` is [(duration, lambda), ...]."""
    if not schedule:
        raise ValueError("schedule must contain at least one segment")
    segments = []
    end = 0.0
    for duration, lam in schedule:
        if not (duration > 0 and math.isfinite(duration)):
            raise ValueError(f"segment duration must be positive, got {duration}")
        end += duration
        segments.append((end, build_model(kind, lam)))
    initial = segments[0][1].check_state(initial)
    if record not in RECORD_MODES:
        raise ValueError(f"record mode must be one of {RECORD_MODES}")
    return _run(segments, initial, seed, record, grid_step, event_cap, average_window, checkpoints,
                target, target_after)


# -- ensembles -------------------------------------------------------------------

@dataclass
class EnsembleStats:
    model: str
    labels: tuple[str, ...]
    seeds: list[int]
    summaries: list[PathSummary]
    terminated_by: list[str]

    @property
    def n(self) -> int:
        return len(self.summaries)

    def hitting_times(self) -> np.ndarray:
        """Hitting times with censored replicas as +inf."""
        return np.array([math.inf if s.hitting_time is None else s.hitting_time for s in self.summaries])

    @property
    def n_censored(self) -> int:
        return int(np.sum(~np.isfinite(self.hitting_times())))

    def hit_fraction(self) -> float:
        return 1.0 - self.n_censored / self.n

    def checkpoint_values(self, t: float, fn: Callable) -> np.ndarray:
        """``fn`` of each replica's state at ``t``; NaN where the run stopped earlier (target hit)."""
        return np.array([fn(s.checkpoints[t]) if t in s.checkpoints else math.nan for s in self.summaries],
                        dtype=float)

    def window_means(self, label: str) -> np.ndarray:
        i = self.labels.index(label)
        return np.array([s.window_means[i] for s in self.summaries])

    def min_xy_means(self) -> np.ndarray:
        return np.array([s.min_xy_mean for s in self.summaries])

    @staticmethod
    def quantiles(values, probs=(0.05, 0.25, 0.5, 0.75, 0.95)) -> dict[str, float]:
        v = np.sort(np.asarray(values, dtype=float))
        # inverted-CDF quantiles keep +inf (censored) entries meaningful
        return {f"q{p:g}": float(np.quantile(v, p, method="inverted_cdf")) for p in probs}

    def to_dict(self) -> dict:
        ix, iy = self.labels.index("X"), self.labels.index("Y")
        replicas = []
        for seed, s, term in zip(self.seeds, self.summaries, self.terminated_by):
            replicas.append({
                "seed": seed,
                "terminated_by": term,
                "final_time": s.final_time,
                "n_events": s.n_events,
                "terminal_state": list(s.terminal_state),
                "max_components": list(s.max_components),
                "min_components": list(s.min_components),
                "window": list(s.window),
                "window_means": list(s.window_means),
                "min_xy_mean": s.min_xy_mean,
                "checkpoints": {repr(t): list(v) for t, v in sorted(s.checkpoints.items())},
                "hitting_time": s.hitting_time,
                "censored": s.hitting_time is None,
            })
        terminal_max_xy = [max(s.terminal_state[ix], s.terminal_state[iy]) for s in self.summaries]
        return {
            "model": self.model,
            "labels": list(self.labels),
            "replicas": len(self.summaries),
            "censored": self.n_censored,
            "aggregate": {
                "hitting_time": _jsonable_quantiles(self.quantiles(self.hitting_times())),
                "min_xy_mean": _jsonable_quantiles(self.quantiles(self.min_xy_means())),
                "terminal_max_xy": self.quantiles(terminal_max_xy),
            },
            "replica_summaries": replicas,
        }


def _jsonable_quantiles(q: dict[str, float]) -> dict:
    return {k: (v if math.isfinite(v) else "inf") for k, v in q.items()}


@dataclass(frozen=True)
class _Job:
    kind: str
    lam: float
    initial: tuple[int, ...]
    horizon: float
    seed: int
    event_cap: int
    average_window: Optional[tuple[float, float]]
    checkpoints: tuple[float, ...]
    target: Optional[Callable]
    target_after: float
    schedule: tuple[tuple[float, float], ...] = ()


def _run_job(job: _Job) -> tuple[PathSummary, str]:
    if job.schedule:
        traj = simulate_schedule(job.kind, job.schedule, job.initial, job.seed, STATISTICS, None, job.event_cap,
                                 job.average_window, job.checkpoints, job.target, job.target_after)
    else:
        model = build_model(job.kind, job.lam)
        traj = _run([(job.horizon, model)], job.initial, job.seed, STATISTICS, None, job.event_cap,
                    job.average_window, job.checkpoints, job.target, job.target_after)
    return traj.summary, traj.terminated_by


def _execute(jobs: list[_Job], workers: int) -> list[tuple[PathSummary, str]]:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [_run_job(j) for j in jobs]


def run_ensemble(
    template: SimConfig,
    seeds: Sequence[int],
    target: Optional[Callable] = None,
    target_after: float = 0.0,
    workers: int = 1,
) -> EnsembleStats:
    """Independent replicas of ``template``, one per seed, in seed order.

    Replicas keep only their summaries. With ``workers > 1`` they run in a
    process pool; the result is identical to serial execution.
    """
    if not seeds:
        raise ValueError("run_ensemble needs at least one seed")
    jobs = [
        _Job(template.model.name, template.model.lam, template.initial, template.horizon, int(s),
             template.event_cap, template.average_window, tuple(template.checkpoints), target, target_after)
        for s in seeds
    ]
    results = _execute(jobs, workers)
    return EnsembleStats(
        model=template.model.name,
        labels=template.model.labels,
        seeds=[int(s) for s in seeds],
        summaries=[r[0] for r in results],
        terminated_by=[r[1] for r in results],
    )


def run_schedule_ensemble(
    kind: "ModelKind | str",
    schedule: Sequence[tuple[float, float]],
    initial,
    seeds: Sequence[int],
    target: Optional[Callable] = None,
    target_after: float = 0.0,
    average_window: Optional[tuple[float, float]] = None,
    checkpoints: Sequence[float] = (),
    event_cap: int = 10_000_000,
    workers: int = 1,
) -> EnsembleStats:
    """Like :func:`run_ensemble` with a piecewise-constant arrival rate."""
    if not seeds:
        raise ValueError("ensemble needs at least one seed")
    kind = ModelKind.parse(kind)
    schedule = tuple((float(d), float(lam)) for d, lam in schedule)
    # validates the schedule and the initial state once, up front
    probe = simulate_schedule(kind, schedule, initial, 0, STATISTICS, event_cap=1)
    horizon = sum(d for d, _ in schedule)
    jobs = [
        _Job(kind.value, schedule[0][1], tuple(initial), horizon, int(s), event_cap, average_window,
             tuple(checkpoints), target, target_after, schedule)
        for s in seeds
    ]
    results = _execute(jobs, workers)
    return EnsembleStats(
        model=probe.model,
        labels=probe.labels,
        seeds=[int(s) for s in seeds],
        summaries=[r[0] for r in results],
        terminated_by=[r[1] for r in results],
    )


# -- Friedman compensator --------------------------------------------------------

def friedman_drift(lam: float, X, Y):
    """Drift of X^2 + Y^2 for the stochastic Friedman system (works on arrays)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    return (
        4 * lam * (X + 0.5) * (Y + 0.5) - 2 * X * (X - 0.5) * (Y + 1) - 2 * (X + 1) * (Y - 0.5) * Y
    ) / (X + Y + 1)


@dataclass
class DriftScan:
    lam: float
    max_state: int
    n_states: int
    worst_drift: float
    worst_state: tuple[int, int]

    @property
    def holds(self) -> bool:
        return self.worst_drift <= -0.25


def friedman_drift_scan(lam: float, max_state: int = 200) -> DriftScan:
    """All integer states with 3*lam + 1 < max(X, Y) <= max_state."""
    X, Y = np.meshgrid(np.arange(max_state + 1), np.arange(max_state + 1), indexing="ij")
    mask = np.maximum(X, Y) > 3 * lam + 1
    a = friedman_drift(lam, X[mask], Y[mask])
    k = int(np.argmax(a))
    return DriftScan(lam, max_state, int(mask.sum()), float(a[k]), (int(X[mask][k]), int(Y[mask][k])))


@dataclass
class CompensatorCheck:
    checkpoints: tuple[float, ...]
    means: tuple[float, ...]
    std_errors: tuple[float, ...]
    n: int

    @property
    def passes(self) -> bool:
        return all(abs(m) <= 3 * se for m, se in zip(self.means, self.std_errors))

    def z_scores(self) -> tuple[float, ...]:
        return tuple(m / se if se > 0 else math.inf for m, se in zip(self.means, self.std_errors))


def compensated_increment(traj: CtmcTrajectory, lam: float, t: float) -> float:
    """M_t - M_0 with M = X^2 + Y^2 - integral of the drift, along one every-event path."""
    times, states = traj.times, traj.states
    k = int(np.searchsorted(times, t, side="right"))  # states[:k] are in force before t
    X, Y = states[:k, 0], states[:k, 1]
    ends = np.append(times[1:k], t)
    integral = float(np.sum(friedman_drift(lam, X, Y) * (ends - times[:k])))
    xt, yt = states[k - 1]
    x0, y0 = states[0]
    return float(xt * xt + yt * yt - x0 * x0 - y0 * y0 - integral)


def friedman_compensator_check(
    trajectories: Sequence[CtmcTrajectory], lam: float, checkpoints: Sequence[float]
) -> CompensatorCheck:
    """Ensemble mean of M_t - M_0 at each checkpoint; zero within 3 s.e. for a martingale."""
    if not trajectories:
        raise ValueError("need at least one trajectory")
    for tr in trajectories:
        if tr.model != ModelKind.FRIEDMAN.value:
            raise DomainError(f"compensator check applies to the Friedman system, got {tr.model}")
        if tr.event_labels[:1] != ["init"]:
            raise DomainError("compensator check needs every-event recording")
    means, ses = [], []
    for t in checkpoints:
        inc = np.array([compensated_increment(tr, lam, t) for tr in trajectories])
        means.append(float(inc.mean()))
        ses.append(float(inc.std(ddof=1) / math.sqrt(len(inc))) if len(inc) > 1 else math.inf)
    return CompensatorCheck(tuple(checkpoints), tuple(means), tuple(ses), len(trajectories))


def ensemble_template(model: ModelSpec, initial, horizon: float, **kwargs) -> SimConfig:
    """SimConfig used as an ensemble template (the seed is replaced per replica)."""
    return SimConfig(model=model, initial=tuple(initial), horizon=horizon, seed=0, record=STATISTICS, **kwargs)
