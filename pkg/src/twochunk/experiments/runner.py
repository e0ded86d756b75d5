"""Scenario execution: engines, monitors, metrics, asserted checks and manifests."""
from __future__ import annotations

import copy
import logging
import math
import operator
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .. import __version__, analysis, ctmc
from ..models import DomainError, ModelKind, build_model
from ..ode import IntegratorSettings, OdeTrajectory, PreconditionError, dfc_divergence_run, integrate_model, \
    monitor, threshold_event
from . import artifacts as art
from .checks import ROUTINES
from .config import ConfigError, ScenarioConfig

log = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).parent / "scenarios"
MANIFEST = "manifest.json"
NOISE_FLOOR = 1e-16  # relative level below which a monitored series is treated as zero


class ScenarioError(RuntimeError):
    """Engine failure, tagged with the scenario that raised it."""


# -- metrics --------------------------------------------------------------------------

def _series_stat(t: np.ndarray, v: np.ndarray, stat: str, window=None):
    if window is not None:
        keep = (t >= window[0]) & (t <= window[1])
        t, v = t[keep], v[keep]
    if len(v) == 0:
        return math.nan
    if stat == "min":
        return float(np.min(v))
    if stat == "max":
        return float(np.max(v))
    if stat == "final":
        return float(v[-1])
    if stat == "local_maxima":
        return int(np.sum((v[1:-1] > v[:-2]) & (v[1:-1] > v[2:])))
    floor = NOISE_FLOOR * max(1.0, float(np.max(np.abs(v))))
    if stat == "strictly_decreasing":
        # judged until the series first drops to the noise floor
        above = np.abs(v) > floor
        cut = len(v) if above.all() else int(np.argmin(above)) + 1
        return bool(np.all(np.diff(v[:cut]) < 0))
    if stat == "nonincreasing":
        return bool(np.all(np.diff(v) <= floor))
    raise KeyError(stat)


SERIES_STATS = ("min", "max", "final", "local_maxima", "strictly_decreasing", "nonincreasing")


@dataclass
class Evidence:
    metrics: dict[str, Any] = field(default_factory=dict)
    series: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def value(self, metric: str, window=None):
        """Metric by name; ``<series>.<stat>`` names also accept a time window."""
        if window is None and metric in self.metrics:
            return self.metrics[metric]
        head, _, stat = metric.rpartition(".")
        if stat in SERIES_STATS and head in self.series:
            t, v = self.series[head]
            return _series_stat(t, v, stat, window)
        if window is not None and metric in self.metrics:
            raise KeyError(f"metric {metric!r} does not take a window")
        raise KeyError(f"unknown metric {metric!r}")

    def names(self) -> list[str]:
        return sorted(list(self.metrics) + [f"{s}.{st}" for s in self.series for st in SERIES_STATS])


_OPS = {"<=": operator.le, ">=": operator.ge, "<": operator.lt, ">": operator.gt, "==": operator.eq,
        "!=": operator.ne}


def evaluate_checks(cfg: ScenarioConfig, ev: Evidence) -> list[dict]:
    results = []
    for a in cfg.checks:
        row: dict[str, Any] = {"metric": a.metric, "op": a.op, "value": a.value}
        if a.window is not None:
            row["window"] = list(a.window)
        try:
            observed = ev.value(a.metric, a.window)
            target = a.value
            if isinstance(target, str) and target.startswith("metric:"):
                target = ev.value(target[len("metric:"):])
                row["target"] = target
            if a.op == "in":
                ok = target[0] <= observed <= target[1]
            else:
                ok = _OPS[a.op](observed, target)
            row.update(observed=observed, passed=bool(ok))
        except (KeyError, TypeError) as exc:
            row.update(observed=None, passed=False, error=str(exc).strip("'\""))
        results.append(row)
    return results


def verdict_of(results: list[dict]) -> str:
    if not results:
        return "evidence"
    return "pass" if all(r["passed"] for r in results) else "fail"


# -- ODE part ----------------------------------------------------------------------------

def _point_equilibrium(kind: ModelKind, lam: float) -> Optional[np.ndarray]:
    if kind is ModelKind.DFC:
        return None
    return analysis.equilibria(build_model(kind, lam)).point


def _monitor_fn(name: str, kind: ModelKind, lam: float, labels):
    ix, iy = labels.index("X"), labels.index("Y")
    if name == "x_plus_y":
        return lambda s: s[ix] + s[iy]
    if name == "lyapunov":
        return lambda s: analysis.friedman_lyapunov(lam, s)
    if name == "betarho2":
        return lambda s: (s[ix] - s[iy]) ** 2  # beta * rho^2
    eq = _point_equilibrium(kind, lam)
    return lambda s: float(np.linalg.norm(np.asarray(s) - eq))


def run_ode(cfg: ScenarioConfig, ev: Evidence, out: Path, files: list[Path]) -> dict:
    o = cfg.ode
    kind = ModelKind(cfg.model)
    model = build_model(kind, cfg.lam)
    settings = IntegratorSettings(horizon=o.horizon, rtol=o.rtol, atol=o.atol,
                                  max_step=o.max_step if o.max_step is not None else math.inf)
    lower = [lab.lower() for lab in model.labels]
    block: dict[str, Any] = {}
    if o.divergence_check:
        traj, v = dfc_divergence_run(cfg.lam, list(o.initial), horizon=o.horizon, settings=settings)
        ev.metrics.update({
            "dfc.relations_hold": v.relations_hold, "dfc.divergent": v.divergent,
            "dfc.a_final_error": abs(v.a_final - cfg.lam / 2), "dfc.y_final": v.y_final,
            "dfc.x_crossing": v.x_crossing if v.x_crossing is not None else math.inf,
            "dfc.b_crossing": v.b_crossing if v.b_crossing is not None else math.inf,
            "dfc.y_decreasing": v.y_decreasing, "dfc.min_gap": v.min_gap,
        })
        block["divergence"] = {
            "relations_hold": v.relations_hold, "divergent": v.divergent, "a_final": v.a_final,
            "y_final": v.y_final, "x_crossing": v.x_crossing, "b_crossing": v.b_crossing,
            "threshold": v.threshold, "a_tolerance": v.a_tolerance, "min_gap": v.min_gap,
            "note": "growth to infinity is reported as a threshold crossing",
        }
    else:
        events = [threshold_event(lower.index(lab), level, f"cross:{lab}") for lab, level in o.thresholds.items()]
        traj = integrate_model(model, list(o.initial), settings, events)
    for lab, level in o.thresholds.items():
        hits = [h.t for h in traj.events if h.name == f"cross:{lab}"]
        if not hits and o.divergence_check:
            col = traj.y[:, lower.index(lab)]
            above = np.nonzero(col >= level)[0]
            hits = [float(traj.t[above[0]])] if len(above) else []
        ev.metrics[f"ode.crossing.{lab}"] = hits[0] if hits else math.inf
        if hits:
            at = traj(hits[0])
            for j, other in enumerate(lower):
                ev.metrics[f"ode.at_crossing.{lab}.{other}"] = float(at[j])

    ev.metrics["ode.t_end"] = traj.t_end
    ev.metrics["ode.steps"] = len(traj.t) - 1
    ev.metrics["ode.reason"] = traj.reason
    for i, lab in enumerate(lower):
        ev.metrics[f"ode.final.{lab}"] = float(traj.final[i])
    eq = _point_equilibrium(kind, cfg.lam)
    if eq is not None:
        ev.metrics["ode.final_error"] = float(np.max(np.abs(traj.final - eq)))

    grid = np.linspace(traj.t[0], traj.t_end, o.samples)
    states = traj(grid)
    for i, lab in enumerate(lower):
        ev.series[f"ode.{lab}"] = (grid, states[:, i])

    for name in cfg.monitors:
        series = monitor(traj, _monitor_fn(name, kind, cfg.lam, model.labels), n_grid=o.samples)
        ev.series[f"monitor.{name}"] = (series.t, series.values)
    if "lyapunov" in cfg.monitors:
        lv = analysis.lyapunov_verdict(model, traj, n_grid=o.samples)
        ev.metrics.update({"lyapunov.strictly_decreasing": lv.strictly_decreasing,
                           "lyapunov.identity_residual": lv.identity_max_residual,
                           "lyapunov.components_monotone": lv.components_monotone})
    if "betarho2" in cfg.monitors:
        try:
            tt = analysis.integrate_transformed(
                analysis.enforced_to_transformed(np.array(o.initial) / cfg.lam),
                IntegratorSettings(horizon=o.horizon, rtol=1e-11, atol=1e-13))
            bv = analysis.betarho2_verdict(tt)
            ev.metrics.update({"betarho2.nonincreasing": bv.nonincreasing,
                               "betarho2.identity_rel_error": bv.identity_max_rel_error,
                               "betarho2.chain_rule_rel_error": bv.chain_rule_max_rel_error,
                               "betarho2.beta_final": bv.beta_final})
        except DomainError as exc:
            block["betarho2_note"] = f"transformed coordinates unavailable: {exc}"
    if o.decay_fit is not None:
        if eq is None:
            raise ConfigError(f"{cfg.name}: decay_fit needs a point equilibrium")
        fit = analysis.decay_fit(traj, eq, o.decay_fit.window, o.decay_fit.samples, o.decay_fit.envelope)
        ev.metrics.update({"decay.slope": fit.slope, "decay.residual": fit.residual, "decay.flagged": fit.flagged})
        block["decay_fit"] = fit.to_dict()

    block.update(reason=traj.reason, t_end=traj.t_end, steps=len(traj.t) - 1,
                 events=[{"name": h.name, "t": h.t, "state": h.state.tolist()} for h in traj.events],
                 settings={"rtol": o.rtol, "atol": o.atol, "max_step": o.max_step, "horizon": o.horizon})

    if "trajectory_csv" in cfg.outputs:
        rows = ([t, *s] for t, s in zip(grid, states))
        files.append(art.write_csv(out / "ode_trajectory.csv", ["t", *lower], rows,
                                   f"ode model={cfg.model} lambda={cfg.lam:g}"))
        files.append(art.write_json(out / "ode_trajectory.json",
                                    {"termination_reason": traj.reason, "t_end": traj.t_end,
                                     "steps": len(traj.t) - 1, "events": block["events"]}))
    if "monitor_csv" in cfg.outputs:
        for name in cfg.monitors:
            t, v = ev.series[f"monitor.{name}"]
            files.append(art.write_csv(out / f"monitor_{name}.csv", ["t", "value"], zip(t, v), f"monitor={name}"))
    if "svg" in cfg.outputs:
        comps = [(lab, grid, states[:, i]) for i, lab in enumerate(lower)]
        (out / "ode.svg").write_text(art.svg_lines(comps, f"{cfg.name}: {cfg.model}, lambda={cfg.lam:g}",
                                                   ylabel="state"))
        files.append(out / "ode.svg")
        for name in cfg.monitors:
            t, v = ev.series[f"monitor.{name}"]
            p = out / f"monitor_{name}.svg"
            p.write_text(art.svg_lines([(name, t, v)], f"{cfg.name}: {name}", ylabel=name))
            files.append(p)
    return block


# -- CTMC part ---------------------------------------------------------------------------

def _target(cfg: ScenarioConfig, model):
    c = cfg.ctmc
    if c.target is None:
        if c.schedule is not None and len(c.schedule) > 1:
            # recovery after the last rate change: every component back below 3*lambda_final + 1
            return ctmc.MaxAtMost(3 * c.schedule[-1][1] + 1), sum(d for d, _ in c.schedule[:-1]), True
        return None, 0.0, False
    key, level = c.target
    if key == "max_at_most":
        return ctmc.MaxAtMost(level), c.target_after, False
    if key == "max_xy_at_most":
        return ctmc.max_xy_at_most(model, level), c.target_after, False
    return ctmc.min_xy_at_most(model, level), c.target_after, False


def run_ctmc(cfg: ScenarioConfig, ev: Evidence, out: Path, files: list[Path], workers: int) -> dict:
    c = cfg.ctmc
    kind = ModelKind(cfg.model)
    model = build_model(kind, c.schedule[0][1] if c.schedule else cfg.lam)
    horizon = sum(d for d, _ in c.schedule) if c.schedule else c.horizon
    seeds = cfg.seeds()
    target, after, recovery = _target(cfg, model)
    cps = tuple(sorted(set(c.checkpoints)))
    trajs = []
    if c.record == ctmc.STATISTICS:
        if c.schedule:
            ens = ctmc.run_schedule_ensemble(kind, c.schedule, c.initial, seeds, target, after, c.average_window,
                                             cps, c.event_cap, workers)
        else:
            tmpl = ctmc.SimConfig(model, c.initial, horizon, 0, ctmc.STATISTICS, None, c.event_cap,
                                  c.average_window, cps)
            ens = ctmc.run_ensemble(tmpl, seeds, target, after, workers)
    else:
        for seed in seeds:
            if c.schedule:
                tr = ctmc.simulate_schedule(kind, c.schedule, c.initial, seed, c.record, c.grid_step, c.event_cap,
                                            c.average_window, cps, target, after)
            else:
                sc = ctmc.SimConfig(model, c.initial, horizon, seed, c.record, c.grid_step, c.event_cap,
                                    c.average_window, cps)
                tr = ctmc.hitting_time(sc, target, after).trajectory if target else ctmc.simulate(sc)
            trajs.append(tr)
        ens = ctmc.EnsembleStats(model.name, model.labels, list(seeds), [t.summary for t in trajs],
                                 [t.terminated_by for t in trajs])

    ix, iy = model.index("X"), model.index("Y")
    m = ev.metrics
    m["ctmc.replicas"] = ens.n
    m["ctmc.event_cap_hits"] = sum(1 for t in ens.terminated_by if t == "event_cap")
    m["ctmc.median_terminal_max_xy"] = float(np.median([max(s.terminal_state[ix], s.terminal_state[iy])
                                                       for s in ens.summaries]))
    for t in cps:
        key = f"{t:g}"
        hi = ens.checkpoint_values(t, lambda s: max(s[ix], s[iy]))
        lo = ens.checkpoint_values(t, lambda s: min(s[ix], s[iy]))
        reached = ~np.isnan(hi)
        m[f"ctmc.reached@{key}"] = int(reached.sum())
        m[f"ctmc.median_max_xy@{key}"] = float(np.median(hi[reached])) if reached.any() else math.nan
        m[f"ctmc.median_min_xy@{key}"] = float(np.median(lo[reached])) if reached.any() else math.nan
    if c.average_window is not None:
        m["ctmc.median_min_xy_mean"] = float(np.median(ens.min_xy_means()))
        for lab in model.labels:
            m[f"ctmc.median_window_mean.{lab}"] = float(np.median(ens.window_means(lab)))
    block: dict[str, Any] = {"seeds": list(seeds), "horizon": horizon, "ensemble": ens.to_dict()}
    if target is not None:
        ht = ens.hitting_times()
        prefix = "flash.recovery" if recovery else "ctmc.hit"
        m[f"{prefix}_fraction"] = ens.hit_fraction()
        m[f"{prefix}_time_median"] = float(np.quantile(np.sort(ht - after), 0.5, method="inverted_cdf"))
        m[f"{prefix}_time_q0.95"] = float(np.quantile(np.sort(ht - after), 0.95, method="inverted_cdf"))
        block["target"] = {"predicate": repr(target), "after": after}
        if recovery:
            block["recovery_note"] = ("recovery time = time after the last rate change until every component is "
                                      "at most 3*lambda_final + 1; this metric is our own instrumentation")
    if c.schedule:
        block["schedule"] = [list(s) for s in c.schedule]

    if "trajectory_csv" in cfg.outputs and trajs:
        for tr in trajs:
            cols = ["t", "model", "seed", *model.labels, "event_label"]
            rows = ([t, cfg.model, tr.seed, *st, lab] for t, st, lab in zip(tr.times, tr.states, tr.event_labels))
            files.append(art.write_csv(out / f"ctmc_seed{tr.seed}.csv", cols, rows,
                                       f"ctmc record={c.record} lambda={cfg.lam:g} terminated_by={tr.terminated_by}"))
    if "svg" in cfg.outputs:
        if trajs:
            tr = trajs[0]
            series = [(lab, tr.times, tr.states[:, i]) for i, lab in enumerate(model.labels)]
            title = f"{cfg.name}: {cfg.model} seed {tr.seed}"
        else:
            if target is not None:
                vals = np.sort(ens.hitting_times() - after)
                label = "hitting time"
            else:
                vals = np.sort([max(s.terminal_state[ix], s.terminal_state[iy]) for s in ens.summaries])
                label = "terminal max(X,Y)"
            series = [(f"ECDF of {label}", vals, np.arange(1, len(vals) + 1) / len(vals))]
            title = f"{cfg.name}: {cfg.model}, {ens.n} replicas"
        (out / "ctmc.svg").write_text(art.svg_lines(series, title, xlabel="t" if trajs else "value"))
        files.append(out / "ctmc.svg")
    return block


# -- scenario ------------------------------------------------------------------------------

def _manifest(cfg: ScenarioConfig, kind: str, out: Path, files: Sequence[Path], results, verdict: str,
              seconds: float, extra: Optional[dict] = None) -> dict:
    man = {
        "tool": "twochunk",
        "version": __version__,
        "kind": kind,
        "scenario": cfg.name,
        "claim": cfg.claim,
        "config_sha256": cfg.digest(),
        "verdict": verdict,
        "checks": results,
        "artifacts": [{"path": str(Path(f).relative_to(out)), "sha256": art.sha256_file(f),
                       "bytes": Path(f).stat().st_size} for f in files],
        "timing": {"wall_seconds": round(seconds, 3)},
    }
    if extra:
        man.update(extra)
    art.write_json(out / MANIFEST, man)
    return man


def _verdict_line(cfg: ScenarioConfig, verdict: str, results: list[dict]) -> str:
    tag = {"pass": "PASS", "fail": "FAIL", "evidence": "EVIDENCE"}[verdict]
    claim = f" [{cfg.claim}]" if cfg.claim else ""
    if verdict == "evidence":
        return f"{tag:8s} {cfg.name}{claim}: no asserted checks"
    failed = [r for r in results if not r["passed"]]
    if not failed:
        return f"{tag:8s} {cfg.name}{claim}: {len(results)}/{len(results)} checks"
    first = failed[0]
    return (f"{tag:8s} {cfg.name}{claim}: {len(results) - len(failed)}/{len(results)} checks; "
            f"{first['metric']} = {first.get('observed')!r} not {first['op']} {first['value']!r}")


def execute(cfg: ScenarioConfig, out: Path, workers: int = 1) -> tuple[Evidence, dict, list[Path]]:
    """Run the engines for one scenario and write its data artifacts into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    ev = Evidence()
    files: list[Path] = []
    body: dict[str, Any] = {}
    try:
        if cfg.mode == "check":
            metrics, details = ROUTINES[cfg.check.name](cfg.lam, dict(cfg.check.params), workers)
            ev.metrics.update(metrics)
            body["check"] = {"routine": cfg.check.name, "params": cfg.check.params, "details": details}
        if cfg.mode in ("ode", "both"):
            body["ode"] = run_ode(cfg, ev, out, files)
        if cfg.mode in ("ctmc", "both"):
            body["ctmc"] = run_ctmc(cfg, ev, out, files, workers)
        if cfg.mode != "check":
            model = build_model(cfg.model, cfg.lam)
            eq_block, point = analysis._equilibrium_block(model)
            body["equilibria"] = eq_block
            body["linearization"] = analysis._eigen_block(model, point)
            ev.metrics["eq.residual"] = eq_block["residual"]
            ev.metrics["lin.classification"] = body["linearization"]["classification"]
    except (DomainError, PreconditionError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ScenarioError(f"scenario {cfg.name!r}: {type(exc).__name__}: {exc}") from exc
    return ev, body, files


def run_scenario(cfg: ScenarioConfig, out_root, workers: int = 1, echo: bool = True,
                 kind: str = "run") -> dict:
    """Execute ``cfg`` into ``out_root/<name>`` and return its manifest."""
    t0 = time.perf_counter()
    out = Path(out_root) / cfg.name
    ev, body, files = execute(cfg, out, workers)
    results = evaluate_checks(cfg, ev)
    verdict = verdict_of(results)
    if "report_json" in cfg.outputs:
        report = {"scenario": cfg.name, "claim": cfg.claim, "config": _public_config(cfg), "verdict": verdict,
                  "checks": results, "metrics": ev.metrics, **body}
        files.append(art.write_json(out / "report.json", report))
    man = _manifest(cfg, kind, out, files, results, verdict, time.perf_counter() - t0)
    line = _verdict_line(cfg, verdict, results)
    man["line"] = line
    if echo:
        print(line, flush=True)
    log.info("%s: %d artifacts in %s", cfg.name, len(files), out)
    return man


def _public_config(cfg: ScenarioConfig) -> dict:
    d = cfg.to_dict()
    d.pop("output_dir", None)
    return d


# -- sweep --------------------------------------------------------------------------------------

SWEEP_PARAMETERS = ("lambda", "initial-scale")


def _variant(cfg: ScenarioConfig, parameter: str, value: float, scale_initial: bool, base_lam: float):
    sub = copy.deepcopy(cfg)
    sub.name = f"{cfg.name}__{parameter}={value:g}"
    sub.claim = None
    sub.output_dir = None
    factor = value if parameter == "initial-scale" else (value / base_lam if scale_initial else 1.0)
    if parameter == "lambda":
        sub.lam = float(value)
        if sub.ctmc is not None and sub.ctmc.schedule is not None:
            raise ConfigError("a lambda sweep cannot be combined with a rate schedule")
    if factor != 1.0:
        if sub.ode is not None:
            sub.ode.initial = tuple(v * factor for v in sub.ode.initial)
        if sub.ctmc is not None:
            sub.ctmc.initial = tuple(int(round(v * factor)) for v in sub.ctmc.initial)
    return sub


def sweep(cfg: ScenarioConfig, parameter: str, values: Sequence[float], out_root, workers: int = 1,
          scale_initial: bool = False, echo: bool = True) -> dict:
    """One sub-run per value plus a summary table; see :data:`SWEEP_PARAMETERS`."""
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMETERS}, got {parameter!r}")
    values = [float(v) for v in values]
    if not values:
        raise ConfigError("sweep needs at least one value")
    if any(not (math.isfinite(v) and v > 0) for v in values):
        raise ConfigError(f"sweep values must be finite and positive, got {values}")
    t0 = time.perf_counter()
    out = Path(out_root) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    rows, files, sub_results, trajs = [], [], [], []
    for v in values:
        sub = _variant(cfg, parameter, v, scale_initial, cfg.lam)
        ev, body, sub_files = execute(sub, out / "runs" / sub.name, workers)
        results = evaluate_checks(sub, ev)
        verdict = verdict_of(results)
        if "report_json" in sub.outputs:
            sub_files.append(art.write_json(out / "runs" / sub.name / "report.json",
                                            {"scenario": sub.name, "config": _public_config(sub), "verdict": verdict,
                                             "checks": results, "metrics": ev.metrics, **body}))
        files.extend(sub_files)
        rows.append((v, sub.name, verdict, ev.metrics))
        sub_results.extend({**r, "run": sub.name} for r in results)
        if echo:
            print(_verdict_line(sub, verdict, results), flush=True)
        if sub.ode is not None:
            trajs.append((v, ev.series))

    scaling: dict[str, Any] = {}
    if parameter == "lambda" and scale_initial and cfg.ode is not None and len(trajs) > 1:
        # trajectories from lambda*s should be lambda times the base trajectory
        v0, base = trajs[0]
        labels = [k for k in base if k.startswith("ode.")]
        worst = 0.0
        for v, series in trajs[1:]:
            for k in labels:
                ref = base[k][1]
                worst = max(worst, float(np.max(np.abs(series[k][1] * (v0 / v) - ref) / np.maximum(1.0, np.abs(ref)))))
        scaling = {"metric": "sweep.scaling_deviation", "op": "<=", "value": 1e-8, "observed": worst,
                   "passed": worst <= 1e-8}
        sub_results.append(scaling)

    metric_names = sorted({k for _, _, _, m in rows for k, val in m.items() if not isinstance(val, str)})
    cols = ["parameter", "value", "run", "verdict", *metric_names]
    table = ([parameter, v, name, verdict, *[m.get(k, "") for k in metric_names]] for v, name, verdict, m in rows)
    files.append(art.write_csv(out / "sweep_summary.csv", cols, table, f"sweep of {parameter}"))
    verdict = verdict_of(sub_results)
    man = _manifest(cfg, "sweep", out, files, sub_results, verdict, time.perf_counter() - t0,
                    {"parameter": parameter, "values": values, "scale_initial": scale_initial})
    line = f"{'PASS' if verdict == 'pass' else 'FAIL' if verdict == 'fail' else 'EVIDENCE':8s} sweep {cfg.name} " \
           f"over {parameter} {values}" + (f"; scaling deviation {scaling['observed']:.2e}" if scaling else "")
    man["line"] = line
    if echo:
        print(line, flush=True)
    return man


def flash_crowd(cfg: ScenarioConfig, out_root, workers: int = 1, echo: bool = True) -> dict:
    """CTMC run under a piecewise-constant arrival schedule with recovery-time metrics."""
    if cfg.ctmc is None or cfg.ctmc.schedule is None:
        raise ConfigError(f"{cfg.name}: flash-crowd needs ctmc.schedule")
    return run_scenario(cfg, out_root, workers, echo, kind="flash_crowd")


def shipped_scenarios() -> list[Path]:
    return sorted(SCENARIO_DIR.glob("*.yaml"))
