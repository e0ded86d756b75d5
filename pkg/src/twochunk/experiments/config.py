"""Scenario configuration files (YAML) with strict, line-numbered validation.

A scenario file is a mapping with these keys (``*`` marks required ones)::

    name*:       identifier, used for the output sub-directory
    model*:      plain | dfc | friedman | delayed | enforced
    lambda*:     arrival rate, > 0
    mode*:       ode | ctmc | both | check
    claim:       claim id this scenario provides evidence for (see ``report``)
    ode:         initial*, horizon*, rtol, atol, max_step, samples,
                 thresholds {label: level}, divergence_check, decay_fit {window, envelope, samples}
    ctmc:        initial*, horizon*, seeds | replicas (+ master_seed), record, grid_step,
                 event_cap, target {max_at_most | max_xy_at_most | min_xy_at_most: level},
                 target_after, average_window, checkpoints, schedule [[duration, lambda], ...]
    check:       name* (a verification routine), params {...}
    monitors:    lyapunov | betarho2 | x_plus_y | distance_to_equilibrium
    outputs*:    trajectory_csv | monitor_csv | svg | report_json
    output_dir:  default output directory for this scenario
    checks:      [{metric*, op*, value*, window}] asserted after the run

Unknown keys anywhere are errors.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..ctmc import RECORD_MODES
from ..models import ModelKind

MODES = ("ode", "ctmc", "both", "check")
MONITORS = ("lyapunov", "betarho2", "x_plus_y", "distance_to_equilibrium")
OUTPUTS = ("trajectory_csv", "monitor_csv", "svg", "report_json")
OPS = ("<=", ">=", "<", ">", "==", "!=", "in")
TARGETS = ("max_at_most", "max_xy_at_most", "min_xy_at_most")
_NAME = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.=+-]*$")


class ConfigError(ValueError):
    """Invalid scenario file; the message carries file, line and field."""


# -- typed sections ------------------------------------------------------------

@dataclass
class DecayFitSpec:
    window: tuple[float, float]
    envelope: Optional[float] = None
    samples: int = 2000


@dataclass
class OdeSection:
    initial: tuple[float, ...]
    horizon: float
    rtol: float = 1e-9
    atol: float = 1e-11
    max_step: Optional[float] = None
    samples: int = 2001
    thresholds: dict[str, float] = field(default_factory=dict)
    divergence_check: bool = False
    decay_fit: Optional[DecayFitSpec] = None


@dataclass
class CtmcSection:
    initial: tuple[int, ...]
    horizon: Optional[float] = None
    seeds: Optional[tuple[int, ...]] = None
    replicas: Optional[int] = None
    master_seed: int = 0
    record: str = "statistics"
    grid_step: Optional[float] = None
    event_cap: int = 10_000_000
    target: Optional[tuple[str, float]] = None
    target_after: float = 0.0
    average_window: Optional[tuple[float, float]] = None
    checkpoints: tuple[float, ...] = ()
    schedule: Optional[tuple[tuple[float, float], ...]] = None


@dataclass
class CheckSection:
    name: str
    params: dict[str, Any] = field(default_factory=dict)


@dataclass
class Assertion:
    metric: str
    op: str
    value: Any
    window: Optional[tuple[float, float]] = None


@dataclass
class ScenarioConfig:
    name: str
    model: str
    lam: float
    mode: str
    outputs: tuple[str, ...]
    ode: Optional[OdeSection] = None
    ctmc: Optional[CtmcSection] = None
    check: Optional[CheckSection] = None
    monitors: tuple[str, ...] = ()
    checks: tuple[Assertion, ...] = ()
    claim: Optional[str] = None
    output_dir: Optional[str] = None

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "model": self.model, "lambda": self.lam, "mode": self.mode}
        if self.claim is not None:
            d["claim"] = self.claim
        if self.ode is not None:
            o = self.ode
            od: dict[str, Any] = {"initial": list(o.initial), "horizon": o.horizon, "rtol": o.rtol, "atol": o.atol}
            if o.max_step is not None:
                od["max_step"] = o.max_step
            od["samples"] = o.samples
            if o.thresholds:
                od["thresholds"] = dict(o.thresholds)
            if o.divergence_check:
                od["divergence_check"] = True
            if o.decay_fit is not None:
                df: dict[str, Any] = {"window": list(o.decay_fit.window), "samples": o.decay_fit.samples}
                if o.decay_fit.envelope is not None:
                    df["envelope"] = o.decay_fit.envelope
                od["decay_fit"] = df
            d["ode"] = od
        if self.ctmc is not None:
            c = self.ctmc
            cd: dict[str, Any] = {"initial": list(c.initial)}
            if c.horizon is not None:
                cd["horizon"] = c.horizon
            if c.seeds is not None:
                cd["seeds"] = list(c.seeds)
            if c.replicas is not None:
                cd["replicas"] = c.replicas
                cd["master_seed"] = c.master_seed
            cd["record"] = c.record
            if c.grid_step is not None:
                cd["grid_step"] = c.grid_step
            cd["event_cap"] = c.event_cap
            if c.target is not None:
                cd["target"] = {c.target[0]: c.target[1]}
                cd["target_after"] = c.target_after
            if c.average_window is not None:
                cd["average_window"] = list(c.average_window)
            if c.checkpoints:
                cd["checkpoints"] = list(c.checkpoints)
            if c.schedule is not None:
                cd["schedule"] = [list(seg) for seg in c.schedule]
            d["ctmc"] = cd
        if self.check is not None:
            d["check"] = {"name": self.check.name, "params": dict(self.check.params)}
        if self.monitors:
            d["monitors"] = list(self.monitors)
        d["outputs"] = list(self.outputs)
        if self.checks:
            items = []
            for a in self.checks:
                item: dict[str, Any] = {"metric": a.metric, "op": a.op, "value": a.value}
                if a.window is not None:
                    item["window"] = list(a.window)
                items.append(item)
            d["checks"] = items
        if self.output_dir is not None:
            d["output_dir"] = self.output_dir
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def digest(self) -> str:
        """sha256 of the canonical form, ignoring where outputs are written."""
        d = self.to_dict()
        d.pop("output_dir", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def seeds(self) -> list[int]:
        from ..ctmc import replica_seeds

        c = self.ctmc
        if c.seeds is not None:
            return list(c.seeds)
        return replica_seeds(c.master_seed, c.replicas)


# -- parsing ---------------------------------------------------------------------

class _Reader:
    """Walks a composed YAML node tree, so every error can name its line."""

    def __init__(self, source: str):
        self.source = source

    def fail(self, node, path: str, msg: str):
        line = node.start_mark.line + 1 if node is not None else "?"
        raise ConfigError(f"{self.source}:{line}: field '{path}': {msg}")

    def mapping(self, node, path, required=(), optional=()) -> dict[str, tuple[Any, Any]]:
        if not isinstance(node, yaml.MappingNode):
            self.fail(node, path, "expected a mapping")
        out = {}
        for k, v in node.value:
            key = k.value
            sub = f"{path}.{key}" if path else key
            if key not in required and key not in optional:
                allowed = ", ".join(list(required) + list(optional))
                self.fail(k, sub, f"unknown key (allowed: {allowed})")
            if key in out:
                self.fail(k, sub, "duplicate key")
            out[key] = (v, sub)
        for key in required:
            if key not in out:
                self.fail(node, f"{path}.{key}" if path else key, "missing required key")
        return out

    def scalar(self, node, path):
        if not isinstance(node, yaml.ScalarNode):
            self.fail(node, path, "expected a scalar")
        return yaml.safe_load(yaml.serialize(node))

    def number(self, node, path, positive=False, nonneg=False, integer=False):
        v = self.scalar(node, path)
        if isinstance(v, str):
            # YAML 1.1 reads exponent forms without a dot (1e-9) as strings
            try:
                v = float(v)
            except ValueError:
                pass
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(node, path, f"expected a number, got {v!r}")
        if integer and isinstance(v, float) and v.is_integer():
            v = int(v)
        if integer and not isinstance(v, int):
            self.fail(node, path, f"expected an integer, got {v!r}")
        if not integer and not math.isfinite(v):
            self.fail(node, path, "must be finite")
        if positive and not v > 0:
            self.fail(node, path, f"must be positive, got {v}")
        if nonneg and not v >= 0:
            self.fail(node, path, f"must be nonnegative, got {v}")
        return v if integer else float(v)

    def string(self, node, path, choices=None):
        v = self.scalar(node, path)
        if not isinstance(v, str):
            self.fail(node, path, f"expected a string, got {v!r}")
        if choices is not None and v not in choices:
            self.fail(node, path, f"{v!r} is not one of {', '.join(choices)}")
        return v

    def boolean(self, node, path):
        v = self.scalar(node, path)
        if not isinstance(v, bool):
            self.fail(node, path, f"expected true/false, got {v!r}")
        return v

    def sequence(self, node, path, min_len=0):
        if not isinstance(node, yaml.SequenceNode):
            self.fail(node, path, "expected a list")
        if len(node.value) < min_len:
            self.fail(node, path, f"needs at least {min_len} entries")
        return [(item, f"{path}[{i}]") for i, item in enumerate(node.value)]

    def numbers(self, node, path, length=None, **kw):
        items = self.sequence(node, path)
        if length is not None and len(items) != length:
            self.fail(node, path, f"expected {length} numbers, got {len(items)}")
        return tuple(self.number(n, p, **kw) for n, p in items)

    def window(self, node, path):
        w = self.numbers(node, path, length=2, nonneg=True)
        if not w[0] < w[1]:
            self.fail(node, path, f"window must be increasing, got {list(w)}")
        return w

    def plain(self, node, path):
        """Arbitrary YAML value (used for check params and assertion values)."""
        return yaml.safe_load(yaml.serialize(node))


def _parse_ode(r: _Reader, node, path, kind: ModelKind) -> OdeSection:
    m = r.mapping(node, path, ("initial", "horizon"),
                  ("rtol", "atol", "max_step", "samples", "thresholds", "divergence_check", "decay_fit"))
    init_node, p = m["initial"]
    initial = r.numbers(init_node, p, length=kind.dimension, nonneg=True)
    sec = OdeSection(initial=initial, horizon=r.number(*m["horizon"], positive=True))
    for key in ("rtol", "atol", "max_step"):
        if key in m:
            setattr(sec, key, r.number(*m[key], positive=True))
    if "samples" in m:
        sec.samples = r.number(*m["samples"], integer=True, positive=True)
        if sec.samples < 2:
            r.fail(m["samples"][0], m["samples"][1], "needs at least 2 samples")
    if "thresholds" in m:
        tn, tp = m["thresholds"]
        tm = r.mapping(tn, tp, (), tuple(lab.lower() for lab in kind.labels))
        sec.thresholds = {k: r.number(*v, positive=True) for k, v in tm.items()}
    if "divergence_check" in m:
        sec.divergence_check = r.boolean(*m["divergence_check"])
        if sec.divergence_check and kind is not ModelKind.DFC:
            r.fail(m["divergence_check"][0], m["divergence_check"][1], "only defined for model dfc")
    if "decay_fit" in m:
        dn, dp = m["decay_fit"]
        dm = r.mapping(dn, dp, ("window",), ("envelope", "samples"))
        w = r.window(*dm["window"])
        if not w[0] > 0:
            r.fail(dm["window"][0], dm["window"][1], "window must start after t = 0")
        if w[1] > sec.horizon:
            r.fail(dm["window"][0], dm["window"][1], "window ends after the horizon")
        sec.decay_fit = DecayFitSpec(
            window=w,
            envelope=r.number(*dm["envelope"], positive=True) if "envelope" in dm else None,
            samples=r.number(*dm["samples"], integer=True, positive=True) if "samples" in dm else 2000,
        )
    return sec


def _parse_ctmc(r: _Reader, node, path, kind: ModelKind) -> CtmcSection:
    m = r.mapping(node, path, ("initial",),
                  ("horizon", "seeds", "replicas", "master_seed", "record", "grid_step", "event_cap", "target",
                   "target_after", "average_window", "checkpoints", "schedule"))
    init_node, p = m["initial"]
    sec = CtmcSection(initial=r.numbers(init_node, p, length=kind.dimension, integer=True, nonneg=True))
    if "schedule" in m:
        sn, sp = m["schedule"]
        segs = []
        for item, ip in r.sequence(sn, sp, min_len=1):
            segs.append(r.numbers(item, ip, length=2, positive=True))
        sec.schedule = tuple(segs)
        if "horizon" in m:
            r.fail(m["horizon"][0], m["horizon"][1], "horizon is implied by the schedule")
    elif "horizon" in m:
        sec.horizon = r.number(*m["horizon"], positive=True)
    else:
        r.fail(node, f"{path}.horizon", "missing required key (or give a schedule)")
    if ("seeds" in m) == ("replicas" in m):
        r.fail(node, path, "give exactly one of 'seeds' or 'replicas'")
    if "seeds" in m:
        sec.seeds = r.numbers(*m["seeds"], integer=True, nonneg=True)
        if not sec.seeds:
            r.fail(m["seeds"][0], m["seeds"][1], "needs at least one seed")
        if "master_seed" in m:
            r.fail(m["master_seed"][0], m["master_seed"][1], "only used with 'replicas'")
    else:
        sec.replicas = r.number(*m["replicas"], integer=True, positive=True)
        if "master_seed" in m:
            sec.master_seed = r.number(*m["master_seed"], integer=True, nonneg=True)
    if "record" in m:
        sec.record = r.string(*m["record"], choices=RECORD_MODES)
    if "grid_step" in m:
        sec.grid_step = r.number(*m["grid_step"], positive=True)
    if sec.record == "grid" and sec.grid_step is None:
        r.fail(node, f"{path}.grid_step", "required when record is grid")
    if "event_cap" in m:
        sec.event_cap = r.number(*m["event_cap"], integer=True, positive=True)
    if "target" in m:
        tm = r.mapping(*m["target"], (), TARGETS)
        if len(tm) != 1:
            r.fail(m["target"][0], m["target"][1], f"give exactly one of {', '.join(TARGETS)}")
        (key, (vn, vp)), = tm.items()
        sec.target = (key, r.number(vn, vp, nonneg=True))
    if "target_after" in m:
        if sec.target is None:
            r.fail(m["target_after"][0], m["target_after"][1], "needs a target")
        sec.target_after = r.number(*m["target_after"], nonneg=True)
    if "average_window" in m:
        sec.average_window = r.window(*m["average_window"])
    if "checkpoints" in m:
        sec.checkpoints = r.numbers(*m["checkpoints"], nonneg=True)
    return sec


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    """Parse and validate a scenario; raises :class:`ConfigError` with line/field diagnostics."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else "?"
        raise ConfigError(f"{source}:{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if root is None:
        raise ConfigError(f"{source}:1: empty configuration")
    r = _Reader(source)
    m = r.mapping(root, "", ("name", "model", "lambda", "mode", "outputs"),
                  ("claim", "ode", "ctmc", "check", "monitors", "checks", "output_dir"))
    name = r.string(*m["name"])
    if not _NAME.match(name):
        r.fail(m["name"][0], "name", "use letters, digits and _ . = + - only")
    model = r.string(*m["model"], choices=tuple(k.value for k in ModelKind))
    kind = ModelKind(model)
    lam = r.number(*m["lambda"], positive=True)
    mode = r.string(*m["mode"], choices=MODES)

    cfg = ScenarioConfig(name=name, model=model, lam=lam, mode=mode, outputs=())
    need = {"ode": mode in ("ode", "both"), "ctmc": mode in ("ctmc", "both"), "check": mode == "check"}
    for sec, wanted in need.items():
        if wanted and sec not in m:
            r.fail(root, sec, f"required for mode {mode}")
        if not wanted and sec in m:
            r.fail(m[sec][0], sec, f"not used in mode {mode}")
    if "ode" in m:
        cfg.ode = _parse_ode(r, *m["ode"], kind)
    if "ctmc" in m:
        cfg.ctmc = _parse_ctmc(r, *m["ctmc"], kind)
    if "check" in m:
        from .checks import ROUTINES

        cm = r.mapping(*m["check"], ("name",), ("params",))
        cname = r.string(*cm["name"], choices=tuple(ROUTINES))
        params = r.plain(*cm["params"]) if "params" in cm else {}
        if not isinstance(params, dict):
            r.fail(cm["params"][0], cm["params"][1], "expected a mapping")
        cfg.check = CheckSection(cname, params)
    if "claim" in m:
        cfg.claim = r.string(*m["claim"])
    if "monitors" in m:
        mons = []
        for item, p in r.sequence(*m["monitors"]):
            mon = r.string(item, p, choices=MONITORS)
            if mode not in ("ode", "both"):
                r.fail(item, p, "monitors need an ODE run")
            if mon == "lyapunov" and kind is not ModelKind.FRIEDMAN:
                r.fail(item, p, "lyapunov monitor is defined for model friedman")
            if mon == "betarho2" and kind is not ModelKind.ENFORCED:
                r.fail(item, p, "betarho2 monitor is defined for model enforced")
            if mon == "distance_to_equilibrium" and kind is ModelKind.DFC:
                r.fail(item, p, "dfc has a curve of equilibria, not a point")
            mons.append(mon)
        cfg.monitors = tuple(mons)
    outs = []
    on, op = m["outputs"]
    for item, p in r.sequence(on, op, min_len=1):
        outs.append(r.string(item, p, choices=OUTPUTS))
    cfg.outputs = tuple(outs)
    if "monitor_csv" in outs and not cfg.monitors:
        r.fail(on, op, "monitor_csv needs at least one monitor")
    if "trajectory_csv" in outs and mode == "ctmc" and cfg.ctmc.record == "statistics":
        r.fail(on, op, "trajectory_csv needs ctmc.record every_event or grid")
    if mode == "check" and set(outs) - {"report_json"}:
        r.fail(on, op, "check scenarios only produce report_json")
    if "checks" in m:
        items = []
        for item, p in r.sequence(*m["checks"]):
            am = r.mapping(item, p, ("metric", "op", "value"), ("window",))
            a = Assertion(
                metric=r.string(*am["metric"]),
                op=r.string(*am["op"], choices=OPS),
                value=r.plain(*am["value"]),
                window=r.window(*am["window"]) if "window" in am else None,
            )
            if a.op == "in" and not (isinstance(a.value, list) and len(a.value) == 2):
                r.fail(am["value"][0], am["value"][1], "'in' needs [low, high]")
            items.append(a)
        cfg.checks = tuple(items)
    if "output_dir" in m:
        cfg.output_dir = r.string(*m["output_dir"])
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    return parse_config(text, str(path))
