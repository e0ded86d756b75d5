"""Named verification routines for ``mode: check`` scenarios.

Each routine takes the scenario's arrival rate, its ``params`` mapping and a
worker count, and returns ``(metrics, details)``: flat scalar metrics that
``checks`` assertions can reference, and a JSON-ready detail block.
"""
from __future__ import annotations

import math
from typing import Any, Callable

import numpy as np

from .. import analysis, ctmc
from ..models import ModelKind, build_model, limit_consistency_residual
from ..ode import IntegratorSettings, integrate_model

Routine = Callable[[float, dict, int], tuple[dict[str, Any], dict[str, Any]]]
ROUTINES: dict[str, Routine] = {}


def routine(name: str):
    def register(fn):
        ROUTINES[name] = fn
        return fn
    return register


def _param(params: dict, key: str, default):
    return params.get(key, default)


def _random_starts(params: dict, dim: int) -> np.ndarray:
    rng = np.random.default_rng(int(_param(params, "seed", 0)))
    lo, hi = float(_param(params, "low", 0.01)), float(_param(params, "high", 10.0))
    return rng.uniform(lo, hi, size=(int(_param(params, "starts", 20)), dim))


@routine("equilibrium_catalog")
def equilibrium_catalog(lam, params, workers):
    lams = [float(v) for v in _param(params, "lambdas", [lam])]
    rows = []
    worst = 0.0
    for lv in lams:
        for kind in ModelKind:
            m = build_model(kind, lv)
            eq = analysis.equilibria(m)
            if eq.kind == "curve":
                pts = eq.sample([0.6 * lv, lv, 2 * lv, 10 * lv])
            else:
                pts = [eq.point]
            res = max(float(np.max(np.abs(m.field(p)))) for p in pts)
            worst = max(worst, res)
            rows.append({"model": kind.value, "lambda": lv, "kind": eq.kind,
                         "points": [p.tolist() for p in pts], "residual": res})
    return {"eq.max_residual": worst, "eq.entries": len(rows)}, {"equilibria": rows}


@routine("plain_linearization")
def plain_linearization(lam, params, workers):
    m = build_model("plain", lam)
    J = analysis.jacobian(m, [lam, lam], scheme="analytic")
    Jfd = analysis.jacobian(m, [lam, lam], scheme="central")
    rep = analysis.eigen(J)
    ev = sorted(mu.real for mu in rep.eigenvalues)
    err = max(abs(ev[0] + 0.5), abs(ev[1] - 0.5), *(abs(mu.imag) for mu in rep.eigenvalues))
    return (
        {"lin.eigen_error": err, "lin.classification": rep.classification,
         "lin.fd_vs_analytic": float(np.max(np.abs(J - Jfd)))},
        {"jacobian": J.tolist(), "eigen": rep.to_dict()},
    )


@routine("delayed_eigenstructure")
def delayed_eigenstructure(lam, params, workers):
    expected = np.array([[-1, 0, -1, 1], [0, -1, 1, -1], [1, 0, 0, -1], [0, 1, -1, 0]], dtype=float)
    A = analysis.jacobian(analysis.denominator_stripped_field, [1, 1, 1, 1], scheme="analytic")
    Afd = analysis.jacobian(analysis.denominator_stripped_field, [1, 1, 1, 1], scheme="central")
    rep = analysis.eigen(A)
    want = [1j, -1j, -1.0, -1.0]
    got = list(rep.eigenvalues)
    err = 0.0
    for w in want:
        k = int(np.argmin([abs(g - w) for g in got]))
        err = max(err, abs(got.pop(k) - w))
    rank = int(np.linalg.matrix_rank(A + np.eye(4), tol=1e-9))
    # original (denominator-included) field: eigenvalues scaled by 1/(x + y) = 1/(2 lambda)
    orig = analysis.eigen(analysis.jacobian(build_model("delayed", lam), [lam] * 4))
    return (
        {"lin.matrix_matches": bool(np.array_equal(A, expected)), "lin.eigen_error": err,
         "lin.rank_A_plus_I": rank, "lin.charpoly_residual": max(rep.charpoly_residuals()),
         "lin.fd_vs_analytic": float(np.max(np.abs(A - Afd))), "lin.classification": rep.classification},
        {"stripped": rep.to_dict(), "original_field": orig.to_dict(), "original_scale": 1 / (2 * lam)},
    )


@routine("friedman_random_starts")
def friedman_random_starts(lam, params, workers):
    m = build_model("friedman", lam)
    horizon = float(_param(params, "horizon", 1000.0))
    runs = []
    for s in _random_starts(params, 2):
        tr = integrate_model(m, s, IntegratorSettings(horizon=horizon))
        v = analysis.lyapunov_verdict(m, tr, n_grid=1001)
        runs.append({"start": s.tolist(), "final_error": float(np.max(np.abs(tr.final - lam))),
                     "strictly_decreasing": v.strictly_decreasing, "components_monotone": v.components_monotone,
                     "identity_residual": v.identity_max_residual, "rate_negative": v.rate_negative,
                     "noise_floor_time": v.floor_time})
    # sign of the closed-form rate at random non-equilibrium points
    pts = np.random.default_rng(int(_param(params, "seed", 0)) + 1).uniform(0.01, 10 * lam, size=(1000, 2))
    sign_ok = all(analysis.friedman_lyapunov_rate(lam, p) < 0 for p in pts if np.any(p != lam))
    return (
        {"ode.max_final_error": max(r["final_error"] for r in runs),
         "lyapunov.all_strictly_decreasing": all(r["strictly_decreasing"] for r in runs),
         "ode.all_components_monotone": all(r["components_monotone"] for r in runs),
         "lyapunov.max_identity_residual": max(r["identity_residual"] for r in runs),
         "lyapunov.rate_negative_at_random_points": sign_ok,
         "ode.starts": len(runs)},
        {"runs": runs},
    )


@routine("enforced_random_starts")
def enforced_random_starts(lam, params, workers):
    m = build_model("enforced", lam)
    eq = np.array([4 * lam / 3, lam, lam])
    horizon = float(_param(params, "horizon", 1000.0))
    runs = []
    for s in _random_starts(params, 3):
        tr = integrate_model(m, s, IntegratorSettings(horizon=horizon))
        tt = analysis.integrate_transformed(
            analysis.enforced_to_transformed(s / lam),
            IntegratorSettings(horizon=horizon, rtol=1e-11, atol=1e-13),
        )
        bv = analysis.betarho2_verdict(tt)
        runs.append({"start": s.tolist(), "final_error": float(np.max(np.abs(tr.final - eq))),
                     "betarho2_nonincreasing": bv.nonincreasing,
                     "identity_rel_error": bv.identity_max_rel_error,
                     "chain_rule_rel_error": bv.chain_rule_max_rel_error,
                     "beta_final": bv.beta_final})
    rep = analysis.eigen(analysis.jacobian(m, eq))
    real_neg = all(abs(mu.imag) <= 1e-9 and mu.real < 0 for mu in rep.eigenvalues)
    return (
        {"ode.max_final_error": max(r["final_error"] for r in runs),
         "betarho2.all_nonincreasing": all(r["betarho2_nonincreasing"] for r in runs),
         "betarho2.max_identity_rel_error": max(r["identity_rel_error"] for r in runs),
         "betarho2.max_chain_rule_rel_error": max(r["chain_rule_rel_error"] for r in runs),
         "betarho2.max_beta_final": max(r["beta_final"] for r in runs),
         "lin.all_real_negative": real_neg,
         "ode.starts": len(runs)},
        {"runs": runs, "eigen": rep.to_dict()},
    )


@routine("friedman_drift_bound")
def friedman_drift_bound(lam, params, workers):
    lams = [float(v) for v in _param(params, "lambdas", [lam])]
    max_state = int(_param(params, "max_state", 200))
    scans = [ctmc.friedman_drift_scan(lv, max_state) for lv in lams]
    return (
        {"drift.worst": max(s.worst_drift for s in scans), "drift.states": sum(s.n_states for s in scans)},
        {"scans": [{"lambda": s.lam, "states": s.n_states, "worst_drift": s.worst_drift,
                    "worst_state": list(s.worst_state)} for s in scans]},
    )


@routine("friedman_martingale")
def friedman_martingale(lam, params, workers):
    m = build_model("friedman", lam)
    start = tuple(int(v) for v in _param(params, "start", [10, 10]))
    cps = [float(v) for v in _param(params, "checkpoints", [10, 50])]
    seeds = ctmc.replica_seeds(int(_param(params, "master_seed", 0)), int(_param(params, "replicas", 10_000)))
    trajs = [ctmc.simulate(ctmc.SimConfig(m, start, max(cps), seed)) for seed in seeds]
    chk = ctmc.friedman_compensator_check(trajs, lam, cps)
    z = chk.z_scores()
    return (
        {"martingale.max_abs_z": max(abs(v) for v in z), "martingale.replicas": chk.n},
        {"checkpoints": list(chk.checkpoints), "means": list(chk.means), "std_errors": list(chk.std_errors),
         "z_scores": list(z)},
    )


@routine("enforced_split")
def enforced_split(lam, params, workers):
    """Z-exit split versus (Y + 1/2)/(X + Y + 1): exact in rationals, and in floats to rounding."""
    from fractions import Fraction

    m = build_model("enforced", lam)
    top = int(_param(params, "max_component", 50))
    iz, ix, iy = m.index("Z"), m.index("X"), m.index("Y")
    to_x = next(r for r in m.transitions if r.label == "Z-to-X")
    to_y = next(r for r in m.transitions if r.label == "Z-to-Y")
    worst_ulps, rational_exact, n = 0.0, True, 0
    for X in range(top + 1):
        for Y in range(top + 1):
            for Z in range(1, top + 1):
                s = [0, 0, 0]
                s[ix], s[iy], s[iz] = X, Y, Z
                rx, ry = to_x.rate(s), to_y.rate(s)
                want = (Y + 0.5) / (X + Y + 1)
                worst_ulps = max(worst_ulps, abs(rx / (rx + ry) - want) / math.ulp(want))
                q = [Fraction(v) for v in s]
                fx, fy = to_x.rate(q), to_y.rate(q)
                rational_exact &= fx / (fx + fy) == Fraction(2 * Y + 1, 2 * (X + Y + 1))
                n += 1
    return {"split.rational_exact": rational_exact, "split.max_ulps": worst_ulps, "split.states": n}, {}


@routine("limit_consistency")
def limit_consistency(lam, params, workers):
    N = int(float(_param(params, "N", 1e6)))
    n_points = int(_param(params, "points", 20))
    rng = np.random.default_rng(int(_param(params, "seed", 0)))
    worst, rmin, rmax = 0.0, math.inf, -math.inf
    rows = []
    for kind in ModelKind:
        m = build_model(kind, lam)
        for _ in range(n_points):
            # dyadic coordinates in [1/4, 8): N*x is an exact integer for N = 10^k, k >= 3.
            # The O(1/N) constant grows like lambda/(x+y), hence the lower edge.
            p = rng.integers(16, 8 * 64, size=m.dimension) / 64.0
            r1 = limit_consistency_residual(m, p, N)
            r2 = limit_consistency_residual(m, p, 10 * N)
            worst = max(worst, float(np.max(r1)))
            for a, b in zip(r1, r2):
                if a > 1e-12:
                    q = b / a
                    rmin, rmax = min(rmin, q), max(rmax, q)
            rows.append({"model": kind.value, "point": p.tolist(), "residual": r1.tolist(),
                         "residual_10N": r2.tolist()})
    return {"limit.max_residual": worst, "limit.ratio_min": rmin, "limit.ratio_max": rmax}, {"points": rows}


@routine("comparison_lemma")
def comparison_lemma(lam, params, workers):
    horizon = float(_param(params, "horizon", 1000.0))
    tol = float(_param(params, "tolerance", 1e-3))
    one = lambda t: 1.0
    cases = {
        "constant": analysis.lemma_bounds_check(one, one, 0.0, horizon, 1, 1, 1, 1, tol),
        "oscillating": analysis.lemma_bounds_check(lambda t: 2 + math.sin(t), lambda t: 1 + 0.5 * math.cos(t),
                                                   5.0, horizon, 1, 3, 0.5, 1.5, tol),
        "zero_start": analysis.lemma_bounds_check(lambda t: 2 + math.sin(t), lambda t: 1 + 0.5 * math.cos(t),
                                                  0.0, horizon, 1, 3, 0.5, 1.5, tol),
    }
    metrics = {f"lemma.{k}": v.passes for k, v in cases.items()}
    metrics["lemma.positive"] = all(v.positive for v in cases.values())
    details = {k: {"tail_min": v.tail_min, "tail_max": v.tail_max, "bracket": [v.lower, v.upper],
                   "positive": v.positive, "tolerance": v.tolerance} for k, v in cases.items()}
    return metrics, details


@routine("rerun_determinism")
def rerun_determinism(lam, params, workers):
    """Run shipped scenarios twice in scratch directories and compare artifact digests."""
    import tempfile
    from pathlib import Path

    from .config import load_config
    from .runner import SCENARIO_DIR, run_scenario

    names = _param(params, "scenarios", [])
    digests = []
    with tempfile.TemporaryDirectory() as tmp:
        for rep in range(2):
            out = {}
            for name in names:
                cfg = load_config(SCENARIO_DIR / f"{name}.yaml")
                man = run_scenario(cfg, Path(tmp) / f"rep{rep}", workers=workers, echo=False)
                for a in man["artifacts"]:
                    out[f"{name}/{a['path']}"] = a["sha256"]
            digests.append(out)
    same = digests[0] == digests[1]
    return (
        {"rerun.identical": same and bool(digests[0]), "rerun.artifacts": len(digests[0])},
        {"artifacts": digests[0], "mismatched": sorted(k for k in digests[0] if digests[0][k] != digests[1].get(k))},
    )
