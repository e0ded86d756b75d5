"""Consolidated report: every claim row mapped to the manifests that carry evidence for it."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import artifacts as art
from .runner import MANIFEST


@dataclass(frozen=True)
class Claim:
    id: str
    model: str  # section heading
    statement: str
    asserted: bool = True  # False: the claim is a conjecture, probed for evidence only


CLAIMS = (
    Claim("equilibrium-catalog", "all models",
          "closed-form equilibria (point or DFC curve) have field residual <= 1e-10"),
    Claim("limit-consistency", "all models",
          "rate tables scale to the vector fields with O(1/N) residual"),
    Claim("reproducibility", "all models", "identical configs give byte-identical artifacts"),
    Claim("plain-ode-instability", "plain", "from x0 > lambda > y0, x crosses 1e3 while y -> 0; saddle at (lambda, lambda)"),
    Claim("plain-ctmc-instability", "plain", "one of X, Y escapes while the other stays near 0"),
    Claim("dfc-divergence", "dfc", "x and b grow past 1e3, y decreases, a approaches lambda/2"),
    Claim("dfc-ctmc-probe", "dfc", "stochastic instability (conjecture)", asserted=False),
    Claim("friedman-ode-stability", "friedman", "global stability with monotone (x-lambda)^2 + (y-lambda)^2"),
    Claim("friedman-drift-bound", "friedman", "drift of X^2 + Y^2 is at most -1/4 outside max <= 3 lambda + 1"),
    Claim("friedman-ctmc-stability", "friedman", "finite hitting times of {max(X,Y) <= 3 lambda + 1}; compensated martingale"),
    Claim("delayed-eigenstructure", "delayed", "stripped linearization has eigenvalues +-i, -1 (one eigenvector)"),
    Claim("delayed-oscillation-decay", "delayed", "oscillating approach with 1/sqrt(t) decay of the distance"),
    Claim("enforced-ode-stability", "enforced", "convergence to (4 lambda/3, lambda, lambda); beta*rho^2 monotone"),
    Claim("enforced-split", "enforced", "Z-exit split equals the Friedman arrival split exactly"),
    Claim("enforced-flash-crowd", "enforced", "recovery after a drop in arrival rate (own instrumentation)",
          asserted=False),
    Claim("comparison-lemma", "auxiliary", "u' = b - a u stays positive and within [liminf b/limsup a, limsup b/liminf a]"),
)

STATUS_ORDER = ("integrity failure", "fail", "missing", "evidence-only", "pass")


def _verify(manifest_path: Path, man: dict) -> list[str]:
    problems = []
    base = manifest_path.parent
    for a in man.get("artifacts", []):
        p = base / a["path"]
        if not p.exists():
            problems.append(f"{a['path']}: missing file")
        elif art.sha256_file(p) != a["sha256"]:
            problems.append(f"{a['path']}: digest mismatch")
    return problems


def collect(out_dir) -> tuple[list[dict], list[dict]]:
    """All manifests below ``out_dir`` (verified) and the unreadable ones."""
    good, bad = [], []
    for path in sorted(Path(out_dir).rglob(MANIFEST)):
        try:
            man = json.loads(path.read_text())
            if not isinstance(man, dict) or "scenario" not in man:
                raise ValueError("not a scenario manifest")
        except (OSError, ValueError) as exc:
            bad.append({"path": str(path.relative_to(out_dir)), "error": str(exc)})
            continue
        man["_path"] = str(path.relative_to(out_dir))
        man["_problems"] = _verify(path, man)
        good.append(man)
    return good, bad


def _row_status(claim: Claim, mans: list[dict]) -> str:
    if not mans:
        return "missing"
    if any(m["_problems"] for m in mans):
        return "integrity failure"
    verdicts = {m.get("verdict") for m in mans}
    if "fail" in verdicts:
        return "fail"
    if not claim.asserted or verdicts == {"evidence"}:
        return "evidence-only"
    return "pass"


def report_all(out_dir, write: bool = True) -> dict:
    """Map each claim to pass / fail / evidence-only / missing / integrity failure."""
    out_dir = Path(out_dir)
    mans, bad = collect(out_dir)
    rows = []
    for claim in CLAIMS:
        mine = [m for m in mans if m.get("claim") == claim.id]
        rows.append({
            "claim": claim.id, "model": claim.model, "statement": claim.statement,
            "status": _row_status(claim, mine),
            "scenarios": [{"scenario": m["scenario"], "verdict": m.get("verdict"), "manifest": m["_path"],
                           "problems": m["_problems"], "line": m.get("line", "")} for m in mine],
        })
    known = {c.id for c in CLAIMS}
    extra = [{"scenario": m["scenario"], "claim": m.get("claim"), "verdict": m.get("verdict"),
              "manifest": m["_path"]} for m in mans if m.get("claim") not in known]
    doc = {"rows": rows, "unclaimed": extra, "unreadable_manifests": bad,
           "ok": all(r["status"] in ("pass", "evidence-only") for r in rows)}
    if write:
        art.write_json(out_dir / "report.json", doc)
        (out_dir / "report.md").write_text(render_markdown(doc))
    return doc


def render_markdown(doc: dict) -> str:
    lines = ["# twochunk consolidated report", ""]
    section = None
    for r in doc["rows"]:
        if r["model"] != section:
            section = r["model"]
            lines += ["", f"## {section}", "", "| claim | status | evidence |", "|---|---|---|"]
        ev = "; ".join(f"{s['scenario']} ({s['verdict']})" + (f" {', '.join(s['problems'])}" if s["problems"] else "")
                       for s in r["scenarios"]) or "-"
        lines.append(f"| {r['claim']}: {r['statement']} | {r['status']} | {ev} |")
    if doc["unreadable_manifests"]:
        lines += ["", "## unreadable manifests", ""]
        lines += [f"- {b['path']}: {b['error']}" for b in doc["unreadable_manifests"]]
    if doc["unclaimed"]:
        lines += ["", "## other runs", ""]
        lines += [f"- {u['scenario']} ({u['verdict']})" for u in doc["unclaimed"]]
    return "\n".join(lines) + "\n"
