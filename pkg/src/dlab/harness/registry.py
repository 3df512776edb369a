"""Static registry of certified results and the traceability matrix built from it.

Each entry names the callables that certify it.  An entry whose callables no
longer resolve is flagged ``MISSING`` so coverage regressions surface.
"""
from __future__ import annotations

import importlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .report import Evidence

P, M, X = Evidence.PROVED_PER_INSTANCE, Evidence.MONTE_CARLO_PASS, Evidence.PROXY_CONSISTENT


@dataclass(frozen=True)
class RegisteredResult:
    title: str
    kind: str
    module: str
    subcommand: str
    evidence: Evidence
    checks: tuple[str, ...]


REGISTRY: tuple[RegisteredResult, ...] = (
    RegisteredResult("Midpoint identity for squared loss", "lemma", "population-core", "selftest", P,
                     ("dlab.population:check_midpoint_identity",)),
    RegisteredResult("Disagreement via the midpoint anchor", "corollary", "population-core", "selftest", P,
                     ("dlab.population:check_anchor_bound",)),
    RegisteredResult("Local learning-curve bound from midpoint closure", "lemma", "population-core", "trees", P,
                     ("dlab.population:check_local_curve_bound",)),
    RegisteredResult("Agreement for Stacked Aggregation", "theorem", "stacking", "stacking", M,
                     ("dlab.stacking:run_stacking_pair", "dlab.stacking:stacking_curve")),
    RegisteredResult("Near-tightness of the factor 4", "theorem", "stacking", "tightness", M,
                     ("dlab.stacking:verify_tightness", "dlab.stacking:check_tightness_closed_forms")),
    RegisteredResult("Single Iterate Progress", "lemma", "boosting", "boost", P,
                     ("dlab.boosting:gradient_boost", "dlab.boosting:certify_gb_rate")),
    RegisteredResult("Correlation Lower Bound w.r.t. Weak Learning Anchor Gap", "lemma", "boosting", "boost", P,
                     ("dlab.boosting:certify_gb_rate", "dlab.boosting:tau_star")),
    RegisteredResult("Gap Recurrence Toward R(V(C))", "proposition", "boosting", "boost", P,
                     ("dlab.boosting:certify_gb_rate",)),
    RegisteredResult("Weak Learning Anchor Gap Upper Bound", "theorem", "boosting", "boost", P,
                     ("dlab.boosting:certify_gb_rate",)),
    RegisteredResult("Gradient Boosting Agreement Bound", "theorem", "boosting", "boost", P,
                     ("dlab.boosting:certify_gb_two_run",)),
    RegisteredResult("Neural-network midpoint closure", "lemma", "closure-classes", "nn", P,
                     ("dlab.networks:nn_midpoint",)),
    RegisteredResult("Neural-network agreement", "corollary", "closure-classes", "nn", X,
                     ("dlab.closure:certify_nn_agreement",)),
    RegisteredResult("Regression-tree midpoint closure", "lemma", "closure-classes", "trees", P,
                     ("dlab.trees:tree_midpoint",)),
    RegisteredResult("Regression tree agreement", "corollary", "closure-classes", "trees", P,
                     ("dlab.closure:certify_tree_agreement", "dlab.trees:optimal_tree")),
    RegisteredResult("Disagreement via the midpoint anchor (strongly convex)", "lemma", "frankwolfe", "selftest", P,
                     ("dlab.losses:sc_midpoint_pointwise_slack", "dlab.losses:certify_loss")),
    RegisteredResult("Agreement for Stacked Aggregation Generalization", "theorem", "stacking", "stacking", M,
                     ("dlab.stacking:stacking_curve",)),
    RegisteredResult("FW single-iterate progress", "lemma", "frankwolfe", "fw", P,
                     ("dlab.frankwolfe:frank_wolfe", "dlab.frankwolfe:certify_fw_trace")),
    RegisteredResult("FW Correlation Lower Bound w.r.t Weak Learning Anchor Gap", "lemma", "frankwolfe", "fw", P,
                     ("dlab.frankwolfe:certify_fw_trace", "dlab.frankwolfe:fw_gap")),
    RegisteredResult("FW Gap Recurrence Toward R(K_tau)", "lemma", "frankwolfe", "fw", P,
                     ("dlab.frankwolfe:certify_fw_trace", "dlab.frankwolfe:risk_over_Ktau")),
    RegisteredResult("FW Anchor Gap Upper Bound", "lemma", "frankwolfe", "fw", P,
                     ("dlab.frankwolfe:certify_fw_trace",)),
    RegisteredResult("FW Gradient Boosting Agreement Bound", "theorem", "frankwolfe", "fw", P,
                     ("dlab.frankwolfe:certify_fw_agreement",)),
    RegisteredResult("Agreement from midpoint closure", "theorem", "closure-classes", "trees", P,
                     ("dlab.closure:certify_tree_agreement",)),
)


def resolve_check(path: str) -> bool:
    mod, _, attr = path.partition(":")
    try:
        obj = importlib.import_module(mod)
    except ImportError:
        return False
    for part in attr.split("."):
        if not hasattr(obj, part):
            return False
        obj = getattr(obj, part)
    return callable(obj)


def _last_verdicts(results_dir: Path | None) -> dict[tuple[str, str], str]:
    found: dict[tuple[str, str], str] = {}
    if results_dir is None:
        return found
    for rep in sorted(Path(results_dir).glob("*/report.json")):
        try:
            doc = json.loads(rep.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            continue
        for r in doc.get("reports", []):
            found[(doc.get("subcommand", ""), r["bound"])] = r["verdict"]
    return found


def trace_matrix(registry: Sequence[RegisteredResult] = REGISTRY,
                 results_dir: Path | None = None) -> list[dict]:
    verdicts = _last_verdicts(results_dir)
    rows = []
    for entry in registry:
        missing = [c for c in entry.checks if not resolve_check(c)]
        rows.append({
            "result": entry.title,
            "kind": entry.kind,
            "module": entry.module,
            "subcommand": entry.subcommand,
            "evidence": entry.evidence.value,
            "checks": " ".join(entry.checks),
            "status": "MISSING" if missing or not entry.checks else "OK",
            "missing": " ".join(missing),
            "last_verdict": verdicts.get((entry.subcommand, entry.title), "not-run"),
        })
    return rows


def lookup(title: str) -> RegisteredResult:
    for entry in REGISTRY:
        if entry.title == title:
            return entry
    raise KeyError(title)
