"""Bound reports, exit-code policy and artifact writers (CSV, gnuplot script, JSON, summary)."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence


class Evidence(str, Enum):
    """How a bound is established on a run; exactly one per report row."""

    PROVED_PER_INSTANCE = "proved-per-instance"
    MONTE_CARLO_PASS = "monte-carlo-pass"
    PROXY_CONSISTENT = "proxy-consistent"


@dataclass
class BoundReport:
    bound: str
    module: str
    evidence: Evidence
    instances: int = 0
    min_slack: float = math.inf
    failures: int = 0

    def record(self, slack: float, ok: bool | None = None) -> None:
        """Add one instance; ``ok`` defaults to ``slack >= 0``."""
        self.instances += 1
        slack = float(slack)
        if math.isnan(slack):
            ok = False
        else:
            self.min_slack = min(self.min_slack, slack)
        if ok is None:
            ok = slack >= 0
        if not ok:
            self.failures += 1

    @property
    def passed(self) -> bool:
        return self.instances > 0 and self.failures == 0

    @property
    def verdict(self) -> str:
        if self.evidence is Evidence.PROXY_CONSISTENT:
            return "consistent" if self.passed else "inconsistent"
        return "pass" if self.passed else "fail"

    def as_dict(self) -> dict:
        return {"bound": self.bound, "module": self.module, "evidence": self.evidence.value,
                "instances": self.instances,
                "min_slack": None if math.isinf(self.min_slack) else self.min_slack,
                "failures": self.failures, "verdict": self.verdict}


def exit_code(reports: Iterable[BoundReport]) -> int:
    """0 iff every non-proxy report passes; proxy rows never change the code."""
    return 0 if all(r.passed for r in reports if r.evidence is not Evidence.PROXY_CONSISTENT) else 1


@dataclass
class RunResult:
    tables: dict[str, list[dict]] = field(default_factory=dict)
    reports: list[BoundReport] = field(default_factory=list)
    plot: str | None = None
    notes: list[str] = field(default_factory=list)

    def report(self, bound: str, module: str, evidence: Evidence) -> BoundReport:
        for r in self.reports:
            if r.bound == bound and r.evidence is evidence:
                return r
        r = BoundReport(bound, module, evidence)
        self.reports.append(r)
        return r


def fmt(v) -> str:
    """Deterministic text for one CSV cell."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, Enum):
        return str(v.value)
    if isinstance(v, (float, int)) and not isinstance(v, bool):
        return repr(float(v)) if isinstance(v, float) else str(v)
    if hasattr(v, "item"):
        return fmt(v.item())
    return str(v)


def csv_text(rows: Sequence[dict]) -> str:
    """RFC 4180 CSV (CRLF line ends, minimal quoting) with columns in first-seen order."""
    cols: list[str] = []
    for r in rows:
        for c in r:
            if c not in cols:
                cols.append(c)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def gnuplot_script(title: str, data_file: str, x_col: str, series: Sequence[tuple[str, str]],
                   columns: Sequence[str], xlabel: str, logx: bool = False) -> str:
    """Text script plotting ``series`` (column, label) against ``x_col`` from a CSV file."""
    idx = {c: i + 1 for i, c in enumerate(columns)}
    lines = [
        f"# {title}",
        "set datafile separator ','",
        "set key top right",
        f"set xlabel '{xlabel}'",
        "set ylabel 'value'",
        f"set title '{title}'",
    ]
    if logx:
        lines.append("set logscale x 2")
    plots = [f"'{data_file}' every ::1 using {idx[x_col]}:{idx[c]} with linespoints title '{label}'"
             for c, label in series]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def summary_text(subcommand: str, cfg_hash: str, reports: Sequence[BoundReport], notes: Sequence[str]) -> str:
    out = [f"dlab {subcommand}", f"config sha256 {cfg_hash}", ""]
    width = max((len(r.bound) for r in reports), default=10)
    for r in reports:
        slack = "n/a" if math.isinf(r.min_slack) else f"{r.min_slack:.3e}"
        out.append(f"{r.verdict.upper():<13} {r.bound:<{width}}  [{r.evidence.value}] "
                   f"instances={r.instances} failures={r.failures} min_slack={slack}")
    out.extend(notes)
    code = exit_code(reports)
    out.append("")
    out.append("overall: " + ("PASS" if code == 0 else "FAIL"))
    return "\n".join(out) + "\n"


def write_artifacts(out_dir: Path, subcommand: str, cfg: dict, cfg_hash: str, result: RunResult,
                    backend: str) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, rows in result.tables.items():
        p = out_dir / f"{name}.csv"
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text(rows))
        written.append(p)
    if result.plot:
        p = out_dir / "plot.gp"
        p.write_text(result.plot, encoding="utf-8")
        written.append(p)
    doc = {
        "subcommand": subcommand,
        "config_sha256": cfg_hash,
        "config": {k: v for k, v in cfg.items() if k not in ("out", "jobs")},
        "kernel_backend": backend,
        "exit_code": exit_code(result.reports),
        "reports": [r.as_dict() for r in result.reports],
    }
    p = out_dir / "report.json"
    p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(p)
    p = out_dir / "summary.txt"
    p.write_text(summary_text(subcommand, cfg_hash, result.reports, result.notes), encoding="utf-8")
    written.append(p)
    return written
