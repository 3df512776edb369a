"""``dlab`` command line: one subcommand per experiment plus the traceability matrix.

Exit codes: 0 all certified checks pass; 1 a certified check failed (or a
registered result is MISSING); 2 invalid config or input; 3 resource budget
exceeded.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..kernels import BACKEND
from ..population import ContractError
from ..stacking import SourceExhaustedError
from ..trees import TreeBudgetError
from .config import ConfigError, config_hash, load_config, resolve_config
from .experiments import RUNNERS
from .registry import trace_matrix
from .report import RunResult, csv_text, exit_code, summary_text, write_artifacts

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_RESOURCE = 0, 1, 2, 3

HELP = {
    "selftest": "randomized midpoint identity and anchor checks",
    "stacking": "stacked-aggregation agreement curves over k",
    "tightness": "near-tightness instance for the factor 4",
    "boost": "gradient boosting rates and two-run agreement",
    "fw": "Frank-Wolfe rates, loss certificates and two-run agreement",
    "trees": "exact-DP regression tree agreement certificates",
    "nn": "ReLU network midpoint closure and proxy agreement certificates",
    "trace-matrix": "table of certified results and their checks",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlab", description="Midpoint-anchored disagreement experiments.")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")
    for name, text in HELP.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, help="JSON config file (defaults apply when omitted)")
        p.add_argument("--seed", type=lambda s: int(s, 0), help="override the config seed (beats DLAB_SEED)")
        p.add_argument("--out", help="output directory (default dlab-out/<subcommand>)")
        p.add_argument("--jobs", type=int, help="worker processes (results do not depend on it)")
    return parser


def _run_trace_matrix(cfg: dict) -> tuple[RunResult, int]:
    rows = trace_matrix(results_dir=Path(cfg["results_dir"]) if cfg["results_dir"] else None)
    res = RunResult(tables={"trace_matrix": rows})
    missing = [r["result"] for r in rows if r["status"] == "MISSING"]
    res.notes.append(f"{len(rows)} registered results, {len(missing)} MISSING")
    res.notes.extend(f"MISSING: {m}" for m in missing)
    return res, EXIT_FAIL if missing else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    name = args.subcommand
    try:
        cfg = resolve_config(name, load_config(args.config), seed=args.seed, out=args.out, jobs=args.jobs)
        if name == "trace-matrix":
            result, code = _run_trace_matrix(cfg)
        else:
            result = RUNNERS[name](cfg, cfg["jobs"])
            code = exit_code(result.reports)
    except ConfigError as exc:
        print(f"dlab {name}: config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TreeBudgetError, SourceExhaustedError) as exc:
        print(f"dlab {name}: resource budget exceeded: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ContractError, OSError) as exc:
        print(f"dlab {name}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out_dir = Path(cfg["out"] or Path("dlab-out") / name)
    h = config_hash(cfg)
    write_artifacts(out_dir, name, cfg, h, result, BACKEND)
    if name == "trace-matrix":
        sys.stdout.write(csv_text(result.tables["trace_matrix"]).replace("\r\n", "\n"))
        print("\n".join(result.notes))
    else:
        sys.stdout.write(summary_text(name, h, result.reports, result.notes))
    print(f"artifacts: {out_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
