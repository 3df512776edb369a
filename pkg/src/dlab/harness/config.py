"""JSON experiment configs: per-subcommand schemas, defaults, seed resolution and hashing."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

SEED_ENV = "DLAB_SEED"
SEED_MAX = 2**64 - 1


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class Field:
    kind: type | tuple[type, ...]
    default: Any
    check: Callable[[Any], bool] | None = None
    hint: str = ""
    item: "Field | dict | None" = None
    nullable: bool = False


def _pos_int(v):
    return v >= 1


def _nonneg(v):
    return v >= 0


def _prob(v):
    return 0 < v <= 1


def _int(default, check=_pos_int, hint="positive integer"):
    return Field(int, default, check, hint)


def _num(default, check=_nonneg, hint="non-negative number"):
    return Field((int, float), default, check, hint)


def _list(item, default, check=lambda v: len(v) > 0, hint="non-empty list"):
    return Field(list, default, check, hint, item)


ORACLE_MODES = ("exact", "adversarial_floor", "random_feasible")
LOSSES = ("squared", "ridge_softmax_ce")

GLOBAL_SCHEMA: dict[str, Any] = {
    "seed": Field(int, 0, lambda v: 0 <= v <= SEED_MAX, "integer in [0, 2^64)"),
    "out": Field(str, None, nullable=True),
    "jobs": _int(1),
    "tolerances": {
        "atol": _num(1e-9),
        "rtol": _num(1e-10),
        "z": _num(3.0),
    },
}

SCHEMAS: dict[str, dict[str, Any]] = {
    "selftest": {
        "instances": _int(1000),
        "max_support": Field(int, 12, lambda v: v >= 2, "integer >= 2"),
        "max_label_dim": _int(3),
        "loss_probes": _int(64),
        "fixture": Field(str, None, nullable=True),
    },
    "stacking": {
        "sources": _int(20),
        "k_values": _list(_int(1), [1, 2, 4, 8]),
        "trials": Field(int, 500, lambda v: v >= 2, "integer >= 2"),
        "population": {"size": _int(16), "label_dim": _int(1), "feature_dim": _int(1)},
        "source": Field(str, "mixture", lambda v: v in ("mixture", "shard"), "'mixture' or 'shard'"),
        "mixture": {"models": _int(12), "signal": _num(0.5)},
        "generalization": {"sources": Field(int, 5, _nonneg, "integer >= 0"), "label_dim": _int(3)},
        "shard": {"data_size": _int(200), "shard_size": _int(20), "depth": Field(int, 2, _nonneg, "integer >= 0"),
                  "disjoint": Field(bool, False)},
    },
    "tightness": {
        "cases": _list({"k": _int(1), "eps": _num(0.5, _prob, "number in (0, 1]")},
                       [{"k": 1, "eps": 0.5}, {"k": 3, "eps": 0.5}]),
        "trials": Field(int, 2000, lambda v: v >= 2, "integer >= 2"),
    },
    "boost": {
        "classes": _int(10),
        "support": _int(24),
        "label_dim": _int(1),
        "min_base_atoms": Field(int, 4, lambda v: v >= 1, "positive integer"),
        "max_base_atoms": _int(16),
        "k": _int(64),
        "eps": _num(0.01),
        "modes": _list(Field(str, "exact", lambda v: v in ORACLE_MODES, " | ".join(ORACLE_MODES)),
                       list(ORACLE_MODES)),
        "pairs": Field(int, 50, _nonneg, "integer >= 0"),
    },
    "fw": {
        "instances": _int(10),
        "support": _int(16),
        "label_dim": _int(3),
        "min_base_atoms": _int(4),
        "max_base_atoms": _int(10),
        "tau": _num(1.5),
        "k": _int(64),
        "eps": _num(0.01),
        "modes": _list(Field(str, "exact", lambda v: v in ORACLE_MODES, " | ".join(ORACLE_MODES)),
                       list(ORACLE_MODES)),
        "losses": _list(Field(str, "squared", lambda v: v in LOSSES, " | ".join(LOSSES)), list(LOSSES)),
        "mu0": _num(0.5, lambda v: v > 0, "positive number"),
        "pairs": Field(int, 50, _nonneg, "integer >= 0"),
        "probes": _int(1000),
    },
    "trees": {
        "fixture": Field(str, None, nullable=True, hint="path, or 'bundled'"),
        "fixtures": Field(int, 10, _nonneg, "integer >= 0"),
        "max_values": Field(int, 16, lambda v: 2 <= v <= 64, "integer in [2, 64]"),
        "max_features": Field(int, 2, lambda v: 1 <= v <= 3, "integer in [1, 3]"),
        "depths": _list(Field(int, 1, _nonneg, "integer >= 0"), [1, 2, 3]),
        "trainer": {"restarts": _int(4), "top_k": _int(3)},
    },
    "nn": {
        "dag_pairs": Field(int, 200, _nonneg, "integer >= 0"),
        "inputs": _int(2),
        "outputs": _int(1),
        "max_size": _int(8),
        "probes": _int(256),
        "trained_pairs": Field(int, 3, _nonneg, "integer >= 0"),
        "support": _int(24),
        "sizes": _list(_int(1), [2, 4]),
        "steps": _int(5000),
        "lr": _num(1e-2, lambda v: v > 0, "positive number"),
        "restarts": _int(1),
    },
    "trace-matrix": {"results_dir": Field(str, None, nullable=True)},
}


def _validate(doc: Any, schema: Any, path: str) -> Any:
    if isinstance(schema, dict):
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError(path, "expected an object")
        unknown = sorted(set(doc) - set(schema))
        if unknown:
            raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown field")
        return {name: _validate(doc.get(name), sub, f"{path}.{name}" if path else name)
                for name, sub in schema.items()}
    f: Field = schema
    if doc is None:
        return copy.deepcopy(f.default)
    if f.kind is not bool and isinstance(doc, bool):
        raise ConfigError(path, f"expected {f.hint or f.kind}, got a boolean")
    if f.kind in ((int, float), float) and isinstance(doc, int):
        doc = float(doc)
    if not isinstance(doc, f.kind):
        raise ConfigError(path, f"expected {f.hint or getattr(f.kind, '__name__', f.kind)}, "
                                f"got {type(doc).__name__}")
    if f.item is not None:
        doc = [_validate(v, f.item, f"{path}[{i}]") if v is not None else _missing(f"{path}[{i}]")
               for i, v in enumerate(doc)]
    if f.check is not None and not f.check(doc):
        raise ConfigError(path, f"expected {f.hint}, got {doc!r}")
    return doc


def _missing(path):
    raise ConfigError(path, "null entries are not allowed")


def resolve_config(subcommand: str, doc: dict | None, seed: int | None = None,
                   out: str | None = None, jobs: int | None = None,
                   environ: dict | None = None) -> dict:
    """Validate ``doc`` and apply overrides.

    Seed precedence: ``--seed`` over ``DLAB_SEED`` over the config file.
    """
    if subcommand not in SCHEMAS:
        raise ConfigError("subcommand", f"unknown subcommand {subcommand!r}")
    schema = {**GLOBAL_SCHEMA, **SCHEMAS[subcommand]}
    cfg = _validate(doc or {}, schema, "")
    env = os.environ if environ is None else environ
    if seed is None and env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV], 0)
        except ValueError:
            raise ConfigError(SEED_ENV, f"expected an integer, got {env[SEED_ENV]!r}") from None
    if seed is not None:
        cfg["seed"] = _validate(seed, GLOBAL_SCHEMA["seed"], "seed")
    if out is not None:
        cfg["out"] = out
    if jobs is not None:
        cfg["jobs"] = _validate(jobs, GLOBAL_SCHEMA["jobs"], "jobs")
    return cfg


def load_config(path: str | os.PathLike | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be an object")
    return doc


def experiment_fields(cfg: dict) -> dict:
    """Everything that determines results: drops output location and parallelism."""
    return {k: v for k, v in cfg.items() if k not in ("out", "jobs")}


def config_hash(cfg: dict) -> str:
    blob = json.dumps(experiment_fields(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
