"""Experiment configuration: JSON schemas, validation, seed derivation.

Configs are plain JSON, one file per experiment.  Validation is strict:
unknown keys are rejected, a seed is mandatory (no wall-clock seeding), and
replica counts must be positive.  Per-replica randomness derives from the
root seed through numpy SeedSequence spawn keys (a counter-based split),
recorded in report metadata.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from sbmlab.domains import AtomicMeasure, Disk, Interval


class SchemaError(ValueError):
    """Config violates the experiment schema."""


_COMMON = {"kind", "seed", "out"}
_SCHEMA: dict[str, dict[str, set[str]]] = {
    "simulate": {
        "required": {"domain", "mu", "replicas"},
        "optional": {"N", "dt", "method", "chain", "n_grid", "threads"},
    },
    "moments": {
        "required": {"domain", "phi", "fs", "C"},
        "optional": {"mu", "x", "chain_domains", "chain_phis", "n_grid", "h"},
    },
    "condition": {
        "required": {"domain", "x", "replicas"},
        "optional": {"N", "bins", "survivors_per_node", "y_nodes", "method"},
    },
    "backbone": {
        "required": {"tables", "replicas"},
        "optional": {"v", "y", "mu", "z", "beta", "N", "chain", "tree_dump"},
    },
    "verify": {
        "required": {"suite"},
        "optional": {"replicas_scale", "threads"},
    },
}


def validate_config(cfg: dict) -> dict:
    if not isinstance(cfg, dict):
        raise SchemaError("config must be a JSON object")
    kind = cfg.get("kind")
    if kind not in _SCHEMA:
        raise SchemaError(f"unknown experiment kind {kind!r}")
    if "seed" not in cfg:
        raise SchemaError("seed is mandatory")
    if not isinstance(cfg["seed"], int):
        raise SchemaError("seed must be an integer")
    schema = _SCHEMA[kind]
    allowed = _COMMON | schema["required"] | schema["optional"]
    unknown = set(cfg) - allowed
    if unknown:
        raise SchemaError(f"unknown keys for {kind}: {sorted(unknown)}")
    missing = schema["required"] - set(cfg)
    if missing:
        raise SchemaError(f"missing keys for {kind}: {sorted(missing)}")
    if "replicas" in cfg and (not isinstance(cfg["replicas"], int) or cfg["replicas"] < 1):
        raise SchemaError("replicas must be a positive integer")
    return cfg


def load_config(path: str) -> dict:
    with open(path) as f:
        cfg = json.load(f)
    return validate_config(cfg)


def parse_domain(spec: Any):
    if isinstance(spec, dict):
        t = spec.get("type", "interval")
        if t == "interval":
            return Interval(float(spec.get("a", 0.0)), float(spec.get("b", 1.0)))
        if t == "disk":
            c = spec.get("center", (0.0, 0.0))
            return Disk((float(c[0]), float(c[1])), float(spec.get("radius", 1.0)))
        raise SchemaError(f"unknown domain type {t!r}")
    if isinstance(spec, (list, tuple)) and len(spec) == 2:
        return Interval(float(spec[0]), float(spec[1]))
    raise SchemaError(f"cannot parse domain from {spec!r}")


def parse_measure(spec: Any) -> AtomicMeasure:
    if isinstance(spec, dict):
        return AtomicMeasure(np.asarray(spec["positions"], dtype=float),
                             np.asarray(spec["masses"], dtype=float))
    raise SchemaError("mu must be an object with positions and masses")


def replica_seed(root: int, index: int) -> int:
    """Counter-based replica seed (SeedSequence spawn key)."""
    return int(np.random.SeedSequence(root, spawn_key=(index,)).generate_state(1)[0])
