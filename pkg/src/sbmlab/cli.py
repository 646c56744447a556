"""Command-line interface: simulate | moments | condition | backbone | verify.

Every subcommand takes --config PATH (a JSON experiment config), with
--seed/--out/--threads overrides.  Exit code 0 iff the run passed (for
verify: all criteria; otherwise: the run completed).  CSV column layouts are
documented in schema/csv_columns.json at the repository root.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from sbmlab import acceptance
from sbmlab.config import (
    SchemaError,
    load_config,
    parse_domain,
    parse_measure,
    validate_config,
)
from sbmlab.domains import AtomicMeasure, Interval
from sbmlab.moments import MomentSpec, laplace_derivative_oracle, moment_p_C
from sbmlab.particles import SimConfig, simulate_exit_batch, simulate_nested_batch
from sbmlab.report import Report


def _write_csv(path: Path, header: str, rows: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, rows, delimiter=",", comments="", header=header, fmt="%.17g")


def cmd_simulate(cfg: dict, out: Path, threads: int) -> int:
    domain = parse_domain(cfg["domain"])
    mu = parse_measure(cfg["mu"])
    sim = SimConfig(N=cfg.get("N", 100), dt=cfg.get("dt", 1e-4),
                    method=cfg.get("method", "exact"),
                    n_grid=cfg.get("n_grid", 2048))
    n = cfg["replicas"]
    seed = cfg["seed"]
    if "chain" in cfg:
        chain = [parse_domain(d) for d in cfg["chain"]] + [domain]
        nb = simulate_nested_batch(chain, mu, sim, n, seed)
        cols = [np.arange(n)]
        names = ["replica"]
        for i, st in enumerate(nb.stages):
            cols += [st.mass0, st.mass1]
            names += [f"mass_a_{i}", f"mass_b_{i}"]
        cols.append(nb.stages[-1].extinct.astype(int))
        names.append("extinct")
        _write_csv(out / "replicas.csv", ",".join(names), np.column_stack(cols))
    else:
        batch = simulate_exit_batch(domain, mu, sim, n, seed, threads=threads)
        rows = np.column_stack([np.arange(n), batch.mass0, batch.mass1,
                                batch.extinct.astype(int)])
        _write_csv(out / "replicas.csv", "replica,mass_a,mass_b,extinct", rows)
    meta = {"config": cfg, "eps": sim.eps,
            "seed_split": "SeedSequence spawn keys per chunk"}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}/replicas.csv")
    return 0


def cmd_moments(cfg: dict, out: Path, threads: int) -> int:
    domain = parse_domain(cfg["domain"])
    fs = [f if isinstance(f, (int, float)) else f for f in cfg["fs"]]
    from sbmlab.domains import BoundaryFunction
    fs = [BoundaryFunction(domain, f) if isinstance(f, list)
          else BoundaryFunction.constant(domain, float(f)) for f in cfg["fs"]]
    phi = cfg["phi"]
    spec = MomentSpec.single(domain, phi, fs, tuple(cfg["C"]),
                             n_grid=cfg.get("n_grid", 2048))
    result = {"kind": "moments", "C": list(spec.C)}
    if "mu" in cfg:
        mu = parse_measure(cfg["mu"])
        val = moment_p_C(spec, mu)
        oracle = laplace_derivative_oracle(spec, mu, h=cfg.get("h"))
        result.update(value=val, oracle=oracle.value,
                      discrepancy=abs(val - oracle.value),
                      oracle_error_estimate=oracle.error_estimate)
    else:
        from sbmlab.moments import moment_n_C
        result.update(value=moment_n_C(spec, float(cfg["x"])))
    out.mkdir(parents=True, exist_ok=True)
    (out / "moments.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_condition(cfg: dict, out: Path, threads: int) -> int:
    from sbmlab.conditioning import build_mass_model, save_mass_model
    domain = parse_domain(cfg["domain"])
    sim = SimConfig(N=cfg.get("N", 100), method=cfg.get("method", "exact"))
    model = build_mass_model(domain, float(cfg["x"]), sim, cfg["seed"],
                             n_replicas=cfg["replicas"],
                             bins=cfg.get("bins", 64),
                             survivors_per_node=cfg.get("survivors_per_node", 20000),
                             y_nodes=cfg.get("y_nodes"))
    save_mass_model(model, out)
    print(f"wrote conditioning tables to {out}")
    return 0


def cmd_backbone(cfg: dict, out: Path, threads: int) -> int:
    from sbmlab.backbone import ObservationSet, point_backbone, run_conditioned, run_forest
    from sbmlab.conditioning import HvModel, load_mass_model
    sim = SimConfig(N=cfg.get("N", 100))
    n = cfg["replicas"]
    seed = cfg["seed"]
    obs = None
    if "chain" in cfg:
        obs = ObservationSet([parse_domain(d) for d in cfg["chain"]])
    if "z" in cfg:
        domain = Interval()
        run, absorbed = point_backbone(domain, 0.5, [float(z) for z in cfg["z"]],
                                       float(cfg.get("beta", 1.0)), sim, n, seed,
                                       obs=obs)
    else:
        model = load_mass_model(cfg["tables"])
        v = int(cfg["v"])
        if "mu" in cfg:
            run = run_forest(model, HvModel(model), parse_measure(cfg["mu"]), v,
                             sim, n, seed, obs=obs)
        else:
            run = run_conditioned(model, float(cfg.get("y", model.x)), v, sim, n,
                                  seed, obs=obs)
    names = ["replica"] + [f"mass_dom{i}" for i in range(len(run.observations))]
    rows = np.column_stack([np.arange(n)] + [run.masses[i]
                                             for i in range(len(run.observations))])
    _write_csv(out / "backbone.csv", ",".join(names), rows)
    if cfg.get("tree_dump"):
        from sbmlab.backbone import mass_label_walk
        model = load_mass_model(cfg["tables"])
        run1 = run_conditioned(model, float(cfg.get("y", model.x)), int(cfg["v"]),
                               sim, 1, seed + 1, obs=obs, record_tree=True)
        dump = [{
            "label": nd.label, "birth_node": nd.birth_node,
            "birth_time": nd.birth_time, "death_node": nd.death_node,
            "death_time": nd.death_time, "children": nd.children,
            "terminal": nd.terminal,
        } for nd in (run1.trees or [])]
        (out / "tree.json").write_text(json.dumps(dump, indent=2) + "\n")
    print(f"wrote {out}/backbone.csv")
    return 0


def cmd_verify(cfg: dict, out: Path, threads: int) -> int:
    rep = acceptance.run_suite(cfg["suite"], seed=cfg["seed"],
                               scale=cfg.get("replicas_scale", 1.0))
    rep.write(out)
    print(f"suite {cfg['suite']}: {'PASS' if rep.passed else 'FAIL'} -> {out}")
    return 0 if rep.passed else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "condition": cmd_condition,
    "backbone": cmd_backbone,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sbmlab",
                                     description="super-Brownian exit-measure laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=(name != "verify"),
                       help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, default=1)
        if name == "verify":
            p.add_argument("--suite", default=None,
                           help="suite name (overrides config)")
            p.add_argument("--scale", type=float, default=None,
                           help="replica-count multiplier")
    args = parser.parse_args(argv)
    try:
        if args.config:
            cfg = load_config(args.config)
        else:
            cfg = {"kind": "verify", "suite": args.suite or "all", "seed": 20240}
            validate_config(cfg)
        if args.command == "verify" and getattr(args, "suite", None):
            cfg["suite"] = args.suite
        if args.command == "verify" and getattr(args, "scale", None) is not None:
            cfg["replicas_scale"] = args.scale
        if args.seed is not None:
            cfg["seed"] = args.seed
        if cfg["kind"] != args.command:
            raise SchemaError(f"config kind {cfg['kind']!r} does not match "
                              f"subcommand {args.command!r}")
        return COMMANDS[args.command](cfg, Path(args.out), args.threads)
    except SchemaError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
