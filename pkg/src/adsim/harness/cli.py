"""``ads`` command line: run / validate scenarios and generate topologies."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from ..banditnet.generators import generate
from ..banditnet.graph import GraphError
from ..banditnet.policies import PathologicalLinkError, StuckError
from ..dataflow import PlacementError
from ..overlay import OverlayError
from ..recovery import ErasureConfigError
from . import config as config_mod
from .config import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

INVARIANT_ERRORS = (AssertionError, OverlayError, StuckError, PathologicalLinkError, PlacementError)


def _fail(code: int, kind: str, message: str, field: str | None = None) -> int:
    err = {"error": kind, "message": message}
    if field is not None:
        err["field"] = field
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return code


def _setup_logging() -> None:
    level = os.environ.get("ADS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def cmd_run(args) -> int:
    from .runner import run

    try:
        cfg = config_mod.load(args.config)
        if args.seed_override is not None:
            cfg = replace(cfg, seed=args.seed_override)
            config_mod.validate(cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc.message, exc.field)
    out = Path(args.out) if args.out else Path("out") / cfg.scenario_id.replace("/", "_")
    try:
        summary = run(cfg, out, jobs=args.jobs)
    except (ErasureConfigError, GraphError) as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except INVARIANT_ERRORS as exc:
        return _fail(EXIT_INVARIANT, "invariant", f"{type(exc).__name__}: {exc}")
    print(json.dumps({"out": str(out), "rows": summary["aggregates"]["rows"]}))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = config_mod.load(args.config)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc.message, exc.field)
    print(json.dumps({"ok": True, "experiment": cfg.experiment, "seed": cfg.seed, "seeds": cfg.seeds}))
    return EXIT_OK


def cmd_gen_topology(args) -> int:
    try:
        g = generate(args.kind, args.nodes, args.links, args.delay_min, args.delay_max, args.seed,
                     (args.theta_min, args.theta_max))
    except GraphError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    Path(args.out).write_bytes(g.to_csv().encode("utf-8"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ads", description="Edge stream-processing simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the experiment described by a TOML config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default out/<scenario_id>)")
    r.add_argument("--jobs", type=int, default=1, help="seeds to run in parallel")
    r.add_argument("--seed-override", type=int, help="replace the config's first seed")
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("validate", help="parse and check a config without running it")
    v.add_argument("config")
    v.set_defaults(fn=cmd_validate)

    g = sub.add_parser("gen-topology", help="write a synthetic routing graph as CSV")
    g.add_argument("--kind", choices=("grid-road", "ring", "random"), default="grid-road")
    g.add_argument("--nodes", type=int, required=True)
    g.add_argument("--links", type=int, required=True)
    g.add_argument("--delay-min", type=float, default=50.0)
    g.add_argument("--delay-max", type=float, default=250.0)
    g.add_argument("--theta-min", type=float, default=0.25)
    g.add_argument("--theta-max", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_topology)
    return p


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        return _fail(EXIT_CONFIG, "config", "--jobs must be >= 1", "jobs")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
