"""Command-line entry point.

Exit codes: 0 success (or abstraction holds), 1 verification negative,
2 usage, input or IO error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .abstraction import AbstractionMap, check_block_abstraction, implied_abstract_graph
from .concretize import ConcretizeConfig, sample_concretization
from .discovery import DiscoveryConfig, PriorKnowledge, direct_lingam
from .errors import LinabsError, PipelineStageError
from .evaluate import run_benchmark, summary_table
from .pipeline import PipelineConfig, abs_lingam
from .scenario import ScenarioConfig, generate, load_scenario, read_csv, save_scenario
from .scm import LinearScm, NoiseSpec

log = logging.getLogger("linabs")

EXIT_OK, EXIT_NEGATIVE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def _load_model(path) -> LinearScm:
    return LinearScm.from_dict(_load_json(path))


def _load_t(path) -> AbstractionMap:
    return AbstractionMap.from_dict(_load_json(path))


def _load_csv(path) -> np.ndarray:
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")
    return read_csv(path)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _config(args) -> dict:
    return _load_json(args.config) if args.config else {}


# -- commands ------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = ScenarioConfig.from_dict(_config(args))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    sc = generate(cfg)
    path = save_scenario(sc, args.out or "scenario")
    print(f"wrote {path} (d={sc.d}, b={sc.b}, |K|={len(sc.k_true)})")
    return EXIT_OK


def cmd_verify(args) -> int:
    l, h, t = _load_model(args.low), _load_model(args.high), _load_t(args.t)
    check = check_block_abstraction(l, h, t, args.tol)
    print(f"max residual: {check.max_residual:.3e}")
    print(f"block ordering: {'ok' if check.ordering_ok else 'violated'}")
    if check.reason:
        print(f"reason: {check.reason}")
    if not t.problems():
        implied = implied_abstract_graph(l, t)
        for v in implied.violations:
            print(
                f"connectivity violation: X{v.source_var} reaches R(Y{v.target_abstract}) via X{v.witness_var}"
                f" but not every variable of R(Y{v.source_abstract}) does"
            )
    print("holds" if check.ok else "does not hold")
    return EXIT_OK if check.ok else EXIT_NEGATIVE


def cmd_concretize(args) -> int:
    h, t = _load_model(args.high), _load_t(args.t)
    raw = _config(args)
    if "noise" in raw:
        raw["noise"] = NoiseSpec.from_dict(raw["noise"])
    cfg = ConcretizeConfig(**raw)
    if args.seed is not None:
        cfg = replace(cfg, rng_seed=args.seed)
    l = sample_concretization(h, t, cfg)
    check = check_block_abstraction(l, h, t, args.tol)
    out = Path(args.out or "concrete.json")
    _write_json(out, l.to_dict())
    print(f"wrote {out} (d={l.n_vars}); check: max residual {check.max_residual:.3e}")
    return EXIT_OK if check.ok else EXIT_NEGATIVE


def cmd_discover(args) -> int:
    data = _load_csv(args.data)
    cfg = DiscoveryConfig(**_config(args))
    if args.seed is not None:
        cfg = replace(cfg, rng_seed=args.seed)
    k = PriorKnowledge.from_dict(_load_json(args.knowledge)) if args.knowledge else None
    res = direct_lingam(data, k, cfg)
    out = Path(args.out or "model.json")
    _write_json(out, res.model.to_dict())
    print(f"wrote {out}: {int(res.model.support.sum())} edges, order {res.order}, {res.pair_evals} pair evaluations")
    return EXIT_OK


def cmd_abslingam(args) -> int:
    if args.scenario:
        sc = load_scenario(args.scenario)
        d_l, d_j_x, d_j_y = sc.d_l, sc.d_j_x, sc.d_j_y
    else:
        if not (args.d_l and args.d_j_x and args.d_j_y):
            raise UsageError("give --scenario or all of --d-l, --d-j-x, --d-j-y")
        d_l, d_j_x, d_j_y = _load_csv(args.d_l), _load_csv(args.d_j_x), _load_csv(args.d_j_y)
    cfg = PipelineConfig.from_dict(_config(args))
    if args.seed is not None:
        cfg = replace(cfg, discovery=replace(cfg.discovery, rng_seed=args.seed))
    res = abs_lingam(d_l, d_j_x, d_j_y, cfg)
    out = Path(args.out or "abslingam")
    _write_json(out / "t_hat.json", res.t_hat.to_dict())
    _write_json(out / "m_hat.json", res.m_hat.to_dict())
    _write_json(out / "w_hat.json", res.w_hat.to_dict())
    rep = res.report
    report = {
        "timings": rep.timings,
        "pair_evals_abstract": rep.pair_evals_abstract,
        "pair_evals_concrete": rep.pair_evals_concrete,
        "n_forbidden": rep.n_forbidden,
        "overlap_resolved": rep.overlap_resolved,
        "dropped_abstract": rep.dropped_abstract,
        "knowledge": res.knowledge.to_dict(),
        "config": cfg.to_dict(),
    }
    _write_json(out / "report.json", report)
    print(f"wrote {out}/{{t_hat,m_hat,w_hat,report}}.json")
    print(
        f"abstract edges {int(res.m_hat.support.sum())}, forbidden pairs {rep.n_forbidden}, "
        f"concrete edges {int(res.w_hat.support.sum())}, pair evaluations {rep.pair_evals_concrete}"
    )
    return EXIT_OK


def parse_grid(grid: dict) -> tuple[list, int]:
    """``{"repetitions": r, "cells": [{"scenario": {...}, "pipeline": {...}}, ...]}``."""
    unknown = set(grid) - {"repetitions", "cells"}
    if unknown:
        raise UsageError(f"unknown grid fields: {sorted(unknown)}")
    cells = []
    for c in grid.get("cells", []):
        scfg = ScenarioConfig.from_dict(c.get("scenario", {}))
        pcfg = PipelineConfig.from_dict(c.get("pipeline", {}))
        cells.append((scfg, pcfg))
    return cells, int(grid.get("repetitions", 1))


def cmd_bench(args) -> int:
    grid = _load_json(args.grid or args.config) if (args.grid or args.config) else {"cells": [{}], "repetitions": 1}
    cells, reps = parse_grid(grid)
    if args.reps is not None:
        reps = args.reps
    out = Path(args.out or "bench.csv")
    rows = run_benchmark(cells, reps, seed=args.seed or 0, jobs=args.jobs, out_csv=out)
    print(summary_table(rows))
    print(f"wrote {out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    common.add_argument("--config", default=None, help="JSON file with configuration overrides")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (bench only)")
    common.add_argument("--tol", type=float, default=1e-8, help="verification tolerance")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="linabs", description="Linear causal abstraction toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="generate a synthetic scenario")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("verify", parents=[common], help="check that H is a T-abstraction of L")
    p.add_argument("--low", required=True, help="concrete model JSON")
    p.add_argument("--high", required=True, help="abstract model JSON")
    p.add_argument("--t", required=True, help="abstraction matrix JSON")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("concretize", parents=[common], help="sample a concrete model for (H, T)")
    p.add_argument("--high", required=True, help="abstract model JSON")
    p.add_argument("--t", required=True, help="abstraction matrix JSON")
    p.set_defaults(func=cmd_concretize)

    p = sub.add_parser("discover", parents=[common], help="DirectLiNGAM on a CSV dataset")
    p.add_argument("--data", required=True, help="CSV with a header row")
    p.add_argument("--knowledge", default=None, help="forbidden-path JSON")
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("abslingam", parents=[common], help="run the Abs-LiNGAM pipeline")
    p.add_argument("--scenario", default=None, help="scenario directory or manifest")
    p.add_argument("--d-l", dest="d_l", default=None, help="concrete CSV")
    p.add_argument("--d-j-x", dest="d_j_x", default=None, help="paired concrete CSV")
    p.add_argument("--d-j-y", dest="d_j_y", default=None, help="paired abstract CSV")
    p.set_defaults(func=cmd_abslingam)

    p = sub.add_parser("bench", parents=[common], help="run a benchmark grid and write CSV")
    p.add_argument("--grid", default=None, help="grid JSON (defaults to --config, then one default cell)")
    p.add_argument("--reps", type=int, default=None, help="repetitions per cell")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, LinabsError, PipelineStageError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
