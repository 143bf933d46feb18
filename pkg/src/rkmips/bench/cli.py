"""Command-line front end: ``rkmips <command> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import sa_alsh, sah
from ..core import VectorSet, brute_force_kmips, normalize_users
from ..sa_alsh import DEFAULT_PROBE_RADIUS, DEFAULT_RANKING, RANKINGS
from ..sah import DECISION_PROBE_RADIUS
from . import experiment, io, synth, truth
from .experiment import METHODS, RunConfig

log = logging.getLogger("rkmips")


def _budget(text: str):
    if text.lower() in ("inf", "unlimited"):
        return math.inf
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0 or 'inf', got {text}")
    return v


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _index_flags(p: argparse.ArgumentParser, probe_radius: int = DECISION_PROBE_RADIUS) -> None:
    g = p.add_argument_group("index parameters")
    g.add_argument("--k-max", dest="k_max", type=int, default=50)
    g.add_argument("--b", type=float, default=0.5, help="norm-band ratio in (0, 1)")
    g.add_argument("--K", type=int, default=128, help="hash tables per band")
    g.add_argument("--L", type=int, default=8, help="bits per table")
    g.add_argument("--N0", type=int, default=20, help="cone-tree leaf size")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--prefix-factor", dest="prefix_factor", type=int, default=2)
    g.add_argument("--probe-radius", dest="probe_radius", type=int, default=probe_radius)
    g.add_argument("--budget", type=_budget, default=None, help="candidates per band (integer or 'inf')")
    g.add_argument("--ranking", choices=RANKINGS, default=DEFAULT_RANKING)


def _data_flags(p: argparse.ArgumentParser, queries: bool = True) -> None:
    p.add_argument("--items", required=True)
    p.add_argument("--users", required=True)
    if queries:
        p.add_argument("--queries", required=True)
    p.add_argument("--has-ids", dest="has_ids", action="store_true", help="CSV inputs carry a leading id column")


def _run_config(args, ks=None) -> RunConfig:
    config = RunConfig(ks=tuple(ks if ks is not None else getattr(args, "k", [1]) or ()), k_max=args.k_max,
                       b=args.b, K=args.K, L=args.L, N0=args.N0, seed=args.seed, prefix_factor=args.prefix_factor,
                       probe_radius=args.probe_radius, budget=args.budget, ranking=args.ranking,
                       trials=getattr(args, "trials", 1), methods=tuple(getattr(args, "methods", METHODS)))
    config.validate()
    return config


def _truth_paths(pattern: str, ks) -> dict[int, str]:
    if len(ks) > 1 and "{k}" not in pattern:
        raise ValueError("--truth/--out must contain '{k}' when several k values are given")
    return {k: pattern.replace("{k}", str(k)) for k in ks}


def _load(args, queries: bool = True):
    P = io.read_vectors(args.items, args.has_ids)
    U = io.read_vectors(args.users, args.has_ids)
    Q = io.read_vectors(args.queries, args.has_ids) if queries else None
    return P, U, Q


def cmd_gen(args) -> None:
    for name in ("n", "m", "d", "clusters", "queries"):
        if getattr(args, name) < 1:
            raise ValueError(f"--{name} must be >= 1, got {getattr(args, name)}")
    paths = synth.write_synth(args.out, args.n, args.m, args.d, args.clusters, args.seed, args.queries)
    for key, p in paths.items():
        print(f"{key}: {p}")


def cmd_convert(args) -> None:
    V = io.read_vectors(args.input, args.has_ids)
    io.write_vectors(args.output, V)
    print(f"wrote {len(V)} x {V.dim} to {args.output}")


def cmd_build(args) -> None:
    c = _run_config(args).sah_config()
    P, U, _ = _load(args, queries=False)
    t = time.perf_counter()
    idx = sah.SahIndex.build(P, U, c.k_max, c.N0, c.b, c.K, c.L, c.seed, prefix_factor=c.prefix_factor,
                             probe_radius=c.probe_radius, budget=c.budget, ranking=c.ranking)
    elapsed = time.perf_counter() - t
    idx.save(args.out)
    print(f"built index over {len(P)} items and {len(idx.users)} users in {elapsed:.3f}s -> {args.out}")


def cmd_truth(args) -> None:
    if not args.k or any(k < 1 for k in args.k):
        raise ValueError("--k values must be >= 1")
    if args.jobs < 1:
        raise ValueError(f"--jobs must be >= 1, got {args.jobs}")
    paths = _truth_paths(args.out, args.k)
    P, U, Q = _load(args)
    for k, path in paths.items():
        truth.write_truth(path, P, U, Q, k, args.jobs)
        print(f"k={k}: {len(Q)} queries -> {path}")


def cmd_query(args) -> None:
    if args.k < 1:
        raise ValueError(f"--k must be >= 1, got {args.k}")
    idx = sah.SahIndex.load(args.index)
    if args.k > idx.config.k_max:
        raise ValueError(f"--k must be <= the index k_max={idx.config.k_max}, got {args.k}")
    Q = io.read_vectors(args.queries, args.has_ids)
    results, times = [], []
    for q, qid in zip(Q.coords, Q.ids):
        t = time.perf_counter()
        results.append(idx.query(q, args.k, int(qid)))
        times.append(time.perf_counter() - t)
    io.write_results(args.out, results)
    print(f"{len(results)} queries, mean {np.mean(times) if times else 0.0:.6f}s -> {args.out}")


def _read_truth(pattern: str, ks) -> dict[int, dict[int, frozenset]]:
    out = {}
    for k, path in _truth_paths(pattern, ks).items():
        if not Path(path).exists():
            raise ValueError(f"--truth: missing ground truth file {path}")
        out[k] = io.read_results(path)
    return out


def _emit(rows: list[dict], path: str | None) -> None:
    if path:
        experiment.write_rows(path, rows)
    if rows:
        w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def cmd_eval(args) -> None:
    config = _run_config(args)
    T = _read_truth(args.truth, config.ks)
    P, U, Q = _load(args)
    reports = experiment.run_experiment(config, P, U, Q, T)
    _emit([r.row() for r in reports], args.csv)


def cmd_sweep(args) -> None:
    grid = {name: vals for name, vals in (("b", args.grid_b), ("K", args.grid_K), ("N0", args.grid_N0),
                                          ("k", args.grid_k)) if vals}
    if not grid:
        raise ValueError("--grid-b/--grid-K/--grid-N0/--grid-k: give at least one grid")
    ks = sorted(set(args.grid_k or args.k or [10]))
    config = _run_config(args, ks)
    for name, vals in grid.items():
        for v in vals:
            replace(config, **({"ks": (v,)} if name == "k" else {name: v})).validate()
    T = _read_truth(args.truth, ks)
    P, U, Q = _load(args)
    _emit(experiment.sweep(config, grid, P, U, Q, T), args.csv)


def cmd_kmips(args) -> None:
    config = _run_config(args, [args.k])
    if args.queries < 1:
        raise ValueError(f"--queries must be >= 1, got {args.queries}")
    P, U, _ = _load(args, queries=False)
    if args.k > len(P):
        raise ValueError(f"--k must be <= the number of items ({len(P)}), got {args.k}")
    U, _ = normalize_users(U)
    ac = config.sah_config().alsh
    t = time.perf_counter()
    idx = sa_alsh.SaAlshIndex.build(P, ac.b, ac.K, ac.L, ac.seed, probe_radius=ac.probe_radius, budget=ac.budget,
                                    ranking=ac.ranking)
    build_time = time.perf_counter() - t
    users = U.coords[: args.queries]
    idx.kmips(users[0], args.k)  # untimed: compile
    recall, t_alsh, t_brute = [], [], []
    for u in users:
        t = time.perf_counter()
        got = idx.kmips(u, args.k)
        t_alsh.append(time.perf_counter() - t)
        t = time.perf_counter()
        exact = brute_force_kmips(u, P, args.k)
        t_brute.append(time.perf_counter() - t)
        recall.append(len({i for i, _ in got} & {i for i, _ in exact}) / args.k)
    rows = [{"method": "sa_alsh", "k": args.k, "mean_recall": float(np.mean(recall)),
             "mean_time": float(np.mean(t_alsh)), "build_time": build_time},
            {"method": "brute", "k": args.k, "mean_recall": 1.0, "mean_time": float(np.mean(t_brute)),
             "build_time": 0.0}]
    _emit(rows, args.csv)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rkmips", description="Reverse k-MIPS indexing and benchmarks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic items/users/queries set")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--m", type=int, default=10000)
    p.add_argument("--d", type=int, default=50)
    p.add_argument("--clusters", type=int, default=5)
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("convert", help="convert between .fbin, .fvecs and .csv")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--has-ids", dest="has_ids", action="store_true")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("build", help="build and save an index")
    _data_flags(p, queries=False)
    _index_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("truth", help="brute-force ground truth as JSON")
    _data_flags(p)
    p.add_argument("--k", type=_int_list, default=[10], help="comma-separated k values")
    p.add_argument("--out", required=True, help="output path; must contain {k} for several k")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_truth)

    p = sub.add_parser("query", help="answer queries with a saved index")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--has-ids", dest="has_ids", action="store_true")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_query)

    for name, func, help_text in (("eval", cmd_eval, "score methods against ground truth"),
                                  ("sweep", cmd_sweep, "eval over a parameter grid")):
        p = sub.add_parser(name, help=help_text)
        _data_flags(p)
        _index_flags(p)
        p.add_argument("--truth", required=True, help="truth JSON path; {k} is replaced by each k")
        p.add_argument("--k", type=_int_list, default=[1, 5, 10])
        p.add_argument("--methods", type=lambda s: s.split(","), default=list(METHODS))
        p.add_argument("--trials", type=int, default=1)
        p.add_argument("--csv", default=None, help="write the table here as well")
        p.set_defaults(func=func)
    p.add_argument("--grid-b", dest="grid_b", type=_float_list, default=None)
    p.add_argument("--grid-K", dest="grid_K", type=_int_list, default=None)
    p.add_argument("--grid-N0", dest="grid_N0", type=_int_list, default=None)
    p.add_argument("--grid-k", dest="grid_k", type=_int_list, default=None)

    p = sub.add_parser("kmips", help="standalone approximate k-MIPS against brute force")
    _data_flags(p, queries=False)
    _index_flags(p, probe_radius=DEFAULT_PROBE_RADIUS)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--queries", type=int, default=100, help="number of users used as queries")
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_kmips)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ValueError, OSError, sah.IndexFormatError) as e:
        print(f"rkmips {args.command}: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
