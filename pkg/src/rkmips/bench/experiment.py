"""Experiment driver: build each method, run every query, score against truth."""

from __future__ import annotations

import csv
import itertools
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .. import baseline, sah
from ..core import ResultSet, VectorSet, brute_force_rkmips_batch, normalize_users
from ..sa_alsh import DEFAULT_RANKING, RANKINGS
from ..sah import DECISION_PROBE_RADIUS
from .metrics import f1, p95, precision_recall

METHODS = ("sah", "exact", "brute")
CSV_FIELDS = ("method", "k", "mean_f1", "median_f1", "mean_time", "p95_time", "build_time", "trials", "queries")


@dataclass
class RunConfig:
    ks: tuple = (1, 5, 10)
    k_max: int = 50
    b: float = 0.5
    K: int = 128
    L: int = 8
    N0: int = 20
    seed: int = 0
    prefix_factor: int = 2
    probe_radius: int = DECISION_PROBE_RADIUS
    budget: int | float | None = None
    ranking: str = DEFAULT_RANKING
    trials: int = 1
    methods: tuple = METHODS

    def validate(self) -> None:
        """Raise ValueError naming the offending flag."""
        if not 0.0 < self.b < 1.0:
            raise ValueError(f"--b must be in (0, 1), got {self.b}")
        for name in ("k_max", "K", "L", "N0", "prefix_factor", "trials"):
            if getattr(self, name) < 1:
                raise ValueError(f"--{name.replace('_', '-')} must be >= 1, got {getattr(self, name)}")
        if not self.ks:
            raise ValueError("--k needs at least one value")
        for k in self.ks:
            if not 1 <= k <= self.k_max:
                raise ValueError(f"--k values must be in [1, k_max={self.k_max}], got {k}")
        if self.seed < 0:
            raise ValueError(f"--seed must be >= 0, got {self.seed}")
        if self.probe_radius < 0:
            raise ValueError(f"--probe-radius must be >= 0, got {self.probe_radius}")
        if self.budget is not None and self.budget < 0:
            raise ValueError(f"--budget must be >= 0, got {self.budget}")
        if self.ranking not in RANKINGS:
            raise ValueError(f"--ranking must be one of {RANKINGS}, got {self.ranking!r}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"--methods must be drawn from {METHODS}, got {m!r}")

    def sah_config(self, seed: int | None = None) -> sah.SahConfig:
        return sah.SahConfig(k_max=self.k_max, N0=self.N0, b=self.b, K=self.K, L=self.L,
                             seed=self.seed if seed is None else seed, prefix_factor=self.prefix_factor,
                             probe_radius=self.probe_radius, budget=self.budget, ranking=self.ranking)


@dataclass
class EvalReport:
    """Per-query accuracy and wall time of one method at one k, pooled over trials."""

    method: str
    k: int
    exact_size: list = field(default_factory=list)
    returned_size: list = field(default_factory=list)
    precision: list = field(default_factory=list)
    recall: list = field(default_factory=list)
    f1: list = field(default_factory=list)
    time: list = field(default_factory=list)
    build_times: list = field(default_factory=list)

    def add(self, pred: ResultSet, truth, seconds: float) -> None:
        p, r = precision_recall(pred, truth)
        self.exact_size.append(len(truth))
        self.returned_size.append(len(pred))
        self.precision.append(p)
        self.recall.append(r)
        self.f1.append(f1(pred, truth))
        self.time.append(seconds)

    @property
    def mean_f1(self) -> float:
        return float(np.mean(self.f1)) if self.f1 else 1.0

    @property
    def median_f1(self) -> float:
        return float(np.median(self.f1)) if self.f1 else 1.0

    @property
    def mean_time(self) -> float:
        return float(np.mean(self.time)) if self.time else 0.0

    @property
    def build_time(self) -> float:
        return float(np.mean(self.build_times)) if self.build_times else 0.0

    def row(self) -> dict:
        return {"method": self.method, "k": self.k, "mean_f1": self.mean_f1, "median_f1": self.median_f1,
                "mean_time": self.mean_time, "p95_time": p95(self.time), "build_time": self.build_time,
                "trials": len(self.build_times), "queries": len(self.f1)}


def _timed(fn):
    t = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t


def _runner(method: str, P: VectorSet, U: VectorSet, config: RunConfig, seed: int):
    """(query function, build seconds) for one method and trial."""
    if method == "sah":
        c = config.sah_config(seed)
        idx, t = _timed(lambda: sah.SahIndex.build(P, U, c.k_max, c.N0, c.b, c.K, c.L, c.seed,
                                                   prefix_factor=c.prefix_factor, probe_radius=c.probe_radius,
                                                   budget=c.budget, ranking=c.ranking))
        return lambda q, k, qid: idx.query(q, k, qid), t
    if method == "exact":
        idx, t = _timed(lambda: baseline.ExactIndex.build(P, U, config.k_max, config.N0, seed, config.prefix_factor))
        return lambda q, k, qid: baseline.exact_rkmips(idx, q, k, qid), t
    Un, t = _timed(lambda: normalize_users(U)[0])
    return lambda q, k, qid: brute_force_rkmips_batch(VectorSet(q[None, :], np.array([qid])), P, Un, k)[0], t


def run_experiment(config: RunConfig, P: VectorSet, U: VectorSet, Q: VectorSet,
                   truth: dict[int, dict[int, frozenset]]) -> list[EvalReport]:
    """One report per (method, k); trial t uses seed ``config.seed + t``.

    ``truth[k][query_id]`` is the exact answer.  Timing covers the query call
    only.
    """
    config.validate()
    for k in config.ks:
        if k not in truth:
            raise ValueError(f"no ground truth for k={k}")
        missing = [int(i) for i in Q.ids if int(i) not in truth[k]]
        if missing:
            raise ValueError(f"ground truth for k={k} lacks query id {missing[0]}")
    reports = {(m, k): EvalReport(m, k) for m in config.methods for k in config.ks}
    for trial in range(config.trials):
        for method in config.methods:
            query, build_time = _runner(method, P, U, config, config.seed + trial)
            if len(Q):
                query(Q.coords[0], config.ks[0], int(Q.ids[0]))  # untimed: compile and warm caches
            for k in config.ks:
                rep = reports[(method, k)]
                rep.build_times.append(build_time)
                for q, qid in zip(Q.coords, Q.ids):
                    pred, t = _timed(lambda: query(q, k, int(qid)))
                    rep.add(pred, truth[k][int(qid)], t)
    return list(reports.values())


def sweep(config: RunConfig, grid: dict[str, list], P: VectorSet, U: VectorSet, Q: VectorSet,
          truth: dict[int, dict[int, frozenset]]) -> list[dict]:
    """Rows of ``run_experiment`` at every point of the parameter grid, tagged with its values.

    A ``k`` axis runs one k per point.
    """
    names = list(grid)
    known = {f.name for f in fields(RunConfig)} | {"k"}
    for name in names:
        if name not in known:
            raise ValueError(f"cannot sweep unknown parameter {name!r}")
    rows = []
    for values in itertools.product(*(grid[n] for n in names)):
        changes = dict(zip(names, values))
        if "k" in changes:
            changes["ks"] = (changes.pop("k"),)
        point = replace(config, **changes)
        for rep in run_experiment(point, P, U, Q, truth):
            row = rep.row()
            rows.append({**{n: v for n, v in zip(names, values) if n != "k"}, **row})
    return rows


def write_rows(path, rows: list[dict]) -> None:
    if not rows:
        open(path, "w").close()
        return
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
