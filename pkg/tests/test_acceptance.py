"""Acceptance gate: one test per criterion, each logging a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from conftest import random_instance, record
from rkmips import baseline, cone, sah, srp
from rkmips.bench import synth, truth
from rkmips.bench.metrics import f1
from rkmips.core import VectorSet, brute_force_kmips, brute_force_rkmips, normalize_users
from rkmips.sa_alsh import SaAlshIndex
from rkmips.transform import item_transform, user_transform


@pytest.fixture(scope="module")
def desk():
    """n = m = 10,000, d = 50, five clusters, 100 queries."""
    return synth.gen_synth(10_000, 10_000, 50, clusters=5, seed=0, n_queries=100)


def test_c1_accuracy_at_defaults(desk):
    P, U, Q = desk
    t0 = time.perf_counter()
    norms = np.linalg.norm(P.coords.astype(np.float64), axis=1)
    spread = float(np.percentile(norms, 99) / np.percentile(norms, 1))
    idx = sah.SahIndex.build(P, U)  # b=0.5, K=128, L=8, N0=20, k_max=50
    scores = {}
    for k in (1, 5, 10):
        exact = truth.ground_truth(P, U, Q, k)
        scores[k] = float(np.mean([f1(idx.query(q, k, int(i)), t) for q, i, t in zip(Q.coords, Q.ids, exact)]))
    elapsed = time.perf_counter() - t0
    ok = spread >= 4 and all(s >= 0.90 for s in scores.values())
    record("C1 accuracy", ok, f"mean F1 {scores} (>= 0.90), norm spread {spread:.1f}x, {elapsed:.0f}s")
    assert spread >= 4
    assert all(s >= 0.90 for s in scores.values()), scores


def test_c2_exact_baseline_equivalence():
    mismatches, checked = 0, 0
    for inst in range(20):
        rng = np.random.default_rng(inst)
        n, m, d = int(rng.integers(20, 1001)), int(rng.integers(1, 1001)), int(rng.integers(1, 33))
        P, U = random_instance(100 + inst, n, m, d)
        idx = baseline.ExactIndex.build(P, U, k_max=10, seed=inst)
        Un = normalize_users(U)[0]
        for qi in rng.choice(n, min(n, 10), replace=False):
            q = P.coords[qi] * np.float32(rng.choice([1.0, rng.uniform(0.5, 2.0)]))
            for k in (1, 5, 10):
                mismatches += baseline.exact_rkmips(idx, q, k).user_ids != brute_force_rkmips(q, P, Un, k).user_ids
                checked += 1
    record("C2 exact baseline", mismatches == 0, f"{mismatches} mismatches over {checked} (instance, query, k)")
    assert mismatches == 0


def test_c3_speedup_direction():
    P, U, Q = synth.gen_synth(100_000, 100_000, 50, clusters=5, seed=1, n_queries=10)
    t = time.perf_counter()
    idx = sah.SahIndex.build(P, U)
    sah_build = time.perf_counter() - t
    ex = baseline.ExactIndex(idx.items, idx.blocks, idx.n_prefix, idx.config)
    idx.query(Q.coords[0], 10)
    baseline.exact_rkmips(ex, Q.coords[0], 10)  # compile before timing
    t_sah, t_exact = [], []
    for q in Q.coords:  # interleaved so drift hits both methods alike
        t = time.perf_counter()
        idx.query(q, 10)
        t_sah.append(time.perf_counter() - t)
        t = time.perf_counter()
        baseline.exact_rkmips(ex, q, 10)
        t_exact.append(time.perf_counter() - t)
    a, b = float(np.mean(t_sah)), float(np.mean(t_exact))
    record("C3 speedup", a < b, f"mean query sah {a:.3f}s vs exact {b:.3f}s, ratio {b / a:.2f}x "
                                f"(sah build {sah_build:.0f}s)")
    assert a < b


def test_c4_collision_law():
    f = srp.draw_functions(2024, 128, 8, 16)
    devs = {}
    for name, delta in (("pi/6", math.pi / 6), ("pi/4", math.pi / 4), ("pi/2", math.pi / 2),
                        ("3pi/4", 3 * math.pi / 4)):
        est = srp.estimate_collision_probability(f, delta, 10**5, seed=7)
        devs[name] = abs(est - (1 - delta / math.pi))
    worst = max(devs.values())
    record("C4 collision law", worst <= 0.01, f"max |empirical - (1 - delta/pi)| = {worst:.4f} (<= 0.01)")
    assert worst <= 0.01


def test_c5_transform_identity():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(10**4):
        d = int(rng.integers(1, 65))
        p = (rng.standard_normal(d) * rng.uniform(0.1, 10)).astype(np.float32)
        c = (rng.standard_normal(d) * rng.uniform(0.1, 10)).astype(np.float32)
        u = rng.standard_normal(d).astype(np.float32)
        gap = float(np.linalg.norm(p.astype(np.float64) - c))
        R = gap * float(rng.choice([1.0, rng.uniform(1.0, 3.0)]))
        if R == 0:
            continue
        a, b = item_transform(p, c, R), user_transform(u, R)
        cos = float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
        u64 = u.astype(np.float64)
        expected = float((p.astype(np.float64) - c) @ u64) / (R * np.linalg.norm(u64))
        worst = max(worst, abs(cos - expected))
    record("C5 transform identity", worst <= 1e-6, f"max deviation {worst:.2e} over 10^4 tuples (<= 1e-6)")
    assert worst <= 1e-6


def test_c6_cone_bound_soundness():
    rng = np.random.default_rng(6)
    node_samples = vec_samples = node_bad = vec_bad = cs_bad = 0
    while node_samples < 10**5 or vec_samples < 10**5:
        m, d = int(rng.integers(50, 400)), int(rng.integers(2, 33))
        X = rng.standard_normal((m, d))
        if rng.random() < 0.3:  # a tight bundle stresses near-collinear angles
            X[: m // 2] = X[0] + 1e-4 * rng.standard_normal((m // 2, d))
        U = VectorSet((X / np.linalg.norm(X, axis=1, keepdims=True)).astype(np.float32))
        root = cone.build(U, int(rng.integers(1, 30)), int(rng.integers(10**6)))
        # bounds are stated for exactly unit members
        Xn = U.coords.astype(np.float64)
        Xn /= np.linalg.norm(Xn, axis=1, keepdims=True)
        nodes = list(root.preorder())
        for _ in range(20):
            q = (rng.standard_normal(d) * rng.uniform(0.1, 10)).astype(np.float32)
            q64 = q.astype(np.float64)
            qn = float(np.linalg.norm(q64))
            tol = 1e-12 * qn  # floating-point rounding, not a bound failure
            for node in nodes:
                node_bad += cone.node_upper_bound(node, q) < (Xn[node.rows] @ q64).max() - tol
                node_samples += 1
                if node.is_leaf:
                    phi = cone.query_angle(node.center, q64)
                    for r, th in zip(node.rows, node.theta):
                        vb = cone.vector_upper_bound(float(th), phi, qn)
                        vec_bad += vb < float(Xn[r] @ q64) - tol
                        cs_bad += vb > qn
                        vec_samples += 1
    ok = node_bad == vec_bad == cs_bad == 0
    record("C6 bound soundness", ok, f"{node_bad}/{node_samples} node, {vec_bad}/{vec_samples} vector violations, "
                                     f"{cs_bad} above |q|")
    assert ok


def test_c7_cascade_exactness():
    mismatches, checked, decided = 0, 0, 0
    for inst in range(20):
        rng = np.random.default_rng(700 + inst)
        n, m, d = int(rng.integers(60, 1001)), int(rng.integers(1, 1001)), int(rng.integers(2, 33))
        P, U = random_instance(700 + inst, n, m, d)
        k_max = int(rng.choice([10, 20, 50]))
        if n < k_max:
            k_max = 10
        idx = sah.SahIndex.build(P, U, k_max=k_max, N0=int(rng.choice([5, 20])), K=16, seed=inst)
        decide = baseline.ExactIndex(idx.items, idx.blocks, idx.n_prefix, idx.config).decide
        for qi in rng.choice(n, 10, replace=False):
            q = P.coords[qi] * np.float32(rng.choice([1.0, rng.uniform(0.5, 2.0)]))
            for k in sorted({1, 5, 10, k_max}):
                stats = {}
                got = idx.query(q, k, decide=decide, stats=stats).user_ids
                mismatches += got != brute_force_rkmips(q, P, idx.users, k).user_ids
                decided += stats["decisions"]
                checked += 1
    record("C7 cascade exactness", mismatches == 0,
           f"{mismatches} mismatches over {checked} queries ({decided} oracle decisions)")
    assert mismatches == 0


def test_c8_exhaustive_probing():
    mismatches, checked, decided = 0, 0, 0
    for inst in range(10):
        rng = np.random.default_rng(800 + inst)
        n, m, d = int(rng.integers(60, 501)), int(rng.integers(1, 501)), int(rng.integers(2, 17))
        P, U = random_instance(800 + inst, n, m, d)
        # a short prefix leaves more users to the hashed decision
        idx = sah.SahIndex.build(P, U, k_max=10, L=8, probe_radius=8, budget=math.inf, seed=inst)
        for qi in rng.choice(n, 10, replace=False):
            q = P.coords[qi]
            for k in (1, 5, 10):
                stats = {}
                got = idx.query(q, k, stats=stats).user_ids
                mismatches += got != brute_force_rkmips(q, P, idx.users, k).user_ids
                decided += stats["decisions"]
                checked += 1
    record("C8 hash exhaustion", mismatches == 0,
           f"{mismatches} mismatches over {checked} queries ({decided} hashed decisions)")
    assert mismatches == 0


def test_c9_index_round_trip(tmp_path):
    P, U = random_instance(9, 2000, 1500, 16)
    idx = sah.SahIndex.build(P, U, seed=9)
    path = tmp_path / "index.sah"
    idx.save(path)
    loaded = sah.SahIndex.load(path)
    rng = np.random.default_rng(9)
    diff = 0
    for _ in range(100):
        q = (P.coords[rng.integers(2000)] + rng.normal(0, 0.2, 16)).astype(np.float32)
        k = int(rng.integers(1, 51))
        diff += loaded.query(q, k).user_ids != idx.query(q, k).user_ids
    data = path.read_bytes()
    failures = 0
    for blob in (b"SAHX" + data[4:], data[:4] + (7).to_bytes(4, "little") + data[8:], data[:40]):
        bad = tmp_path / "bad.sah"
        bad.write_bytes(blob)
        try:
            sah.SahIndex.load(bad)
        except sah.IndexFormatError:
            failures += 1
    ok = diff == 0 and failures == 3
    record("C9 round trip", ok, f"{diff}/100 answers differ after reload; {failures}/3 corrupt headers rejected")
    assert ok


def test_c10_standalone_kmips(desk):
    P, U, _ = desk
    idx = SaAlshIndex.build(P)
    users = U.coords[:100]
    idx.kmips(users[0], 10)
    brute_force_kmips(users[0], P, 10)
    recall, t_alsh, t_brute = [], [], []
    for u in users:
        t = time.perf_counter()
        got = idx.kmips(u, 10)
        t_alsh.append(time.perf_counter() - t)
        t = time.perf_counter()
        exact = brute_force_kmips(u, P, 10)
        t_brute.append(time.perf_counter() - t)
        recall.append(len({i for i, _ in got} & {i for i, _ in exact}) / 10)
    r, a, b = float(np.mean(recall)), float(np.mean(t_alsh)), float(np.mean(t_brute))
    ok = r >= 0.9 and a < b
    record("C10 kMIPS", ok, f"recall@10 {r:.4f} (>= 0.9), mean time {a * 1e3:.3f} ms vs brute {b * 1e3:.3f} ms")
    assert ok
