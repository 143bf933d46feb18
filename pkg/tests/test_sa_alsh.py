import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracle
from conftest import random_instance
from rkmips.core import VectorSet, brute_force_kmips, brute_force_rkmips
from rkmips.sa_alsh import AlshConfig, SaAlshIndex, band_seed


def _norm_items(norms, d=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((len(norms), d))
    X *= (np.asarray(norms, dtype=np.float64) / np.linalg.norm(X, axis=1))[:, None]
    return VectorSet(X.astype(np.float32))


def test_single_item_is_one_exact_band():
    idx = SaAlshIndex.build(VectorSet(np.array([[1.0, 2.0]], np.float32)))
    assert len(idx.bands) == 1 and idx.bands[0].exact


def test_hand_traced_bands():
    idx = SaAlshIndex.build(_norm_items([10, 6, 4.9, 2]), b=0.5, K=8)
    assert [len(b.geometry) for b in idx.bands] == [2, 1, 1]
    assert [b.exact for b in idx.bands] == [False, True, True]
    np.testing.assert_allclose(idx.max_norms, [10, 4.9, 2], rtol=1e-6)


def test_zero_norm_items_get_a_trailing_exact_band():
    idx = SaAlshIndex.build(VectorSet(np.array([[0, 0], [3, 4], [0, 0]], np.float32)))
    assert idx.bands[-1].exact and idx.bands[-1].geometry.max_norm == 0.0
    assert sorted(idx.bands[-1].geometry.member_ids.tolist()) == [0, 2]


def test_rebuild_is_deterministic():
    P, _ = random_instance(0, 300, 1, 6)
    a, b = SaAlshIndex.build(P, seed=3, K=16), SaAlshIndex.build(P, seed=3, K=16)
    for x, y in zip(a.bands, b.bands):
        assert x.exact == y.exact
        if not x.exact:
            assert np.array_equal(x.functions.projections, y.functions.projections)
            assert np.array_equal(x.tables.keys, y.tables.keys)
    assert band_seed(3, 0) != band_seed(3, 1)


def test_band_order_and_coverage():
    P, _ = random_instance(1, 500, 1, 8, spread=(0.01, 10))
    idx = SaAlshIndex.build(P, b=0.5, K=8)
    M = idx.max_norms
    assert np.all(M[:-1] > M[1:])
    ids = np.concatenate([b.geometry.member_ids for b in idx.bands])
    assert sorted(ids.tolist()) == sorted(P.ids.tolist())
    for band in idx.bands:
        nrm = idx.norms[band.geometry.rows]
        assert np.all(nrm <= band.geometry.max_norm)
        assert np.all(nrm > 0.5 * band.geometry.max_norm)


def test_config_validation():
    for kw in ({"b": 1.0}, {"K": 0}, {"L": 0}, {"probe_radius": -1}, {"budget": -3}, {"ranking": "x"}):
        with pytest.raises(ValueError):
            AlshConfig(**kw)


def test_query_above_global_cap_accepted_without_probing():
    P, U = random_instance(2, 200, 1, 5)
    idx = SaAlshIndex.build(P, K=8)
    u = U.coords[0]
    q = u * np.float32(idx.max_norms[0] * 1.01)
    stats = {}
    assert idx.decide_topk(u, q, 1, stats=stats)
    assert stats["bands"] == 0


def test_single_item_decision():
    idx = SaAlshIndex.build(VectorSet(np.array([[1.0, 0.0]], np.float32)))
    assert not idx.decide_topk([1, 0], [0.5, 0], 1)
    assert idx.decide_topk([1, 0], [1.0, 0], 1)  # tie goes to q


def test_decision_agrees_with_oracle():
    P, U = random_instance(3, 1000, 200, 16)
    idx = SaAlshIndex.build(P)
    rng = np.random.default_rng(0)
    agree = 0
    for i in range(200):
        q = P.coords[rng.integers(1000)] * np.float32(rng.uniform(0.8, 1.2))
        truth = len(brute_force_rkmips(q, P, VectorSet(U.coords[i : i + 1]), 10)) == 1
        agree += idx.decide_topk(U.coords[i], q, 10) == truth
    assert agree >= 190


@given(st.integers(0, 10**6), st.integers(1, 12))
def test_no_answer_is_backed_by_k_better_items(seed, k):
    P, U = random_instance(seed, 150, 6, 4)
    idx = SaAlshIndex.build(P, K=8, seed=seed)
    q = P.coords[seed % 150]
    for u in U.coords:
        if not idx.decide_topk(u, q, k):
            uq = oracle.dot(u, q)
            assert sum(oracle.dot(p, u) > uq for p in P.coords) >= k


@given(st.integers(0, 10**6))
def test_band_caps_bound_every_member_score(seed):
    # the early accept relies on <p, u> <= M_j |u| for every later band
    P, U = random_instance(seed, 200, 5, 6, spread=(0.05, 5))
    idx = SaAlshIndex.build(P, K=4)
    for band in idx.bands:
        S = idx.coords[band.geometry.rows].astype(np.float64) @ U.coords.T.astype(np.float64)
        assert np.all(S <= band.geometry.max_norm * (1 + 1e-6))


@given(st.integers(0, 10**6), st.integers(1, 8))
def test_exhaustive_probing_is_exact(seed, k):
    P, U = random_instance(seed, 120, 10, 4)
    idx = SaAlshIndex.build(P, K=4, L=6, probe_radius=6, budget=math.inf, seed=seed)
    rng = np.random.default_rng(seed)
    q = P.coords[rng.integers(120)] * np.float32(rng.uniform(0.5, 1.5))
    truth = brute_force_rkmips(q, P, U, k).user_ids
    got = {int(uid) for u, uid in zip(U.coords, U.ids) if idx.decide_topk(u, q, k)}
    assert got == truth


def test_known_scores_seed_the_pool():
    idx = SaAlshIndex.build(VectorSet(np.array([[0.1, 0.0]], np.float32)))
    # an outside item scoring 0.9 beats q
    assert not idx.decide_topk([1, 0], [0.5, 0], 1, known=np.array([0.9]))
    assert idx.decide_topk([1, 0], [0.5, 0], 2, known=np.array([0.9]))


def test_kmips_aligned_with_largest_item():
    P, _ = random_instance(4, 500, 1, 8)
    idx = SaAlshIndex.build(P)
    top = int(np.argmax(np.linalg.norm(P.coords.astype(np.float64), axis=1)))
    u = P.coords[top] / np.linalg.norm(P.coords[top])
    assert idx.kmips(u, 1)[0][0] == top


def test_kmips_on_empty_index():
    assert SaAlshIndex.build(VectorSet(np.zeros((0, 3)))).kmips([1, 0, 0], 5) == []


def test_kmips_recall():
    P, U = random_instance(5, 2000, 100, 16)
    idx = SaAlshIndex.build(P)
    recall = []
    for u in U.coords:
        got = {i for i, _ in idx.kmips(u, 10)}
        recall.append(len(got & {i for i, _ in brute_force_kmips(u, P, 10)}) / 10)
    assert np.mean(recall) >= 0.9


def test_kmips_scores_are_exact_and_sorted():
    P, U = random_instance(6, 400, 5, 6)
    idx = SaAlshIndex.build(P, K=16)
    for u in U.coords:
        res = idx.kmips(u, 7)
        assert len(res) == 7
        for i, s in res:
            assert s == oracle.dot(P.coords[i], u)
        assert all(a[1] >= b[1] for a, b in zip(res, res[1:]))


def test_zero_user_rejected():
    idx = SaAlshIndex.build(VectorSet(np.ones((3, 2), np.float32)))
    with pytest.raises(ValueError):
        idx.kmips([0, 0], 1)
    with pytest.raises(ValueError):
        idx.decide_topk([1, 0, 0], [1, 0], 1)
