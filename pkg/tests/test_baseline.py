import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracle
from conftest import random_instance
from rkmips import baseline
from rkmips.core import VectorSet, brute_force_rkmips, normalize_users
from rkmips.sah import sort_items


def _sorted(P):
    S = sort_items(P)
    return S.coords, S.norms


def test_query_above_largest_norm_stops_at_once():
    coords, norms = _sorted(VectorSet(np.array([[3, 0], [0, 1], [1, 1]], np.float32)))
    counter = [0]
    assert baseline.exact_decide([1, 0], [3.5, 0], 1, coords, norms, counter)
    assert counter[0] == 0
    counter = [0]
    assert baseline.exact_decide([1, 0], [3.0, 0], 1, coords, norms, counter)  # tie with the top item
    assert counter[0] <= 1


def test_single_item_no():
    coords, norms = _sorted(VectorSet(np.array([[1, 0]], np.float32)))
    assert not baseline.exact_decide([1, 0], [0.5, 0], 1, coords, norms)


def test_decisions_agree_with_oracle():
    P, U = random_instance(0, 500, 500, 8)
    coords, norms = _sorted(P)
    rng = np.random.default_rng(1)
    for qi in rng.choice(500, 6, replace=False):
        q = P.coords[qi]
        for k in (1, 5, 10):
            truth = oracle.rkmips(q, P.coords, U.coords[:80], U.ids[:80], k)
            got = {i for i in range(80) if baseline.exact_decide(U.coords[i], q, k, coords, norms)}
            assert got == truth


@given(st.integers(0, 10**6), st.integers(1, 10))
def test_exact_rkmips_equals_brute_force(seed, k):
    P, U = random_instance(seed, 120, 60, 3)
    idx = baseline.ExactIndex.build(P, U, k_max=10, N0=4, seed=seed)
    q = P.coords[seed % 120] * np.float32(1 + (seed % 5) / 4)
    assert baseline.exact_rkmips(idx, q, k).user_ids == brute_force_rkmips(q, P, normalize_users(U)[0], k).user_ids


def test_duplicated_query_uses_tie_rule():
    P, U = random_instance(2, 300, 200, 5)
    idx = baseline.ExactIndex.build(P, U)
    for qi in range(10):
        q = P.coords[qi]
        assert baseline.exact_rkmips(idx, q, 1).user_ids == brute_force_rkmips(q, P, idx.blocks.users, 1).user_ids


def test_empty_users_give_empty_result():
    P, _ = random_instance(3, 20, 1, 3)
    idx = baseline.ExactIndex.build(P, VectorSet(np.zeros((0, 3), np.float32)))
    assert len(baseline.exact_rkmips(idx, P.coords[0], 1)) == 0


def test_more_neighbours_than_items():
    P, U = random_instance(4, 3, 10, 2)
    idx = baseline.ExactIndex.build(P, U, k_max=5)
    assert len(baseline.exact_rkmips(idx, P.coords[0], 4)) == 10


def test_k_above_k_max_rejected():
    P, U = random_instance(5, 30, 5, 3)
    idx = baseline.ExactIndex.build(P, U, k_max=4)
    with pytest.raises(ValueError):
        baseline.exact_rkmips(idx, P.coords[0], 5)


def test_inspected_items_counted_in_stats():
    P, U = random_instance(6, 400, 100, 4)
    idx = baseline.ExactIndex.build(P, U)
    stats = {}
    baseline.exact_rkmips(idx, P.coords[0], 10, stats=stats)
    assert stats["items_inspected"] >= 0 and stats["decisions"] >= 0


@given(st.integers(0, 10**6), st.integers(1, 6))
def test_yes_path_inspects_fewer_items_as_score_grows(seed, k):
    rng = np.random.default_rng(seed)
    coords, norms = _sorted(VectorSet((rng.standard_normal((60, 3)) * rng.uniform(0.1, 3, (60, 1))).astype(np.float32)))
    u = rng.standard_normal(3).astype(np.float32)
    u /= np.linalg.norm(u)
    d = rng.standard_normal(3).astype(np.float32)
    if oracle.dot(u, d) < 0:
        d = -d  # <u, q> grows with the scale
    prev_yes = None
    for s in np.linspace(0.1, 10, 25, dtype=np.float32):
        c = [0]
        yes = baseline.exact_decide(u, d * s, k, coords, norms, c)
        if yes:
            # a yes scans up to the norm cutoff, which moves forward as <u, q> grows
            assert prev_yes is None or c[0] <= prev_yes
            prev_yes = c[0]


@given(st.integers(0, 10**6), st.integers(1, 6))
def test_no_path_inspects_more_items_as_score_grows(seed, k):
    rng = np.random.default_rng(seed)
    coords, norms = _sorted(VectorSet((rng.standard_normal((60, 3)) * rng.uniform(0.1, 3, (60, 1))).astype(np.float32)))
    u = rng.standard_normal(3).astype(np.float32)
    u /= np.linalg.norm(u)
    d = rng.standard_normal(3).astype(np.float32)
    if oracle.dot(u, d) < 0:
        d = -d  # <u, q> grows with the scale
    prev_no = 0
    for s in np.linspace(0.1, 10, 25, dtype=np.float32):
        c = [0]
        if not baseline.exact_decide(u, d * s, k, coords, norms, c):
            # fewer items beat a larger score, so the k-th one is found later
            assert c[0] >= prev_no
            prev_no = c[0]


def test_inspection_count_is_not_monotone_across_answers():
    coords, norms = _sorted(VectorSet(np.array([[2, 0], [1.2, 1.4], [0, 1.8], [0, 1.7], [1.1, 0]], np.float32)))
    low, high = [0], [0]
    assert not baseline.exact_decide([1, 0], [0.5, 0], 2, coords, norms, low)
    assert baseline.exact_decide([1, 0], [1.5, 0], 2, coords, norms, high)
    assert (low[0], high[0]) == (2, 4)
