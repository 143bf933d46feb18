"""Sign random projection (SimHash) functions and multi-table indexes.

A function set holds ``K * L`` Gaussian projection vectors: ``K`` tables of
``L`` bits each.  Bit ``t`` of table ``j`` is set when the projection onto
vector ``j * L + t`` is non-negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from . import _search
from .core import DenseVector

MAX_BITS = 32
CSR_MAX_BITS = 12  # direct bucket addressing up to 2**12 buckets per table


@dataclass(frozen=True, eq=False)
class SrpFunctionSet:
    seed: int
    tables: int
    bits_per_table: int
    dim: int
    projections: np.ndarray  # (tables * bits_per_table, dim) float32

    def __post_init__(self):
        # signs are taken in float64 so build-time (matrix) and query-time
        # (vector) hashing agree even for projections within float32 rounding of 0
        p64 = self.projections.astype(np.float64)
        p64T = np.ascontiguousarray(p64.T)
        p64.setflags(write=False)
        p64T.setflags(write=False)
        object.__setattr__(self, "_p64", p64)
        object.__setattr__(self, "_p64T", p64T)

    @property
    def n_functions(self) -> int:
        return self.tables * self.bits_per_table


def draw_functions(seed: int, K: int, L: int, dim: int) -> SrpFunctionSet:
    if K < 1 or L < 1 or dim < 1:
        raise ValueError(f"K, L and dim must be >= 1, got K={K} L={L} dim={dim}")
    if L > MAX_BITS:
        raise ValueError(f"at most {MAX_BITS} bits per table, got {L}")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((K * L, dim), dtype=np.float32)
    A.setflags(write=False)
    return SrpFunctionSet(seed, K, L, dim, A)


def signatures(f: SrpFunctionSet, v) -> np.ndarray:
    """K signature codes of one vector."""
    v = v.coords if isinstance(v, DenseVector) else np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != f.dim:
        raise ValueError(f"dimension mismatch: vector {v.shape[0]} vs functions {f.dim}")
    return _search.sign_codes(f._p64T, f.tables, f.bits_per_table, np.ascontiguousarray(v, dtype=np.float64))


def signatures_batch(f: SrpFunctionSet, X: np.ndarray) -> np.ndarray:
    """(n, K) signature codes of the rows of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != f.dim:
        raise ValueError(f"expected (n, {f.dim}) matrix, got shape {X.shape}")
    return _search.sign_codes_rows(f._p64T, f.tables, f.bits_per_table, np.ascontiguousarray(X))


def estimate_collision_probability(f: SrpFunctionSet, delta: float, trials: int, seed: int = 0) -> float:
    """Empirical single-bit collision rate for random pairs at angle ``delta``.

    Trial ``i`` draws a uniformly oriented pair and hashes both with
    projection ``i mod K*L``.
    """
    if not 0.0 <= delta <= math.pi:
        raise ValueError(f"delta must lie in [0, pi], got {delta}")
    if f.dim < 2 and 0.0 < delta < math.pi:
        raise ValueError("angles strictly between 0 and pi need dim >= 2")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((trials, f.dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    z = rng.standard_normal((trials, f.dim))
    z -= np.einsum("ij,ij->i", z, x)[:, None] * x
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    y = math.cos(delta) * x + math.sin(delta) * z
    A = f._p64[np.arange(trials) % f.n_functions]
    hx = np.einsum("ij,ij->i", A, x) >= 0
    hy = np.einsum("ij,ij->i", A, y) >= 0
    return float(np.mean(hx == hy))


@lru_cache(maxsize=None)
def flip_masks(L: int, r: int) -> np.ndarray:
    """XOR masks flipping exactly ``r`` of ``L`` bits, lexicographic by bit index."""
    return np.array([sum(1 << b for b in c) for c in combinations(range(L), r)], dtype=np.int64)


def ring_masks(L: int, probe_radius: int) -> np.ndarray:
    """Masks of every ring up to ``probe_radius``, nearest ring first."""
    return np.concatenate([flip_masks(L, r) for r in range(min(probe_radius, L) + 1)])


@dataclass(frozen=True, eq=False)
class SignatureTableSet:
    """K hash tables over one member list.

    All tables share one sorted key array: ``key = (table << L) | code``.
    ``members[i]`` is the member position stored under ``keys[i]``; within a
    bucket members keep insertion order.
    """

    tables: int
    bits_per_table: int
    ids: np.ndarray  # member ids, insertion order
    keys: np.ndarray
    members: np.ndarray

    def __post_init__(self):
        if self.bits_per_table <= CSR_MAX_BITS:
            edges = np.arange(self.tables * (1 << self.bits_per_table) + 1, dtype=np.int64)
            offsets = np.searchsorted(self.keys, edges).astype(np.int64)
        else:
            offsets = np.zeros(0, dtype=np.int64)
        object.__setattr__(self, "offsets", offsets)

    def __len__(self):
        return self.ids.shape[0]

    def bucket(self, table: int, code: int) -> np.ndarray:
        key = (table << self.bits_per_table) | code
        lo, hi = np.searchsorted(self.keys, [key, key + 1])
        return self.ids[self.members[lo:hi]]

    def buckets(self, table: int) -> dict[int, list[int]]:
        lo, hi = np.searchsorted(self.keys, [table << self.bits_per_table, (table + 1) << self.bits_per_table])
        codes = self.keys[lo:hi] & ((1 << self.bits_per_table) - 1)
        out: dict[int, list[int]] = {}
        for c, m in zip(codes.tolist(), self.members[lo:hi].tolist()):
            out.setdefault(c, []).append(int(self.ids[m]))
        return out

    def probe_codes(self, codes: np.ndarray, probe_radius: int = 0, budget: int | None = None) -> np.ndarray:
        """Member positions from the buckets around ``codes``.

        Rings are visited by Hamming distance, then table, then flipped-bit
        combination; positions are deduplicated keeping first occurrence and
        cut at ``budget`` (``None`` means unlimited).
        """
        n = len(self)
        if budget is not None and budget <= 0 or n == 0:
            return np.zeros(0, dtype=np.int64)
        L = self.bits_per_table
        base = np.arange(self.tables, dtype=np.int64) << L
        parts = []
        found = np.zeros(0, dtype=np.int64)
        for r in range(min(probe_radius, L) + 1):
            qkeys = (base[:, None] | (codes[:, None] ^ flip_masks(L, r)[None, :])).ravel()
            lo = np.searchsorted(self.keys, qkeys, "left")
            hi = np.searchsorted(self.keys, qkeys, "right")
            lens = hi - lo
            total = int(lens.sum())
            if total:
                offs = np.repeat(lo - (np.cumsum(lens) - lens), lens)
                parts.append(self.members[offs + np.arange(total)])
                cat = np.concatenate(parts) if len(parts) > 1 else parts[0]
                uniq, first = np.unique(cat, return_index=True)
                found = uniq[np.argsort(first, kind="stable")]
                parts = [found]
            if budget is not None and found.size >= budget or found.size == n:
                break
        return found if budget is None else found[:budget]


    def ranked(self, codes: np.ndarray, probe_radius: int = 0, budget: int | None = None) -> np.ndarray:
        """Member positions around ``codes``, ranked by number of probed buckets holding them.

        The best ``budget`` are returned; ties at the cut go to the member
        found first (ring, then table, then mask order).
        """
        n = len(self)
        if budget is not None and budget <= 0 or n == 0:
            return np.zeros(0, dtype=np.int64)
        counts = np.zeros(n, dtype=np.int32)
        out = np.empty(n, dtype=np.int64)
        c = _search.ranked_candidates(self.offsets, self.keys, self.members, np.asarray(codes, dtype=np.int64),
                                      self.tables, self.bits_per_table, ring_masks(self.bits_per_table, probe_radius),
                                      -1 if budget is None else int(budget), counts, np.empty(n, dtype=np.int64), out)
        return out[:c].copy()


def build_tables(f: SrpFunctionSet, ids, vectors: np.ndarray) -> SignatureTableSet:
    ids = np.asarray(ids, dtype=np.int64)
    vectors = np.asarray(vectors, dtype=np.float64).reshape(len(ids), f.dim)
    K, L = f.tables, f.bits_per_table
    codes = signatures_batch(f, vectors)  # (n, K)
    keys = (np.arange(K, dtype=np.int64)[None, :] << L) | codes
    flat_keys = keys.T.ravel()  # table-major, then member order
    flat_members = np.tile(np.arange(len(ids), dtype=np.int32), K)
    order = np.argsort(flat_keys, kind="stable")
    return SignatureTableSet(K, L, ids, flat_keys[order], flat_members[order])


def probe_ranked(tables: SignatureTableSet, f: SrpFunctionSet, query, probe_radius: int = 0,
                 budget: int | None = None) -> np.ndarray:
    """Candidate ids for ``query``; see :meth:`SignatureTableSet.ranked`."""
    if probe_radius < 0:
        raise ValueError("probe_radius must be >= 0")
    return tables.ids[tables.ranked(signatures(f, query), probe_radius, budget)]


def probe(tables: SignatureTableSet, f: SrpFunctionSet, query, probe_radius: int = 0, budget: int | None = None) -> np.ndarray:
    """Candidate ids for ``query``; see :meth:`SignatureTableSet.probe_codes`."""
    if probe_radius < 0:
        raise ValueError("probe_radius must be >= 0")
    pos = tables.probe_codes(signatures(f, query), probe_radius, budget)
    return tables.ids[pos]
