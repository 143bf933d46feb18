"""Vector model, basic kernels and the brute-force oracles.

Vectors are stored as float32; every inner product is accumulated in
float64 through :mod:`rkmips._kernels`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import _kernels

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DenseVector:
    id: int
    coords: np.ndarray

    def __post_init__(self):
        c = np.ascontiguousarray(self.coords, dtype=np.float32)
        if c.ndim != 1:
            raise ValueError(f"coords must be 1-d, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError(f"vector {self.id} has non-finite coordinates")
        if self.id < 0:
            raise ValueError(f"vector id must be non-negative, got {self.id}")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def dim(self) -> int:
        return self.coords.shape[0]

    def __len__(self):
        return self.coords.shape[0]

    def __repr__(self):
        return f"DenseVector(id={self.id}, coords={self.coords.tolist()})"


def as_coords(x) -> np.ndarray:
    """float32 contiguous coordinates of a DenseVector or array-like."""
    if isinstance(x, DenseVector):
        return x.coords
    c = np.ascontiguousarray(x, dtype=np.float32)
    if c.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {c.shape}")
    return c


@dataclass(frozen=True, eq=False)
class VectorSet:
    """An ordered, immutable set of vectors sharing one dimension.

    Rows live in one ``(n, dim)`` float32 matrix; ``ids`` gives the stable
    integer id of each row.
    """

    coords: np.ndarray
    ids: np.ndarray = None
    norms: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        c = np.ascontiguousarray(self.coords, dtype=np.float32)
        if c.ndim != 2:
            raise ValueError(f"coords must be (n, dim), got shape {c.shape}")
        if c.shape[1] < 1:
            raise ValueError("dimension must be positive")
        if not np.all(np.isfinite(c)):
            raise ValueError("vector set contains non-finite coordinates")
        ids = np.arange(c.shape[0], dtype=np.int64) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (c.shape[0],):
            raise ValueError(f"ids must have length {c.shape[0]}, got shape {ids.shape}")
        if ids.size and ids.min() < 0:
            raise ValueError("ids must be non-negative")
        if np.unique(ids).size != ids.size:
            raise ValueError("ids must be unique within a vector set")
        norms = self.norms
        if norms is not None:
            norms = np.asarray(norms, dtype=np.float64)
            if norms.shape != ids.shape:
                raise ValueError("norms must align with vectors")
        for a in (c, ids) + ((norms,) if norms is not None else ()):
            a.setflags(write=False)
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "norms", norms)

    @classmethod
    def from_vectors(cls, vectors: Sequence[DenseVector], dim: int | None = None) -> VectorSet:
        if not vectors:
            if dim is None:
                raise ValueError("dim is required for an empty vector set")
            return cls(np.zeros((0, dim), np.float32))
        dims = {v.dim for v in vectors}
        if len(dims) != 1 or (dim is not None and dims != {dim}):
            raise ValueError(f"vectors have mismatched dimensions {sorted(dims)}")
        return cls(np.stack([v.coords for v in vectors]), ids=[v.id for v in vectors])

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def __len__(self):
        return self.coords.shape[0]

    def __getitem__(self, i: int) -> DenseVector:
        return DenseVector(int(self.ids[i]), self.coords[i])

    def __iter__(self) -> Iterator[DenseVector]:
        for i in range(len(self)):
            yield self[i]

    def with_norms(self) -> VectorSet:
        if self.norms is not None:
            return self
        return VectorSet(self.coords, self.ids, row_norms(self.coords))

    def take(self, rows) -> VectorSet:
        rows = np.asarray(rows, dtype=np.int64)
        norms = None if self.norms is None else self.norms[rows]
        return VectorSet(self.coords[rows], self.ids[rows], norms)


@dataclass(frozen=True)
class ResultSet:
    query_id: int
    user_ids: frozenset

    def __init__(self, query_id: int, user_ids: Iterable[int] = ()):
        object.__setattr__(self, "query_id", int(query_id))
        object.__setattr__(self, "user_ids", frozenset(int(u) for u in user_ids))

    def __len__(self):
        return len(self.user_ids)

    def __contains__(self, uid):
        return uid in self.user_ids

    def sorted_ids(self) -> list[int]:
        return sorted(self.user_ids)


def row_norms(X: np.ndarray) -> np.ndarray:
    X64 = np.asarray(X, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", X64, X64))


def _check_dims(a: np.ndarray, b: np.ndarray):
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def inner_product(a, b) -> float:
    a, b = as_coords(a), as_coords(b)
    _check_dims(a, b)
    # per-term products are exact in float64, so this is symmetric bit for bit
    return _kernels.dot(a, b)


def l2_norm(a) -> float:
    a = as_coords(a).astype(np.float64)
    return math.sqrt(float(a @ a))


def angle(a, b) -> float:
    """Angle in [0, pi] between two non-zero vectors."""
    na, nb = l2_norm(a), l2_norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("angle is undefined for a zero-norm vector")
    cos = inner_product(a, b) / (na * nb)
    return math.acos(min(1.0, max(-1.0, cos)))


def angles_to(X: np.ndarray, v: np.ndarray, x_norms: np.ndarray | None = None) -> np.ndarray:
    """Angles between every row of ``X`` and ``v`` (neither zero)."""
    X = np.asarray(X, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if x_norms is None:
        x_norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    cos = (X @ v) / (x_norms * math.sqrt(float(v @ v)))
    return np.arccos(np.clip(cos, -1.0, 1.0))


def normalize_users(U: VectorSet) -> tuple[VectorSet, int]:
    """Scale every user to unit norm; zero-norm users are dropped.

    Returns the normalized set and the number of users dropped.
    """
    norms = row_norms(U.coords)
    keep = norms > 0
    dropped = int((~keep).sum())
    if dropped:
        log.warning("dropped %d zero-norm user vector(s)", dropped)
    coords = U.coords[keep].astype(np.float64) / norms[keep, None]
    out = VectorSet(coords.astype(np.float32), U.ids[keep])
    return out.with_norms(), dropped


def _topk_order(scores: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Rows of the k best scores, descending, ties to the smaller id."""
    n = scores.shape[0]
    if k >= n:
        cand = np.arange(n)
    else:
        kth = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= kth)
    order = np.lexsort((ids[cand], -scores[cand]))
    return cand[order[:k]]


def brute_force_kmips(u, P: VectorSet, k: int) -> list[tuple[int, float]]:
    """Exact top-k items of ``P`` by inner product with ``u``."""
    u = as_coords(u)
    _check_dims(u, P.coords[0] if len(P) else np.zeros(P.dim))
    if k < 1 or k > len(P):
        raise ValueError(f"k must be in [1, {len(P)}], got {k}")
    scores = _kernels.rows_dot(P.coords, u)
    rows = _topk_order(scores, P.ids, k)
    return [(int(P.ids[r]), float(scores[r])) for r in rows]


def kth_item_scores(P: VectorSet, U: VectorSet, k: int, chunk: int = 512) -> np.ndarray:
    """Descending top-``k`` item scores per user, shape ``(m, k)``.

    Columns beyond ``|P|`` are ``-inf``.
    """
    m, n = len(U), len(P)
    out = np.full((m, k), -np.inf)
    if n == 0 or m == 0:
        return out
    if U.dim != P.dim:
        raise ValueError(f"dimension mismatch: users {U.dim} vs items {P.dim}")
    PT = np.ascontiguousarray(P.coords.T)
    kk = min(k, n)
    for s in range(0, m, chunk):
        S = _kernels.cross_dot(U.coords[s : s + chunk], PT)
        if kk < n:
            S = np.partition(S, n - kk, axis=1)[:, n - kk :]
        out[s : s + chunk, :kk] = -np.sort(-S, axis=1)
    return out


def brute_force_rkmips(q, P: VectorSet, U: VectorSet, k: int, query_id: int = 0) -> ResultSet:
    """Every user whose top-k over ``P`` plus ``q`` contains ``q``.

    ``q`` wins ties: it is admitted when ``<u, q>`` equals the k-th best
    item score.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = as_coords(q)
    if len(U) == 0:
        return ResultSet(query_id)
    _check_dims(q, U.coords[0])
    uq = _kernels.rows_dot(U.coords, q)
    if k > len(P):
        return ResultSet(query_id, U.ids)
    kth = kth_item_scores(P, U, k)[:, k - 1]
    return ResultSet(query_id, U.ids[uq >= kth])


def brute_force_rkmips_batch(Q: VectorSet, P: VectorSet, U: VectorSet, k: int) -> list[ResultSet]:
    """``brute_force_rkmips`` for every query of ``Q`` (query id = row id).

    The k-th best item score of each user does not depend on the query, so
    it is computed once.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(U) == 0:
        return [ResultSet(int(i)) for i in Q.ids]
    if Q.dim != U.dim:
        raise ValueError(f"dimension mismatch: queries {Q.dim} vs users {U.dim}")
    if k > len(P):
        return [ResultSet(int(i), U.ids) for i in Q.ids]
    kth = kth_item_scores(P, U, k)[:, k - 1]
    S = _kernels.cross_dot(U.coords, np.ascontiguousarray(Q.coords.T))
    return [ResultSet(int(qid), U.ids[S[:, j] >= kth]) for j, qid in enumerate(Q.ids)]
