"""Exact reverse k-MIPS: lower-bound arrays and cone blocks, then a norm-sorted scan.

Shares the user-side construction with the hashing index, so the two differ
only in how undecided users are resolved.
"""

from __future__ import annotations

import math

import numpy as np

from . import _search
from .core import ResultSet, VectorSet, as_coords
from .sah import SahConfig, cutoff_slack, UserBlocks, build_user_blocks, sort_items

def exact_decide(u, q, k: int, coords: np.ndarray, norms: np.ndarray, counter: list | None = None) -> bool:
    """Is ``q`` in the top-k of ``u`` over the rows of ``coords`` plus ``q``?

    ``coords`` must be sorted by descending ``norms``.  Items are scanned in
    that order; the scan answers no at the k-th item scoring strictly above
    ``<u, q>`` and yes once no remaining item can.  ``counter[0]`` is
    increased by the number of items inspected.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    u, q = as_coords(u), as_coords(q)
    a, inspected = _search.exact_scan(u, q, k, coords, norms, cutoff_slack(coords.shape[1]))
    if counter is not None:
        counter[0] += int(inspected)
    return bool(a)


class ExactIndex:
    def __init__(self, items: VectorSet, blocks: UserBlocks | None, n_prefix: int, config: SahConfig):
        self.items = items
        self.blocks = blocks
        self.n_prefix = n_prefix
        self.config = config

    @classmethod
    def build(cls, P: VectorSet, U: VectorSet, k_max: int = 50, N0: int = 20, seed: int = 0,
              prefix_factor: int = 2) -> ExactIndex:
        config = SahConfig(k_max=k_max, N0=N0, seed=seed, prefix_factor=prefix_factor)
        if len(P) and len(U) and P.dim != U.dim:
            raise ValueError(f"dimension mismatch: items {P.dim} vs users {U.dim}")
        items = sort_items(P)
        blocks, n_prefix = build_user_blocks(items, U, config)
        return cls(items, blocks, n_prefix, config)

    def decide(self, u, q, k: int, counter: list | None = None) -> bool:
        return exact_decide(u, q, k, self.items.coords, self.items.norms, counter)


def build(P: VectorSet, U: VectorSet, k_max: int = 50, N0: int = 20, seed: int = 0, **kw) -> ExactIndex:
    return ExactIndex.build(P, U, k_max, N0, seed, **kw)


def exact_rkmips(idx: ExactIndex, q, k: int, query_id: int = 0, stats: dict | None = None) -> ResultSet:
    """Exact reverse k-MIPS answer for ``q``; the same cascade as the hashing index."""
    q = as_coords(q)
    if not 1 <= k <= idx.config.k_max:
        raise ValueError(f"k must be in [1, k_max={idx.config.k_max}], got {k}")
    if idx.blocks is None:
        return ResultSet(query_id)
    if q.shape[0] != idx.blocks.users.dim:
        raise ValueError(f"dimension mismatch: query {q.shape[0]} vs index {idx.blocks.users.dim}")
    norm_k = float(idx.items.norms[k - 1]) if k <= len(idx.items) else -math.inf
    accepted, pending = idx.blocks.cascade(q, k, norm_k, stats)
    ans, inspected = _search.exact_scan_many(idx.blocks.users.coords, pending, q, k, idx.items.coords,
                                             idx.items.norms, cutoff_slack(idx.items.dim))
    if stats is not None:
        stats["items_inspected"] = int(inspected)
    rows = np.concatenate([accepted, pending[ans]])
    return ResultSet(query_id, idx.blocks.users.ids[rows])
