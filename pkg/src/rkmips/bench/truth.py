"""Ground-truth reverse k-MIPS answers from the brute-force oracle."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..core import ResultSet, VectorSet, brute_force_rkmips_batch, normalize_users
from .io import write_results


def ground_truth(P: VectorSet, U: VectorSet, Q: VectorSet, k: int, jobs: int = 1) -> list[ResultSet]:
    """Exact answer for every query; users are normalized first, as the indexes do.

    ``jobs > 1`` splits the queries across worker processes; the answers do
    not depend on the split.
    """
    if len(Q) == 0:
        return []
    for name, V in (("items", P), ("users", U)):
        if len(V) and V.dim != Q.dim:
            raise ValueError(f"dimension mismatch: queries {Q.dim} vs {name} {V.dim}")
    Un, _ = normalize_users(U)
    if jobs <= 1 or len(Q) < 2:
        return brute_force_rkmips_batch(Q, P, Un, k)
    parts = [Q.take(r) for r in np.array_split(np.arange(len(Q)), min(jobs, len(Q)))]
    with ProcessPoolExecutor(jobs) as pool:
        chunks = pool.map(brute_force_rkmips_batch, parts, [P] * len(parts), [Un] * len(parts), [k] * len(parts))
        return [r for chunk in chunks for r in chunk]


def write_truth(path, P: VectorSet, U: VectorSet, Q: VectorSet, k: int, jobs: int = 1) -> list[ResultSet]:
    results = ground_truth(P, U, Q, k, jobs)
    write_results(path, results)
    return results
