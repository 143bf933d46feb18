"""Norm-band partitioning of items and the shift-invariant transformation.

Items of one band are centred at the band centroid ``c`` and lifted onto the
sphere of radius ``R`` (the band radius) in ``d + 1`` dimensions; users are
scaled to the same sphere with a zero appended.  The cosine between the two
images is ``<p - c, u> / (R * |u|)``, so within a band the angular nearest
neighbour of a user is its maximum inner product item.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import VectorSet, row_norms

RADICAND_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class PartitionGeometry:
    index: int
    max_norm: float  # M_j
    centroid: np.ndarray  # c_j, float64
    radius: float  # R_j
    rows: np.ndarray  # member rows into the norm-sorted item matrix
    member_ids: np.ndarray

    def __len__(self):
        return self.rows.shape[0]


def validate_ratio(b: float) -> float:
    if not 0.0 < b < 1.0:
        raise ValueError(f"interval ratio b must lie in (0, 1), got {b}")
    return float(b)


def band_bounds(norms: np.ndarray, b: float) -> list[tuple[int, int]]:
    """Greedy band boundaries over norms sorted in descending order.

    A band opens at the current largest norm ``M`` and takes every following
    item whose norm exceeds ``b * M``.
    """
    validate_ratio(b)
    n = len(norms)
    if n and np.any(norms[:-1] < norms[1:]):
        raise ValueError("norms must be sorted in descending order")
    out = []
    i = 0
    while i < n:
        M = norms[i]
        if M <= 0:
            raise ValueError("band partitioning needs strictly positive norms")
        # first position whose norm is <= b*M; norms are descending
        j = i + int(np.searchsorted(-norms[i:], -b * M, side="left"))
        j = max(j, i + 1)
        out.append((i, j))
        i = j
    return out


def partition_by_norm(P: VectorSet, b: float) -> list[PartitionGeometry]:
    """Partition a norm-sorted item set into bands ``(b*M_j, M_j]``."""
    if len(P) == 0:
        return []
    norms = P.norms if P.norms is not None else row_norms(P.coords)
    parts = []
    for j, (lo, hi) in enumerate(band_bounds(norms, b), start=1):
        X = P.coords[lo:hi].astype(np.float64)
        c = X.mean(axis=0)
        R = float(np.sqrt(np.einsum("ij,ij->i", X - c, X - c)).max())
        parts.append(PartitionGeometry(j, float(norms[lo]), c, R, np.arange(lo, hi), P.ids[lo:hi].copy()))
    return parts


def item_transform(p, c, R: float) -> np.ndarray:
    """Centre ``p`` at ``c`` and append ``sqrt(R^2 - |p - c|^2)``.

    Works on one vector or on the rows of a matrix.  A radicand that is
    negative by at most the relative tolerance is clamped to zero.
    """
    p = np.asarray(p.coords if hasattr(p, "coords") else p, dtype=np.float64)
    c = np.asarray(c.coords if hasattr(c, "coords") else c, dtype=np.float64)
    single = p.ndim == 1
    X = np.atleast_2d(p) - c
    sq = np.einsum("ij,ij->i", X, X)
    if np.any(np.sqrt(sq) > R * (1 + RADICAND_TOL) + 1e-12):
        worst = float(np.sqrt(sq.max()))
        raise ValueError(f"item lies outside the band radius: |p - c| = {worst} > R = {R}")
    last = np.sqrt(np.maximum(R * R - sq, 0.0))
    out = np.hstack([X, last[:, None]])
    return out[0] if single else out


def user_transform(u, R: float) -> np.ndarray:
    """Scale ``u`` to norm ``R`` and append a zero coordinate."""
    u = np.asarray(u.coords if hasattr(u, "coords") else u, dtype=np.float64)
    nu = math.sqrt(float(u @ u))
    if nu == 0.0:
        raise ValueError("user transform is undefined for a zero-norm vector")
    if R <= 0:
        raise ValueError(f"radius must be positive, got {R}")
    return np.append(u * (R / nu), 0.0)


def transformed_cosine(p, c, u, R: float) -> float:
    """Cosine of the two transformed images (for checks and diagnostics)."""
    a = item_transform(p, c, R)
    b = user_transform(u, R)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

