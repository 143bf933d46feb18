"""Synthetic item/user/query sets with clustered directions and spread norms."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..core import VectorSet, normalize_users
from .io import write_fbin

NORM_SPREAD = 5.0  # largest / smallest cluster scale
SPECTRUM_DECAY = 1.0  # per-axis noise std falls off as (i + 1) ** -decay


def _clustered(rng, count: int, centers: np.ndarray, scales: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Cluster centre plus correlated Gaussian noise (``noise`` is a d x d factor)."""
    d = centers.shape[1]
    label = rng.integers(centers.shape[0], size=count)
    X = centers[label] + rng.standard_normal((count, d)) @ noise
    return (X * scales[label, None]).astype(np.float32)


def gen_synth(n: int, m: int, d: int, clusters: int = 5, seed: int = 0, n_queries: int = 100,
              noise: float = 0.5) -> tuple[VectorSet, VectorSet, VectorSet]:
    """Items, unit users and queries (items sampled without replacement).

    Cluster ``c`` has a random unit direction and a scale; scales are spread
    geometrically over ``[1, NORM_SPREAD]`` so the item norms span several
    bands.  The within-cluster noise has a decaying spectrum along randomly
    rotated axes (like factorization embeddings) and total scale ``noise``.
    Users share the cluster directions and the noise model.
    """
    for name, val in (("n", n), ("m", m), ("d", d), ("clusters", clusters), ("n_queries", n_queries)):
        if val < 1:
            raise ValueError(f"{name} must be >= 1, got {val}")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((clusters, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    scales = np.geomspace(1.0, NORM_SPREAD, clusters) if clusters > 1 else np.ones(1)
    axes, _ = np.linalg.qr(rng.standard_normal((d, d)))
    spectrum = (np.arange(d) + 1.0) ** -SPECTRUM_DECAY
    factor = (noise * spectrum / np.linalg.norm(spectrum))[:, None] * axes.T
    items = _clustered(rng, n, centers, scales, factor)
    users = _clustered(rng, m, centers, np.ones(clusters), factor)
    rows = rng.choice(n, size=min(n_queries, n), replace=False)
    U, _ = normalize_users(VectorSet(users))
    return VectorSet(items), U, VectorSet(items[rows])


def write_synth(out_dir, n: int, m: int, d: int, clusters: int = 5, seed: int = 0, n_queries: int = 100) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    P, U, Q = gen_synth(n, m, d, clusters, seed, n_queries)
    paths = {"items": out / "items.fbin", "users": out / "users.fbin", "queries": out / "queries.fbin"}
    for key, V in zip(paths, (P, U, Q)):
        write_fbin(paths[key], V.coords)
    return paths
