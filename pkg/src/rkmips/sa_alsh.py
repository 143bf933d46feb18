"""SA-ALSH: norm-banded, shift-transformed SimHash index for (R)kMIPS.

Items are sorted by norm and cut into bands ``(b*M_j, M_j]``.  Each band is
centred at its centroid, lifted onto a sphere and indexed by ``K`` SimHash
tables.  A query sweeps bands in descending ``M_j``; hashing only selects
candidates, which are then re-scored exactly against the original vectors.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _search
from .core import VectorSet, as_coords, row_norms
from .srp import SignatureTableSet, SrpFunctionSet, build_tables, draw_functions, flip_masks, ring_masks
from .transform import PartitionGeometry, item_transform, partition_by_norm, user_transform, validate_ratio

log = logging.getLogger(__name__)

DEFAULT_BUDGET_BASE = 1000
DEFAULT_PROBE_RADIUS = 1
RANKINGS = ("count", "ring")
DEFAULT_RANKING = "count"


@dataclass(frozen=True, eq=False)
class Band:
    geometry: PartitionGeometry
    functions: SrpFunctionSet | None = None
    tables: SignatureTableSet | None = None

    @property
    def exact(self) -> bool:
        """Bands with zero radius (or zero norm) are scanned, not hashed."""
        return self.tables is None

    @property
    def start(self) -> int:
        return int(self.geometry.rows[0]) if len(self.geometry) else 0


def band_seed(seed: int, j: int) -> int:
    return int(np.random.SeedSequence([seed, j]).generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class AlshConfig:
    b: float = 0.5
    K: int = 128
    L: int = 8
    seed: int = 0
    probe_radius: int = DEFAULT_PROBE_RADIUS
    budget: int | float | None = None  # None: DEFAULT_BUDGET_BASE + k per band; math.inf: unlimited
    ranking: str = DEFAULT_RANKING  # "count": collision count; "ring": probe order

    def __post_init__(self):
        validate_ratio(self.b)
        if self.K < 1 or self.L < 1:
            raise ValueError(f"K and L must be >= 1, got K={self.K} L={self.L}")
        if self.probe_radius < 0:
            raise ValueError("probe_radius must be >= 0")
        if self.budget is not None and not (self.budget == math.inf or (self.budget >= 0 and float(self.budget).is_integer())):
            raise ValueError(f"budget must be a non-negative integer, None or inf, got {self.budget}")
        if self.ranking not in RANKINGS:
            raise ValueError(f"ranking must be one of {RANKINGS}, got {self.ranking!r}")

    def probe_budget(self, k: int) -> int | None:
        if self.budget is None:
            return DEFAULT_BUDGET_BASE + k
        if self.budget == math.inf:
            return None
        return int(self.budget)


class FlatBands:
    """Band geometry and hash tables laid out as flat arrays for the compiled loops."""

    def __init__(self, bands: list[Band], dim: int, K: int, L: int):
        nb = len(bands)
        self.start = np.array([bd.start for bd in bands], dtype=np.int64)
        self.size = np.array([len(bd.geometry) for bd in bands], dtype=np.int64)
        self.max_norm = np.array([bd.geometry.max_norm for bd in bands], dtype=np.float64)
        self.radius = np.array([bd.geometry.radius for bd in bands], dtype=np.float64)
        self.hashed = np.array([not bd.exact for bd in bands], dtype=np.bool_)
        self.proj = np.zeros((nb, dim + 1, K * L))  # transposed projections
        n_off = max([bd.tables.offsets.shape[0] for bd in bands if not bd.exact], default=0)
        self.offsets = np.zeros((nb, n_off), dtype=np.int64)
        self.kstart = np.zeros(nb, dtype=np.int64)
        keys, members, pos = [], [], 0
        for j, bd in enumerate(bands):
            self.kstart[j] = pos
            if bd.exact:
                continue
            self.proj[j] = bd.functions._p64T
            self.offsets[j, : bd.tables.offsets.shape[0]] = bd.tables.offsets
            keys.append(bd.tables.keys)
            members.append(bd.tables.members)
            pos += bd.tables.keys.shape[0]
        self.keys = np.concatenate(keys) if keys else np.zeros(0, dtype=np.int64)
        self.members = np.concatenate(members) if members else np.zeros(0, dtype=np.int32)
        self.K, self.L = K, L

    def table_args(self):
        return (self.start, self.size, self.max_norm, self.hashed, self.offsets, self.kstart, self.keys,
                self.members, self.K, self.L)

    def user_codes(self, users: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """(m, bands, K) signatures of users; zero rows for unhashed bands."""
        dtype = np.uint16 if self.L <= 16 else np.int64
        out = np.empty((users.shape[0], len(self.start), self.K), dtype=dtype)
        for s in range(0, users.shape[0], chunk):
            out[s : s + chunk] = _search.user_band_codes(users[s : s + chunk], self.hashed, self.radius, self.proj,
                                                         self.K, self.L)
        return out


class SaAlshIndex:
    """Items sorted by descending norm, banded and hashed per band."""

    def __init__(self, coords: np.ndarray, ids: np.ndarray, norms: np.ndarray, bands: list[Band], config: AlshConfig):
        self.coords = coords
        self.ids = ids
        self.norms = norms
        self.bands = bands
        self.config = config
        self.flat = FlatBands(bands, coords.shape[1], config.K, config.L)
        self.masks = ring_masks(config.L, config.probe_radius)
        rings = [len(flip_masks(config.L, r)) for r in range(min(config.probe_radius, config.L) + 1)]
        self.ring_ptr = np.concatenate([[0], np.cumsum(rings)]).astype(np.int64)
        self.by_count = config.ranking == "count"

    @classmethod
    def build(cls, P: VectorSet, b: float = 0.5, K: int = 128, L: int = 8, seed: int = 0,
              probe_radius: int = DEFAULT_PROBE_RADIUS, budget: int | float | None = None,
              ranking: str = DEFAULT_RANKING) -> SaAlshIndex:
        config = AlshConfig(b, K, L, seed, probe_radius, budget, ranking)
        norms = P.norms if P.norms is not None else row_norms(P.coords)
        order = np.argsort(-norms, kind="stable")
        sorted_P = VectorSet(P.coords[order], P.ids[order], norms[order])
        return cls.from_sorted(sorted_P, config)

    @classmethod
    def from_sorted(cls, P: VectorSet, config: AlshConfig) -> SaAlshIndex:
        """Build over items already sorted by descending norm."""
        norms = P.norms if P.norms is not None else row_norms(P.coords)
        n_pos = int(np.count_nonzero(norms > 0))
        positive = VectorSet(P.coords[:n_pos], P.ids[:n_pos], norms[:n_pos])
        bands = []
        for g in partition_by_norm(positive, config.b):
            if g.radius == 0.0:
                bands.append(Band(g))
                continue
            X = item_transform(positive.coords[g.rows], g.centroid, g.radius)
            f = draw_functions(band_seed(config.seed, g.index), config.K, config.L, P.dim + 1)
            bands.append(Band(g, f, build_tables(f, g.member_ids, X)))
        if n_pos < len(P):
            rows = np.arange(n_pos, len(P))
            g = PartitionGeometry(len(bands) + 1, 0.0, np.zeros(P.dim), 0.0, rows, P.ids[rows].copy())
            bands.append(Band(g))
        log.debug("sa-alsh: %d items in %d bands", len(P), len(bands))
        return cls(P.coords, P.ids, norms, bands, config)

    def __len__(self):
        return self.ids.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def max_norms(self) -> np.ndarray:
        return self.flat.max_norm

    def _budget(self, k: int) -> int:
        b = self.config.probe_budget(k)
        return -1 if b is None else b

    def candidates(self, j: int, u, k: int) -> np.ndarray:
        """Rows (into the sorted item matrix) proposed by band ``j`` for ``u``."""
        u = self._check(u)
        n = max(1, int(self.flat.size.max(initial=0)))
        counts = np.zeros(n, dtype=np.int32)
        out = np.empty(n, dtype=np.int64)
        f = self.flat
        codes = f.user_codes(u[None, :])[0, j]
        c = _search.band_candidates(codes, j, f.start, f.size, f.hashed, f.offsets, f.kstart, f.keys, f.members,
                                    f.K, f.L, self.masks, self.ring_ptr, self.by_count, self._budget(k),
                                    counts, np.empty(n, dtype=np.int64), out)
        return out[:c].copy()

    def _check(self, u):
        u = as_coords(u)
        if u.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: vector {u.shape[0]} vs index {self.dim}")
        if not np.any(u):
            raise ValueError("SA-ALSH probing is undefined for a zero-norm user")
        return u

    def decide_topk(self, u, q, k: int, known: np.ndarray | None = None, stats: dict | None = None) -> bool:
        """Is ``q`` in the (approximate) top-k of ``u`` over the items plus ``q``?

        ``known`` holds exact scores of items that live outside this index
        (the high-norm prefix kept by the RkMIPS index); they seed the
        candidate pool.  A ``False`` answer is always backed by ``k``
        verified items scoring strictly above ``<u, q>``.
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        u = self._check(u)
        q = as_coords(q)
        if q.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: vector {q.shape[0]} vs index {self.dim}")
        known = np.full(0, -np.inf) if known is None else np.asarray(known, dtype=np.float64)
        known = np.sort(known)[::-1][:k].copy()
        users = u[None, :]
        return self.decide_many(users, self.flat.user_codes(users), np.zeros(1, dtype=np.int64), q, k,
                                known[None, :], stats)[0]

    def decide_many(self, users: np.ndarray, codes: np.ndarray, rows: np.ndarray, q: np.ndarray, k: int,
                    known: np.ndarray, stats: dict | None = None) -> np.ndarray:
        """Decisions for ``users[rows]``.

        ``codes`` holds the users' band signatures (:meth:`FlatBands.user_codes`)
        and ``known[i]`` seeds the pool of user ``i``.
        """
        if known.shape[1] < k:
            pad = np.full((known.shape[0], k - known.shape[1]), -np.inf)
            known = np.hstack([known, pad])
        ans, probed, seen = _search.alsh_decide_many(users, codes, rows, q, k, known, self.coords,
                                                     *self.flat.table_args(), self.masks, self.ring_ptr,
                                                     self.by_count, self._budget(k))
        if stats is not None:
            stats["bands"] = stats.get("bands", 0) + int(probed)
            stats["candidates"] = stats.get("candidates", 0) + int(seen)
        return ans

    def kmips(self, u, k: int, stats: dict | None = None) -> list[tuple[int, float]]:
        """Approximate top-k items of ``u``, descending, ties to smaller id."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        u = self._check(u)
        f = self.flat
        rows, scores, probed, seen = _search.alsh_kmips(u, k, self.coords, self.ids, f.start, f.size, f.max_norm,
                                                         f.hashed, f.radius, f.proj, f.offsets, f.kstart, f.keys,
                                                         f.members, f.K, f.L, self.masks, self.ring_ptr, self.by_count,
                                                         self._budget(k))
        if stats is not None:
            stats["bands"] = stats.get("bands", 0) + int(probed)
            stats["candidates"] = stats.get("candidates", 0) + int(seen)
        keep = rows >= 0
        rows, scores = rows[keep], scores[keep]
        ids = self.ids[rows]
        order = np.lexsort((ids, -scores))
        return [(int(ids[i]), float(scores[i])) for i in order]


def build(P: VectorSet, b: float = 0.5, K: int = 128, L: int = 8, seed: int = 0, **kw) -> SaAlshIndex:
    return SaAlshIndex.build(P, b, K, L, seed, **kw)
