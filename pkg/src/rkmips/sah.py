"""SAH: reverse k-MIPS with lower-bound arrays, cone blocks and SA-ALSH.

Build keeps the ``prefix_factor * k_max`` largest-norm items aside as ``P'``
and stores, per user, its exact top-``k_max`` scores over them.  The rest of
the items go into an SA-ALSH index.  Users are normalized and grouped into
the leaves of a cone tree; every leaf keeps the element-wise minimum of its
users' lower-bound arrays.

A query walks the filter cascade block by block: cone bound against the
block minimum, per-user angular bound, exact ``<u, q>`` against the user's
bound, the ``|p_k|`` fast accept, and only then a hashed decision.
"""

from __future__ import annotations

import io
import logging
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels, cone
from .core import ResultSet, VectorSet, as_coords, kth_item_scores, normalize_users, row_norms
from .sa_alsh import DEFAULT_RANKING, RANKINGS, AlshConfig, Band, SaAlshIndex
from .srp import SignatureTableSet, SrpFunctionSet
from .transform import PartitionGeometry, validate_ratio

log = logging.getLogger(__name__)

MAGIC = b"SAH1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIQQdIIIIQIIQ")
_U64_MAX = 2**64 - 1

# a decision only needs k items beating q, so the exact-bucket probe suffices;
# standalone k-MIPS keeps the wider sa_alsh default
DECISION_PROBE_RADIUS = 0

# angular bounds lose up to ~1.5e-8 rad to arccos rounding near collinear
# directions; prunes need the bound below the lower bound by this times |q|
BOUND_SLACK = 1e-7
_EPS = 2.0**-52


def cutoff_slack(dim: int) -> float:
    """Factor covering summation error in ``<u, p> <= |u| |p|`` (about dim ulps)."""
    return 1.0 + (2 * dim + 8) * _EPS

Decider = Callable[[np.ndarray, np.ndarray, int], bool]


class IndexFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SahConfig:
    k_max: int = 50
    N0: int = 20
    b: float = 0.5
    K: int = 128
    L: int = 8
    seed: int = 0
    prefix_factor: int = 2
    probe_radius: int = DECISION_PROBE_RADIUS
    budget: int | float | None = None
    ranking: str = DEFAULT_RANKING

    def __post_init__(self):
        validate_ratio(self.b)
        for name in ("k_max", "N0", "K", "L", "prefix_factor"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def alsh(self) -> AlshConfig:
        return AlshConfig(self.b, self.K, self.L, self.seed, self.probe_radius, self.budget, self.ranking)


class UserBlocks:
    """Normalized users, their lower bounds and cone-tree blocks.

    Shared by the hashing index and the exact baseline.
    """

    def __init__(self, users: VectorSet, user_lb: np.ndarray, tree: cone.ConeNode):
        self.users = users
        self.user_lb = user_lb
        self.tree = tree
        leaves = tree.leaves()
        sizes = np.array([len(leaf) for leaf in leaves], dtype=np.int64)
        self.block_start = np.concatenate([[0], np.cumsum(sizes)])
        self.rows = np.concatenate([leaf.rows for leaf in leaves]) if leaves else np.zeros(0, np.int64)
        self.theta = np.concatenate([leaf.theta for leaf in leaves]) if leaves else np.zeros(0)
        self.block_of = np.repeat(np.arange(len(leaves)), sizes)
        centers = np.array([leaf.center for leaf in leaves]).reshape(len(leaves), users.dim)
        cn = np.sqrt(np.einsum("ij,ij->i", centers, centers))
        self.center_dirs = np.divide(centers, cn[:, None], out=np.zeros_like(centers), where=cn[:, None] > 0)
        self.degenerate = cn == 0
        self.omega = np.array([leaf.omega for leaf in leaves])
        # float32 unit vectors are unit only to ~1e-7; bounds scale by the stored norms
        self.user_norms = users.norms if users.norms is not None else row_norms(users.coords)
        self.block_norm = (np.maximum.reduceat(self.user_norms[self.rows], self.block_start[:-1])
                           if leaves else np.zeros(0))
        self.block_lb = np.minimum.reduceat(user_lb[self.rows], self.block_start[:-1], axis=0) if leaves else user_lb[:0]
        self.leaves = leaves

    @property
    def n_blocks(self) -> int:
        return len(self.leaves)

    def cascade(self, q: np.ndarray, k: int, item_norm_k: float, stats: dict | None = None):
        """Apply the bound filters for one query.

        Returns ``(accepted_rows, pending_rows)``: users certified without a
        decision, and users that still need one.
        """
        lb_col = k - 1
        qn = math.sqrt(float(q.astype(np.float64) @ q))
        slack = BOUND_SLACK * qn
        if qn > 0:
            cos_b = self.center_dirs @ (q / qn)
            phi_b = np.where(self.degenerate, 0.0, np.arccos(np.clip(cos_b, -1.0, 1.0)))
            ub_b = qn * self.block_norm * np.cos(np.maximum(phi_b - self.omega, 0.0))
        else:
            phi_b = np.zeros(self.n_blocks)
            ub_b = np.zeros(self.n_blocks)
        keep_b = ~(ub_b < self.block_lb[:, lb_col] - slack)
        kept = np.flatnonzero(keep_b[self.block_of])
        rows = self.rows[kept]
        lbk = self.user_lb[rows, lb_col]
        ub_u = qn * self.user_norms[rows] * np.cos(np.abs(phi_b[self.block_of[kept]] - self.theta[kept]))
        s1 = ~(ub_u < lbk - slack)
        rows, lbk = rows[s1], lbk[s1]
        uq = _kernels.rows_dot_subset(self.users.coords, rows, q)
        s2 = ~(uq < lbk)
        rows, uq = rows[s2], uq[s2]
        # items from rank k on score at most |u| |p_k|, up to summation rounding
        fast = uq >= item_norm_k * self.user_norms[rows] * cutoff_slack(self.users.dim)
        if stats is not None:
            stats["blocks_pruned"] = int((~keep_b).sum())
            stats["users_bound_pruned"] = int((~s1).sum())
            stats["users_ip_pruned"] = int((~s2).sum())
            stats["fast_accept"] = int(fast.sum())
            stats["decisions"] = int((~fast).sum())
        return rows[fast], rows[~fast]


def build_user_blocks(P_sorted: VectorSet, U: VectorSet, config: SahConfig) -> tuple[UserBlocks | None, int]:
    """User-side structures; ``None`` when no user has a non-zero norm."""
    users, _ = normalize_users(U)
    if len(users) == 0:
        return None, 0
    n_prefix = min(config.prefix_factor * config.k_max, len(P_sorted))
    user_lb = kth_item_scores(P_sorted.take(np.arange(n_prefix)), users, config.k_max)
    tree = cone.build(users, config.N0, config.seed)
    return UserBlocks(users, user_lb, tree), n_prefix


def sort_items(P: VectorSet) -> VectorSet:
    norms = P.norms if P.norms is not None else row_norms(P.coords)
    order = np.argsort(-norms, kind="stable")
    return VectorSet(P.coords[order], P.ids[order], norms[order])


class SahIndex:
    def __init__(self, items: VectorSet, blocks: UserBlocks, alsh: SaAlshIndex, n_prefix: int, config: SahConfig):
        self.items = items
        self.blocks = blocks
        self.alsh = alsh
        self.n_prefix = n_prefix
        self.config = config
        # signatures of the users do not depend on the query
        self.user_codes = alsh.flat.user_codes(blocks.users.coords)

    @classmethod
    def build(cls, P: VectorSet, U: VectorSet, k_max: int = 50, N0: int = 20, b: float = 0.5, K: int = 128,
              L: int = 8, seed: int = 0, **kw) -> SahIndex:
        config = SahConfig(k_max, N0, b, K, L, seed, **kw)
        if len(P) < config.k_max:
            raise ValueError(f"need at least k_max={config.k_max} items, got {len(P)}")
        if P.dim != U.dim:
            raise ValueError(f"dimension mismatch: items {P.dim} vs users {U.dim}")
        items = sort_items(P)
        blocks, n_prefix = build_user_blocks(items, U, config)
        if blocks is None:
            raise ValueError("user set is empty (after dropping zero-norm users)")
        alsh = SaAlshIndex.from_sorted(items.take(np.arange(n_prefix, len(items))), config.alsh)
        log.info("built sah index: n=%d m=%d bands=%d blocks=%d", len(items), len(blocks.users),
                 len(alsh.bands), blocks.n_blocks)
        return cls(items, blocks, alsh, n_prefix, config)

    @property
    def dim(self) -> int:
        return self.items.dim

    @property
    def users(self) -> VectorSet:
        return self.blocks.users

    def _query_vector(self, q, k: int) -> np.ndarray:
        q = as_coords(q)
        if q.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: query {q.shape[0]} vs index {self.dim}")
        if not 1 <= k <= self.config.k_max:
            raise ValueError(f"k must be in [1, k_max={self.config.k_max}], got {k}")
        return q

    def query(self, q, k: int, query_id: int = 0, decide: Decider | None = None, stats: dict | None = None) -> ResultSet:
        """Users whose top-k over the items plus ``q`` (approximately) contains ``q``.

        ``decide(u, q, k)`` replaces the hashed decision when given, e.g. with
        an exact oracle.
        """
        q = self._query_vector(q, k)
        accepted, pending = self.blocks.cascade(q, k, float(self.items.norms[k - 1]), stats)
        U = self.users.coords
        if decide is None:
            yes = pending[self.alsh.decide_many(U, self.user_codes, pending, q, k, self.blocks.user_lb, stats)]
        else:
            yes = np.array([r for r in pending.tolist() if decide(U[r], q, k)], dtype=np.int64)
        rows = np.concatenate([accepted, yes])
        return ResultSet(query_id, self.users.ids[rows])

    def save(self, path) -> None:
        save(self, path)

    @classmethod
    def load(cls, path) -> SahIndex:
        return load(path)


def build(P: VectorSet, U: VectorSet, k_max: int = 50, N0: int = 20, b: float = 0.5, K: int = 128, L: int = 8,
          seed: int = 0, **kw) -> SahIndex:
    return SahIndex.build(P, U, k_max, N0, b, K, L, seed, **kw)


# ---------------------------------------------------------------------------
# on-disk format


# budget field: 0 = default, 2**64 - 1 = unlimited, otherwise budget + 1
def _encode_budget(budget) -> int:
    if budget is None:
        return 0
    if budget == math.inf:
        return _U64_MAX
    return int(budget) + 1


def _decode_budget(raw: int):
    if raw == 0:
        return None
    if raw == _U64_MAX:
        return math.inf
    return raw - 1


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def pack(self, fmt: str, *values):
        self.buf.write(struct.pack("<" + fmt, *values))

    def array(self, a: np.ndarray, dtype):
        self.buf.write(np.ascontiguousarray(a, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())

    def getvalue(self) -> bytes:
        return self.buf.getvalue()


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = memoryview(data)
        self.pos = 0
        self.what = what

    def _take(self, nbytes: int) -> memoryview:
        if nbytes < 0 or self.pos + nbytes > len(self.data):
            raise IndexFormatError(f"truncated index file: {self.what} needs {nbytes} more bytes at offset {self.pos}")
        out = self.data[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return out

    def unpack(self, fmt: str):
        s = struct.Struct("<" + fmt)
        vals = s.unpack(self._take(s.size))
        return vals[0] if len(vals) == 1 else vals

    def array(self, dtype, count: int, shape=None) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        a = np.frombuffer(self._take(dt.itemsize * count), dtype=dt).astype(np.dtype(dtype), copy=True)
        return a if shape is None else a.reshape(shape)

    def section(self, what: str) -> _Reader:
        size = self.unpack("Q")
        return _Reader(bytes(self._take(size)), what)

    def done(self):
        if self.pos != len(self.data):
            raise IndexFormatError(f"{self.what}: {len(self.data) - self.pos} unexpected trailing bytes")


def _write_section(out, w: _Writer):
    data = w.getvalue()
    out.write(struct.pack("<Q", len(data)))
    out.write(data)


def to_bytes(idx: SahIndex) -> bytes:
    c = idx.config
    d, n, m = idx.dim, len(idx.items), len(idx.users)
    out = io.BytesIO()
    out.write(_HEADER.pack(MAGIC, FORMAT_VERSION, d, n, m, c.b, c.K, c.L, c.N0, c.k_max, c.seed,
                           c.prefix_factor, c.probe_radius, _encode_budget(c.budget)))

    w = _Writer()
    w.array(idx.items.ids, np.int64)
    w.array(idx.items.coords, np.float32)
    w.array(idx.items.norms, np.float64)
    _write_section(out, w)

    w = _Writer()
    w.array(idx.users.ids, np.int64)
    w.array(idx.users.coords, np.float32)
    w.array(idx.users.norms, np.float64)
    _write_section(out, w)

    w = _Writer()
    w.pack("Q", idx.n_prefix)
    w.array(idx.blocks.user_lb, np.float64)
    _write_section(out, w)

    w = _Writer()
    w.pack("BI", RANKINGS.index(c.ranking), len(idx.alsh.bands))
    for band in idx.alsh.bands:
        g = band.geometry
        lo = band.start
        w.pack("IBddQQ", g.index, int(band.exact), g.max_norm, g.radius, lo, lo + len(g))
        w.array(g.centroid, np.float64)
        if not band.exact:
            f, t = band.functions, band.tables
            w.pack("Q", f.seed)
            w.array(f.projections, np.float32)
            w.array(t.keys, np.int64)
            w.array(t.members, np.int32)
    _write_section(out, w)

    w = _Writer()
    nodes = list(idx.blocks.tree.preorder())
    w.pack("Q", len(nodes))
    for node in nodes:
        w.pack("BQd", int(node.is_leaf), len(node), node.omega)
        w.array(node.center, np.float64)
        w.array(node.rows, np.int64)
        if node.is_leaf:
            w.array(node.theta, np.float64)
    _write_section(out, w)
    return out.getvalue()


def from_bytes(data: bytes) -> SahIndex:
    try:
        return _from_bytes(data)
    except IndexFormatError:
        raise
    except ValueError as e:
        raise IndexFormatError(f"corrupt index file: {e}") from e


def _from_bytes(data: bytes) -> SahIndex:
    if len(data) < _HEADER.size:
        raise IndexFormatError(f"truncated index file: {len(data)} bytes is shorter than the {_HEADER.size}-byte header")
    (magic, version, d, n, m, b, K, L, N0, k_max, seed, prefix_factor, probe_radius,
     budget) = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise IndexFormatError(f"bad magic {magic!r}, expected {MAGIC!r}: not a SAH index file")
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"unsupported index format version {version} (this build reads {FORMAT_VERSION})")
    try:
        config = SahConfig(k_max, N0, b, K, L, seed, prefix_factor, probe_radius, _decode_budget(budget))
    except ValueError as e:
        raise IndexFormatError(f"corrupt config block: {e}") from e
    r = _Reader(data[_HEADER.size :], "index body")

    s = r.section("items section")
    ids = s.array(np.int64, n)
    items = VectorSet(s.array(np.float32, n * d, (n, d)), ids, s.array(np.float64, n))
    s.done()

    s = r.section("users section")
    uids = s.array(np.int64, m)
    users = VectorSet(s.array(np.float32, m * d, (m, d)), uids, s.array(np.float64, m))
    s.done()

    s = r.section("lower-bound section")
    n_prefix = s.unpack("Q")
    user_lb = s.array(np.float64, m * k_max, (m, k_max))
    s.done()

    s = r.section("partition section")
    ranking, n_bands = s.unpack("BI")
    if ranking >= len(RANKINGS):
        raise IndexFormatError(f"corrupt partition section: unknown candidate ranking code {ranking}")
    config = replace(config, ranking=RANKINGS[ranking])
    residual = items.take(np.arange(n_prefix, n))
    bands = []
    for _ in range(n_bands):
        j, exact, M, R, lo, hi = s.unpack("IBddQQ")
        centroid = s.array(np.float64, d)
        rows = np.arange(lo, hi)
        g = PartitionGeometry(j, M, centroid, R, rows, residual.ids[lo:hi].copy())
        if exact:
            bands.append(Band(g))
            continue
        fseed = s.unpack("Q")
        proj = s.array(np.float32, K * L * (d + 1), (K * L, d + 1))
        proj.setflags(write=False)
        keys = s.array(np.int64, K * (hi - lo))
        members = s.array(np.int32, K * (hi - lo))
        f = SrpFunctionSet(fseed, K, L, d + 1, proj)
        bands.append(Band(g, f, SignatureTableSet(K, L, g.member_ids, keys, members)))
    s.done()
    alsh = SaAlshIndex(residual.coords, residual.ids, residual.norms, bands, config.alsh)

    s = r.section("cone-tree section")
    count = s.unpack("Q")
    nodes = []
    for _ in range(count):
        leaf, size, omega = s.unpack("BQd")
        center = s.array(np.float64, d)
        rows = s.array(np.int64, size)
        theta = s.array(np.float64, size) if leaf else None
        nodes.append((cone.ConeNode(rows, center, omega, theta=theta), bool(leaf)))
    s.done()
    r.done()
    tree = _rebuild_tree(nodes)
    return SahIndex(items, UserBlocks(users, user_lb, tree), alsh, n_prefix, config)


def _rebuild_tree(nodes: list[tuple[cone.ConeNode, bool]]) -> cone.ConeNode:
    if not nodes:
        raise IndexFormatError("cone-tree section holds no nodes")
    it = iter(nodes)

    def take():
        try:
            node, leaf = next(it)
        except StopIteration:
            raise IndexFormatError("cone-tree section ends inside a subtree") from None
        return node, leaf

    root, leaf = take()
    stack = [] if leaf else [(root, 0)]
    while stack:
        parent, filled = stack.pop()
        child, leaf = take()
        if filled == 0:
            parent.left = child
            stack.append((parent, 1))
        else:
            parent.right = child
        if not leaf:
            stack.append((child, 0))
    if next(it, None) is not None:
        raise IndexFormatError("cone-tree section has trailing nodes")
    return root


def save(idx: SahIndex, path) -> None:
    Path(path).write_bytes(to_bytes(idx))


def load(path) -> SahIndex:
    return from_bytes(Path(path).read_bytes())
