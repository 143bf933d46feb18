"""Cone-Tree over unit user vectors and its two angular upper bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import VectorSet, as_coords


@dataclass(eq=False)
class ConeNode:
    """One cone: members, their (unnormalized) mean and the widest member angle.

    ``rows`` index the user matrix the tree was built on.  A centre of zero
    norm gets ``omega = pi`` so the cone covers every direction.
    """

    rows: np.ndarray
    center: np.ndarray
    omega: float
    left: ConeNode | None = None
    right: ConeNode | None = None
    theta: np.ndarray | None = field(default=None, repr=False)  # leaves only

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def __len__(self):
        return self.rows.shape[0]

    def leaves(self) -> list[ConeNode]:
        out, stack = [], [self]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.append(node.right)
                stack.append(node.left)
        return out

    def preorder(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)


def _cone(X: np.ndarray) -> tuple[np.ndarray, float, np.ndarray]:
    center = X.mean(axis=0)
    cn = math.sqrt(float(center @ center))
    if cn == 0.0:
        return center, math.pi, np.zeros(X.shape[0])
    xn = np.sqrt(np.einsum("ij,ij->i", X, X))
    theta = np.arccos(np.clip((X @ center) / (xn * cn), -1.0, 1.0))
    return center, float(theta.max()), theta


def _split(X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of the left side for one cone split."""
    v = X[rng.integers(X.shape[0])]
    ul = X[np.argmin(X @ v)]
    ur = X[np.argmin(X @ ul)]
    # unit members: cosine comparison is an inner product comparison
    left = X @ ul >= X @ ur
    if left.all() or not left.any():
        left = np.zeros(X.shape[0], dtype=bool)
        left[: X.shape[0] // 2] = True
    return left


def build(U: VectorSet, N0: int = 20, seed: int = 0) -> ConeNode:
    """Split recursively around two far-apart pivots until leaves hold <= N0 users.

    Degenerate splits (every member on one side, e.g. duplicate vectors) fall
    back to halving the member list in row order.
    """
    if len(U) == 0:
        raise ValueError("cannot build a cone tree over an empty user set")
    if N0 < 1:
        raise ValueError(f"N0 must be >= 1, got {N0}")
    X = U.coords.astype(np.float64)
    rng = np.random.default_rng(seed)
    rows = np.arange(len(U))
    center, omega, theta = _cone(X)
    root = ConeNode(rows, center, omega)
    stack = [(root, theta)]
    while stack:
        node, theta = stack.pop()
        if len(node) <= N0:
            node.theta = theta
            continue
        Xn = X[node.rows]
        left = _split(Xn, rng)
        children = []
        for mask in (left, ~left):
            r = node.rows[mask]
            c, w, th = _cone(X[r])
            children.append((ConeNode(r, c, w), th))
        node.left, node.right = children[0][0], children[1][0]
        # right pushed first so the left subtree is expanded (and draws randomness) first
        stack.append(children[1])
        stack.append(children[0])
    return root


def query_angle(center: np.ndarray, q: np.ndarray) -> float:
    """Angle between a cone centre and ``q``; 0 for a degenerate centre."""
    cn = math.sqrt(float(center @ center))
    qn = math.sqrt(float(q @ q))
    if qn == 0.0:
        raise ValueError("cone bounds are undefined for a zero-norm query")
    if cn == 0.0:
        return 0.0
    return math.acos(min(1.0, max(-1.0, float(center @ q) / (cn * qn))))


def node_upper_bound(node: ConeNode, q) -> float:
    """Largest possible ``<u, q>`` over the unit members of ``node``."""
    q = np.asarray(as_coords(q), dtype=np.float64)
    phi = query_angle(node.center, q)
    return math.sqrt(float(q @ q)) * math.cos(max(phi - node.omega, 0.0))


def vector_upper_bound(theta_u: float, phi: float, q_norm: float) -> float:
    """Bound on ``<u, q>`` from the member angle and the query angle to the centre."""
    return q_norm * math.cos(abs(phi - theta_u))
