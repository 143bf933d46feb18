"""Vector file formats: fbin, CSV and fvecs.

fbin: little-endian u32 count, u32 dim, then count*dim float32 values, row
major.  CSV: one vector per line, optionally led by an integer id column.
fvecs: per row an int32 dim followed by dim float32 values.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..core import ResultSet, VectorSet

_FBIN_HEADER = np.dtype([("count", "<u4"), ("dim", "<u4")])


class FormatError(ValueError):
    pass


def write_fbin(path, X: np.ndarray) -> None:
    X = np.ascontiguousarray(X, dtype="<f4")
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {X.shape}")
    with open(path, "wb") as f:
        np.array([(X.shape[0], X.shape[1])], dtype=_FBIN_HEADER).tofile(f)
        X.tofile(f)


def read_fbin(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated fbin header ({len(raw)} bytes)")
    count, dim = np.frombuffer(raw[:8], dtype="<u4")
    expected = 8 + 4 * int(count) * int(dim)
    if len(raw) != expected:
        raise FormatError(f"{path}: fbin header says {count}x{dim} ({expected} bytes) but file has {len(raw)} bytes")
    return np.frombuffer(raw[8:], dtype="<f4").reshape(int(count), int(dim)).astype(np.float32)


def write_csv(path, X: np.ndarray, ids=None) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for i, row in enumerate(np.asarray(X, dtype=np.float32)):
            vals = [repr(float(v)) for v in row]
            w.writerow(vals if ids is None else [int(ids[i])] + vals)


def read_csv(path, has_ids: bool = False) -> tuple[np.ndarray, np.ndarray | None]:
    rows, ids = [], []
    with open(path, newline="") as f:
        for lineno, rec in enumerate(csv.reader(f), 1):
            if not rec:
                continue
            try:
                if has_ids:
                    ids.append(int(rec[0]))
                    rec = rec[1:]
                rows.append([float(v) for v in rec])
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise FormatError(f"{path}: rows have inconsistent widths {sorted(widths)}")
    X = np.array(rows, dtype=np.float32).reshape(len(rows), widths.pop() if widths else 0)
    return X, (np.array(ids, dtype=np.int64) if has_ids else None)


def read_fvecs(path) -> np.ndarray:
    a = np.fromfile(path, dtype="<i4")
    if a.size == 0:
        return np.zeros((0, 0), dtype=np.float32)
    d = int(a[0])
    if d <= 0 or a.size % (d + 1):
        raise FormatError(f"{path}: not a valid fvecs file (dim {d}, {a.size} words)")
    a = a.reshape(-1, d + 1)
    if np.any(a[:, 0] != d):
        raise FormatError(f"{path}: rows with differing dimensions")
    return a[:, 1:].copy().view("<f4").astype(np.float32)


def write_fvecs(path, X: np.ndarray) -> None:
    X = np.ascontiguousarray(X, dtype="<f4")
    out = np.empty((X.shape[0], X.shape[1] + 1), dtype="<i4")
    out[:, 0] = X.shape[1]
    out[:, 1:] = X.view("<i4")
    out.tofile(path)


def read_vectors(path, has_ids: bool = False) -> VectorSet:
    """Load a VectorSet, choosing the format by file extension."""
    ext = Path(path).suffix.lower()
    if ext == ".fbin":
        X, ids = read_fbin(path), None
    elif ext == ".fvecs":
        X, ids = read_fvecs(path), None
    elif ext == ".csv":
        X, ids = read_csv(path, has_ids)
    else:
        raise FormatError(f"{path}: unknown vector format {ext!r} (expected .fbin, .csv or .fvecs)")
    if X.shape[1] == 0:
        raise FormatError(f"{path}: no vectors or zero dimension")
    return VectorSet(X, ids)


def write_vectors(path, V: VectorSet | np.ndarray) -> None:
    ext = Path(path).suffix.lower()
    X = V.coords if isinstance(V, VectorSet) else V
    if ext == ".fbin":
        write_fbin(path, X)
    elif ext == ".fvecs":
        write_fvecs(path, X)
    elif ext == ".csv":
        write_csv(path, X, V.ids if isinstance(V, VectorSet) else None)
    else:
        raise FormatError(f"{path}: unknown vector format {ext!r} (expected .fbin, .csv or .fvecs)")


def write_results(path, results: list[ResultSet]) -> None:
    data = {str(r.query_id): r.sorted_ids() for r in results}
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


def read_results(path) -> dict[int, frozenset]:
    data = json.loads(Path(path).read_text())
    return {int(k): frozenset(v) for k, v in data.items()}
