"""Compiled inner loops for hashing, candidate ranking and per-user decisions.

Band tables are passed as flat arrays (see ``sa_alsh.FlatBands``).  Scores
use the same sequential float64 accumulation as :mod:`rkmips._kernels`.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _dot(a, b):
    s = 0.0
    for t in range(a.shape[0]):
        s += np.float64(a[t]) * np.float64(b[t])
    return s


@njit(cache=True)
def sign_codes(projT, K, L, v):
    """K packed L-bit codes; bit b of table t is set when <projection t*L+b, v> >= 0.

    ``projT`` is the (dim, K*L) transposed projection matrix.  Every
    projection is still summed in coordinate order; the loop runs across
    projections so it vectorizes.
    """
    D, F = projT.shape
    acc = np.zeros(F)
    for i in range(D):
        vi = v[i]
        for r in range(F):
            acc[r] += projT[i, r] * vi
    codes = np.zeros(K, dtype=np.int64)
    for t in range(K):
        c = 0
        for b in range(L):
            if acc[t * L + b] >= 0.0:
                c |= 1 << b
        codes[t] = c
    return codes


@njit(cache=True)
def sign_codes_rows(projT, K, L, X):
    out = np.empty((X.shape[0], K), dtype=np.int64)
    for r in range(X.shape[0]):
        out[r] = sign_codes(projT, K, L, X[r])
    return out


@njit(cache=True)
def lifted_user(u, R):
    """[u * R / |u|, 0] in float64."""
    d = u.shape[0]
    un = math.sqrt(_dot(u, u))
    v = np.zeros(d + 1)
    f = R / un
    for i in range(d):
        v[i] = np.float64(u[i]) * f
    return v


@njit(cache=True)
def _bucket(offsets, keys, t, code, L):
    """(lo, hi) of bucket ``code`` of table ``t`` within one band's arrays."""
    key = (t << L) | code
    if offsets.shape[0] > 0:
        return offsets[key], offsets[key + 1]
    return np.searchsorted(keys, key, side="left"), np.searchsorted(keys, key, side="right")


@njit(cache=True)
def ranked_candidates(offsets, keys, members, codes, K, L, masks, budget, counts, touched, out):
    """Members found around ``codes``, ranked by how many probed buckets hold them.

    Writes up to ``budget`` band positions into ``out`` and returns their
    number; ``budget < 0`` keeps every member found.  Ties at the cut go to
    the member found first.  ``counts`` is zero on entry and on exit;
    ``touched`` is scratch space.
    """
    nt = 0
    for t in range(K):
        base = codes[t]
        for mi in range(masks.shape[0]):
            lo, hi = _bucket(offsets, keys, t, base ^ masks[mi], L)
            for e in range(lo, hi):
                p = members[e]
                if counts[p] == 0:
                    touched[nt] = p
                    nt += 1
                counts[p] += 1
    c = 0
    if budget < 0 or nt <= budget:
        for i in range(nt):
            out[i] = touched[i]
            counts[touched[i]] = 0
        return nt
    top = K * masks.shape[0]
    hist = np.zeros(top + 1, dtype=np.int64)
    for i in range(nt):
        hist[counts[touched[i]]] += 1
    thr = top
    acc = 0
    while thr > 0:
        acc += hist[thr]
        if acc >= budget:
            break
        thr -= 1
    ties = budget - (acc - hist[thr])
    for i in range(nt):
        p = touched[i]
        cp = counts[p]
        if cp > thr or (cp == thr and ties > 0):
            if cp == thr:
                ties -= 1
            out[c] = p
            c += 1
        counts[p] = 0
    return c


@njit(cache=True)
def ring_candidates(offsets, keys, members, codes, K, L, masks, ring_ptr, budget, seen, out):
    """Members in probe order: ring, then table, then mask; first occurrence kept.

    Ring ``r`` uses ``masks[ring_ptr[r]:ring_ptr[r + 1]]``.  Stops once
    ``budget`` members are found (``budget < 0``: never).  ``seen`` is zero
    on entry and on exit.
    """
    c = 0
    for r in range(ring_ptr.shape[0] - 1):
        for t in range(K):
            for mi in range(ring_ptr[r], ring_ptr[r + 1]):
                lo, hi = _bucket(offsets, keys, t, codes[t] ^ masks[mi], L)
                for e in range(lo, hi):
                    p = members[e]
                    if seen[p] == 0:
                        seen[p] = 1
                        out[c] = p
                        c += 1
                        if c == budget:
                            for i in range(c):
                                seen[out[i]] = 0
                            return c
    for i in range(c):
        seen[out[i]] = 0
    return c


@njit(cache=True)
def user_band_codes(users, hashed, radius, proj, K, L):
    """(m, bands, K) signature codes of every user in every hashed band."""
    nb = hashed.shape[0]
    out = np.zeros((users.shape[0], nb, K), dtype=np.int64)
    for i in range(users.shape[0]):
        for j in range(nb):
            if hashed[j]:
                out[i, j] = sign_codes(proj[j], K, L, lifted_user(users[i], radius[j]))
    return out


@njit(cache=True)
def band_candidates(codes, j, start, size, hashed, offsets, kstart, keys, members, K, L, masks, ring_ptr, by_count,
                    budget, counts, touched, out):
    """Candidate rows (into the sorted item matrix) of band ``j``; ``codes`` is the user's signature there.

    ``by_count`` selects collision-count ranking, otherwise probe order.
    """
    s0 = start[j]
    n = size[j]
    if not hashed[j]:
        for p in range(n):
            out[p] = s0 + p
        return n
    k0 = kstart[j]
    k1 = k0 + K * n
    if by_count:
        c = ranked_candidates(offsets[j], keys[k0:k1], members[k0:k1], codes, K, L, masks, budget, counts, touched,
                              out)
    else:
        c = ring_candidates(offsets[j], keys[k0:k1], members[k0:k1], codes, K, L, masks, ring_ptr, budget, counts,
                            out)
    for i in range(c):
        out[i] += s0
    return c


@njit(cache=True)
def _cap_slack(d):
    # computed <u, p> may exceed |u| |p| by summation rounding
    return 1.0 + (2 * d + 8) * 2.0**-52


@njit(cache=True)
def _min_slot(pool):
    m = 0
    for i in range(1, pool.shape[0]):
        if pool[i] < pool[m]:
            m = i
    return m


@njit(cache=True)
def alsh_decide(u, ucodes, q, k, known, coords, start, size, max_norm, hashed, offsets, kstart, keys,
                members, K, L, masks, ring_ptr, by_count, budget, counts, touched, out):
    """Band sweep for one user; True when q is accepted into u's top-k.

    ``ucodes[j]`` is the user's signature in band ``j``.  ``known`` seeds the
    top-k pool with scores of items kept outside the bands (``-inf`` for
    none).  Returns ``(answer, bands_probed, candidates)``.
    """
    uq = _dot(u, q)
    un = math.sqrt(_dot(u, u))
    pool = np.full(k, -np.inf)
    for i in range(min(k, known.shape[0])):
        pool[i] = known[i]
    slot = _min_slot(pool)
    if uq < pool[slot]:
        return False, 0, 0
    probed = 0
    seen = 0
    cap = un * _cap_slack(u.shape[0])
    for j in range(start.shape[0]):
        mu = max_norm[j] * cap
        # remaining bands cannot reach the pool minimum, or cannot beat q
        if pool[slot] > mu or uq >= mu:
            return True, probed, seen
        c = band_candidates(ucodes[j], j, start, size, hashed, offsets, kstart, keys, members, K, L, masks,
                            ring_ptr, by_count, budget, counts, touched, out)
        probed += 1
        seen += c
        for i in range(c):
            s = _dot(coords[out[i]], u)
            if s > pool[slot]:
                pool[slot] = s
                slot = _min_slot(pool)
                # the pool minimum only grows, so the answer is already no
                if uq < pool[slot]:
                    return False, probed, seen
    return True, probed, seen


@njit(cache=True)
def alsh_decide_many(users, ucodes, rows, q, k, known, coords, start, size, max_norm, hashed, offsets,
                     kstart, keys, members, K, L, masks, ring_ptr, by_count, budget):
    n_max = 1
    for j in range(size.shape[0]):
        n_max = max(n_max, size[j])
    counts = np.zeros(n_max, dtype=np.int32)
    touched = np.empty(n_max, dtype=np.int64)
    out = np.empty(n_max, dtype=np.int64)
    ans = np.zeros(rows.shape[0], dtype=np.bool_)
    probed = 0
    seen = 0
    for r in range(rows.shape[0]):
        i = rows[r]
        a, p, s = alsh_decide(users[i], ucodes[i], q, k, known[i, :k], coords, start, size, max_norm, hashed,
                              offsets, kstart, keys, members, K, L, masks, ring_ptr, by_count, budget, counts,
                              touched, out)
        ans[r] = a
        probed += p
        seen += s
    return ans, probed, seen


@njit(cache=True)
def alsh_kmips(u, k, coords, ids, start, size, max_norm, hashed, radius, proj, offsets, kstart, keys, members,
               K, L, masks, ring_ptr, by_count, budget):
    """Approximate top-k rows of ``u``; stops once the pool beats every remaining band."""
    un = math.sqrt(_dot(u, u))
    n_max = 1
    for j in range(size.shape[0]):
        n_max = max(n_max, size[j])
    counts = np.zeros(n_max, dtype=np.int32)
    touched = np.empty(n_max, dtype=np.int64)
    out = np.empty(n_max, dtype=np.int64)
    pool = np.full(k, -np.inf)
    prow = np.full(k, -1, dtype=np.int64)
    slot = 0
    probed = 0
    seen = 0
    cap = un * _cap_slack(u.shape[0])
    for j in range(start.shape[0]):
        if pool[slot] > max_norm[j] * cap:
            break
        codes = np.zeros(K, dtype=np.int64)
        if hashed[j]:
            codes = sign_codes(proj[j], K, L, lifted_user(u, radius[j]))
        c = band_candidates(codes, j, start, size, hashed, offsets, kstart, keys, members, K, L, masks,
                            ring_ptr, by_count, budget, counts, touched, out)
        probed += 1
        seen += c
        for i in range(c):
            row = out[i]
            s = _dot(coords[row], u)
            if s > pool[slot] or (s == pool[slot] and prow[slot] >= 0 and ids[row] < ids[prow[slot]]):
                pool[slot] = s
                prow[slot] = row
                slot = _min_slot(pool)
    return prow, pool, probed, seen


@njit(cache=True)
def exact_scan(u, q, k, coords, norms, slack):
    """Norm-ordered scan; returns ``(answer, items_inspected)``.

    Stops with no at the k-th item scoring strictly above <u, q>, and with
    yes once |p| * |u| * slack < <u, q> for every remaining item.
    """
    uq = _dot(u, q)
    un = math.sqrt(_dot(u, u))
    n = coords.shape[0]
    stop = n
    if uq > 0.0 and un > 0.0:
        bound = uq / (un * slack)
        # norms descend: first position whose norm is below the bound
        lo, hi = 0, n
        while lo < hi:
            mid = (lo + hi) // 2
            if norms[mid] >= bound:
                lo = mid + 1
            else:
                hi = mid
        stop = lo
    beaten = 0
    for i in range(stop):
        if _dot(coords[i], u) > uq:
            beaten += 1
            if beaten >= k:
                return False, i + 1
    return True, stop


@njit(cache=True)
def exact_scan_many(users, rows, q, k, coords, norms, slack):
    ans = np.zeros(rows.shape[0], dtype=np.bool_)
    inspected = 0
    for r in range(rows.shape[0]):
        a, c = exact_scan(users[rows[r]], q, k, coords, norms, slack)
        ans[r] = a
        inspected += c
    return ans, inspected
