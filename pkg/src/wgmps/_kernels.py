"""Inner loops shared by the tensor-train and dense-sector code.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version with the same signature.  The module-level names (``swap_sites``,
``truncated_svd``, ``block_qr``, ``classify_states``) are bound to one of
them at import time.  Set ``WGMPS_NUMBA=0`` in the environment to force the
numpy path.

The factorizations are block aware.  Excitation-conserving dynamics keep
every reshaped two-site tensor a row/column permutation of a block-diagonal
matrix, with exact zeros outside the blocks.  The blocks are found as
connected components of the nonzero pattern and factorized one by one,
which is both cheaper and keeps the zeros exact for the next step.
Without such structure the whole matrix is one block.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.sparse.csgraph import connected_components

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False


def _env_wants_numba() -> bool:
    flag = os.environ.get("WGMPS_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _env_wants_numba()
BACKEND = "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------


def _svd_numpy(mat):
    try:
        return np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails on nearly rank-deficient input
        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")


def matrix_blocks_numpy(mat):
    """Independent blocks of ``mat`` as a list of ``(rows, cols)`` index arrays.

    Blocks are ordered by their first row.  All-zero rows and columns belong
    to no block.
    """
    m, n = mat.shape
    r, c = np.nonzero(mat)
    if r.size == 0:
        return []
    graph = scipy.sparse.coo_matrix((np.ones(r.size, dtype=np.int8), (r, c + m)), shape=(m + n, m + n))
    _, lab = connected_components(graph, directed=False)
    used, first = np.unique(lab[r], return_index=True)
    used = used[np.argsort(r[first], kind="stable")]
    row_lab, col_lab = lab[:m], lab[m:]
    return [(np.flatnonzero(row_lab == b), np.flatnonzero(col_lab == b)) for b in used]


def _select(s_all, cutoff, max_bond):
    order = np.argsort(-s_all, kind="stable")
    s0 = s_all[order[0]]
    full = int(np.count_nonzero(s_all > cutoff * s0)) if s0 > 0 else 1
    keep = max(1, min(full, max_bond))
    discarded = float(np.sum(s_all[order[keep:]] ** 2))
    return order, keep, discarded, full


def truncated_svd_numpy(mat, cutoff, max_bond):
    """SVD of ``mat`` with relative cutoff and rank cap.

    Returns ``(u, s, vh, discarded, full_rank)`` where ``discarded`` is the sum
    of squared dropped singular values and ``full_rank`` is the number of
    singular values above the cutoff before the ``max_bond`` cap.  Singular
    values come out in descending order; ties keep block order.
    """
    blocks = matrix_blocks_numpy(mat)
    if len(blocks) <= 1:
        u, s, vh = _svd_numpy(mat)
        _, keep, disc, full = _select(s, cutoff, max_bond)
        return u[:, :keep], s[:keep], vh[:keep, :], disc, full
    parts = [_svd_numpy(mat[np.ix_(rows, cols)]) for rows, cols in blocks]
    s_all = np.concatenate([p[1] for p in parts])
    owner = np.concatenate([np.full(p[1].size, b) for b, p in enumerate(parts)])
    local = np.concatenate([np.arange(p[1].size) for p in parts])
    order, keep, disc, full = _select(s_all, cutoff, max_bond)
    kept = order[:keep]
    m, n = mat.shape
    u = np.zeros((m, keep), dtype=mat.dtype)
    vh = np.zeros((keep, n), dtype=mat.dtype)
    for b, (rows, cols) in enumerate(blocks):
        pos = np.flatnonzero(owner[kept] == b)
        if pos.size == 0:
            continue
        idx = local[kept[pos]]
        u[np.ix_(rows, pos)] = parts[b][0][:, idx]
        vh[np.ix_(pos, cols)] = parts[b][2][idx, :]
    return u, s_all[kept], vh, disc, full


def block_qr_numpy(mat):
    """Thin ``mat = q @ r`` with ``q`` an isometry, computed block by block."""
    blocks = matrix_blocks_numpy(mat)
    if len(blocks) <= 1:
        return np.linalg.qr(mat)
    parts = [np.linalg.qr(mat[np.ix_(rows, cols)]) for rows, cols in blocks]
    k = sum(p[0].shape[1] for p in parts)
    m, n = mat.shape
    q = np.zeros((m, k), dtype=mat.dtype)
    r = np.zeros((k, n), dtype=mat.dtype)
    off = 0
    for (rows, cols), (qb, rb) in zip(blocks, parts):
        kb = qb.shape[1]
        q[rows, off : off + kb] = qb
        r[off : off + kb, cols] = rb
        off += kb
    return q, r


def swap_sites_numpy(a, b, cutoff, max_bond, center_left):
    """Exchange the physical legs of two neighbouring site tensors.

    ``a`` has shape (chi_l, da, chi_m) and ``b`` (chi_m, db, chi_r).  The
    result is ``(a2, b2, discarded, full_rank)`` with ``a2`` carrying the old
    ``b`` leg.  Singular values go into ``a2`` when ``center_left`` is true,
    otherwise into ``b2``.
    """
    chi_l, da, _ = a.shape
    _, db, chi_r = b.shape
    theta = np.tensordot(a, b, axes=(2, 0))  # (l, da, db, r)
    mat = theta.transpose(0, 2, 1, 3).reshape(chi_l * db, da * chi_r)
    u, s, vh, disc, full = truncated_svd_numpy(mat, cutoff, max_bond)
    k = s.shape[0]
    if center_left:
        u = u * s[None, :]
    else:
        vh = s[:, None] * vh
    return u.reshape(chi_l, db, k), vh.reshape(k, da, chi_r), disc, full


def classify_states_numpy(qcfg, photons, active, sys_slot, radix, nbins_p1):
    """Locate every sector basis state relative to the bins touched by a step.

    Args:
        qcfg: (N,) qubit configuration index per basis state.
        photons: (N, E) occupied bin ids sorted descending, padded with -1.
        active: bin id for each non-system local slot, in slot order.
        sys_slot: position of the system slot among all local slots.
        radix: dimension of every local slot (system included).
        nbins_p1: number of bins plus one (base of the key encoding).

    Returns:
        ``(affected, local, restkey)``: whether the step can change the state,
        its mixed-radix index in the local space, and the integer key of the
        photons lying outside the local space.
    """
    n, e = photons.shape
    nslots = len(radix)
    occ = np.zeros((n, len(active)), dtype=np.int64)
    inside = np.zeros(photons.shape, dtype=bool)
    for j, b in enumerate(active):
        hit = photons == b
        occ[:, j] = hit.sum(axis=1)
        inside |= hit
    local = np.zeros(n, dtype=np.int64)
    j = 0
    for slot in range(nslots):
        if slot == sys_slot:
            digit = qcfg
        else:
            digit = occ[:, j]
            j += 1
        local = local * radix[slot] + digit
    rest = np.where(inside, -1, photons)
    rest = -np.sort(-rest, axis=1)
    restkey = np.zeros(n, dtype=np.int64)
    mult = 1
    for i in range(e):
        restkey += (rest[:, i] + 1) * mult
        mult *= nbins_p1
    affected = (qcfg != 0) | inside.any(axis=1)
    return affected, local, restkey


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _find(parent, x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    @numba.njit(cache=True)
    def _components_jit(mat):
        """Block id per row and per column (-1 for all-zero lines), ids by first row."""
        m, n = mat.shape
        parent = np.arange(m + n)
        for i in range(m):
            for j in range(n):
                if mat[i, j] != 0:
                    a = _find(parent, i)
                    b = _find(parent, m + j)
                    if a != b:
                        parent[b] = a
        root_id = np.full(m + n, -1, dtype=np.int64)
        row_id = np.full(m, -1, dtype=np.int64)
        col_id = np.full(n, -1, dtype=np.int64)
        nblk = 0
        for i in range(m):
            nz = False
            for j in range(n):
                if mat[i, j] != 0:
                    nz = True
                    break
            if not nz:
                continue
            rt = _find(parent, i)
            if root_id[rt] < 0:
                root_id[rt] = nblk
                nblk += 1
            row_id[i] = root_id[rt]
        for j in range(n):
            rt = _find(parent, m + j)
            col_id[j] = root_id[rt]  # -1 when the column is all zero
        return row_id, col_id, nblk

    @numba.njit(cache=True)
    def _gather(ids, b):
        cnt = 0
        for i in range(ids.shape[0]):
            if ids[i] == b:
                cnt += 1
        out = np.empty(cnt, dtype=np.int64)
        cnt = 0
        for i in range(ids.shape[0]):
            if ids[i] == b:
                out[cnt] = i
                cnt += 1
        return out

    @numba.njit(cache=True)
    def _submatrix(mat, rows, cols):
        sub = np.empty((rows.shape[0], cols.shape[0]), dtype=mat.dtype)
        for a in range(rows.shape[0]):
            for c in range(cols.shape[0]):
                sub[a, c] = mat[rows[a], cols[c]]
        return sub

    @numba.njit(cache=True)
    def _truncated_svd_jit(mat, cutoff, max_bond):
        m, n = mat.shape
        row_id, col_id, nblk = _components_jit(mat)
        if nblk <= 1:
            u, s, vh = np.linalg.svd(mat, full_matrices=False)
        else:
            total = 0
            for b in range(nblk):
                total += min(_gather(row_id, b).shape[0], _gather(col_id, b).shape[0])
            s = np.empty(total)
            u = np.zeros((m, total), dtype=mat.dtype)
            vh = np.zeros((total, n), dtype=mat.dtype)
            off = 0
            for b in range(nblk):
                rows = _gather(row_id, b)
                cols = _gather(col_id, b)
                ub, sb, vb = np.linalg.svd(_submatrix(mat, rows, cols), full_matrices=False)
                for i in range(sb.shape[0]):
                    s[off + i] = sb[i]
                    for r in range(rows.shape[0]):
                        u[rows[r], off + i] = ub[r, i]
                    for c in range(cols.shape[0]):
                        vh[off + i, cols[c]] = vb[i, c]
                off += sb.shape[0]
        order = np.argsort(-s, kind="mergesort")
        s0 = s[order[0]]
        full = 1
        keep = 1
        if s0 > 0.0:
            full = 0
            for i in range(s.shape[0]):
                if s[i] > cutoff * s0:
                    full += 1
            keep = max(1, min(full, max_bond))
        disc = 0.0
        for i in range(keep, s.shape[0]):
            disc += s[order[i]] ** 2
        s_keep = np.empty(keep)
        u_out = np.empty((m, keep), dtype=mat.dtype)
        vh_out = np.empty((keep, n), dtype=mat.dtype)
        for j in range(keep):
            o = order[j]
            s_keep[j] = s[o]
            u_out[:, j] = u[:, o]
            vh_out[j, :] = vh[o, :]
        return u_out, s_keep, vh_out, disc, full

    @numba.njit(cache=True)
    def _block_qr_jit(mat):
        m, n = mat.shape
        row_id, col_id, nblk = _components_jit(mat)
        if nblk <= 1:
            q, r = np.linalg.qr(mat)
            return np.ascontiguousarray(q), np.ascontiguousarray(r)
        k = 0
        for b in range(nblk):
            k += min(_gather(row_id, b).shape[0], _gather(col_id, b).shape[0])
        q_out = np.zeros((m, k), dtype=mat.dtype)
        r_out = np.zeros((k, n), dtype=mat.dtype)
        off = 0
        for b in range(nblk):
            rows = _gather(row_id, b)
            cols = _gather(col_id, b)
            qb, rb = np.linalg.qr(_submatrix(mat, rows, cols))
            kb = qb.shape[1]
            for a in range(rows.shape[0]):
                for c in range(kb):
                    q_out[rows[a], off + c] = qb[a, c]
            for a in range(kb):
                for c in range(cols.shape[0]):
                    r_out[off + a, cols[c]] = rb[a, c]
            off += kb
        return q_out, r_out

    @numba.njit(cache=True)
    def _swap_sites_jit(a, b, cutoff, max_bond, center_left):
        chi_l, da, chi_m = a.shape
        db = b.shape[1]
        chi_r = b.shape[2]
        theta = np.dot(
            np.ascontiguousarray(a).reshape(chi_l * da, chi_m),
            np.ascontiguousarray(b).reshape(chi_m, db * chi_r),
        )
        mat = np.empty((chi_l * db, da * chi_r), dtype=theta.dtype)
        for i in range(chi_l):
            for s in range(da):
                for t in range(db):
                    for j in range(chi_r):
                        mat[i * db + t, s * chi_r + j] = theta[i * da + s, t * chi_r + j]
        u, sv, vh, disc, full = _truncated_svd_jit(mat, cutoff, max_bond)
        k = sv.shape[0]
        if center_left:
            for c in range(k):
                u[:, c] *= sv[c]
        else:
            for c in range(k):
                vh[c, :] *= sv[c]
        return u.reshape(chi_l, db, k), vh.reshape(k, da, chi_r), disc, full

    @numba.njit(cache=True)
    def _classify_states_jit(qcfg, photons, active, sys_slot, radix, nbins_p1):
        n, e = photons.shape
        nact = active.shape[0]
        nslots = radix.shape[0]
        affected = np.zeros(n, dtype=np.bool_)
        local = np.zeros(n, dtype=np.int64)
        restkey = np.zeros(n, dtype=np.int64)
        occ = np.zeros(nact, dtype=np.int64)
        for s in range(n):
            for j in range(nact):
                occ[j] = 0
            key = 0
            mult = 1
            touched = False
            for i in range(e):
                b = photons[s, i]
                hit = False
                if b >= 0:
                    for j in range(nact):
                        if active[j] == b:
                            occ[j] += 1
                            hit = True
                            break
                if hit:
                    touched = True
                else:
                    # photons are sorted descending, -1 pads trail; compaction keeps order
                    key += (b + 1) * mult
                    mult *= nbins_p1
            loc = 0
            j = 0
            for slot in range(nslots):
                if slot == sys_slot:
                    digit = qcfg[s]
                else:
                    digit = occ[j]
                    j += 1
                loc = loc * radix[slot] + digit
            local[s] = loc
            restkey[s] = key
            affected[s] = touched or qcfg[s] != 0
        return affected, local, restkey

    def truncated_svd_numba(mat, cutoff, max_bond):
        u, s, vh, disc, full = _truncated_svd_jit(
            np.ascontiguousarray(mat, dtype=np.complex128), float(cutoff), int(max_bond)
        )
        return u, s, vh, float(disc), int(full)

    def block_qr_numba(mat):
        return _block_qr_jit(np.ascontiguousarray(mat, dtype=np.complex128))

    def swap_sites_numba(a, b, cutoff, max_bond, center_left):
        try:
            a2, b2, disc, full = _swap_sites_jit(
                np.ascontiguousarray(a, dtype=np.complex128),
                np.ascontiguousarray(b, dtype=np.complex128),
                float(cutoff),
                int(max_bond),
                bool(center_left),
            )
        except np.linalg.LinAlgError:
            return swap_sites_numpy(a, b, cutoff, max_bond, center_left)
        return a2, b2, float(disc), int(full)

    def classify_states_numba(qcfg, photons, active, sys_slot, radix, nbins_p1):
        return _classify_states_jit(
            np.ascontiguousarray(qcfg, dtype=np.int64),
            np.ascontiguousarray(photons, dtype=np.int64),
            np.asarray(active, dtype=np.int64),
            int(sys_slot),
            np.asarray(radix, dtype=np.int64),
            int(nbins_p1),
        )

else:  # pragma: no cover
    truncated_svd_numba = truncated_svd_numpy
    block_qr_numba = block_qr_numpy
    swap_sites_numba = swap_sites_numpy
    classify_states_numba = classify_states_numpy


if USE_NUMBA:
    truncated_svd = truncated_svd_numba
    block_qr = block_qr_numba
    swap_sites = swap_sites_numba
    classify_states = classify_states_numba
else:
    truncated_svd = truncated_svd_numpy
    block_qr = block_qr_numpy
    swap_sites = swap_sites_numpy
    classify_states = classify_states_numpy


__all__ = [
    "BACKEND",
    "HAVE_NUMBA",
    "block_qr",
    "block_qr_numba",
    "block_qr_numpy",
    "USE_NUMBA",
    "classify_states",
    "classify_states_numba",
    "classify_states_numpy",
    "matrix_blocks_numpy",
    "swap_sites",
    "swap_sites_numba",
    "swap_sites_numpy",
    "truncated_svd",
    "truncated_svd_numba",
    "truncated_svd_numpy",
]
