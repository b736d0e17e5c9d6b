"""numba and numpy kernels must agree."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wgmps import _kernels as K

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


def block_matrix(r, shape, n_blocks, zero_rows=0):
    m, n = shape
    mat = np.zeros(shape, dtype=complex)
    rows = r.permutation(m)
    cols = r.permutation(n)
    rs = np.array_split(rows, n_blocks)
    cs = np.array_split(cols, n_blocks)
    for rb, cb in zip(rs, cs):
        if rb.size and cb.size:
            mat[np.ix_(rb, cb)] = r.normal(size=(rb.size, cb.size)) + 1j * r.normal(size=(rb.size, cb.size))
    if zero_rows:
        mat[rows[:zero_rows]] = 0
    return mat


def reconstruct(u, s, vh):
    return (u * s) @ vh


@pytest.mark.parametrize("n_blocks", [1, 3, 5])
def test_svd_parity(n_blocks):
    r = np.random.default_rng(n_blocks)
    mat = block_matrix(r, (12, 9), n_blocks, zero_rows=2)
    a = K.truncated_svd_numpy(mat, 0.0, 100)
    b = K.truncated_svd_numba(mat, 0.0, 100)
    assert np.allclose(a[1], b[1])
    assert a[3] == pytest.approx(b[3]) and a[4] == b[4]
    assert np.allclose(reconstruct(*a[:3]), mat)
    assert np.allclose(reconstruct(*b[:3]), mat)
    # block structure keeps exact zeros
    zero = mat == 0
    assert np.all(reconstruct(*b[:3])[zero] == 0)


def test_svd_truncation_parity():
    r = np.random.default_rng(3)
    mat = block_matrix(r, (10, 10), 2)
    for cutoff, cap in [(0.3, 100), (0.0, 4), (1e-10, 1)]:
        a = K.truncated_svd_numpy(mat, cutoff, cap)
        b = K.truncated_svd_numba(mat, cutoff, cap)
        assert a[1].size == b[1].size
        assert np.allclose(a[1], b[1])
        assert a[3] == pytest.approx(b[3])
        s_all = np.linalg.svd(mat, compute_uv=False)
        assert a[3] == pytest.approx(np.sum(s_all[a[1].size :] ** 2))


@pytest.mark.parametrize("n_blocks", [1, 4])
def test_qr_parity(n_blocks):
    r = np.random.default_rng(10 + n_blocks)
    mat = block_matrix(r, (15, 6), n_blocks)
    for q, rr in (K.block_qr_numpy(mat), K.block_qr_numba(mat)):
        assert np.allclose(q @ rr, mat)
        assert np.allclose(q.conj().T @ q, np.eye(q.shape[1]))


def test_swap_parity():
    r = np.random.default_rng(5)
    a = r.normal(size=(3, 2, 4)) + 1j * r.normal(size=(3, 2, 4))
    b = r.normal(size=(4, 3, 2)) + 1j * r.normal(size=(4, 3, 2))
    theta = np.einsum("iaj,jbk->ibak", a, b)
    for left in (True, False):
        for fn in (K.swap_sites_numpy, K.swap_sites_numba):
            a2, b2, disc, _ = fn(a, b, 0.0, 100, left)
            assert disc == pytest.approx(0.0, abs=1e-20)
            assert np.allclose(np.einsum("ibj,jak->ibak", a2, b2), theta)


def test_classify_parity():
    r = np.random.default_rng(2)
    n = 200
    qcfg = r.integers(0, 4, n)
    photons = -np.ones((n, 2), dtype=np.int64)
    photons[:, 0] = r.integers(-1, 8, n)
    photons[:, 1] = np.where(photons[:, 0] >= 0, r.integers(-1, 8, n), -1)
    photons = -np.sort(-photons, axis=1)
    active = np.array([6, 7, 2], dtype=np.int64)
    radix = np.array([3, 4, 3, 3], dtype=np.int64)
    out_a = K.classify_states_numpy(qcfg, photons, active, 1, radix, 9)
    out_b = K.classify_states_numba(qcfg, photons, active, 1, radix, 9)
    for x, y in zip(out_a, out_b):
        assert np.array_equal(np.asarray(x), np.asarray(y))


@settings(max_examples=40, deadline=None)
@given(
    m=st.integers(1, 9),
    n=st.integers(1, 9),
    blocks=st.integers(1, 4),
    seed=st.integers(0, 10_000),
    cap=st.integers(1, 10),
)
def test_svd_properties(m, n, blocks, seed, cap):
    r = np.random.default_rng(seed)
    mat = block_matrix(r, (m, n), blocks)
    for fn in (K.truncated_svd_numpy, K.truncated_svd_numba):
        u, s, vh, disc, full = fn(mat, 1e-12, cap)
        assert s.size <= cap
        assert np.all(np.diff(s) <= 1e-12)
        if s.size:
            assert np.allclose(u.conj().T @ u, np.eye(s.size), atol=1e-10)
            assert np.allclose(vh @ vh.conj().T, np.eye(s.size), atol=1e-10)
        total = np.linalg.norm(mat) ** 2
        assert np.sum(s**2) + disc == pytest.approx(total, rel=1e-9, abs=1e-12)


def test_backend_flag_consistent():
    assert K.BACKEND in ("numba", "numpy")
    assert (K.BACKEND == "numba") == K.USE_NUMBA


def test_end_to_end_backends_agree():
    import json
    import os
    import subprocess
    import sys

    from wgmps import PhysicalParams, run

    code = (
        "import json; from wgmps import PhysicalParams, run, _kernels;"
        "s = run(PhysicalParams(tau=0.1, phi=0.4), 'ee', 0.4);"
        "print(json.dumps([_kernels.BACKEND, list(s['P2']), list(s['S_c'])]))"
    )
    env = dict(os.environ, WGMPS_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    backend, p2, sc = json.loads(out.stdout)
    assert backend == "numpy"
    s = run(PhysicalParams(tau=0.1, phi=0.4), "ee", 0.4)
    assert np.allclose(s["P2"], p2, atol=1e-12)
    assert np.allclose(s["S_c"], sc, atol=1e-10)
