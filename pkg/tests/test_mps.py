import numpy as np
import pytest

from wgmps import mps
from wgmps.mps import BondOverflowError, MpsChain, MpsError, TruncationPolicy

EXACT = TruncationPolicy(svd_cutoff=0.0)


def rng():
    return np.random.default_rng(7)


def random_unitary(n, r):
    q, _ = np.linalg.qr(r.normal(size=(n, n)) + 1j * r.normal(size=(n, n)))
    return q


def test_random_chain_normalized():
    ch = MpsChain.random([2, 3, 2, 3], 4, rng())
    assert ch.norm() == pytest.approx(1.0)
    assert np.linalg.norm(ch.to_dense()) == pytest.approx(1.0)


@pytest.mark.parametrize("target", [0, 2, 4])
def test_canonicalize_preserves_state(target):
    ch = MpsChain.random([2, 3, 2, 3, 2], 5, rng())
    psi = ch.to_dense()
    mps.canonicalize(ch, target)
    assert ch.center == target
    assert np.allclose(ch.to_dense(), psi)
    for i in range(target):
        a = ch.sites[i].reshape(-1, ch.sites[i].shape[2])
        assert np.allclose(a.conj().T @ a, np.eye(a.shape[1]))
    for i in range(target + 1, len(ch)):
        b = ch.sites[i].reshape(ch.sites[i].shape[0], -1)
        assert np.allclose(b @ b.conj().T, np.eye(b.shape[0]))


def test_apply_gate_matches_dense():
    r = rng()
    ch = MpsChain.random([2, 3, 2, 3], 3, r)
    psi = ch.to_dense().reshape(2, 3, 2, 3)
    u = random_unitary(18, r)
    mps.canonicalize(ch, 1)
    mps.apply_gate(ch, u, 1, EXACT)
    expect = np.einsum("ab,ib->ia", u, psi.reshape(2, 18)).reshape(-1)
    assert np.allclose(ch.to_dense(), expect)


def test_apply_gate_with_permutation():
    r = rng()
    ch = MpsChain.random([2, 3, 4], 2, r)
    ch.labels = ["x", "y", "z"]
    psi = ch.to_dense().reshape(2, 3, 4)
    mps.canonicalize(ch, 0)
    mps.apply_gate(ch, np.eye(24), 0, EXACT, perm=(2, 0, 1), center=1)
    assert ch.labels == ["z", "x", "y"]
    assert ch.center == 1
    assert np.allclose(ch.to_dense(), psi.transpose(2, 0, 1).reshape(-1))


def test_swap_roundtrip():
    ch = MpsChain.random([2, 3, 2], 3, rng())
    psi = ch.to_dense().reshape(2, 3, 2)
    mps.canonicalize(ch, 1)
    mps.swap_adjacent(ch, 0, EXACT)
    assert ch.phys_dims == [3, 2, 2]
    assert np.allclose(ch.to_dense(), psi.transpose(1, 0, 2).reshape(-1))
    mps.swap_adjacent(ch, 0, EXACT, center_left=True)
    assert np.allclose(ch.to_dense(), psi.reshape(-1))


def test_truncation_recorded():
    ch = MpsChain.random([2] * 6, 8, rng())
    mps.canonicalize(ch, 2)
    with pytest.warns(mps.TruncationWarning):
        mps.apply_gate(ch, np.eye(4), 2, TruncationPolicy(max_bond=1))
    assert ch.trunc_weight > 0
    assert max(ch.bond_dims) <= 8


def test_overflow_when_truncation_forbidden():
    ch = MpsChain.random([2] * 6, 8, rng())
    mps.canonicalize(ch, 2)
    with pytest.raises(BondOverflowError):
        mps.apply_gate(ch, np.eye(4), 2, TruncationPolicy(max_bond=1, allow_truncation=False))


def test_gate_shape_mismatch():
    ch = MpsChain.random([2, 3], 2, rng())
    with pytest.raises(MpsError):
        mps.apply_gate(ch, np.eye(5), 0)


def test_expectations_and_rdm_match_dense():
    r = rng()
    ch = MpsChain.random([2, 3, 2, 3], 4, r)
    mps.canonicalize(ch, 2)
    psi = ch.to_dense().reshape(2, 3, 2, 3)
    n = np.diag([0, 1, 2]).astype(complex)
    vals = mps.local_expectations(ch, [1, 3], n)
    p = np.abs(psi) ** 2
    assert vals[0] == pytest.approx(np.sum(p.sum(axis=(0, 2, 3)) * np.arange(3)))
    assert vals[1] == pytest.approx(np.sum(p.sum(axis=(0, 1, 2)) * np.arange(3)))
    rho = mps.reduced_density_matrix(ch, [0, 3])
    m = psi.transpose(0, 3, 1, 2).reshape(6, 6)
    assert np.allclose(rho, m @ m.conj().T)
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    both = mps.expect_local(ch, [(0, x), (1, n)])
    dense = np.vdot(psi.reshape(-1), np.kron(np.kron(x, n), np.eye(6)) @ psi.reshape(-1))
    assert both == pytest.approx(dense)


def test_rdm_insert_gives_mixed_expectation():
    r = rng()
    ch = MpsChain.random([2, 3, 3], 3, r)
    mps.canonicalize(ch, 0)
    psi = ch.to_dense()
    a = np.diag(np.sqrt([1.0, 2.0]), 1).astype(complex)
    sp = np.array([[0, 0], [1, 0]], dtype=complex)
    rho = mps.reduced_density_matrix(ch, 0, insert={2: a})
    want = np.vdot(psi, np.kron(sp, np.kron(np.eye(3), a)) @ psi)
    assert np.trace(rho @ sp) == pytest.approx(want)


def test_schmidt_matches_svd():
    ch = MpsChain.random([2, 3, 2, 3], 4, rng())
    mps.canonicalize(ch, 3)
    psi = ch.to_dense().reshape(6, 6)
    s = np.linalg.svd(psi, compute_uv=False)
    spec = mps.schmidt_at_bond(ch, 1)
    k = spec.values.size
    assert np.allclose(np.sort(spec.values)[::-1], s[:k])
    assert spec.entropy() == pytest.approx(mps.spectrum_entropy(s**2))


def test_product_state_entropy_zero():
    ch = MpsChain.product([np.array([1, 0]), np.array([0, 1])])
    assert mps.schmidt_at_bond(ch, 0).entropy() == pytest.approx(0.0)
    assert mps.spectrum_entropy(np.array([0.5, 0.5])) == pytest.approx(1.0)


def test_policy_validation():
    with pytest.raises(ValueError):
        TruncationPolicy(max_bond=0)
    with pytest.raises(ValueError):
        TruncationPolicy(svd_cutoff=1.5)


def test_bond_mismatch_rejected():
    with pytest.raises(MpsError):
        MpsChain([np.zeros((1, 2, 2)), np.zeros((3, 2, 1))])
