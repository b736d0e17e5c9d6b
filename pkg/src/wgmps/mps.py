"""Complex tensor-train states with a single orthogonality center.

Site tensors are indexed ``(left bond, physical, right bond)``.  All
operations mutate the chain in place and return it, so calls can be chained
or used functionally.  Measurements (:func:`expect_local`,
:func:`reduced_density_matrix`, :func:`local_expectations`,
:func:`schmidt_at_bond`) never touch the tensors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from . import _kernels

#: per-call discarded weight above which a :class:`TruncationWarning` is issued
WARN_WEIGHT = 1e-6


class MpsError(ValueError):
    """Invalid index or dimension passed to a tensor-train operation."""


class BondOverflowError(RuntimeError):
    """Raised when a split needs more than ``max_bond`` and truncation is forbidden."""


class TruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TruncationPolicy:
    """How SVD splits are truncated.

    ``svd_cutoff`` is relative to the largest singular value of each split.
    With ``allow_truncation=False`` a split whose rank exceeds ``max_bond``
    raises :class:`BondOverflowError` instead of being cut.
    """

    max_bond: int = 64
    svd_cutoff: float = 1e-10
    allow_truncation: bool = True
    renormalize: bool = False

    def __post_init__(self):
        if self.max_bond < 1:
            raise ValueError("max_bond must be >= 1")
        if not 0.0 <= self.svd_cutoff < 1.0:
            raise ValueError("svd_cutoff must lie in [0, 1)")


DEFAULT_POLICY = TruncationPolicy()


@dataclass(frozen=True)
class SchmidtSpectrum:
    values: np.ndarray

    def probabilities(self) -> np.ndarray:
        return self.values**2

    def entropy(self, base: float = 2.0) -> float:
        """Von Neumann entropy of the squared Schmidt values."""
        return spectrum_entropy(self.values**2, base)


def spectrum_entropy(probs: np.ndarray, base: float = 2.0) -> float:
    p = np.asarray(probs, dtype=float)
    p = p[p > 1e-300]
    if p.size == 0:
        return 0.0
    return float(-np.sum(p * np.log(p)) / np.log(base))


@dataclass
class MpsChain:
    """A tensor train with per-site labels and a truncation audit.

    ``center`` is ``None`` when the chain is not in mixed-canonical form
    (e.g. right after construction from arbitrary tensors).
    """

    sites: list[np.ndarray]
    center: int | None = 0
    labels: list[Any] = field(default_factory=list)
    trunc_weight: float = 0.0

    def __post_init__(self):
        if not self.labels:
            self.labels = list(range(len(self.sites)))
        if len(self.labels) != len(self.sites):
            raise MpsError("one label per site required")
        for i in range(len(self.sites) - 1):
            if self.sites[i].shape[2] != self.sites[i + 1].shape[0]:
                raise MpsError(f"bond mismatch between sites {i} and {i + 1}")

    def __len__(self) -> int:
        return len(self.sites)

    @classmethod
    def product(cls, vectors: Sequence[np.ndarray], labels: Sequence[Any] | None = None):
        """Product state from normalized local vectors (center at site 0)."""
        sites = [np.asarray(v, dtype=complex).reshape(1, -1, 1).copy() for v in vectors]
        return cls(sites, 0, list(labels) if labels is not None else [])

    @classmethod
    def random(cls, dims: Sequence[int], bond: int, rng: np.random.Generator | None = None):
        """Random normalized chain, left non-canonical (``center=None``)."""
        rng = np.random.default_rng() if rng is None else rng
        n = len(dims)
        bonds = [1] + [bond] * (n - 1) + [1]
        sites = []
        for i, d in enumerate(dims):
            shape = (bonds[i], d, bonds[i + 1])
            sites.append(rng.normal(size=shape) + 1j * rng.normal(size=shape))
        chain = cls(sites, None)
        canonicalize(chain, 0)
        chain.sites[0] /= np.linalg.norm(chain.sites[0])
        return chain

    def copy(self) -> "MpsChain":
        return MpsChain([s.copy() for s in self.sites], self.center, list(self.labels), self.trunc_weight)

    @property
    def phys_dims(self) -> list[int]:
        return [s.shape[1] for s in self.sites]

    @property
    def bond_dims(self) -> list[int]:
        return [s.shape[2] for s in self.sites[:-1]]

    def to_dense(self) -> np.ndarray:
        """Full state vector (first site most significant)."""
        psi = self.sites[0]
        for s in self.sites[1:]:
            psi = np.tensordot(psi, s, axes=(psi.ndim - 1, 0))
        return psi.reshape(-1) if psi.shape[0] == 1 and psi.shape[-1] == 1 else psi

    def norm(self) -> float:
        if self.center is not None:
            return float(np.linalg.norm(self.sites[self.center]))
        env = np.ones((1, 1), dtype=complex)
        for a in self.sites:
            env = np.einsum("ab,asc,bsd->cd", env, a.conj(), a, optimize=True)
        return float(np.sqrt(abs(np.trace(env))))


def _check_site(chain: MpsChain, i: int) -> None:
    if not 0 <= i < len(chain):
        raise MpsError(f"site index {i} out of range for chain of length {len(chain)}")


def _move_right(chain: MpsChain, i: int) -> None:
    a = chain.sites[i]
    chi_l, d, chi_r = a.shape
    q, r = _kernels.block_qr(a.reshape(chi_l * d, chi_r))
    chain.sites[i] = q.reshape(chi_l, d, q.shape[1])
    chain.sites[i + 1] = np.tensordot(r, chain.sites[i + 1], axes=(1, 0))


def _move_left(chain: MpsChain, i: int) -> None:
    a = chain.sites[i]
    chi_l, d, chi_r = a.shape
    q, r = _kernels.block_qr(a.reshape(chi_l, d * chi_r).T)
    chain.sites[i] = q.T.reshape(q.shape[1], d, chi_r)
    chain.sites[i - 1] = np.tensordot(chain.sites[i - 1], r.T, axes=(2, 0))


def canonicalize(chain: MpsChain, target: int) -> MpsChain:
    """Move the orthogonality center to ``target`` with QR sweeps."""
    _check_site(chain, target)
    if chain.center is None:
        for i in range(target):
            _move_right(chain, i)
        for i in range(len(chain) - 1, target, -1):
            _move_left(chain, i)
    else:
        for i in range(chain.center, target):
            _move_right(chain, i)
        for i in range(chain.center, target, -1):
            _move_left(chain, i)
    chain.center = target
    return chain


def _record_truncation(chain: MpsChain, weight: float, where: str) -> None:
    chain.trunc_weight += weight
    if weight > WARN_WEIGHT:
        warnings.warn(f"discarded weight {weight:.3g} at {where}", TruncationWarning, stacklevel=3)


def _split(theta: np.ndarray, dims: Sequence[int], policy: TruncationPolicy, center: int):
    """Split (chi_l, d_0, ..., d_{k-1}, chi_r) into k sites, center at offset ``center``."""
    k = len(dims)
    chi_l, chi_r = theta.shape[0], theta.shape[-1]
    out: list[np.ndarray | None] = [None] * k
    weight = 0.0
    rest = theta
    left = chi_l
    for i in range(center):
        mat = rest.reshape(left * dims[i], -1)
        u, s, vh, disc, full = _kernels.truncated_svd(mat, policy.svd_cutoff, policy.max_bond)
        _check_overflow(policy, full)
        weight += disc
        out[i] = u.reshape(left, dims[i], s.shape[0])
        left = s.shape[0]
        rest = (s[:, None] * vh).reshape((left,) + tuple(dims[i + 1 :]) + (chi_r,))
    right = chi_r
    for j in range(k - 1, center, -1):
        mat = rest.reshape(-1, dims[j] * right)
        u, s, vh, disc, full = _kernels.truncated_svd(mat, policy.svd_cutoff, policy.max_bond)
        _check_overflow(policy, full)
        weight += disc
        out[j] = vh.reshape(s.shape[0], dims[j], right)
        right = s.shape[0]
        rest = (u * s[None, :]).reshape((left,) + tuple(dims[center:j]) + (right,))
    out[center] = rest.reshape(left, dims[center], right)
    return out, weight


def _check_overflow(policy: TruncationPolicy, full_rank: int) -> None:
    if not policy.allow_truncation and full_rank > policy.max_bond:
        raise BondOverflowError(f"split needs bond {full_rank} > max_bond {policy.max_bond}")


def apply_gate(
    chain: MpsChain,
    gate: np.ndarray,
    first: int,
    policy: TruncationPolicy = DEFAULT_POLICY,
    *,
    perm: Sequence[int] | None = None,
    center: int = 0,
) -> tuple[MpsChain, float]:
    """Apply a unitary on ``k`` contiguous sites starting at ``first``.

    The gate acts on the Kronecker product of the window's physical spaces
    (first site most significant).  ``perm`` optionally reorders the window's
    sites after the gate (``perm[j]`` is the old offset placed at new offset
    ``j``), labels included.  ``center`` is the window offset that carries
    the orthogonality center afterwards.

    Returns the chain and the discarded weight of this application.
    """
    gate = np.asarray(gate)
    dims_in = []
    span = 1
    while span < gate.shape[0] and first + len(dims_in) < len(chain):
        dims_in.append(chain.sites[first + len(dims_in)].shape[1])
        span *= dims_in[-1]
    k = len(dims_in)
    if gate.ndim != 2 or gate.shape[0] != gate.shape[1] or span != gate.shape[0] or k == 0:
        raise MpsError(f"gate of shape {gate.shape} does not match physical dims at site {first}")
    _check_site(chain, first)
    _check_site(chain, first + k - 1)
    if chain.center is None or not first <= chain.center < first + k:
        canonicalize(chain, first)

    theta = chain.sites[first]
    for i in range(1, k):
        theta = np.tensordot(theta, chain.sites[first + i], axes=(theta.ndim - 1, 0))
    chi_l, chi_r = theta.shape[0], theta.shape[-1]
    theta = theta.reshape(chi_l, span, chi_r)
    theta = np.tensordot(gate, theta, axes=(1, 1)).transpose(1, 0, 2)
    theta = theta.reshape((chi_l,) + tuple(dims_in) + (chi_r,))
    dims = list(dims_in)
    if perm is not None:
        perm = list(perm)
        if sorted(perm) != list(range(k)):
            raise MpsError(f"perm {perm} is not a permutation of {k} sites")
        theta = theta.transpose([0] + [p + 1 for p in perm] + [k + 1])
        dims = [dims_in[p] for p in perm]
        old = chain.labels[first : first + k]
        chain.labels[first : first + k] = [old[p] for p in perm]

    if not 0 <= center < k:
        raise MpsError(f"center offset {center} outside window of {k} sites")
    new_sites, weight = _split(theta, dims, policy, center)
    chain.sites[first : first + k] = new_sites
    chain.center = first + center
    if policy.renormalize:
        chain.sites[chain.center] /= np.linalg.norm(chain.sites[chain.center])
    _record_truncation(chain, weight, f"gate on sites {first}..{first + k - 1}")
    return chain, weight


def swap_adjacent(
    chain: MpsChain,
    i: int,
    policy: TruncationPolicy = DEFAULT_POLICY,
    *,
    center_left: bool = False,
) -> MpsChain:
    """Exchange sites ``i`` and ``i+1`` (tensors and labels)."""
    _check_site(chain, i)
    _check_site(chain, i + 1)
    if chain.center is None or chain.center not in (i, i + 1):
        canonicalize(chain, i)
    a2, b2, disc, full = _kernels.swap_sites(
        chain.sites[i], chain.sites[i + 1], policy.svd_cutoff, policy.max_bond, center_left
    )
    _check_overflow(policy, full)
    chain.sites[i], chain.sites[i + 1] = a2, b2
    chain.labels[i], chain.labels[i + 1] = chain.labels[i + 1], chain.labels[i]
    chain.center = i if center_left else i + 1
    if policy.renormalize:
        chain.sites[chain.center] /= np.linalg.norm(chain.sites[chain.center])
    _record_truncation(chain, disc, f"swap {i}<->{i + 1}")
    return chain


# --------------------------------------------------------------------------
# read-only measurements
#
# Environments are stored as E[ket, bra] on a bond.  Sites left of the center
# are left-canonical and sites right of it right-canonical, so an environment
# started at the center (or at the span edge) with the identity is exact.
# --------------------------------------------------------------------------


def _span(chain: MpsChain, sites: Sequence[int]) -> tuple[int, int]:
    if chain.center is None:
        raise MpsError("chain has no orthogonality center; call canonicalize first")
    lo = min(min(sites), chain.center)
    hi = max(max(sites), chain.center)
    return lo, hi


def _apply_phys(op: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.tensordot(op, a, axes=(1, 1)).transpose(1, 0, 2)


def _grow_left_env(env: np.ndarray, a: np.ndarray, ket: np.ndarray | None = None) -> np.ndarray:
    ket = a if ket is None else ket
    half = np.tensordot(env, ket, axes=(0, 0))  # (bra_l, s, ket_r)
    return np.tensordot(half, a.conj(), axes=([0, 1], [0, 1]))  # (ket_r, bra_r)


def _grow_right_env(env: np.ndarray, a: np.ndarray, ket: np.ndarray | None = None) -> np.ndarray:
    ket = a if ket is None else ket
    half = np.tensordot(ket, env, axes=(2, 0))  # (ket_l, s, bra_r)
    return np.tensordot(half, a.conj(), axes=([1, 2], [1, 2]))  # (ket_l, bra_l)


def expect_local(chain: MpsChain, operators: Sequence[tuple[int, np.ndarray]]) -> complex:
    """<psi| prod_i O_i |psi> for operators on distinct sites.

    The contraction runs between the leftmost of (operator sites, center) and
    the rightmost of them; outside that span the canonical form supplies
    identity environments.
    """
    ops = {}
    for site, mat in operators:
        _check_site(chain, site)
        mat = np.asarray(mat)
        d = chain.sites[site].shape[1]
        if mat.shape != (d, d):
            raise MpsError(f"operator of shape {mat.shape} on site {site} with dim {d}")
        if site in ops:
            raise MpsError(f"site {site} appears twice")
        ops[site] = mat
    if chain.center is None:
        raise MpsError("chain has no orthogonality center; call canonicalize first")
    if not ops:
        return complex(np.linalg.norm(chain.sites[chain.center]) ** 2)
    lo, hi = _span(chain, list(ops))
    env = np.eye(chain.sites[lo].shape[0], dtype=complex)
    for i in range(lo, hi + 1):
        a = chain.sites[i]
        env = _grow_left_env(env, a, _apply_phys(ops[i], a) if i in ops else None)
    return complex(np.trace(env))


def local_expectations(chain: MpsChain, sites: Sequence[int], op: np.ndarray) -> np.ndarray:
    """<O> on every listed site, each site sweep sharing its environments."""
    sites = sorted(set(int(s) for s in sites))
    if not sites:
        return np.zeros(0, dtype=complex)
    for s in sites:
        _check_site(chain, s)
    c = chain.center
    if c is None:
        raise MpsError("chain has no orthogonality center")
    out: dict[int, complex] = {}
    right = [s for s in sites if s >= c]
    left = [s for s in sites if s < c]
    if right:
        env = np.eye(chain.sites[c].shape[0], dtype=complex)
        want = set(right)
        for i in range(c, right[-1] + 1):
            a = chain.sites[i]
            if i in want:
                out[i] = complex(np.trace(_grow_left_env(env, a, _apply_phys(op, a))))
            env = _grow_left_env(env, a)
    if left:
        a = chain.sites[c]
        env = _grow_right_env(np.eye(a.shape[2], dtype=complex), a)
        want = set(left)
        for i in range(c - 1, left[0] - 1, -1):
            a = chain.sites[i]
            if i in want:
                out[i] = complex(np.trace(_grow_right_env(env, a, _apply_phys(op, a))))
            env = _grow_right_env(env, a)
    return np.array([out[s] for s in sites])


def reduced_density_matrix(
    chain: MpsChain,
    sites: int | Sequence[int],
    insert: Mapping[int, np.ndarray] | None = None,
) -> np.ndarray:
    """Density matrix ``rho[ket, bra]`` on one or more sites.

    The matrix acts on the Kronecker product of the listed sites in
    increasing site order (lowest index most significant).

    ``insert`` maps other sites to operators applied on the ket side before
    tracing them out, giving ``Tr_rest(O |psi><psi|)``.  Then
    ``trace(rho @ A) = <psi| O A |psi>`` without opening the ``O`` legs.
    """
    if isinstance(sites, (int, np.integer)):
        sites = [int(sites)]
    sites = sorted(int(s) for s in sites)
    insert = {} if insert is None else {int(k): np.asarray(v) for k, v in insert.items()}
    if len(set(sites)) != len(sites) or set(sites) & set(insert):
        raise MpsError("duplicate sites")
    for s in sites + list(insert):
        _check_site(chain, s)
    lo, hi = _span(chain, sites + list(insert))
    # env legs: (ket_bond, bra_bond, k_1, b_1, k_2, b_2, ...)
    env = np.eye(chain.sites[lo].shape[0], dtype=complex)
    nopen = 0
    for i in range(lo, hi + 1):
        a = chain.sites[i]
        ket = _apply_phys(insert[i], a) if i in insert else a
        x = np.tensordot(env, ket, axes=(0, 0))  # (bra, opens..., s_k, r_k)
        if i in sites:
            x = np.tensordot(x, a.conj(), axes=(0, 0))  # (opens..., s_k, r_k, s_b, r_b)
            m = 2 * nopen
            env = x.transpose([m + 1, m + 3] + list(range(m)) + [m, m + 2])
            nopen += 1
        else:
            nd = x.ndim
            x = np.tensordot(x, a.conj(), axes=([0, nd - 2], [0, 1]))  # (opens..., r_k, r_b)
            env = np.moveaxis(x, [-2, -1], [0, 1])
    rho = np.trace(env, axis1=0, axis2=1)
    n = len(sites)
    rho = rho.transpose([2 * j for j in range(n)] + [2 * j + 1 for j in range(n)])
    dim = int(np.prod([chain.sites[s].shape[1] for s in sites]))
    return rho.reshape(dim, dim)


def schmidt_at_bond(chain: MpsChain, bond: int) -> SchmidtSpectrum:
    """Schmidt values across the bond between sites ``bond`` and ``bond+1``."""
    if not 0 <= bond < len(chain) - 1:
        raise MpsError(f"bond {bond} out of range")
    c = chain.center
    if c is None:
        raise MpsError("chain has no orthogonality center")
    a = chain.sites[c]
    chi_l, d, chi_r = a.shape
    if c == bond + 1:
        s = np.linalg.svd(a.reshape(chi_l, d * chi_r), compute_uv=False)
    elif c == bond:
        s = np.linalg.svd(a.reshape(chi_l * d, chi_r), compute_uv=False)
    else:
        if c < bond:
            env = np.eye(chi_l, dtype=complex)
            for i in range(c, bond + 1):
                env = _grow_left_env(env, chain.sites[i])
        else:
            env = np.eye(chi_r, dtype=complex)
            for i in range(c, bond, -1):
                env = _grow_right_env(env, chain.sites[i])
        lam = np.linalg.eigvalsh(0.5 * (env + env.conj().T))
        s = np.sqrt(np.clip(lam[::-1], 0.0, None))
    return SchmidtSpectrum(np.asarray(s, dtype=float))
