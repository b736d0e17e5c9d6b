"""Brute-force reference: dense amplitudes in the excitation-truncated basis.

A basis state is a qubit configuration plus a multiset of occupied time
bins.  Total excitation number is conserved by the step gate, so the
subspace with at most ``e_max`` excitations is closed and the evolution is
exact there.  The same gate matrix is used as in the tensor-train engine;
only the state representation and its update differ.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from . import _kernels
from .engine import BinRegistry, steps_for
from .model import PhysicalParams, StepGate, build_step_gate, excitation_count, gate_roles, sigma_plus
from .mps import spectrum_entropy
from .observables import ObservableSeries
from .states import resolve


class BasisOverflowError(RuntimeError):
    """Amplitude left the enumerated sector (e_max or n_max too small)."""


def _bin_id(index: int, direction: str, l: int) -> int:
    return 2 * (index + l) + (0 if direction == "L" else 1)


@dataclass
class SectorBasis:
    """Every (qubit configuration, photon multiset) with at most ``e_max`` excitations.

    ``photons`` rows hold occupied bin ids in descending order, padded with
    -1.  Bin ids are ``2 (j + l)`` for left-moving and ``2 (j + l) + 1`` for
    right-moving bins of time index ``j``.
    """

    n_qubits: int
    n_bins: int
    e_max: int
    n_max: int
    qcfg: np.ndarray = field(repr=False)
    photons: np.ndarray = field(repr=False)
    keys: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, n_qubits: int, n_bins: int, e_max: int, n_max: int) -> "SectorBasis":
        exc = excitation_count(n_qubits)
        width = max(e_max, 1)
        q_rows, p_rows = [], []
        for n_ph in range(e_max + 1):
            qs = np.flatnonzero(exc <= e_max - n_ph)
            multisets = [
                c
                for c in itertools.combinations_with_replacement(range(n_bins - 1, -1, -1), n_ph)
                if n_ph <= n_max or max(c.count(b) for b in set(c)) <= n_max
            ]
            ph = np.full((len(multisets), width), -1, dtype=np.int64)
            for i, c in enumerate(multisets):
                ph[i, :n_ph] = c
            q_rows.append(np.repeat(qs, len(multisets)))
            p_rows.append(np.tile(ph, (qs.size, 1)))
        qcfg = np.concatenate(q_rows).astype(np.int64)
        photons = np.concatenate(p_rows)
        basis = cls(n_qubits, n_bins, e_max, n_max, qcfg, photons, np.empty(0, dtype=np.int64))
        keys = basis.encode(qcfg, photons)
        order = np.argsort(keys, kind="stable")
        basis.qcfg, basis.photons, basis.keys = qcfg[order], photons[order], keys[order]
        if np.any(np.diff(basis.keys) == 0):
            raise RuntimeError("duplicate basis keys")
        return basis

    def __len__(self) -> int:
        return self.keys.size

    @property
    def radix(self) -> int:
        return self.n_bins + 1

    def photon_key(self, photons: np.ndarray) -> np.ndarray:
        mult = self.radix ** np.arange(photons.shape[1], dtype=np.int64)
        return (photons + 1) @ mult

    def encode(self, qcfg: np.ndarray, photons: np.ndarray) -> np.ndarray:
        return np.asarray(qcfg, dtype=np.int64) * self.radix ** photons.shape[1] + self.photon_key(photons)

    def lookup(self, keys: np.ndarray) -> np.ndarray:
        """Basis index for every key; -1 where the key is not in the basis."""
        idx = np.searchsorted(self.keys, keys)
        idx = np.clip(idx, 0, len(self) - 1)
        return np.where(self.keys[idx] == keys, idx, -1)

    def index_of(self, qcfg: int, photons) -> int:
        ph = np.full((1, self.photons.shape[1]), -1, dtype=np.int64)
        srt = sorted(photons, reverse=True)
        if len(srt) > ph.shape[1]:
            return -1
        ph[0, : len(srt)] = srt
        return int(self.lookup(self.encode(np.array([qcfg]), ph))[0])

    def occupation(self, bin_id: int) -> np.ndarray:
        return np.count_nonzero(self.photons == bin_id, axis=1)


@dataclass
class SectorState:
    basis: SectorBasis
    amplitudes: np.ndarray
    k: int = 0

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def _sorted_desc(rows: np.ndarray) -> np.ndarray:
    return -np.sort(-rows, axis=1)


class DenseEvolver:
    """Applies the step gate to a :class:`SectorState` in place."""

    def __init__(self, params: PhysicalParams, basis: SectorBasis, gate: StepGate, n_steps: int):
        self.params = params
        self.basis = basis
        self.gate = gate
        self.registry = BinRegistry(params.l, n_steps)
        roles, dims = gate_roles(params)
        self.roles = roles
        self.dims = np.array(dims, dtype=np.int64)
        self.sys_slot = roles.index("system")
        # local index -> (qubit configuration, photon occupancy per bin slot)
        grid = np.indices(dims).reshape(len(dims), -1).T
        self.local_q = grid[:, self.sys_slot]
        self.local_occ = np.delete(grid, self.sys_slot, axis=1)
        self._utrans = gate.matrix.T.copy()

    def active_bins(self, k: int) -> np.ndarray:
        l = self.params.l
        ids = []
        for role in self.roles:
            if role == "system":
                continue
            kind, direction = role.split("_")
            j = k - l if kind == "delayed" else k
            ids.append(_bin_id(j, direction, l))
        return np.array(ids, dtype=np.int64)

    def step(self, state: SectorState) -> None:
        basis = self.basis
        if state.k >= self.registry.n_steps:
            raise IndexError("no preallocated bins left; increase the horizon")
        active = self.active_bins(state.k)
        affected, local, restkey = _kernels.classify_states(
            basis.qcfg, basis.photons, active, self.sys_slot, self.dims, basis.radix
        )
        idx = np.flatnonzero(affected)
        amps = state.amplitudes[idx]
        groups, first, g = np.unique(restkey[idx], return_index=True, return_inverse=True)
        m = np.zeros((groups.size, self.local_q.size), dtype=complex)
        m[g, local[idx]] = amps
        m = m @ self._utrans
        gi, li = np.nonzero(m)

        rep = basis.photons[idx[first]]
        rest = _sorted_desc(np.where(np.isin(rep, active), -1, rep))
        occ = self.local_occ[li]
        width = basis.photons.shape[1]
        loc_ph = np.full((li.size, int(occ.sum(axis=1).max(initial=0))), -1, dtype=np.int64)
        fill = np.zeros(li.size, dtype=np.int64)
        for slot, bin_id in enumerate(active):
            for rep_n in range(1, self.params.bin_dim):
                hit = occ[:, slot] >= rep_n
                loc_ph[hit, fill[hit]] = bin_id
                fill[hit] += 1
        merged = _sorted_desc(np.concatenate([rest[gi], loc_ph], axis=1))
        if merged.shape[1] > width and np.any(merged[:, width:] >= 0):
            raise BasisOverflowError("state needs more photons than e_max allows")
        keys = basis.encode(self.local_q[li], merged[:, :width])
        target = basis.lookup(keys)
        if np.any(target < 0):
            raise BasisOverflowError("step produced a configuration outside the sector")
        new = state.amplitudes.copy()
        new[idx] = 0.0
        new[target] = m[gi, li]
        state.amplitudes = new
        state.k += 1


class DenseObservables:
    """Same quantities as :mod:`wgmps.observables`, from sector amplitudes."""

    def __init__(self, params: PhysicalParams, basis: SectorBasis, n_steps: int, n0: float):
        self.params = params
        self.basis = basis
        self.n_steps = n_steps
        self.n0 = n0
        pk = basis.photon_key(basis.photons)
        _, self.pgroup = np.unique(pk, return_inverse=True)
        self.n_pgroups = int(self.pgroup.max()) + 1
        self.nout = {"L": 0.0, "R": 0.0}
        self.last = {"L": 0.0, "R": 0.0}
        self._width = basis.photons.shape[1]

    def _bin_populations(self, probs: np.ndarray) -> np.ndarray:
        ph = self.basis.photons
        w = np.repeat(probs, ph.shape[1]).reshape(ph.shape)
        ok = ph >= 0
        return np.bincount(ph[ok], weights=w[ok], minlength=self.basis.n_bins)

    def _rho_sys(self, amps: np.ndarray) -> np.ndarray:
        dim = 2**self.params.n_qubits
        a = np.zeros((self.n_pgroups, dim), dtype=complex)
        a[self.pgroup, self.basis.qcfg] = amps
        return a.T @ a.conj()

    def _move(self, src: int, dst: int | None, qubit: int | None = None):
        """Basis map for removing a photon from bin ``src`` (and adding one to ``dst``
        or raising ``qubit``).  Returns (from_idx, to_idx, amplitude factor)."""
        basis = self.basis
        n_src = basis.occupation(src)
        frm = np.flatnonzero(n_src > 0)
        ph = basis.photons[frm].copy()
        hit = ph == src
        first = np.argmax(hit, axis=1)
        factor = np.sqrt(n_src[frm].astype(float))
        q = basis.qcfg[frm]
        if dst is not None:
            factor = factor * np.sqrt(basis.occupation(dst)[frm] + 1.0)
            ph[np.arange(frm.size), first] = dst
        else:
            ph[np.arange(frm.size), first] = -1
            bit = 1 << (self.params.n_qubits - 1 - qubit)
            up = (q & bit) == 0
            frm, ph, factor, q = frm[up], ph[up], factor[up], q[up] | bit
        to = basis.lookup(basis.encode(q, _sorted_desc(ph)))
        ok = to >= 0
        return frm[ok], to[ok], factor[ok]

    def _circuit_entropy(self, amps: np.ndarray, reg: BinRegistry) -> float:
        """Schmidt entropy of (qubits + loop bins) against released bins."""
        basis = self.basis
        cut = 2 * reg.k  # bin ids below this are released
        ph = basis.photons
        released = np.where((ph >= 0) & (ph < cut), ph, -1)
        inside = np.where(ph >= cut, ph, -1)
        n_out = np.count_nonzero(released >= 0, axis=1)
        nz = np.flatnonzero(amps != 0)
        probs = []
        for nb in np.unique(n_out[nz]):
            sel = nz[n_out[nz] == nb]
            akey = basis.encode(basis.qcfg[sel], _sorted_desc(inside[sel]))
            bkey = basis.photon_key(_sorted_desc(released[sel]))
            _, ai = np.unique(akey, return_inverse=True)
            _, bi = np.unique(bkey, return_inverse=True)
            psi = scipy.sparse.csr_matrix((amps[sel], (ai, bi)))
            gram = psi @ psi.conj().T if psi.shape[0] <= psi.shape[1] else psi.conj().T @ psi
            probs.append(np.linalg.eigvalsh(gram.toarray()))
        lam = np.clip(np.concatenate(probs), 0.0, None) if probs else np.zeros(1)
        return spectrum_entropy(lam) / self.params.n_qubits

    def measure(self, state: SectorState) -> dict:
        p = self.params
        basis = self.basis
        l, dt, nq = p.l, p.dt, p.n_qubits
        reg = BinRegistry(l, self.n_steps, state.k)
        amps = state.amplitudes
        prob = np.abs(amps) ** 2
        pops = self._bin_populations(prob)
        rho = self._rho_sys(amps)
        diag = np.real(np.diag(rho))
        exc = excitation_count(nq)
        idx = np.arange(2**nq)
        rec = {
            "n_tls": np.array([diag[((idx >> (nq - 1 - q)) & 1) == 1].sum() for q in range(nq)]),
            "P": np.bincount(exc, weights=diag, minlength=nq + 1),
        }
        j = reg.released_last()
        if j is not None:
            self.last = {d: float(pops[_bin_id(j, d, l)]) for d in ("L", "R")}
            # the pair released at this step was not counted before
            for d in ("L", "R"):
                self.nout[d] += self.last[d]
        window = reg.loop_window()
        nin = {d: float(sum(pops[_bin_id(i, d, l)] for i in window)) for d in ("L", "R")}
        rec.update(
            nout_R=self.last["R"] / dt if j is not None else 0.0,
            nout_L=self.last["L"] / dt if j is not None else 0.0,
            Nout_R=self.nout["R"],
            Nout_L=self.nout["L"],
            Nin_R=nin["R"],
            Nin_L=nin["L"],
        )
        lam = np.clip(np.linalg.eigvalsh(rho), 0.0, None)
        rec["S_a"] = spectrum_entropy(lam) / nq
        rec["S_c"] = 0.0 if reg.k == 0 else self._circuit_entropy(amps, reg)

        rec["g1_R"] = rec["g2_R"] = 0.0
        rec["corr_LR"] = 0j
        if j is not None:
            br, bl = _bin_id(j, "R", l), _bin_id(j, "L", l)
            n_r = basis.occupation(br)
            rec["g1_R"] = float(np.dot(prob, n_r)) / dt
            rec["g2_R"] = float(np.dot(prob, n_r * (n_r - 1))) / dt**2
            frm, to, fac = self._move(br, bl)
            rec["corr_LR"] = complex(np.sum(amps[frm] * fac * amps[to].conj())) / dt
        s1p = sigma_plus(nq, 0)
        s2m = sigma_plus(nq, 1).conj().T
        rec["corr_atoms"] = complex(np.trace(rho @ s1p @ s2m))
        corr_af = np.zeros(nq, dtype=complex)
        if l > 0:
            src = _bin_id(reg.incoming_index(), "R", l)
            for q in range(nq):
                frm, to, fac = self._move(src, None, qubit=q)
                corr_af[q] = np.sum(amps[frm] * fac * amps[to].conj()) / math.sqrt(dt)
        rec["corr_af"] = corr_af
        total = float(np.dot(np.arange(rec["P"].size), rec["P"]))
        total += sum(self.nout.values()) + sum(nin.values())
        rec["cons_residual"] = abs(total - self.n0)
        rec["trunc_weight"] = 0.0
        rec["norm_drift"] = abs(state.norm() - 1.0)
        return rec


def initial_sector_state(basis: SectorBasis, initial) -> SectorState:
    initial = resolve(initial)
    amps = np.zeros(len(basis), dtype=complex)
    empty = np.full((1, basis.photons.shape[1]), -1, dtype=np.int64)
    for q, c in enumerate(initial.amplitudes):
        if c == 0:
            continue
        i = basis.lookup(basis.encode(np.array([q]), empty))[0]
        if i < 0:
            raise BasisOverflowError("initial state has more excitations than e_max")
        amps[i] = c
    return SectorState(basis, amps)


def evolve_dense(
    params: PhysicalParams,
    initial,
    horizon: float,
    stride: int = 1,
    e_max: int = 2,
    gate: StepGate | None = None,
    max_states: int = 5_000_000,
) -> ObservableSeries:
    """Exact sector evolution sampled like :func:`wgmps.engine.run`."""
    initial = resolve(initial)
    if initial.max_excitations() > e_max:
        raise ValueError(f"e_max={e_max} below the initial excitation number")
    if initial.n_qubits != params.n_qubits:
        raise ValueError("initial state does not match n_qubits")
    n_steps = steps_for(horizon, params.dt)
    l = params.l
    if n_steps < l:
        raise ValueError(f"horizon of {n_steps} steps is shorter than the delay of {l} bins")
    n_bins = 2 * (n_steps + l)
    estimate = (2**params.n_qubits) * math.comb(n_bins + e_max, e_max)
    if estimate > 4 * max_states:
        raise BasisOverflowError(f"sector basis would hold ~{estimate} states")
    basis = SectorBasis.build(params.n_qubits, n_bins, e_max, params.n_max)
    if len(basis) > max_states:
        raise BasisOverflowError(f"sector basis holds {len(basis)} states > {max_states}")
    gate = build_step_gate(params) if gate is None else gate
    evolver = DenseEvolver(params, basis, gate, n_steps)
    state = initial_sector_state(basis, initial)
    obs = DenseObservables(params, basis, n_steps, initial.mean_excitations())

    series = ObservableSeries(params.n_qubits)
    series.meta.update(
        backend="dense-sector",
        params=params.to_dict(),
        initial=initial.label,
        e_max=e_max,
        basis_size=len(basis),
        gate_checksum=gate.checksum(),
    )
    series.append(0.0, obs.measure(state))
    for _ in range(n_steps):
        evolver.step(state)
        rec = obs.measure(state)  # every step: keeps the running out-flux sums
        if state.k % stride == 0 or state.k == n_steps:
            series.append(state.k * params.dt, rec)
    series.meta["norm_drift"] = abs(state.norm() - 1.0)
    return series


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------

AUDIT_ONLY = ("trunc_weight", "norm_drift", "cons_residual")


@dataclass
class FieldReport:
    name: str
    max_dev: float
    first_exceed: float | None
    passed: bool


@dataclass
class CompareReport:
    tol: float
    fields: list[FieldReport]

    @property
    def passed(self) -> bool:
        return all(f.passed for f in self.fields)

    @property
    def max_dev(self) -> float:
        return max((f.max_dev for f in self.fields), default=0.0)

    def worst(self) -> FieldReport | None:
        return max(self.fields, key=lambda f: f.max_dev, default=None)

    def summary(self) -> str:
        w = self.worst()
        if w is None:
            return "no fields compared"
        state = "ok" if self.passed else "FAIL"
        return f"{state}: max deviation {w.max_dev:.3g} in {w.name} (tol {self.tol:g})"


def compare(series_a: ObservableSeries, series_b: ObservableSeries, fields=None, tol: float = 1e-6) -> CompareReport:
    """Per-field max absolute deviation between two series on the same grid."""
    ta, tb = series_a["t"], series_b["t"]
    if ta.shape != tb.shape or not np.allclose(ta, tb, rtol=0, atol=1e-12):
        raise ValueError("series are sampled on different time grids")
    if fields is None:
        fields = [f for f in series_a.fields if f in series_b.fields and f not in AUDIT_ONLY]
    reports = []
    for name in fields:
        dev = np.abs(series_a[name] - series_b[name])
        bad = np.flatnonzero(dev > tol)
        reports.append(
            FieldReport(
                name,
                float(dev.max(initial=0.0)),
                float(ta[bad[0]]) if bad.size else None,
                bad.size == 0,
            )
        )
    return CompareReport(tol, reports)
