"""Measurements on a :class:`~wgmps.engine.SimulationState` and their time series.

Field operators are normalized per quantum: ``b = a / sqrt(dt)`` for a bin
ladder operator ``a``.  Output-field correlators (``g1_R``, ``g2_R``,
``corr_LR``) use the pair released by the latest step, i.e. right after its
last interaction.  The atom-field correlator ``<sigma_n^+ b_R>`` uses the
right-moving bin that is about to re-enter the emitters (the oldest
right-moving loop bin); in the Markovian limit that bin is always fresh
vacuum and the correlator vanishes identically.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import mps
from .model import annihilator, excitation_count, number_op, qubit_excited, sigma_plus

SCHEMA_VERSION = 1


# --------------------------------------------------------------------------
# reductions on the chain
# --------------------------------------------------------------------------


def system_rdm(state) -> np.ndarray:
    cache = state._cache
    if "rho_sys" not in cache:
        pos = state.registry.system_position
        cache["rho_sys"] = mps.reduced_density_matrix(state.chain, pos)
    return cache["rho_sys"]


def qubit_populations(state) -> np.ndarray:
    diag = np.real(np.diag(system_rdm(state)))
    n = state.params.n_qubits
    return np.array([diag[qubit_excited(n, q)].sum() for q in range(n)])


def excitation_probabilities(state) -> np.ndarray:
    """P(m) of m excited qubits for m = 0..n_qubits.

    Each P(m) is the sum of projectors onto configurations with exactly m
    excited qubits.
    """
    diag = np.real(np.diag(system_rdm(state)))
    n = state.params.n_qubits
    return np.bincount(excitation_count(n), weights=diag, minlength=n + 1)


def fluxes(state) -> dict:
    """Instantaneous out-fluxes, integrated out-fluxes and loop populations."""
    reg, dt = state.registry, state.params.dt
    nin = {"L": 0.0, "R": 0.0}
    window = reg.loop_window()
    if window:
        n = number_op(state.params.bin_dim)
        for d in ("L", "R"):
            pos = [reg.position(j, d) for j in window]
            nin[d] = float(np.sum(np.real(mps.local_expectations(state.chain, pos, n))))
    if reg.k == 0:
        inst = {"L": 0.0, "R": 0.0}
    else:
        inst = {d: state.last_released[d] / dt for d in ("L", "R")}
    return {
        "nout_R": inst["R"],
        "nout_L": inst["L"],
        "Nout_R": state.nout["R"],
        "Nout_L": state.nout["L"],
        "Nin_R": nin["R"],
        "Nin_L": nin["L"],
    }


def entropy_atomic(state) -> float:
    """Qubits-vs-rest entanglement entropy in bits, divided by the qubit count."""
    lam = np.linalg.eigvalsh(system_rdm(state))
    return mps.spectrum_entropy(np.clip(lam, 0.0, None)) / state.params.n_qubits


def entropy_circuit(state) -> float:
    """Entropy of (qubits + loop bins) against the rest, divided by the qubit count."""
    reg = state.registry
    start = reg.loop_start
    if start == 0:
        return 0.0  # nothing has left the circuit yet
    circuit = state.chain.labels[start : reg.system_position + 1]
    if any(lab.kind == "bin" and lab.index < reg.k - reg.l for lab in circuit):
        raise RuntimeError("layout violation: released bin inside the circuit block")
    spec = mps.schmidt_at_bond(state.chain, start - 1)
    return spec.entropy() / state.params.n_qubits


def correlations(state) -> dict:
    """One-time field, atom-atom and atom-field correlators."""
    reg, p = state.registry, state.params
    dt = p.dt
    nq = p.n_qubits
    out = {"g1_R": 0.0, "g2_R": 0.0, "corr_LR": 0j}
    a = annihilator(p.bin_dim)
    j = reg.released_last()
    if j is not None:
        pl, pr = reg.position(j, "L"), reg.position(j, "R")
        rho = mps.reduced_density_matrix(state.chain, [pl, pr])  # (L, R)
        d = p.bin_dim
        eye = np.eye(d)
        n_r = np.kron(eye, number_op(d))
        nn_r = np.kron(eye, a.conj().T @ a.conj().T @ a @ a)
        ldag_r = np.kron(a.conj().T, a)
        out["g1_R"] = float(np.real(np.trace(rho @ n_r))) / dt
        out["g2_R"] = float(np.real(np.trace(rho @ nn_r))) / dt**2
        out["corr_LR"] = complex(np.trace(rho @ ldag_r)) / dt

    rho_s = system_rdm(state)
    s1p = sigma_plus(nq, 0)
    s2m = sigma_plus(nq, 1).conj().T
    out["corr_atoms"] = complex(np.trace(rho_s @ s1p @ s2m))

    corr_af = np.zeros(nq, dtype=complex)
    if reg.l > 0:
        pr = reg.position(reg.incoming_index(), "R")
        rho_a = mps.reduced_density_matrix(state.chain, reg.system_position, insert={pr: a})
        for n in range(nq):
            corr_af[n] = np.trace(rho_a @ sigma_plus(nq, n)) / np.sqrt(dt)
    out["corr_af"] = corr_af
    return out


def conservation_residual(state, probs: np.ndarray | None = None, flux: dict | None = None) -> float:
    """|sum_m m P(m) + Nout + Nin - N(0)|."""
    probs = excitation_probabilities(state) if probs is None else probs
    flux = fluxes(state) if flux is None else flux
    total = float(np.dot(np.arange(probs.size), probs))
    total += flux["Nout_R"] + flux["Nout_L"] + flux["Nin_R"] + flux["Nin_L"]
    return abs(total - state.initial_excitations)


def measure(state) -> dict:
    """Every recorded quantity for the current step."""
    probs = excitation_probabilities(state)
    flux = fluxes(state)
    rec = {"n_tls": qubit_populations(state), "P": probs}
    rec.update(flux)
    rec["S_a"] = entropy_atomic(state)
    rec["S_c"] = entropy_circuit(state)
    rec.update(correlations(state))
    rec["cons_residual"] = conservation_residual(state, probs, flux)
    rec["trunc_weight"] = state.truncation_weight
    rec["norm_drift"] = state.norm_drift
    return rec


# --------------------------------------------------------------------------
# series
# --------------------------------------------------------------------------

SCALAR_FIELDS = (
    "nout_R", "nout_L", "Nout_R", "Nout_L", "Nin_R", "Nin_L",
    "S_a", "S_c", "g1_R", "g2_R",
)  # fmt: skip
COMPLEX_FIELDS = ("corr_LR", "corr_atoms")
AUDIT_FIELDS = ("cons_residual", "trunc_weight", "norm_drift")


def csv_columns(n_qubits: int) -> list[str]:
    cols = ["t"] + [f"n_tls_{i + 1}" for i in range(n_qubits)]
    cols += ["P0", "P1", "P2"]
    cols += list(SCALAR_FIELDS)
    for name in COMPLEX_FIELDS:
        cols += [f"{name}_re", f"{name}_im"]
    for i in range(n_qubits):
        cols += [f"corr_af_{i + 1}_re", f"corr_af_{i + 1}_im"]
    cols += ["cons_residual", "trunc_weight"]
    return cols


@dataclass
class ObservableSeries:
    """Time-indexed records of every observable plus audits.

    Columns are stored as numpy arrays under flat names: ``n_tls_1``,
    ``P0`` .. ``P{n}``, the scalar fields, complex ``corr_LR``,
    ``corr_atoms``, ``corr_af_{n}``, and the audits.
    """

    n_qubits: int
    t: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @classmethod
    def for_state(cls, state) -> "ObservableSeries":
        p = state.params
        meta = {
            "schema_version": SCHEMA_VERSION,
            "params": p.to_dict(),
            "initial": state.initial.label,
            "gate_checksum": state.gate.checksum(),
            "policy": {
                "max_bond": state.policy.max_bond,
                "svd_cutoff": state.policy.svd_cutoff,
            },
            "field_normalization": "b = a/sqrt(dt); g2_R = <a+a+aa>/dt^2",
        }
        return cls(p.n_qubits, meta=meta)

    def append(self, time: float, rec: dict) -> None:
        self.t.append(float(time))
        flat = {}
        for i, v in enumerate(rec["n_tls"]):
            flat[f"n_tls_{i + 1}"] = float(v)
        for m, v in enumerate(rec["P"]):
            flat[f"P{m}"] = float(v)
        for name in SCALAR_FIELDS + AUDIT_FIELDS:
            flat[name] = float(rec[name])
        for name in COMPLEX_FIELDS:
            flat[name] = complex(rec[name])
        for i, v in enumerate(rec["corr_af"]):
            flat[f"corr_af_{i + 1}"] = complex(v)
        for key, v in flat.items():
            self.data.setdefault(key, []).append(v)

    def record(self, state) -> None:
        self.append(state.time, measure(state))

    def __getitem__(self, name: str) -> np.ndarray:
        if name == "t":
            return np.asarray(self.t)
        return np.asarray(self.data[name])

    def __len__(self) -> int:
        return len(self.t)

    @property
    def fields(self) -> list[str]:
        return list(self.data)

    def sample_at(self, time: float) -> int:
        """Index of the sample closest to ``time``."""
        return int(np.argmin(np.abs(np.asarray(self.t) - time)))

    def to_csv(self, path=None) -> str:
        cols = csv_columns(self.n_qubits)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for i in range(len(self.t)):
            row = []
            for c in cols:
                if c == "t":
                    v = self.t[i]
                elif c.endswith("_re"):
                    v = self.data[c[:-3]][i].real
                elif c.endswith("_im"):
                    v = self.data[c[:-3]][i].imag
                else:
                    v = self.data[c][i]
                row.append(repr(float(v)))
            writer.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text
