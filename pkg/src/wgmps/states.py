"""Initial qubit states.

Four-qubit ordering is (1L, 2L, 1R, 2R): qubits 1 and 2 sit at the left
location and qubits 3 and 4 at the right one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import excitation_count

#: named four-qubit presets (the product ones as patterns)
NAMED = {"A": "egeg", "B": "eegg"}


@dataclass(frozen=True)
class InitialState:
    amplitudes: np.ndarray
    label: str
    norm_factor: float = 1.0

    @property
    def n_qubits(self) -> int:
        return int(round(np.log2(self.amplitudes.size)))

    def excitation_distribution(self) -> np.ndarray:
        """Probability of m excited qubits, m = 0..n."""
        counts = excitation_count(self.n_qubits)
        return np.bincount(counts, weights=np.abs(self.amplitudes) ** 2, minlength=self.n_qubits + 1)

    def mean_excitations(self) -> float:
        dist = self.excitation_distribution()
        return float(np.dot(np.arange(dist.size), dist))

    def max_excitations(self) -> int:
        dist = self.excitation_distribution()
        nz = np.nonzero(dist > 1e-15)[0]
        return int(nz.max()) if nz.size else 0


def product_state(pattern: str) -> InitialState:
    """Computational basis state from a string over {e, g}, qubit 1 first."""
    pattern = pattern.strip().lower()
    if not pattern or set(pattern) - {"e", "g"}:
        raise ValueError(f"bad pattern {pattern!r}: use only 'e' and 'g'")
    n = len(pattern)
    if n not in (2, 4):
        raise ValueError("patterns must describe 2 or 4 qubits")
    idx = int("".join("1" if c == "e" else "0" for c in pattern), 2)
    amps = np.zeros(2**n, dtype=complex)
    amps[idx] = 1.0
    return InitialState(amps, pattern)


def state_C(n_qubits: int = 4) -> InitialState:
    """One shared excitation in each pair: symmetric left pair times symmetric right pair."""
    if n_qubits != 4:
        raise ValueError("state C needs four qubits")
    pair = np.array([0, 1, 1, 0], dtype=complex) / np.sqrt(2)  # (|ge> + |eg>)/sqrt2
    return InitialState(np.kron(pair, pair), "C")


def custom(amplitudes, label: str = "custom") -> InitialState:
    """Normalized copy of arbitrary amplitudes; the applied factor is recorded."""
    amps = np.asarray(amplitudes, dtype=complex).reshape(-1).copy()
    if amps.size not in (4, 16):
        raise ValueError("amplitude vector must have length 4 or 16")
    nrm = np.linalg.norm(amps)
    if nrm == 0:
        raise ValueError("zero vector is not a state")
    return InitialState(amps / nrm, label, float(1.0 / nrm))


def resolve(spec) -> InitialState:
    """Build an initial state from a pattern, a preset letter, or amplitudes.

    Amplitude lists may hold real numbers or ``[re, im]`` pairs.
    """
    if isinstance(spec, InitialState):
        return spec
    if isinstance(spec, str):
        key = spec.strip()
        if key.upper() == "C":
            return state_C()
        if key.upper() in NAMED:
            st = product_state(NAMED[key.upper()])
            return InitialState(st.amplitudes, key.upper())
        return product_state(key)
    vals = list(spec)
    if vals and isinstance(vals[0], (list, tuple)):
        vals = [complex(re, im) for re, im in vals]
    return custom(vals)
