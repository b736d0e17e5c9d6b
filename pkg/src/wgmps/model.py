"""Physical parameters and the per-step time-bin propagator.

Qubits are split into two spatial groups.  With two qubits the groups are
``{1}`` and ``{2}``; with four they are ``{1, 2}`` (left) and ``{3, 4}``
(right).  Per step the left group couples to the current left-moving bin
and to the right-moving bin delayed by ``l = tau/dt`` steps (with phase
``exp(i phi)``); the right group couples to the delayed left-moving bin
(with phase) and the current right-moving bin.  Each bin is a truncated
bosonic mode whose increment operator is ``sqrt(dt) * a``.

Qubit basis: ``|g> = 0``, ``|e> = 1``, qubit 1 most significant.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

#: gate leg order when the delay is finite
ROLES_DELAYED = ("delayed_L", "delayed_R", "system", "current_R", "current_L")
#: gate leg order in the Markovian limit
ROLES_MARKOV = ("system", "current_R", "current_L")

UNITARITY_TOL = 1e-8


class GateError(RuntimeError):
    pass


def _as_tuple(x, n: int) -> tuple[float, ...]:
    if np.isscalar(x):
        return (float(x),) * n
    t = tuple(float(v) for v in x)
    if len(t) != n:
        raise ValueError(f"expected {n} rates, got {len(t)}")
    return t


def delay_steps(tau: float, dt: float) -> int:
    """Number of bins ``l`` spanning the delay; ``tau`` must be a multiple of ``dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    ratio = tau / dt
    l = int(round(ratio))
    if abs(ratio - l) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"tau={tau} is not an integer multiple of dt={dt}")
    return l


def commensurate_dt(tau: float, target_dt: float) -> float:
    """Largest step not far from ``target_dt`` that divides ``tau`` exactly."""
    if tau == 0:
        return target_dt
    l = max(1, round(tau / target_dt))
    return tau / l


@dataclass(frozen=True)
class PhysicalParams:
    """Rates in units of the reference rate gamma, times in 1/gamma.

    ``phi`` is a free parameter unless ``omega0`` is given, in which case it
    is set to ``-omega0 * tau`` (wrapped).
    """

    n_qubits: int = 2
    gamma_L: tuple[float, ...] = field(default=None)
    gamma_R: tuple[float, ...] = field(default=None)
    phi: float = 0.0
    tau: float = 0.0
    dt: float = 0.02
    n_max: int = 2
    omega0: float | None = None

    def __post_init__(self):
        if self.n_qubits not in (2, 4):
            raise ValueError("n_qubits must be 2 or 4")
        g_l = 0.5 if self.gamma_L is None else self.gamma_L
        g_r = 0.5 if self.gamma_R is None else self.gamma_R
        object.__setattr__(self, "gamma_L", _as_tuple(g_l, self.n_qubits))
        object.__setattr__(self, "gamma_R", _as_tuple(g_r, self.n_qubits))
        if min(self.gamma_L + self.gamma_R) < 0:
            raise ValueError("decay rates must be non-negative")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        delay_steps(self.tau, self.dt)
        if self.omega0 is not None:
            derived = phase_from_delay(self.omega0, self.tau)
            if self.phi != 0.0 and abs(math.remainder(self.phi - derived, 2 * math.pi)) > 1e-12:
                raise ValueError(f"phi={self.phi} contradicts -omega0*tau = {derived}")
            object.__setattr__(self, "phi", derived)

    @property
    def l(self) -> int:
        return delay_steps(self.tau, self.dt)

    @property
    def markovian(self) -> bool:
        return self.l == 0

    @property
    def system_dim(self) -> int:
        return 2**self.n_qubits

    @property
    def bin_dim(self) -> int:
        return self.n_max + 1

    def left_group(self) -> range:
        return range(self.n_qubits // 2)

    def right_group(self) -> range:
        return range(self.n_qubits // 2, self.n_qubits)

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "gamma_L": list(self.gamma_L),
            "gamma_R": list(self.gamma_R),
            "phi": self.phi,
            "tau": self.tau,
            "dt": self.dt,
            "n_max": self.n_max,
            "omega0": self.omega0,
        }


@dataclass(frozen=True)
class StepGate:
    matrix: np.ndarray
    roles: tuple[str, ...]
    dims: tuple[int, ...]

    def unitarity_error(self) -> float:
        u = self.matrix
        return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))

    def checksum(self) -> str:
        data = np.round(self.matrix, 12) + 0.0  # drop negative zeros
        return hashlib.sha256(np.ascontiguousarray(data).tobytes()).hexdigest()[:16]


def phase_from_delay(omega0: float, tau: float) -> float:
    """Propagation phase ``-omega0 * tau`` wrapped into (-pi, pi]."""
    phi = -omega0 * tau
    wrapped = math.remainder(phi, 2 * math.pi)
    if wrapped <= -math.pi + 1e-15:
        wrapped = math.pi
    return wrapped


def dicke_rate(n_atoms: int, excitations: int, gamma: float = 1.0) -> float:
    """Markovian collective decay rate of a symmetric N-atom state.

    Supports full excitation (N gamma), a single excitation (N gamma) and half
    excitation for even N ((N/2)(N/2 + 1) gamma).
    """
    if n_atoms < 1:
        raise ValueError("need at least one atom")
    if excitations == n_atoms or excitations == 1:
        return n_atoms * gamma
    if n_atoms % 2 == 0 and excitations == n_atoms // 2:
        half = n_atoms // 2
        return half * (half + 1) * gamma
    raise ValueError(f"unsupported excitation pattern: {excitations} of {n_atoms}")


# --------------------------------------------------------------------------
# local operators
# --------------------------------------------------------------------------


def annihilator(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def number_op(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def sigma_plus(n_qubits: int, qubit: int) -> np.ndarray:
    """|e><g| on ``qubit`` (0-based) in the 2**n system space."""
    sp = np.array([[0, 0], [1, 0]], dtype=complex)
    out = np.ones((1, 1), dtype=complex)
    for j in range(n_qubits):
        out = np.kron(out, sp if j == qubit else np.eye(2))
    return out


def excitation_count(n_qubits: int) -> np.ndarray:
    """Number of excited qubits for every configuration index."""
    idx = np.arange(2**n_qubits)
    return np.array([bin(i).count("1") for i in idx])


def qubit_excited(n_qubits: int, qubit: int) -> np.ndarray:
    """Boolean mask over configurations with ``qubit`` excited."""
    idx = np.arange(2**n_qubits)
    return ((idx >> (n_qubits - 1 - qubit)) & 1).astype(bool)


def _embed(op: np.ndarray, slot: int, dims: tuple[int, ...]) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for j, d in enumerate(dims):
        out = np.kron(out, op if j == slot else np.eye(d))
    return out


def gate_roles(params: PhysicalParams) -> tuple[tuple[str, ...], tuple[int, ...]]:
    roles = ROLES_MARKOV if params.markovian else ROLES_DELAYED
    dims = tuple(params.system_dim if r == "system" else params.bin_dim for r in roles)
    return roles, dims


def coupling_table(params: PhysicalParams) -> list[list[tuple[str, complex]]]:
    """Per qubit, the (role, amplitude) pairs multiplying ``sqrt(dt) a_role sigma^+``."""
    ph = np.exp(1j * params.phi)
    delayed = not params.markovian
    dl = "delayed_L" if delayed else "current_L"
    dr = "delayed_R" if delayed else "current_R"
    table = []
    for n in range(params.n_qubits):
        gl = math.sqrt(params.gamma_L[n])
        gr = math.sqrt(params.gamma_R[n])
        if n in params.left_group():
            table.append([("current_L", gl + 0j), (dr, gr * ph)])
        else:
            table.append([(dl, gl * ph), ("current_R", gr + 0j)])
    return table


def step_generator(params: PhysicalParams) -> np.ndarray:
    """Hermitian generator G with U = exp(-i G) on the gate's local space."""
    roles, dims = gate_roles(params)
    a = annihilator(params.bin_dim)
    sys_slot = roles.index("system")
    ops = {r: _embed(a, roles.index(r), dims) for r in roles if r != "system"}
    gen = np.zeros((int(np.prod(dims)),) * 2, dtype=complex)
    sqdt = math.sqrt(params.dt)
    for n, terms in enumerate(coupling_table(params)):
        sp = _embed(sigma_plus(params.n_qubits, n), sys_slot, dims)
        field_op = sum(amp * ops[role] for role, amp in terms)
        term = sqdt * (field_op @ sp)
        gen += term + term.conj().T
    return gen


def build_step_gate(params: PhysicalParams) -> StepGate:
    """Exact exponential of the step generator (scaling and squaring)."""
    roles, dims = gate_roles(params)
    u = scipy.linalg.expm(-1j * step_generator(params))
    # entries linking different excitation numbers vanish analytically; make
    # them exact zeros so the tensor train keeps its block structure
    exc = local_excitation(params)
    u[exc[:, None] != exc[None, :]] = 0.0
    gate = StepGate(u, roles, dims)
    err = gate.unitarity_error()
    if err > UNITARITY_TOL:
        raise GateError(f"step gate deviates from unitarity by {err:.3g}")
    return gate


def local_excitation(params: PhysicalParams) -> np.ndarray:
    """Total excitation number (qubits plus photons) on the gate's local space, diagonal."""
    roles, dims = gate_roles(params)
    total = np.zeros(int(np.prod(dims)))
    for slot, r in enumerate(roles):
        if r == "system":
            diag = excitation_count(params.n_qubits).astype(float)
        else:
            diag = np.arange(params.bin_dim, dtype=float)
        total += np.real(np.diag(_embed(np.diag(diag).astype(complex), slot, dims)))
    return total
