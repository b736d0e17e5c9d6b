"""Time loop over waveguide time bins.

Chain layout after ``k`` completed steps (``l`` = delay in steps)::

    [released pairs | loop pairs k-l .. k-1 | system | future pairs k ..]

Released and loop pairs are stored (L, R); future pairs (R, L).  A pair of
time index ``j`` therefore sits at position ``2 (j + l)`` (plus one for the
second member), and the system at ``2 (k + l)``.  Pairs with negative time
index are vacuum bins that never met the emitters before the simulation
started; they fill the loop during the first ``l`` steps.

One step:

1. carry the delayed pair (time ``k - l``) rightwards across the loop until
   it sits left of the system: ``(dL, dR, S, cR, cL)``;
2. apply the step gate and reorder the window to ``(dL, dR, cL, cR, S)``;
3. carry the delayed pair back to the left edge of the loop, where it
   becomes released output.

Keeping the future bins right of the system means the gate window always
ends on a bond of dimension one, which keeps the five-site update cheap.
In the Markovian limit only ``(S, cR, cL) -> (cL, cR, S)`` happens.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import mps
from .model import PhysicalParams, StepGate, build_step_gate, number_op
from .states import InitialState, resolve


class SiteLabel(NamedTuple):
    kind: str  # "system" or "bin"
    direction: str = ""
    index: int = 0


SYSTEM = SiteLabel("system")


def bin_label(direction: str, index: int) -> SiteLabel:
    return SiteLabel("bin", direction, index)


@dataclass
class BinRegistry:
    """Where each time bin currently lives in the chain."""

    l: int
    n_steps: int
    k: int = 0

    def position(self, index: int, direction: str) -> int:
        if direction not in ("L", "R"):
            raise ValueError(f"direction must be 'L' or 'R', got {direction!r}")
        if not -self.l <= index < self.n_steps:
            raise IndexError(f"bin {direction}{index} outside the allocated horizon")
        base = 2 * (index + self.l)
        if index < self.k:
            return base + (0 if direction == "L" else 1)
        return base + 1 + (0 if direction == "R" else 1)

    @property
    def system_position(self) -> int:
        return 2 * (self.k + self.l)

    @property
    def loop_start(self) -> int:
        """Position of the oldest loop site (equals the system position when l = 0)."""
        return 2 * self.k

    def loop_window(self) -> list[int]:
        """Time indices of real (non-vacuum-ancilla) bins inside the loop."""
        return list(range(max(0, self.k - self.l), self.k))

    def released_last(self) -> int | None:
        """Time index of the pair released by the latest step."""
        return self.k - 1 - self.l if self.k > 0 else None

    def incoming_index(self) -> int:
        """Time index of the pair that meets the emitters next as the delayed pair."""
        return self.k - self.l

    def chain_length(self) -> int:
        return 2 * self.l + 1 + 2 * self.n_steps


@dataclass
class SimulationState:
    chain: mps.MpsChain
    registry: BinRegistry
    params: PhysicalParams
    gate: StepGate
    initial: InitialState
    policy: mps.TruncationPolicy = mps.DEFAULT_POLICY
    nout: dict = field(default_factory=lambda: {"L": 0.0, "R": 0.0})
    last_released: dict = field(default_factory=lambda: {"L": 0.0, "R": 0.0})
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def k(self) -> int:
        return self.registry.k

    @property
    def time(self) -> float:
        return self.registry.k * self.params.dt

    @property
    def initial_excitations(self) -> float:
        return self.initial.mean_excitations()

    @property
    def truncation_weight(self) -> float:
        return self.chain.trunc_weight

    @property
    def norm_drift(self) -> float:
        return abs(self.chain.norm() - 1.0)


def init(
    params: PhysicalParams,
    initial,
    n_steps: int,
    policy: mps.TruncationPolicy = mps.DEFAULT_POLICY,
    gate: StepGate | None = None,
) -> SimulationState:
    """System in ``initial`` times vacuum bins, allocated for ``n_steps`` steps."""
    initial = resolve(initial)
    if initial.n_qubits != params.n_qubits:
        raise ValueError(f"initial state has {initial.n_qubits} qubits, params want {params.n_qubits}")
    if initial.max_excitations() > params.n_qubits:
        raise ValueError("initial state carries more excitations than qubits")
    l = params.l
    if n_steps < l:
        raise ValueError(f"horizon of {n_steps} steps is shorter than the delay of {l} bins")
    vac = np.zeros(params.bin_dim, dtype=complex)
    vac[0] = 1.0
    vectors, labels = [], []
    for j in range(-l, 0):
        vectors += [vac, vac]
        labels += [bin_label("L", j), bin_label("R", j)]
    vectors.append(initial.amplitudes)
    labels.append(SYSTEM)
    for j in range(n_steps):
        vectors += [vac, vac]
        labels += [bin_label("R", j), bin_label("L", j)]
    chain = mps.MpsChain.product(vectors, labels)
    registry = BinRegistry(l, n_steps)
    chain.center = registry.loop_start
    gate = build_step_gate(params) if gate is None else gate
    return SimulationState(chain, registry, params, gate, initial, policy)


def _record_release(state: SimulationState) -> None:
    reg = state.registry
    j = reg.released_last()
    n = number_op(state.params.bin_dim)
    pos = [reg.position(j, "L"), reg.position(j, "R")]
    vals = np.real(mps.local_expectations(state.chain, pos, n))
    state.last_released = {"L": float(vals[0]), "R": float(vals[1])}
    state.nout["L"] += float(vals[0])
    state.nout["R"] += float(vals[1])


def step(state: SimulationState) -> SimulationState:
    """Advance by one time bin (in place)."""
    reg = state.registry
    if reg.k >= reg.n_steps:
        raise IndexError("no preallocated bins left; increase the horizon")
    chain, policy, l = state.chain, state.policy, reg.l
    base = reg.loop_start
    if l == 0:
        mps.apply_gate(chain, state.gate.matrix, base, policy, perm=(2, 1, 0), center=2)
    else:
        mps.canonicalize(chain, base)
        for q in range(base, base + 2 * l - 2):
            # [dL dR X] -> [X dL dR]
            mps.swap_adjacent(chain, q + 1, policy, center_left=True)
            mps.swap_adjacent(chain, q, policy, center_left=False)
        p = base + 2 * l - 2
        mps.apply_gate(chain, state.gate.matrix, p, policy, perm=(0, 1, 4, 3, 2), center=0)
        for q in range(p - 1, base - 1, -1):
            # [X dL dR] -> [dL dR X]
            mps.canonicalize(chain, q + 1)
            mps.swap_adjacent(chain, q, policy, center_left=False)
            mps.swap_adjacent(chain, q + 1, policy, center_left=True)
    reg.k += 1
    mps.canonicalize(chain, reg.loop_start)
    state._cache.clear()
    _record_release(state)
    return state


def run(
    params: PhysicalParams,
    initial,
    horizon: float,
    stride: int = 1,
    policy: mps.TruncationPolicy = mps.DEFAULT_POLICY,
    gate: StepGate | None = None,
):
    """Evolve to ``horizon`` (units of 1/gamma), sampling every ``stride`` steps."""
    from .observables import ObservableSeries

    n_steps = steps_for(horizon, params.dt)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    t0 = time.perf_counter()
    state = init(params, initial, n_steps, policy, gate)
    series = ObservableSeries.for_state(state)
    series.record(state)
    for _ in range(n_steps):
        step(state)
        if state.k % stride == 0 or state.k == n_steps:
            series.record(state)
    series.meta.update(
        wall_time=time.perf_counter() - t0,
        max_bond=max(state.chain.bond_dims) if len(state.chain) > 1 else 1,
        truncation_weight=state.chain.trunc_weight,
        norm_drift=state.norm_drift,
    )
    return series


def steps_for(horizon: float, dt: float) -> int:
    ratio = horizon / dt
    n = int(round(ratio))
    if abs(ratio - n) > 1e-9 * max(1.0, ratio) or n < 0:
        raise ValueError(f"horizon {horizon} is not an integer number of steps of {dt}")
    return n
