"""Matrix-product-state simulator for qubits in a waveguide with delayed feedback."""

from .engine import init, run, step
from .model import PhysicalParams, build_step_gate, commensurate_dt
from .mps import TruncationPolicy
from .observables import ObservableSeries
from .states import InitialState, custom, product_state, resolve, state_C

__all__ = [
    "InitialState",
    "ObservableSeries",
    "PhysicalParams",
    "TruncationPolicy",
    "build_step_gate",
    "commensurate_dt",
    "custom",
    "init",
    "product_state",
    "resolve",
    "run",
    "state_C",
    "step",
]

__version__ = "0.1.0"
