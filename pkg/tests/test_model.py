import math

import numpy as np
import pytest

from wgmps.model import (
    GateError,
    PhysicalParams,
    annihilator,
    build_step_gate,
    commensurate_dt,
    coupling_table,
    delay_steps,
    dicke_rate,
    local_excitation,
    phase_from_delay,
    sigma_plus,
    step_generator,
)


@pytest.mark.parametrize(
    "kw",
    [
        {},
        {"tau": 0.1},
        {"tau": 0.5, "phi": math.pi / 2},
        {"n_qubits": 4, "tau": 0.1},
        {"n_qubits": 4},
        {"gamma_L": (0.3, 0.7), "gamma_R": (0.2, 0.4), "tau": 0.04},
    ],
)
def test_gate_is_unitary_and_conserves_excitations(kw):
    p = PhysicalParams(**kw)
    g = build_step_gate(p)
    assert g.unitarity_error() < 1e-12
    exc = local_excitation(p)
    u = g.matrix
    assert np.all(u[exc[:, None] != exc[None, :]] == 0)
    n = np.diag(exc)
    assert np.allclose(u @ n, n @ u, atol=1e-13)


def test_generator_hermitian():
    gen = step_generator(PhysicalParams(tau=0.2, phi=0.3))
    assert np.allclose(gen, gen.conj().T)


def test_gate_roles_and_dims():
    g = build_step_gate(PhysicalParams(tau=0.1))
    assert g.roles == ("delayed_L", "delayed_R", "system", "current_R", "current_L")
    assert g.dims == (3, 3, 4, 3, 3)
    g0 = build_step_gate(PhysicalParams())
    assert g0.roles == ("system", "current_R", "current_L")
    assert g0.matrix.shape == (36, 36)


def test_checksum_stable_and_sensitive():
    a = build_step_gate(PhysicalParams(tau=0.1))
    b = build_step_gate(PhysicalParams(tau=0.1))
    c = build_step_gate(PhysicalParams(tau=0.1, phi=0.1))
    assert a.checksum() == b.checksum() != c.checksum()


def test_single_emission_amplitude_matches_rate():
    # |e> on qubit 1 with vacuum bins: one-step survival probability ~ 1 - gamma dt
    p = PhysicalParams(dt=0.001)
    u = build_step_gate(p).matrix
    idx = 2 * 9  # system |eg> = 2, both bins empty
    assert abs(abs(u[idx, idx]) ** 2 - (1 - p.dt)) < 1e-5


def test_coupling_phase_placement():
    p = PhysicalParams(tau=0.1, phi=0.7)
    table = coupling_table(p)
    roles0 = dict(table[0])
    roles1 = dict(table[1])
    assert roles0["current_L"] == pytest.approx(math.sqrt(0.5))
    assert roles0["delayed_R"] == pytest.approx(math.sqrt(0.5) * np.exp(0.7j))
    assert roles1["delayed_L"] == pytest.approx(math.sqrt(0.5) * np.exp(0.7j))
    assert roles1["current_R"] == pytest.approx(math.sqrt(0.5))


def test_markov_table_uses_current_bins_only():
    for terms in coupling_table(PhysicalParams(phi=1.0)):
        assert {r for r, _ in terms} <= {"current_L", "current_R"}


def test_delay_steps_rejects_non_multiple():
    assert delay_steps(0.5, 0.02) == 25
    with pytest.raises(ValueError):
        delay_steps(0.51, 0.02)
    with pytest.raises(ValueError):
        PhysicalParams(tau=0.015)


def test_commensurate_dt():
    for tau in (0.375, 0.895, 2.0):
        dt = commensurate_dt(tau, 0.02)
        assert abs(dt - 0.02) < 0.001
        assert delay_steps(tau, dt) == round(tau / dt)
    assert commensurate_dt(0.0, 0.02) == 0.02


def test_params_validation():
    with pytest.raises(ValueError):
        PhysicalParams(n_qubits=3)
    with pytest.raises(ValueError):
        PhysicalParams(gamma_L=-0.1)
    with pytest.raises(ValueError):
        PhysicalParams(gamma_L=(0.5,))
    p = PhysicalParams(n_qubits=4, gamma_L=0.25)
    assert p.gamma_L == (0.25,) * 4
    assert list(p.left_group()) == [0, 1]


def test_phase_wrap():
    assert phase_from_delay(1.0, math.pi) == pytest.approx(math.pi)
    assert phase_from_delay(2.0, math.pi / 2) == pytest.approx(math.pi)
    assert phase_from_delay(1.0, 0.5) == pytest.approx(-0.5)


def test_dicke_rates():
    assert dicke_rate(2, 2) == 2
    assert dicke_rate(4, 4) == 4
    assert dicke_rate(4, 2) == 6
    with pytest.raises(ValueError):
        dicke_rate(4, 3)


def test_operator_helpers():
    a = annihilator(3)
    assert np.allclose(a.conj().T @ a, np.diag([0, 1, 2]))
    sp = sigma_plus(2, 0)
    assert sp[2, 0] == 1 and sp[3, 1] == 1 and np.count_nonzero(sp) == 2


def test_gate_error_type_exists():
    assert issubclass(GateError, RuntimeError)


def test_phase_from_omega0():
    p = PhysicalParams(tau=0.5, omega0=math.pi)
    assert p.phi == pytest.approx(math.pi / 2 * -1)
    assert PhysicalParams(tau=0.5, omega0=math.pi, phi=-math.pi / 2 + 2 * math.pi).phi == pytest.approx(-math.pi / 2)
    with pytest.raises(ValueError):
        PhysicalParams(tau=0.5, omega0=math.pi, phi=0.3)
