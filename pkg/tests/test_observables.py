import csv
import io
import math

import numpy as np
import pytest

from wgmps import PhysicalParams, run
from wgmps.observables import csv_columns


@pytest.fixture(scope="module")
def delayed():
    return run(PhysicalParams(tau=0.2, phi=0.3), "ee", 1.0)


@pytest.fixture(scope="module")
def markov():
    return run(PhysicalParams(), "ee", 1.0)


def test_csv_column_order():
    assert csv_columns(2) == [
        "t", "n_tls_1", "n_tls_2", "P0", "P1", "P2",
        "nout_R", "nout_L", "Nout_R", "Nout_L", "Nin_R", "Nin_L",
        "S_a", "S_c", "g1_R", "g2_R",
        "corr_LR_re", "corr_LR_im", "corr_atoms_re", "corr_atoms_im",
        "corr_af_1_re", "corr_af_1_im", "corr_af_2_re", "corr_af_2_im",
        "cons_residual", "trunc_weight",
    ]  # fmt: skip
    assert "corr_af_4_im" in csv_columns(4)


def test_csv_round_trip(delayed):
    text = delayed.to_csv()
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == csv_columns(2)
    assert len(rows) == len(delayed) + 1
    col = rows[0].index("P2")
    assert [float(r[col]) for r in rows[1:]] == list(delayed["P2"])


def test_probabilities_sum_to_one(delayed):
    total = delayed["P0"] + delayed["P1"] + delayed["P2"]
    assert np.allclose(total, 1.0, atol=1e-12)


def test_conservation(delayed):
    assert delayed["cons_residual"].max() < 1e-9


def test_flux_integrates(delayed):
    dt = 0.02
    for d in "LR":
        cum = np.cumsum(delayed[f"nout_{d}"]) * dt
        assert np.allclose(cum, delayed[f"Nout_{d}"], atol=1e-12)


def test_g2_vanishes_before_delay(delayed):
    early = delayed["t"] < 0.2 - 1e-12
    assert np.all(np.abs(delayed["g2_R"][early]) < 1e-10)
    assert delayed["g2_R"][~early].max() > 0


def test_atom_field_correlator(markov, delayed):
    assert np.all(markov["corr_af_1"] == 0)
    assert np.abs(delayed["corr_af_1"]).max() > 1e-3


def test_entropies_markov_equal(markov):
    assert np.max(np.abs(markov["S_a"] - markov["S_c"])) < 1e-9


def test_entropies_delayed(delayed):
    assert np.all(delayed["S_c"] >= -1e-12)
    assert delayed["S_c"][-1] > delayed["S_a"][-1] - 1e-12


def test_symmetric_populations(delayed):
    assert np.allclose(delayed["n_tls_1"], delayed["n_tls_2"], atol=1e-10)


def test_corr_atoms_vanishes_at_quarter_phase():
    s = run(PhysicalParams(tau=0.2, phi=math.pi / 2), "ee", 0.6)
    assert np.abs(s["corr_atoms"]).max() < 1e-8


def test_g1_is_released_flux(delayed):
    assert np.allclose(delayed["g1_R"], delayed["nout_R"], atol=1e-12)


def test_sample_at(delayed):
    assert delayed.sample_at(0.5) == 25
    assert "P2" in delayed.fields


def test_markov_lr_correlator_equals_flux(markov):
    assert np.allclose(markov["corr_LR"], markov["g1_R"], atol=1e-9)


def test_four_qubit_leakage_audit():
    s = run(PhysicalParams(n_qubits=4, tau=0.04), "C", 0.2)
    assert np.all(s["P3"] == 0) and np.all(s["P4"] == 0)
    total = sum(s[f"P{m}"] for m in range(5))
    assert np.allclose(total, 1, atol=1e-9)
