import numpy as np
import pytest
from scipy.integrate import quad
from scipy.linalg import expm

from csgate import pulse
from csgate.channels import average_gate_error, unitary_channel
from csgate.device import DeviceModel
from csgate.pulse import (
    CRModel,
    PulseShape,
    cr_hamiltonian,
    cs_schedule,
    echoed_cr,
    evolve_pulse,
    ideal_amplitude,
    rotation,
)
from conftest import CS, phase_equal

MHZ = 2 * np.pi * 1e6


def _commutes(a, b, atol=1e-8):
    return np.allclose(a @ b, b @ a, atol=atol)


def test_zero_model_zero_hamiltonian():
    assert np.allclose(cr_hamiltonian(CRModel(), 0.7, 0.3), 0)


def test_parity():
    m = CRModel(zx=5 * MHZ, zx_cubic=1 * MHZ, zi=0.6 * MHZ, ix=0.2 * MHZ, theta0=0.4)
    plus, minus = m.rates(0.3, 0.2), m.rates(-0.3, 0.2)
    assert minus["ZX"] == pytest.approx(-plus["ZX"])
    assert minus["ZI"] == pytest.approx(plus["ZI"])


def test_zi_ix_commute_with_zx():
    assert _commutes(pulse.ZX, pulse.ZI)
    assert _commutes(pulse.ZX, pulse.IX)


def test_square_pulse_closed_form():
    m = CRModel(zx=5 * MHZ)
    tau = 100e-9
    amp = (np.pi / 4) / (m.zx * tau)
    u = evolve_pulse(m, PulseShape(tau, amp, 0.0, tau_edge=0.0))
    assert np.allclose(u, rotation("ZX", np.pi / 4), atol=1e-10)


def test_matches_expm_for_square_pulse():
    m = CRModel(zx=5 * MHZ, zi=1 * MHZ, ix=0.3 * MHZ, crosstalk=0.2 * MHZ, theta0=0.4)
    shape = PulseShape(80e-9, 0.4, 0.3, tau_edge=0.0)
    want = expm(-1j * cr_hamiltonian(m, 0.4, 0.3) * 80e-9)
    assert np.allclose(evolve_pulse(m, shape), want, atol=1e-12)


def test_zero_amplitude_identity():
    m = CRModel(zx=5 * MHZ, zi=1 * MHZ)
    assert np.allclose(evolve_pulse(m, PulseShape(50e-9, 0.0)), np.eye(4))


def test_slice_convergence():
    m = CRModel(zx=5 * MHZ, zx_cubic=2 * MHZ, zi=1 * MHZ, crosstalk=0.5 * MHZ, theta0=0.4)
    shape = PulseShape(21.3e-9, 0.6, 0.2)
    a = evolve_pulse(m, shape, slices=32)
    b = evolve_pulse(m, shape, slices=64)
    assert np.abs(a - b).max() < 1e-8


def test_unitarity():
    m = CRModel(zx=5 * MHZ, zi=1 * MHZ, ix=0.3 * MHZ, crosstalk=0.5 * MHZ, zz=0.1 * MHZ, theta0=0.4)
    for u in (evolve_pulse(m, PulseShape(30e-9, 0.5, 0.1)), echoed_cr(m, PulseShape(30e-9, 0.5, 0.1))):
        assert np.abs(u.conj().T @ u - np.eye(4)).max() < 1e-9


def test_echo_cancels_zi_and_ix():
    m = CRModel(zx=5 * MHZ, zi=2 * MHZ, ix=0.8 * MHZ)
    shape = PulseShape(60e-9, 0.5, 0.0)
    u = echoed_cr(m, shape)
    assert _commutes(u, pulse.ZX)
    theta = 2 * m.zx * 0.5 * shape.tau_eff
    assert 1 - abs(np.trace(rotation("ZX", theta).conj().T @ u)) / 4 < 1e-9


def test_echo_of_zero_model_is_identity():
    assert phase_equal(echoed_cr(CRModel(), PulseShape(40e-9, 0.5)), np.eye(4))


def test_echo_commutes_with_zx_for_any_model_without_y_or_z_terms():
    rng = np.random.default_rng(2)
    for _ in range(5):
        m = CRModel(zx=rng.uniform(1, 8) * MHZ, zx_cubic=rng.uniform(0, 2) * MHZ,
                    zi=rng.uniform(0, 3) * MHZ, ix=rng.uniform(-1, 1) * MHZ)
        u = echoed_cr(m, PulseShape(rng.uniform(0, 100e-9), rng.uniform(0.1, 0.9), 0.0))
        assert _commutes(u, pulse.ZX)


def test_iy_residual_monotone():
    shape = PulseShape(40e-9, 0.5, 0.0)
    base = CRModel(zx=5 * MHZ)
    target = echoed_cr(base, shape)
    errs = []
    for rate in np.linspace(0, 1.0, 6):
        # pure IY: crosstalk at +pi/2 from the CR phase with theta0 = 0
        m = CRModel(zx=5 * MHZ, crosstalk=rate * MHZ, crosstalk_phase=np.pi / 2)
        errs.append(average_gate_error(unitary_channel(echoed_cr(m, shape)), target))
    assert errs[0] < 1e-12
    assert np.all(np.diff(errs) > 0)


def _calibrated(model, tau_sq=21.3e-9):
    shape = PulseShape(tau_sq)
    return shape.with_params(amp=ideal_amplitude(model, shape), phi=-model.theta0)


def test_cs_schedule_ideal():
    m = CRModel(zx=5 * MHZ, zi=1 * MHZ, ix=0.3 * MHZ, theta0=0.4)
    shape = _calibrated(m)
    u = cs_schedule(m, shape)
    assert phase_equal(u, CS, atol=1e-9)
    assert phase_equal(cs_schedule(m, shape, inverse=True) @ u, np.eye(4), atol=1e-9)
    out = u @ np.array([0, 0, 0, 1])
    ref = u @ np.array([1, 0, 0, 0])
    assert out[3] / ref[0] == pytest.approx(1j, abs=1e-9)


def test_ideal_amplitude_with_cubic_term():
    m = CRModel(zx=5 * MHZ, zx_cubic=3 * MHZ)
    shape = PulseShape(21.3e-9)
    a = ideal_amplitude(m, shape)
    assert 2 * m.g_z(a) * shape.tau_eff == pytest.approx(np.pi / 4)


def test_tau_eff_matches_quadrature():
    shape = PulseShape(21.3e-9)
    area, _ = quad(lambda t: float(shape.envelope(t)), 0, shape.tau_cr, points=[shape.tau_edge, shape.tau_edge + shape.tau_sq])
    assert shape.tau_eff == pytest.approx(area, rel=1e-10)


def test_timing_anchor():
    d = DeviceModel.noiseless()
    assert d.tau_cs(d.shape(21.3e-9)) * 1e9 == pytest.approx(261.94, abs=1e-9)
    assert d.tau_cs(d.shape(0.0)) == pytest.approx(4 * pulse.EDGE_DEFAULT + pulse.OVERHEAD_DEFAULT)
    for tau in (0.0, 50e-9, 355.6e-9):
        shape = d.shape(tau)
        assert d.tau_cs(shape) == 2 * shape.tau_cr + d.overhead


def test_invalid_shapes():
    with pytest.raises(ValueError):
        PulseShape(-1e-9)
    with pytest.raises(ValueError):
        cr_hamiltonian(CRModel(), 1.5, 0.0)
