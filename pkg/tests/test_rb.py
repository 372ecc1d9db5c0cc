import json

import numpy as np
import pytest
from scipy.stats import chisquare

from csgate import channels as ch
from csgate import group, rb
from csgate.fitting import FitError
from conftest import CS

SHORT = (1, 5, 10, 20, 40, 80)


def test_sequences_compose_to_identity():
    cfg = rb.RBConfig(n=2, lengths=SHORT, samples=3, interleaved=group.cs_element())
    for seq in rb.generate_standard(cfg, 0) + rb.generate_interleaved(cfg, 0):
        assert seq.ideal() == group.identity(2)
        assert len(seq.elements) == seq.length + 1


def test_length_one_is_element_and_inverse():
    cfg = rb.RBConfig(n=1, lengths=(1, 2, 3), samples=5)
    for seq in rb.generate_standard(cfg, 1):
        if seq.length == 1:
            g, g_inv = seq.elements
            assert g_inv == group.inverse(g)


def test_interleaved_gate_count():
    # ideal elements, depolarizing only on the gate: survival = 3/4 a^k + 1/4 counts k gate uses
    a = 0.9
    gate = ch.compose_channels(ch.depolarizing(2, a), ch.unitary_channel(CS))
    backend = rb.ChannelBackend(2, gate_channel=gate)
    cfg = rb.RBConfig(lengths=(3, 7, 9), samples=2, interleaved=group.cs_element())
    for seq in rb.generate_interleaved(cfg, 2):
        assert backend.success_probability(seq, "zeros") == pytest.approx(0.75 * a**seq.length + 0.25, abs=1e-12)


def test_first_elements_uniform_n1():
    cfg = rb.RBConfig(n=1, lengths=(1, 2, 3), samples=1600)
    index = {g: k for k, g in enumerate(group.enumerate_group(1))}
    counts = np.zeros(16)
    for seq in rb.generate_standard(cfg, 3):
        counts[index[seq.elements[0]]] += 1
    assert chisquare(counts).pvalue > 0.001


def test_noiseless_survival_exact():
    res = rb.run_experiment(rb.ChannelBackend(2), rb.RBConfig(lengths=SHORT, samples=3, interleaved=group.cs_element()), 0)
    for d in res.data:
        assert np.all(d.survivals == 1.0)
    assert res.r == 0.0 and res.interleaved.r_g == 0.0


def test_fit_decay_exact_synthetic():
    lengths = np.array(rb.FULL_LENGTHS, float)
    fit = rb.fit_decay(lengths, 0.75 * 0.97**lengths + 0.25)
    assert fit.alpha == pytest.approx(0.97, abs=1e-9)
    assert fit.amplitude == pytest.approx(0.75, abs=1e-9)
    assert fit.offset == pytest.approx(0.25, abs=1e-9)


def test_fit_decay_degenerate():
    assert rb.fit_decay(SHORT, np.ones(len(SHORT))).alpha == 1.0
    with pytest.raises(FitError):
        rb.fit_decay(SHORT, np.full(len(SHORT), 0.5))


def test_epc_examples():
    assert rb.epc(1.0, 1.0, 2) == (1.0, 0.0)
    alpha, r = rb.epc(0.97, 0.97, 2)
    assert alpha == pytest.approx(0.97) and r == pytest.approx(0.75 * 0.03)
    assert rb.interleaved_error(0.98, 0.98, 2).r_g == 0.0


def test_readout_fold_in():
    alpha = 0.97
    ro = ch.ReadoutModel.from_flips([0.02, 0.02], [0.02, 0.02])
    backend = rb.ChannelBackend(2, element_error=ch.depolarizing(2, alpha), readout=ro)
    cfg = rb.RBConfig(lengths=rb.FULL_LENGTHS, samples=2, shots=None, input_states=("zeros",))
    res = rb.run_experiment(backend, cfg, 0)
    fit = res.fits["reference/zeros"]
    # l random elements plus the inverse, each followed by the depolarizing map
    assert fit.alpha == pytest.approx(alpha, abs=1e-8)
    assert fit.amplitude == pytest.approx((0.98**2 - 0.25) * alpha, abs=1e-7)
    assert fit.offset == pytest.approx(0.25, abs=1e-7)


def test_depolarizing_injection_two_states():
    backend = rb.ChannelBackend(2, element_error=ch.depolarizing(2, 0.98))
    res = rb.run_experiment(backend, rb.RBConfig(), 5)
    fz, fr = res.fits["reference/zeros"], res.fits["reference/plus"]
    assert abs(fz.alpha - fr.alpha) < 3 * np.hypot(fz.alpha_err, fr.alpha_err)
    assert abs(res.r - 0.75 * 0.02) < 3 * res.r_err


def test_identity_interleaving_gives_alpha_squared():
    noise = ch.depolarizing(2, 0.98)
    backend = rb.ChannelBackend(2, element_error=noise, gate_channel=noise)
    cfg = rb.RBConfig(lengths=rb.FULL_LENGTHS, samples=4, shots=None, interleaved=group.identity(2))
    res = rb.run_experiment(backend, cfg, 0)
    assert res.alpha_g == pytest.approx(res.alpha**2, abs=1e-6)
    assert res.interleaved.r_g == pytest.approx(0.75 * 0.02, abs=1e-6)


def test_identity_interleaving_matches_reference_when_ideal():
    backend = rb.ChannelBackend(2, element_error=ch.depolarizing(2, 0.98), gate_channel=ch.identity_channel(2))
    cfg = rb.RBConfig(lengths=rb.FULL_LENGTHS, samples=4, shots=None, interleaved=group.identity(2))
    res = rb.run_experiment(backend, cfg, 0)
    assert res.alpha_g == pytest.approx(res.alpha, abs=1e-9)


def _random_gate_channel(rng):
    theta = rng.uniform(0, 0.15)
    axis = rng.choice(["ZZ", "IZ", "ZI", "XX"])
    u = ch.unitary_channel(np.cos(theta / 2) * np.eye(4) - 1j * np.sin(theta / 2) * ch.pauli(axis))
    depol = ch.depolarizing(2, 1 - rng.uniform(0, 0.02))
    return ch.compose_channels(depol, ch.compose_channels(u, ch.unitary_channel(CS)))


def test_epsilon_coverage_random_models():
    rng = np.random.default_rng(2024)
    hits = 0
    for k in range(50):
        gate = _random_gate_channel(rng)
        backend = rb.ChannelBackend(2, element_error=ch.depolarizing(2, 1 - rng.uniform(0.002, 0.02)), gate_channel=gate)
        cfg = rb.RBConfig(lengths=rb.REDUCED_LENGTHS, samples=5, interleaved=group.cs_element())
        res = rb.run_experiment(backend, cfg, k)
        r_true = ch.average_gate_error(gate, CS)
        hits += res.interleaved.lower <= r_true <= res.interleaved.upper
    assert hits >= 48


def test_magesan_bound_formula():
    # d = 4, alpha = 0.99, alpha_g = 0.98
    first = 0.75 * (abs(0.99 - 0.98 / 0.99) + 0.01)
    second = 2 * 15 * 0.01 / (0.99 * 16) + 4 * np.sqrt(0.01) * np.sqrt(15) / 0.99
    assert rb.magesan_bound(0.99, 0.98, 2) == pytest.approx(min(first, second))


def test_threads_do_not_change_results():
    backend = rb.ChannelBackend(2, element_error=ch.depolarizing(2, 0.98))
    cfg = rb.RBConfig(lengths=SHORT, samples=4)
    a = rb.run_experiment(backend, cfg, 9, threads=1)
    b = rb.run_experiment(backend, cfg, 9, threads=4)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_report_files(tmp_path):
    backend = rb.ChannelBackend(2, element_error=ch.depolarizing(2, 0.98))
    cfg = rb.RBConfig(lengths=SHORT, samples=2, interleaved=group.cs_element())
    res = rb.run_experiment(backend, cfg, 1)
    res.write_json(tmp_path / "rb.json", include_sequences=True, seed=1)
    doc = json.loads((tmp_path / "rb.json").read_text())
    assert doc["seed"] == 1 and {"lower", "upper", "epsilon"} <= set(doc["interleaved"])
    seq = doc["sequences"]["reference"][0]
    assert group.DihedralElement.from_dict(seq["elements"][0]) == res.sequences["reference"][0].elements[0]
    res.write_decay_csv(tmp_path / "decay.csv")
    rows = (tmp_path / "decay.csv").read_text().splitlines()
    assert len(rows) == 1 + 4 * len(SHORT)


def test_config_validation():
    with pytest.raises(ValueError):
        rb.RBConfig(lengths=(5, 1))
    with pytest.raises(ValueError):
        rb.RBConfig(input_states=("minus",))
    with pytest.raises(ValueError):
        rb.RBConfig(n=1, interleaved=group.cs_element())
