import numpy as np
import pytest

from csgate import channels as ch
from csgate.device import DeviceModel

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}

CS = np.diag([1, 1, 1, 1j])


def record_acceptance(number: int, name: str, passed: bool, detail: str = "") -> None:
    _ACCEPTANCE[number] = (name, bool(passed), detail)


@pytest.fixture
def acceptance():
    return record_acceptance


@pytest.fixture(scope="session")
def noiseless():
    return DeviceModel.noiseless(theta0=0.4)


@pytest.fixture(scope="session")
def anchored():
    return DeviceModel.builtin("paper_anchored")


def phase_equal(u, v, atol=1e-9):
    """True when u = e^{i theta} v for some theta."""
    d = u.shape[0]
    return abs(abs(np.trace(v.conj().T @ u)) - d) < atol * d


def _evolve_damped(rho, t, t1, t2):
    """Closed-form relaxation, linear in ``rho`` so it also applies to Pauli operators."""
    decay = np.exp(-t / t1)
    coh = np.exp(-t / t2)
    return np.array([
        [rho[0, 0] + (1 - decay) * rho[1, 1], coh * rho[0, 1]],
        [coh * rho[1, 0], decay * rho[1, 1]],
    ])


def oracle_coherence_limit(t1s, t2s, t):
    """Average gate error via 16 Pauli-basis inputs evolved one qubit at a time.

    F_avg = (d F_pro + 1) / (d + 1) with F_pro = sum_P Tr[P L(P)] / d^3.
    """
    paulis = [np.eye(2), ch.PAULIS["X"], ch.PAULIS["Y"], ch.PAULIS["Z"]]
    d = 4
    total = 0.0
    for a in paulis:
        for b in paulis:
            out_a = _evolve_damped(a.astype(complex), t, t1s[0], t2s[0])
            out_b = _evolve_damped(b.astype(complex), t, t1s[1], t2s[1])
            total += np.real(np.trace(np.kron(a, b) @ np.kron(out_a, out_b)))
    f_pro = total / d**3
    f_avg = (d * f_pro + 1) / (d + 1)
    return 1 - f_avg


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        name, passed, detail = _ACCEPTANCE[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {name}: {detail}")
