"""Density matrices, CPTP channels and fidelity metrics.

Superoperators use column stacking throughout: ``vec(rho) = rho.ravel("F")``
and a channel with Kraus operators K_k has superoperator
``sum_k conj(K_k) (x) K_k``.  ``compose(a, b)`` means "apply ``b`` first".

Choi matrices are ``J = sum_ij |i><j| (x) L(|i><j|)`` (input factor first),
so a trace-preserving channel has ``Tr_out J = I`` and ``Tr J = d``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

BASIS_TAG = "column-stacking-superoperator"

PAULIS = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def pauli(label: str) -> np.ndarray:
    """Pauli operator for a label such as ``"ZX"`` (first letter = qubit 0)."""
    return reduce(np.kron, [PAULIS[c] for c in label])


def _nqubits(dim: int) -> int:
    n = int(round(np.log2(dim)))
    if 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).ravel(order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    d = int(round(np.sqrt(v.size)))
    return v.reshape((d, d), order="F")


def _reshuffle(m: np.ndarray, d: int) -> np.ndarray:
    # superoperator <-> Choi; the map is an involution
    return m.reshape(d, d, d, d).transpose(3, 1, 2, 0).reshape(d * d, d * d)


def is_density_matrix(rho: np.ndarray, atol: float = 1e-10) -> bool:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        return False
    if not np.allclose(rho, rho.conj().T, atol=atol):
        return False
    if abs(np.trace(rho) - 1) > atol:
        return False
    return np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() >= -atol


def basis_state(bits: str) -> np.ndarray:
    """Projector onto a computational basis state, e.g. ``basis_state("01")``."""
    d = 2 ** len(bits)
    rho = np.zeros((d, d), dtype=complex)
    k = int(bits, 2)
    rho[k, k] = 1.0
    return rho


def pure_state(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


@dataclass(frozen=True, eq=False)
class QuantumChannel:
    """A linear map on n-qubit operators, stored as a superoperator."""

    superop: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        s = np.array(self.superop, dtype=complex)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError(f"superoperator must be square, got shape {s.shape}")
        d = int(round(np.sqrt(s.shape[0])))
        if d * d != s.shape[0]:
            raise ValueError(f"superoperator size {s.shape[0]} is not a square")
        s.setflags(write=False)
        object.__setattr__(self, "superop", s)
        object.__setattr__(self, "n", _nqubits(d))

    @property
    def dim(self) -> int:
        return 2**self.n

    @classmethod
    def from_kraus(cls, kraus: Sequence[np.ndarray]) -> "QuantumChannel":
        return cls(sum(np.kron(k.conj(), k) for k in map(np.asarray, kraus)))

    @classmethod
    def from_choi(cls, choi: np.ndarray) -> "QuantumChannel":
        choi = np.asarray(choi, dtype=complex)
        d = int(round(np.sqrt(choi.shape[0])))
        return cls(_reshuffle(choi, d))

    def choi(self) -> np.ndarray:
        return _reshuffle(self.superop, self.dim)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.superop @ vec(rho))

    def ptm(self) -> np.ndarray:
        """Pauli transfer matrix R_ij = Tr(P_i L(P_j)) / d."""
        labels = pauli_labels(self.n)
        ops = [pauli(p) for p in labels]
        out = np.empty((len(ops), len(ops)))
        for j, pj in enumerate(ops):
            image = self.apply(pj)
            for i, pi in enumerate(ops):
                out[i, j] = np.real(np.trace(pi @ image)) / self.dim
        return out

    def is_trace_preserving(self, atol: float = 1e-8) -> bool:
        ptrace = np.trace(self.choi().reshape(self.dim, self.dim, self.dim, self.dim), axis1=1, axis2=3)
        return np.allclose(ptrace, np.eye(self.dim), atol=atol)

    def is_completely_positive(self, atol: float = 1e-8) -> bool:
        j = self.choi()
        if not np.allclose(j, j.conj().T, atol=atol):
            return False
        return np.linalg.eigvalsh((j + j.conj().T) / 2).min() >= -atol

    def is_cptp(self, atol: float = 1e-8) -> bool:
        return self.is_trace_preserving(atol) and self.is_completely_positive(atol)

    def to_dict(self) -> dict:
        flat = self.superop.ravel()
        return {
            "basis": BASIS_TAG,
            "n": self.n,
            "real": flat.real.tolist(),
            "imag": flat.imag.tolist(),
        }

    @classmethod
    def from_dict(cls, record: dict) -> "QuantumChannel":
        if record.get("basis") != BASIS_TAG:
            raise ValueError(f"unsupported channel basis tag {record.get('basis')!r}")
        d2 = 4 ** int(record["n"])
        flat = np.asarray(record["real"]) + 1j * np.asarray(record["imag"])
        return cls(flat.reshape(d2, d2))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "QuantumChannel":
        return cls.from_dict(json.loads(text))


def pauli_labels(n: int) -> list[str]:
    labels = [""]
    for _ in range(n):
        labels = [a + b for a in labels for b in "IXYZ"]
    return labels


def identity_channel(n: int) -> QuantumChannel:
    return QuantumChannel(np.eye(4**n))


def unitary_channel(u: np.ndarray, atol: float = 1e-10) -> QuantumChannel:
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError(f"unitary must be square, got shape {u.shape}")
    if not np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=atol):
        raise ValueError("matrix is not unitary")
    return QuantumChannel(np.kron(u.conj(), u))


def depolarizing(n: int, alpha: float) -> QuantumChannel:
    """rho -> alpha rho + (1 - alpha) I / 2^n."""
    d = 2**n
    lo = -1.0 / (d * d - 1)
    if not lo - 1e-12 <= alpha <= 1 + 1e-12:
        raise ValueError(f"depolarizing parameter {alpha} outside [{lo:.4g}, 1]")
    total = vec(np.eye(d)) / d
    trace_row = vec(np.eye(d)).conj()
    return QuantumChannel(alpha * np.eye(d * d) + (1 - alpha) * np.outer(total, trace_row))


def damping_kraus(t: float, t1: float, t2: float) -> list[np.ndarray]:
    """Kraus operators of amplitude damping plus pure dephasing over time ``t``."""
    if t < 0:
        raise ValueError(f"duration must be non-negative, got {t}")
    if not t1 > 0 or not t2 > 0:
        raise ValueError(f"coherence times must be positive, got T1={t1}, T2={t2}")
    if t2 > 2 * t1 * (1 + 1e-12):
        raise ValueError(f"unphysical coherence times: T2={t2} exceeds 2*T1={2 * t1}")
    gamma = -np.expm1(-t / t1) if np.isfinite(t1) else 0.0
    # remaining dephasing after the sqrt(1 - gamma) from amplitude damping
    rate_phi = max(1.0 / t2 - 0.5 / t1, 0.0)
    lam = np.exp(-t * rate_phi)
    k0 = np.array([[1, 0], [0, np.sqrt(1 - gamma)]], dtype=complex)
    k1 = np.array([[0, np.sqrt(gamma)], [0, 0]], dtype=complex)
    z0 = np.sqrt((1 + lam) / 2) * np.eye(2)
    z1 = np.sqrt((1 - lam) / 2) * PAULIS["Z"]
    return [z @ k for z in (z0, z1) for k in (k0, k1)]


def damping(t: float, t1: float, t2: float) -> QuantumChannel:
    """Single-qubit T1/T2 relaxation over duration ``t`` (seconds)."""
    return QuantumChannel.from_kraus(damping_kraus(t, t1, t2))


def compose_channels(a: QuantumChannel, b: QuantumChannel) -> QuantumChannel:
    """``a o b``: apply ``b`` first."""
    if a.n != b.n:
        raise ValueError(f"cannot compose {a.n}- and {b.n}-qubit channels")
    return QuantumChannel(a.superop @ b.superop)


def tensor(a: QuantumChannel, b: QuantumChannel) -> QuantumChannel:
    """Channel ``a (x) b`` with ``a`` acting on the more significant qubits."""
    da, db = a.dim, b.dim
    sa = a.superop.reshape(da, da, da, da)
    sb = b.superop.reshape(db, db, db, db)
    # column-stacked index of (row, col) is row + d*col -> C-order axes (col, row)
    s = np.einsum("ABCD,abcd->AaBbCcDd", sa, sb)
    return QuantumChannel(s.reshape((da * db) ** 2, (da * db) ** 2))


def tensor_all(channels: Sequence[QuantumChannel]) -> QuantumChannel:
    return reduce(tensor, channels)


def process_fidelity(actual: QuantumChannel, target_unitary: np.ndarray) -> float:
    """Tr(S_U^dag S_L) / d^2."""
    u = np.asarray(target_unitary, dtype=complex)
    d = u.shape[0]
    if d != actual.dim:
        raise ValueError(f"target is {d}-dimensional, channel is {actual.dim}-dimensional")
    s_u = np.kron(u.conj(), u)
    return float(np.real(np.trace(s_u.conj().T @ actual.superop)) / d**2)


def average_gate_error(actual: QuantumChannel, target_unitary: np.ndarray) -> float:
    d = actual.dim
    f_pro = process_fidelity(actual, target_unitary)
    return 1.0 - (d * f_pro + 1.0) / (d + 1.0)


@dataclass(frozen=True, eq=False)
class ReadoutModel:
    """Column-stochastic assignment matrix: entry (i, j) = P(report i | true j)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"assignment matrix must be square, got {m.shape}")
        _nqubits(m.shape[0])
        if (m < -1e-12).any() or (m > 1 + 1e-12).any():
            raise ValueError("assignment probabilities must lie in [0, 1]")
        if not np.allclose(m.sum(axis=0), 1.0, atol=1e-9):
            raise ValueError("assignment matrix columns must sum to 1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return _nqubits(self.matrix.shape[0])

    @classmethod
    def ideal(cls, n: int) -> "ReadoutModel":
        return cls(np.eye(2**n))

    @classmethod
    def from_flips(cls, p1_given_0: Sequence[float], p0_given_1: Sequence[float]) -> "ReadoutModel":
        """Independent per-qubit flips; qubit 0 is the most significant bit."""
        mats = [np.array([[1 - a, b], [a, 1 - b]]) for a, b in zip(p1_given_0, p0_given_1)]
        return cls(reduce(np.kron, mats))

    def to_dict(self) -> dict:
        return {"assignment": self.matrix.tolist()}


def outcome_probabilities(rho: np.ndarray, readout: ReadoutModel | None = None) -> np.ndarray:
    p = np.clip(np.real(np.diag(rho)), 0.0, None)
    p = p / p.sum()
    if readout is not None:
        p = readout.matrix @ p
        p = np.clip(p, 0.0, None)
        p = p / p.sum()
    return p


def bitstrings(n: int) -> list[str]:
    return [format(k, f"0{n}b") for k in range(2**n)]


def measure_counts(
    rho: np.ndarray,
    readout: ReadoutModel | None,
    shots: int,
    rng: np.random.Generator,
) -> dict[str, int]:
    """Sample Z-basis outcomes; keys are bitstrings with qubit 0 first."""
    if shots <= 0:
        raise ValueError(f"shots must be positive, got {shots}")
    n = _nqubits(np.asarray(rho).shape[0])
    p = outcome_probabilities(rho, readout)
    draws = rng.multinomial(shots, p)
    return {b: int(c) for b, c in zip(bitstrings(n), draws)}


def coherence_limit(t1s: Sequence[float], t2s: Sequence[float], gate_time: float) -> float:
    """Average gate error of pure T1/T2 relaxation over ``gate_time`` (seconds)."""
    if len(t1s) != len(t2s) or not 1 <= len(t1s) <= 2:
        raise ValueError("need one T1 and one T2 per qubit (1 or 2 qubits)")
    chan = tensor_all([damping(gate_time, t1, t2) for t1, t2 in zip(t1s, t2s)])
    return average_gate_error(chan, np.eye(chan.dim))
