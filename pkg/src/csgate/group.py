"""CNOT-Dihedral group on one or two qubits.

An element acts on computational basis states as

    |x>  ->  w^{p(x)} |L x + s>,      w = exp(i pi / 4),

with ``L`` an invertible bit matrix, ``s`` a bit vector (arithmetic mod 2)
and ``p`` a phase polynomial over Z_8::

    p(x) = sum_i a_i x_i + q x_0 x_1       (q even, two qubits only)

Elements are stored in this canonical form, so equality is exact and
uniform sampling is a matter of drawing each field uniformly.  Qubit 0 is
the most significant bit of a basis index (kron order q0 (x) q1).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

OMEGA = np.exp(1j * np.pi / 4)

SUPPORTED_GATES = ("id", "x", "z", "s", "sdg", "t", "tdg", "cx", "cz", "cs", "csdg")


class UnsupportedGateError(ValueError):
    """Raised for gates outside the CNOT-Dihedral group (e.g. H)."""


def _check_n(n: int) -> None:
    if n not in (1, 2):
        raise ValueError(f"only 1 or 2 qubits are supported, got n={n}")


@lru_cache(maxsize=None)
def _basis_bits(n: int) -> tuple[tuple[int, ...], ...]:
    return tuple(itertools.product((0, 1), repeat=n))


def _index(bits: Sequence[int]) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | b
    return out


def _matvec(linear: tuple[tuple[int, ...], ...], x: Sequence[int]) -> tuple[int, ...]:
    return tuple(sum(r * v for r, v in zip(row, x)) % 2 for row in linear)


def _matmul(a, b):
    n = len(a)
    return tuple(
        tuple(sum(a[i][k] * b[k][j] for k in range(n)) % 2 for j in range(n))
        for i in range(n)
    )


@lru_cache(maxsize=None)
def general_linear(n: int) -> tuple[tuple[tuple[int, ...], ...], ...]:
    """All invertible n x n bit matrices, in a fixed order."""
    _check_n(n)
    mats = []
    for entries in itertools.product((0, 1), repeat=n * n):
        m = tuple(tuple(entries[i * n:(i + 1) * n]) for i in range(n))
        if n == 1:
            ok = m[0][0] == 1
        else:
            ok = (m[0][0] * m[1][1] + m[0][1] * m[1][0]) % 2 == 1
        if ok:
            mats.append(m)
    return tuple(mats)


def _inverse_bits(m):
    for cand in general_linear(len(m)):
        if _matmul(m, cand) == tuple(
            tuple(int(i == j) for j in range(len(m))) for i in range(len(m))
        ):
            return cand
    raise ValueError("bit matrix is singular")


@dataclass(frozen=True)
class DihedralElement:
    """Canonical CNOT-Dihedral element (immutable, hashable)."""

    n: int
    linear: tuple[tuple[int, ...], ...]
    shift: tuple[int, ...]
    phase: tuple[int, ...]  # a_0..a_{n-1} mod 8
    quad: int = 0  # coefficient of x_0 x_1, even residue mod 8

    def __post_init__(self):
        _check_n(self.n)
        if self.linear not in general_linear(self.n):
            raise ValueError(f"linear part {self.linear} is not invertible over GF(2)")
        if len(self.shift) != self.n or any(b not in (0, 1) for b in self.shift):
            raise ValueError(f"bad shift {self.shift}")
        if len(self.phase) != self.n or any(not 0 <= a < 8 for a in self.phase):
            raise ValueError(f"bad phase coefficients {self.phase}")
        if self.n == 1 and self.quad != 0:
            raise ValueError("single-qubit elements have no quadratic phase term")
        if self.quad % 2 or not 0 <= self.quad < 8:
            raise ValueError(f"quadratic coefficient must be an even residue mod 8, got {self.quad}")

    def phase_of(self, x: Sequence[int]) -> int:
        p = sum(a * b for a, b in zip(self.phase, x))
        if self.n == 2:
            p += self.quad * x[0] * x[1]
        return p % 8

    def image(self, x: Sequence[int]) -> tuple[int, ...]:
        y = _matvec(self.linear, x)
        return tuple((a + b) % 2 for a, b in zip(y, self.shift))

    def to_dict(self) -> dict:
        phase = list(self.phase) + ([self.quad] if self.n == 2 else [])
        return {
            "n": self.n,
            "linear": [b for row in self.linear for b in row],
            "shift": list(self.shift),
            "phase": phase,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "DihedralElement":
        n = int(record["n"])
        bits = [int(b) for b in record["linear"]]
        linear = tuple(tuple(bits[i * n:(i + 1) * n]) for i in range(n))
        phase = [int(a) for a in record["phase"]]
        quad = phase[n] if n == 2 else 0
        return cls(n, linear, tuple(int(b) for b in record["shift"]), tuple(phase[:n]), quad)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def __str__(self) -> str:
        terms = [f"{a}*x{i}" for i, a in enumerate(self.phase) if a]
        if self.quad:
            terms.append(f"{self.quad}*x0*x1")
        return (
            f"DihedralElement(n={self.n}, p(x)={' + '.join(terms) or '0'}, "
            f"L={self.linear}, s={self.shift})"
        )


def _from_table(n: int, linear, shift, table: dict) -> DihedralElement:
    """Build the canonical element from a phase table {x: p(x)}, dropping p(0)."""
    zero = (0,) * n
    base = table[zero]
    rel = {x: (v - base) % 8 for x, v in table.items()}
    units = [tuple(int(i == j) for j in range(n)) for i in range(n)]
    phase = tuple(rel[u] for u in units)
    quad = 0
    if n == 2:
        quad = (rel[(1, 1)] - phase[0] - phase[1]) % 8
        if quad % 2:
            raise ArithmeticError("phase table is not of CNOT-Dihedral form")
    return DihedralElement(n, linear, tuple(shift), phase, quad)


def identity(n: int) -> DihedralElement:
    _check_n(n)
    eye = tuple(tuple(int(i == j) for j in range(n)) for i in range(n))
    return DihedralElement(n, eye, (0,) * n, (0,) * n, 0)


def compose(a: DihedralElement, b: DihedralElement) -> DihedralElement:
    """Return ``a o b`` (apply ``b`` first), matching ``U_a @ U_b``."""
    if a.n != b.n:
        raise ValueError(f"qubit count mismatch: {a.n} vs {b.n}")
    n = a.n
    table = {x: b.phase_of(x) + a.phase_of(b.image(x)) for x in _basis_bits(n)}
    linear = _matmul(a.linear, b.linear)
    shift = tuple((u + v) % 2 for u, v in zip(_matvec(a.linear, b.shift), a.shift))
    return _from_table(n, linear, shift, table)


def compose_all(elements: Iterable[DihedralElement], n: int) -> DihedralElement:
    """Compose in time order: the first element is applied first."""
    out = identity(n)
    for g in elements:
        out = compose(g, out)
    return out


def inverse(g: DihedralElement) -> DihedralElement:
    n = g.n
    linv = _inverse_bits(g.linear)
    table = {}
    for y in _basis_bits(n):
        ys = tuple((u + v) % 2 for u, v in zip(y, g.shift))
        table[y] = -g.phase_of(_matvec(linv, ys))
    shift = _matvec(linv, g.shift)
    return _from_table(n, linv, shift, table)


@lru_cache(maxsize=16384)
def to_unitary(g: DihedralElement) -> np.ndarray:
    """Unitary with column x equal to w^{p(x)} e_{Lx+s}.  Do not mutate."""
    dim = 2 ** g.n
    u = np.zeros((dim, dim), dtype=complex)
    for x in _basis_bits(g.n):
        u[_index(g.image(x)), _index(x)] = OMEGA ** g.phase_of(x)
    u.setflags(write=False)
    return u


def _gate_element(name: str, qubits: Sequence[int], n: int) -> DihedralElement:
    name = name.lower()
    if name not in SUPPORTED_GATES:
        raise UnsupportedGateError(
            f"gate {name!r} is not in the CNOT-Dihedral group; supported: {', '.join(SUPPORTED_GATES)}"
        )
    arity = 2 if name in ("cx", "cz", "cs", "csdg") else 1
    if name == "id":
        arity = len(qubits)
    if len(qubits) != arity or any(not 0 <= q < n for q in qubits):
        raise ValueError(f"bad qubit indices {tuple(qubits)} for {name} on {n} qubit(s)")
    if arity == 2 and qubits[0] == qubits[1]:
        raise ValueError(f"{name} needs two distinct qubits")
    e = identity(n)
    if name == "id":
        return e
    if name == "x":
        shift = tuple(int(i == qubits[0]) for i in range(n))
        return DihedralElement(n, e.linear, shift, e.phase)
    single = {"t": 1, "s": 2, "z": 4, "sdg": 6, "tdg": 7}
    if name in single:
        phase = tuple(single[name] if i == qubits[0] else 0 for i in range(n))
        return DihedralElement(n, e.linear, e.shift, phase)
    if name == "cx":
        c, t = qubits
        rows = [list(r) for r in e.linear]
        rows[t][c] = 1
        return DihedralElement(n, tuple(tuple(r) for r in rows), e.shift, e.phase)
    quad = {"cs": 2, "cz": 4, "csdg": 6}[name]
    return DihedralElement(n, e.linear, e.shift, e.phase, quad)


def from_gates(gates: Iterable, n: int) -> DihedralElement:
    """Element for a gate list applied in order.

    Each gate is a tuple ``(name, q0[, q1])`` or a bare name for
    single-qubit gates on qubit 0.
    """
    _check_n(n)
    out = identity(n)
    for gate in gates:
        if isinstance(gate, str):
            name, qubits = gate, (0,)
        else:
            name, qubits = gate[0], tuple(gate[1:])
        out = compose(_gate_element(name, qubits, n), out)
    return out


def cs_element(control: int = 0, target: int = 1) -> DihedralElement:
    return from_gates([("cs", control, target)], 2)


def enumerate_group(n: int) -> list[DihedralElement]:
    """Every canonical element exactly once."""
    if n not in (1, 2):
        raise ValueError(f"enumeration supports n <= 2, got {n}")
    quads = (0, 2, 4, 6) if n == 2 else (0,)
    out = []
    for linear in general_linear(n):
        for shift in itertools.product((0, 1), repeat=n):
            for phase in itertools.product(range(8), repeat=n):
                for q in quads:
                    out.append(DihedralElement(n, linear, shift, phase, q))
    return out


def group_order(n: int) -> int:
    _check_n(n)
    return len(general_linear(n)) * 2**n * 8**n * (4 if n == 2 else 1)


def sample_uniform(n: int, rng: np.random.Generator) -> DihedralElement:
    _check_n(n)
    mats = general_linear(n)
    linear = mats[int(rng.integers(len(mats)))]
    shift = tuple(int(b) for b in rng.integers(0, 2, size=n))
    phase = tuple(int(a) for a in rng.integers(0, 8, size=n))
    quad = 2 * int(rng.integers(0, 4)) if n == 2 else 0
    return DihedralElement(n, linear, shift, phase, quad)
