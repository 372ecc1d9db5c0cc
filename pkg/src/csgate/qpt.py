"""Process tomography with readout-aware measurement operators.

Each qubit is prepared in one of |0>, |1>, |+>, |+i> and measured in the
X, Y or Z basis; the basis change is a gate layer before a Z-basis
readout.  The assignment matrix from the readout-calibration circuits is
folded into the measurement operators, so counts are never inverted.

Choi convention: ``J = sum_ij |i><j| (x) L(|i><j|)`` (input factor first),
so ``p = Tr[(rho^T (x) E) J]``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import reduce
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import channels as ch
from .pulse import HADAMARD

_S = np.diag([1, 1j])
_X = ch.PAULIS["X"]
_I2 = np.eye(2, dtype=complex)

# gate preparing each state from |0>
PREP_GATES = {"0": _I2, "1": _X, "+": HADAMARD, "+i": _S @ HADAMARD}
# gate applied before a Z readout to measure in each basis
MEAS_GATES = {"X": HADAMARD, "Y": HADAMARD @ _S.conj().T, "Z": _I2}

PSD_TOL = 1e-7
TP_TOL = 1e-6


class ProjectionError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class Circuit:
    kind: str  # "process" or "readout"
    prep: tuple[str, ...]
    meas: tuple[str, ...]

    @property
    def label(self) -> str:
        return f"{self.kind}:{','.join(self.prep)}:{','.join(self.meas)}"

    def prep_unitary(self) -> np.ndarray:
        return reduce(np.kron, [PREP_GATES[p] for p in self.prep])

    def meas_unitary(self) -> np.ndarray:
        return reduce(np.kron, [MEAS_GATES[m] for m in self.meas])

    def input_state(self) -> np.ndarray:
        u = self.prep_unitary()
        rho0 = np.zeros_like(u)
        rho0[0, 0] = 1
        return u @ rho0 @ u.conj().T


def generate_tomography_circuits(n: int) -> list[Circuit]:
    """``4^n 3^n`` process circuits followed by ``2^n`` readout-calibration circuits."""
    if n not in (1, 2):
        raise ValueError(f"n must be 1 or 2, got {n}")
    out = [
        Circuit("process", prep, meas)
        for prep in itertools.product(PREP_GATES, repeat=n)
        for meas in itertools.product(MEAS_GATES, repeat=n)
    ]
    out += [Circuit("readout", tuple(bits), ("Z",) * n) for bits in itertools.product("01", repeat=n)]
    return out


@dataclass
class TomographyData:
    n: int
    shots: int
    counts: dict[str, np.ndarray]  # circuit label -> counts per outcome (qubit 0 = MSB)

    def to_dict(self) -> dict:
        return {"n": self.n, "shots": self.shots, "counts": {k: v.tolist() for k, v in self.counts.items()}}

    @classmethod
    def from_dict(cls, record: dict) -> "TomographyData":
        return cls(int(record["n"]), int(record["shots"]),
                   {k: np.asarray(v, dtype=float) for k, v in record["counts"].items()})

    def write_json(self, path: str | Path, **meta) -> None:
        Path(path).write_text(json.dumps({**meta, **self.to_dict()}, sort_keys=True))


LayerFn = Callable[[Sequence[np.ndarray]], ch.QuantumChannel]


def ideal_layer(gates: Sequence[np.ndarray]) -> ch.QuantumChannel:
    return ch.unitary_channel(reduce(np.kron, gates))


def simulate(
    process: ch.QuantumChannel,
    shots: int,
    rng,
    readout: ch.ReadoutModel | None = None,
    layer: LayerFn = ideal_layer,
) -> TomographyData:
    """Run every tomography circuit on ``process``.

    ``layer`` maps per-qubit gates to the channel that implements them
    (prep and basis-change layers); readout errors act on the final Z
    measurement only.
    """
    rng = np.random.default_rng(rng)
    n = process.n
    d = 2**n
    rho0 = np.zeros((d, d), dtype=complex)
    rho0[0, 0] = 1
    counts = {}
    for c in generate_tomography_circuits(n):
        prep = layer([PREP_GATES[p] for p in c.prep])
        rho = prep.apply(rho0)
        if c.kind == "process":
            rho = process.apply(rho)
            rho = layer([MEAS_GATES[m] for m in c.meas]).apply(rho)
        p = ch.outcome_probabilities(rho, readout)
        counts[c.label] = rng.multinomial(shots, p).astype(float)
    return TomographyData(n, shots, counts)


def build_assignment_matrix(data: TomographyData) -> ch.ReadoutModel:
    """Column j holds the outcome frequencies observed when |j> was prepared."""
    d = 2**data.n
    m = np.zeros((d, d))
    for j, bits in enumerate(itertools.product("01", repeat=data.n)):
        label = Circuit("readout", tuple(bits), ("Z",) * data.n).label
        col = np.asarray(data.counts[label], float)
        if col.sum() <= 0:
            raise ValueError(f"no shots recorded for readout calibration of |{''.join(bits)}>")
        m[:, j] = col / col.sum()
    return ch.ReadoutModel(m)


def povm(circuit: Circuit, assignment: ch.ReadoutModel | None) -> list[np.ndarray]:
    """Noisy measurement operators ``B^dag (sum_j A[k, j] |j><j|) B``."""
    b = circuit.meas_unitary()
    d = b.shape[0]
    a = np.eye(d) if assignment is None else assignment.matrix
    return [b.conj().T @ np.diag(a[k].astype(complex)) @ b for k in range(d)]


@dataclass(frozen=True)
class ReconstructedProcess:
    choi: np.ndarray
    residual: float  # least-squares residual of the linear inversion
    min_eig_before: float
    tp_violation_before: float
    min_eig: float
    tp_violation: float
    iterations: int

    @property
    def channel(self) -> ch.QuantumChannel:
        return ch.QuantumChannel.from_choi(self.choi)

    def to_dict(self) -> dict:
        return {
            "choi_real": self.choi.real.tolist(),
            "choi_imag": self.choi.imag.tolist(),
            "residual": self.residual,
            "min_eig_before": self.min_eig_before,
            "tp_violation_before": self.tp_violation_before,
            "min_eig": self.min_eig,
            "tp_violation": self.tp_violation,
            "iterations": self.iterations,
        }


def _ptrace_out(j: np.ndarray, d: int) -> np.ndarray:
    return np.trace(j.reshape(d, d, d, d), axis1=1, axis2=3)


def _tp_violation(j: np.ndarray, d: int) -> float:
    return float(np.max(np.abs(_ptrace_out(j, d) - np.eye(d))))


def _project_psd(j: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((j + j.conj().T) / 2)
    return (vecs * np.clip(vals, 0, None)) @ vecs.conj().T


def _project_tp(j: np.ndarray, d: int) -> np.ndarray:
    excess = (_ptrace_out(j, d) - np.eye(d)) / d
    out = j.reshape(d, d, d, d).copy()
    out -= excess[:, None, :, None] * np.eye(d)[None, :, None, :]
    return out.reshape(d * d, d * d)


def project_cptp(j: np.ndarray, d: int, max_iter: int = 20000) -> tuple[np.ndarray, int]:
    """Dykstra's alternating projection onto the CP cone and the TP plane."""
    x = (j + j.conj().T) / 2
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for it in range(1, max_iter + 1):
        y = _project_psd(x + p)
        p = x + p - y
        # y is PSD by construction; stop once it is also trace preserving
        if _tp_violation(y, d) <= 0.1 * TP_TOL:
            return y, it
        x = _project_tp(y + q, d)
        q = y + q - x
    raise ProjectionError("CPTP projection did not converge", _tp_violation(y, d))


def _design(data: TomographyData, assignment: ch.ReadoutModel | None):
    """Measurement operators ``rho^T (x) E`` and matching counts for every outcome."""
    ops, counts = [], []
    for c in generate_tomography_circuits(data.n):
        if c.kind != "process":
            continue
        rho_t = c.input_state().T
        for k, e in enumerate(povm(c, assignment)):
            ops.append(np.kron(rho_t, e))
            counts.append(data.counts[c.label][k])
    return np.array(ops), np.asarray(counts, float)


def _neg_log_likelihood(rows, counts, j):
    p = np.clip(np.real(rows @ j.ravel()), 1e-12, None)
    return -float(counts @ np.log(p)) / counts.sum(), p


def _mle(ops, counts, j0, d, max_iter=300, xtol=1e-6):
    """Accelerated projected gradient descent on the negative log-likelihood.

    FISTA momentum with backtracking on the step and a restart whenever
    the objective goes up; every iterate is projected onto CPTP maps.
    """
    dim = ops.shape[1]
    rows = np.ascontiguousarray(ops.transpose(0, 2, 1).reshape(len(ops), -1))  # Tr[O J] = rows @ vec(J)
    flat = ops.reshape(len(ops), -1)
    total = counts.sum()

    def grad_at(p):
        g = -((counts / p) @ flat).reshape(dim, dim) / total
        return (g + g.conj().T) / 2

    j = j0
    f, p = _neg_log_likelihood(rows, counts, j)
    y, f_y, p_y = j, f, p
    t = 1.0
    step = 1.0
    it = 0
    stalled = 0
    for it in range(1, max_iter + 1):
        g = grad_at(p_y)
        while True:
            trial, _ = project_cptp(y - step * g, d)
            f_new, p_new = _neg_log_likelihood(rows, counts, trial)
            diff = trial - y
            bound = f_y + np.real(np.vdot(g, diff)) + np.real(np.vdot(diff, diff)) / (2 * step)
            if f_new <= bound + 1e-15 or step < 1e-10:
                break
            step *= 0.5
        if np.linalg.norm(diff) < xtol:  # projection is only accurate to ~1e-7
            if f_new <= f:
                j = trial
            break
        if f_new > f:  # momentum overshoot: restart from the last iterate
            stalled += 1
            if stalled > 1:  # no descent even without momentum
                break
            t = 1.0
            y, f_y, p_y = j, f, p
            continue
        stalled = 0
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = trial + ((t - 1) / t_next) * (trial - j)
        j, f, p, t = trial, f_new, p_new, t_next
        f_y, p_y = _neg_log_likelihood(rows, counts, y)
        if not np.all(p_y > 1e-12):
            y, f_y, p_y, t = j, f, p, 1.0
        step *= 1.2
    return j, it


def reconstruct(
    data: TomographyData,
    assignment: ch.ReadoutModel | None = None,
    method: str = "mle",
) -> ReconstructedProcess:
    """Choi estimate constrained to CPTP maps.

    ``lsq``: linear least squares followed by the nearest CPTP map.
    ``mle``: the same start refined by maximising the likelihood of the
    counts over CPTP maps, which removes most of the bias the plain
    projection introduces for near-unitary processes.
    """
    if method not in ("lsq", "mle"):
        raise ValueError(f"unknown reconstruction method {method!r}")
    d = 2**data.n
    ops, counts = _design(data, assignment)
    freqs = counts.copy()
    shots_per = np.asarray([np.sum(v) for v in data.counts.values()]).max()
    freqs = counts / shots_per
    a = np.array([o.T.ravel() for o in ops])
    sol, *_ = np.linalg.lstsq(a, freqs.astype(complex), rcond=None)
    j_lin = sol.reshape(d * d, d * d)
    j_lin = (j_lin + j_lin.conj().T) / 2
    residual = float(np.linalg.norm(a @ j_lin.ravel() - freqs))
    min_before = float(np.linalg.eigvalsh(j_lin).min())
    tp_before = _tp_violation(j_lin, d)
    j, iters = project_cptp(j_lin, d)
    if method == "mle":
        j, iters = _mle(ops, counts, j, d)
    return ReconstructedProcess(
        choi=j,
        residual=residual,
        min_eig_before=min_before,
        tp_violation_before=tp_before,
        min_eig=float(np.linalg.eigvalsh(j).min()),
        tp_violation=_tp_violation(j, d),
        iterations=iters,
    )


def qpt_gate_error(process: ReconstructedProcess, target_unitary: np.ndarray) -> float:
    return ch.average_gate_error(process.channel, target_unitary)
