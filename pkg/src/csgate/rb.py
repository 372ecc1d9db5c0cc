"""Standard and interleaved CNOT-Dihedral randomized benchmarking.

A sequence of length ``l`` holds ``l`` uniformly random group elements and
the element that inverts their composition.  Interleaved sequences insert
a fixed gate after each random element (the inverse also undoes those).
Survival is the probability of the ideal outcome: all zeros for the
|0...0> input and, after a closing Hadamard layer, also all zeros for the
|+...+> input.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import channels as ch
from . import group
from .device import DeviceModel, noisy_cs_channel
from .fitting import FitError, curve_fit
from .group import DihedralElement
from .pulse import HADAMARD, Compensation, PulseShape

FULL_LENGTHS = (1, 5, 10, 20, 30, 50, 75, 100, 125, 150)
REDUCED_LENGTHS = (1, 10, 25, 50, 100, 150)
INPUT_STATES = ("zeros", "plus")


@dataclass(frozen=True)
class RBConfig:
    n: int = 2
    lengths: tuple[int, ...] = FULL_LENGTHS
    samples: int = 10
    shots: int | None = 1024
    input_states: tuple[str, ...] = INPUT_STATES
    interleaved: DihedralElement | None = None

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"n must be 1 or 2, got {self.n}")
        lengths = tuple(int(x) for x in self.lengths)
        if not lengths or lengths[0] < 1 or any(b <= a for a, b in zip(lengths, lengths[1:])):
            raise ValueError("lengths must be positive and strictly increasing")
        object.__setattr__(self, "lengths", lengths)
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be positive")
        for s in self.input_states:
            if s not in INPUT_STATES:
                raise ValueError(f"unknown input state {s!r}")
        if self.interleaved is not None and self.interleaved.n != self.n:
            raise ValueError("interleaved element acts on the wrong number of qubits")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "lengths": list(self.lengths),
            "samples": self.samples,
            "shots": self.shots,
            "input_states": list(self.input_states),
            "interleaved": None if self.interleaved is None else self.interleaved.to_dict(),
        }


@dataclass(frozen=True)
class RBSequence:
    length: int
    sample: int
    elements: tuple[DihedralElement, ...]  # l random elements then the closing inverse
    interleaved: DihedralElement | None = None

    def ideal(self) -> DihedralElement:
        n = self.elements[0].n
        out = group.identity(n)
        for k, e in enumerate(self.elements):
            out = group.compose(e, out)
            if self.interleaved is not None and k < self.length:
                out = group.compose(self.interleaved, out)
        return out

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "sample": self.sample,
            "elements": [e.to_dict() for e in self.elements],
            "interleaved": self.interleaved is not None,
        }


def _sequence(n: int, length: int, sample: int, rng, gate: DihedralElement | None) -> RBSequence:
    random_part = [group.sample_uniform(n, rng) for _ in range(length)]
    total = group.identity(n)
    for e in random_part:
        total = group.compose(e, total)
        if gate is not None:
            total = group.compose(gate, total)
    return RBSequence(length, sample, tuple(random_part) + (group.inverse(total),), gate)


def generate_standard(config: RBConfig, rng) -> list[RBSequence]:
    rng = np.random.default_rng(rng)
    return [_sequence(config.n, l, k, rng, None) for l in config.lengths for k in range(config.samples)]


def generate_interleaved(config: RBConfig, rng) -> list[RBSequence]:
    if config.interleaved is None:
        raise ValueError("config has no interleaved element")
    rng = np.random.default_rng(rng)
    return [
        _sequence(config.n, l, k, rng, config.interleaved) for l in config.lengths for k in range(config.samples)
    ]


# -- backends ----------------------------------------------------------------

class Backend(Protocol):
    n: int

    def success_probability(self, sequence: RBSequence, input_state: str) -> float: ...


def _h_layer(n: int) -> np.ndarray:
    u = HADAMARD
    for _ in range(n - 1):
        u = np.kron(u, HADAMARD)
    return u


class _SuperopBackend:
    """Shared execution: superoperator products on the vectorised state."""

    n: int
    readout: ch.ReadoutModel | None

    def __init__(self):
        self._cache: dict[DihedralElement, np.ndarray] = {}

    def element_superop(self, g: DihedralElement) -> np.ndarray:
        raise NotImplementedError

    def gate_superop(self, g: DihedralElement) -> np.ndarray:
        raise NotImplementedError

    def basis_superop(self) -> np.ndarray:
        raise NotImplementedError

    def _element(self, g):
        s = self._cache.get(g)
        if s is None:
            s = self.element_superop(g)
            self._cache[g] = s
        return s

    def final_state(self, sequence: RBSequence, input_state: str) -> np.ndarray:
        d = 2**self.n
        v = np.zeros(d * d, dtype=complex)
        v[0] = 1.0
        if input_state == "plus":
            v = self.basis_superop() @ v
        gate = None if sequence.interleaved is None else self.gate_superop(sequence.interleaved)
        for k, e in enumerate(sequence.elements):
            v = self._element(e) @ v
            if gate is not None and k < sequence.length:
                v = gate @ v
        if input_state == "plus":
            v = self.basis_superop() @ v
        return ch.unvec(v)

    def success_probability(self, sequence: RBSequence, input_state: str) -> float:
        p = ch.outcome_probabilities(self.final_state(sequence, input_state), self.readout)
        return float(min(max(p[0], 0.0), 1.0))


class ChannelBackend(_SuperopBackend):
    """One fixed error channel after every group element.

    ``gate_channel`` is the full noisy implementation of the interleaved
    gate; without it the gate is treated like any other element.
    ``basis_channel`` is the noisy Hadamard layer used for |+...+>.
    """

    def __init__(
        self,
        n: int,
        element_error: ch.QuantumChannel | None = None,
        gate_channel: ch.QuantumChannel | None = None,
        readout: ch.ReadoutModel | None = None,
        basis_channel: ch.QuantumChannel | None = None,
    ):
        super().__init__()
        self.n = n
        for chan in (element_error, gate_channel, basis_channel):
            if chan is not None and chan.n != n:
                raise ValueError("channel acts on the wrong number of qubits")
        self.element_error = element_error
        self.gate_channel = gate_channel
        self.readout = readout
        self.basis_channel = basis_channel or ch.unitary_channel(_h_layer(n))

    def element_superop(self, g):
        s = ch.unitary_channel(group.to_unitary(g)).superop
        return s if self.element_error is None else self.element_error.superop @ s

    def gate_superop(self, g):
        if self.gate_channel is None:
            return self._element(g)
        return self.gate_channel.superop

    def basis_superop(self):
        return self.basis_channel.superop


class PulseBackend(_SuperopBackend):
    """Device-level execution: CS from the pulse schedule, elements with device noise."""

    def __init__(self, device: DeviceModel, shape: PulseShape, compensation: Compensation | None = None):
        super().__init__()
        self.n = 2
        self.device = device
        self.shape = shape
        self.compensation = compensation
        self.readout = device.readout
        self._noise = device.element_noise().superop
        self._gates: dict[DihedralElement, np.ndarray] = {}
        self._basis = device.single_qubit_layer(HADAMARD, HADAMARD).superop

    def element_superop(self, g):
        return self._noise @ ch.unitary_channel(group.to_unitary(g)).superop

    def gate_superop(self, g):
        s = self._gates.get(g)
        if s is None:
            if g == group.cs_element():
                s = noisy_cs_channel(self.device, self.shape, False, self.compensation).superop
            elif g == group.inverse(group.cs_element()):
                s = noisy_cs_channel(self.device, self.shape, True, self.compensation).superop
            else:
                s = self._element(g)
            self._gates[g] = s
        return s

    def basis_superop(self):
        return self._basis


# -- execution ---------------------------------------------------------------

@dataclass(frozen=True)
class RBData:
    input_state: str
    interleaved: bool
    lengths: tuple[int, ...]
    survivals: np.ndarray  # (len(lengths), samples)
    successes: np.ndarray | None = None  # raw counts of the ideal outcome

    @property
    def means(self) -> np.ndarray:
        return self.survivals.mean(axis=1)


def run(
    backend: Backend,
    sequences: Sequence[RBSequence],
    input_state: str,
    shots: int | None,
    rng,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Survival (and ideal-outcome counts) per sequence.

    Each sequence draws its shots from its own child seed, so results do
    not depend on ``threads``.
    """
    if input_state not in INPUT_STATES:
        raise ValueError(f"unknown input state {input_state!r}")
    seed_seq = np.random.SeedSequence(int(np.random.default_rng(rng).integers(2**63)))
    children = seed_seq.spawn(len(sequences))

    def one(i):
        p = backend.success_probability(sequences[i], input_state)
        if shots is None:
            return p, -1
        k = int(np.random.default_rng(children[i]).binomial(shots, p))
        return k / shots, k

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(one, range(len(sequences))))
    else:
        out = [one(i) for i in range(len(sequences))]
    surv = np.array([o[0] for o in out])
    counts = None if shots is None else np.array([o[1] for o in out])
    return surv, counts


# -- fitting -----------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    alpha: float
    amplitude: float
    offset: float
    alpha_err: float
    amplitude_err: float
    offset_err: float
    residual_norm: float

    def model(self, lengths) -> np.ndarray:
        return self.amplitude * self.alpha ** np.asarray(lengths, float) + self.offset

    def to_dict(self) -> dict:
        return {k: _finite(v) for k, v in self.__dict__.items()}


def _finite(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _decay(l, a, alpha, b):
    return a * alpha**l + b


def fit_decay(lengths: Sequence[float], survivals: Sequence[float], sigma: Sequence[float] | None = None) -> DecayFit:
    """Least-squares fit of ``A alpha^l + e_I``.

    Survival identically 1 is the noiseless case and returns ``alpha = 1``
    exactly; any other constant data set is degenerate and rejected.
    """
    x = np.asarray(lengths, float)
    y = np.asarray(survivals, float)
    if np.unique(x).size < 3:
        raise FitError("need at least 3 distinct lengths")
    if np.ptp(y) == 0:
        if np.all(y == 1.0):
            return DecayFit(1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0)
        raise FitError("degenerate data: survival does not vary with length")
    best = None
    for alpha in 1 - np.logspace(-6, 0, 200, endpoint=False):
        basis = np.column_stack([alpha**x, np.ones_like(x)])
        coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
        score = np.sum((basis @ coef - y) ** 2)
        if best is None or score < best[0]:
            best = (score, alpha, coef)
    _, alpha0, (a0, b0) = best
    fit = curve_fit(_decay, x, y, [a0, alpha0, b0], sigma=sigma)
    a, alpha, b = fit.params
    da, dalpha, db = fit.stderr
    return DecayFit(float(alpha), float(a), float(b), float(dalpha), float(da), float(db), fit.residual_norm)


def epc(alpha_z: float, alpha_r: float, n: int) -> tuple[float, float]:
    """Average depolarizing parameter and average error per element."""
    d = 2**n
    alpha = (alpha_z + d * alpha_r) / (d + 1)
    return alpha, (d - 1) * (1 - alpha) / d


def epc_stderr(err_z: float, err_r: float, n: int) -> tuple[float, float]:
    d = 2**n
    s_alpha = math.hypot(err_z, d * err_r) / (d + 1)
    return s_alpha, (d - 1) * s_alpha / d


@dataclass(frozen=True)
class InterleavedResult:
    alpha: float
    alpha_g: float
    r_g: float
    epsilon: float
    lower: float
    upper: float
    r_g_err: float = float("nan")
    nonphysical: bool = False

    def to_dict(self) -> dict:
        out = {k: _finite(v) for k, v in self.__dict__.items() if k != "nonphysical"}
        out["nonphysical"] = self.nonphysical
        return out


def magesan_bound(alpha: float, alpha_g: float, n: int) -> float:
    d = 2**n
    first = (d - 1) * (abs(alpha - alpha_g / alpha) + (1 - alpha)) / d
    second = 2 * (d * d - 1) * (1 - alpha) / (alpha * d * d) + 4 * math.sqrt(max(1 - alpha, 0.0)) * math.sqrt(
        d * d - 1
    ) / alpha
    return min(first, second)


def interleaved_error(
    alpha: float,
    alpha_g: float,
    n: int,
    alpha_err: float = 0.0,
    alpha_g_err: float = 0.0,
) -> InterleavedResult:
    """Gate error from the ratio of decay parameters, with its systematic range."""
    if not alpha > 0:
        raise ValueError("reference alpha must be positive")
    d = 2**n
    r_g = (d - 1) * (1 - alpha_g / alpha) / d
    eps = magesan_bound(alpha, alpha_g, n)
    err = (d - 1) / d * math.hypot(alpha_g_err / alpha, alpha_g * alpha_err / alpha**2)
    tol = 3 * math.hypot(alpha_err, alpha_g_err)
    return InterleavedResult(
        alpha=alpha,
        alpha_g=alpha_g,
        r_g=r_g,
        epsilon=eps,
        lower=max(0.0, r_g - eps),
        upper=min(r_g + eps, 1.0),
        r_g_err=err,
        nonphysical=alpha_g - alpha > tol,
    )


# -- experiment --------------------------------------------------------------

@dataclass
class RBResult:
    config: RBConfig
    data: list[RBData]
    fits: dict[str, DecayFit]  # keyed "<reference|interleaved>/<input_state>"
    alpha: float
    alpha_err: float
    r: float
    r_err: float
    alpha_g: float | None = None
    alpha_g_err: float | None = None
    interleaved: InterleavedResult | None = None
    sequences: dict[str, list[RBSequence]] = field(default_factory=dict, repr=False)

    def to_dict(self, include_sequences: bool = False) -> dict:
        out = {
            "config": self.config.to_dict(),
            "alpha": self.alpha,
            "alpha_err": _finite(self.alpha_err),
            "r": self.r,
            "r_err": _finite(self.r_err),
            "alpha_g": self.alpha_g,
            "alpha_g_err": None if self.alpha_g_err is None else _finite(self.alpha_g_err),
            "interleaved": None if self.interleaved is None else self.interleaved.to_dict(),
            "fits": {k: v.to_dict() for k, v in self.fits.items()},
            "data": [
                {
                    "input_state": d.input_state,
                    "interleaved": d.interleaved,
                    "lengths": list(d.lengths),
                    "survivals": d.survivals.tolist(),
                    "successes": None if d.successes is None else d.successes.tolist(),
                }
                for d in self.data
            ],
        }
        if include_sequences:
            out["sequences"] = {k: [s.to_dict() for s in v] for k, v in self.sequences.items()}
        return out

    def write_json(self, path: str | Path, include_sequences: bool = False, **meta) -> None:
        Path(path).write_text(json.dumps({**meta, **self.to_dict(include_sequences)}, indent=1, sort_keys=True))

    def write_decay_csv(self, path: str | Path) -> None:
        samples = self.config.samples
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "input_state", "length", *(f"sample_{k}" for k in range(samples)), "mean"])
            for d in self.data:
                kind = "interleaved" if d.interleaved else "reference"
                for i, l in enumerate(d.lengths):
                    row = d.survivals[i]
                    w.writerow([kind, d.input_state, l, *(repr(float(v)) for v in row), repr(float(row.mean()))])


def _combine(fits: dict[str, DecayFit], kind: str, n: int):
    fz, fr = fits.get(f"{kind}/zeros"), fits.get(f"{kind}/plus")
    if fz and fr:
        alpha, r = epc(fz.alpha, fr.alpha, n)
        s_alpha, s_r = epc_stderr(fz.alpha_err, fr.alpha_err, n)
    else:
        only = fz or fr
        d = 2**n
        alpha, s_alpha = only.alpha, only.alpha_err
        r, s_r = (d - 1) * (1 - alpha) / d, (d - 1) * s_alpha / d
    return alpha, s_alpha, r, s_r


def run_experiment(backend: Backend, config: RBConfig, rng, threads: int = 1) -> RBResult:
    """Reference (and optionally interleaved) RB for every configured input state."""
    rng = np.random.default_rng(rng)
    kinds = ["reference"] + (["interleaved"] if config.interleaved is not None else [])
    sequences = {
        "reference": generate_standard(config, rng),
    }
    if config.interleaved is not None:
        sequences["interleaved"] = generate_interleaved(config, rng)
    data, fits = [], {}
    for kind in kinds:
        for state in config.input_states:
            surv, counts = run(backend, sequences[kind], state, config.shots, rng, threads)
            shape = (len(config.lengths), config.samples)
            rec = RBData(state, kind == "interleaved", config.lengths, surv.reshape(shape),
                         None if counts is None else counts.reshape(shape))
            data.append(rec)
            fits[f"{kind}/{state}"] = fit_decay(config.lengths, rec.means)
    alpha, s_alpha, r, s_r = _combine(fits, "reference", config.n)
    result = RBResult(config, data, fits, alpha, s_alpha, r, s_r, sequences=sequences)
    if config.interleaved is not None:
        alpha_g, s_g, _, _ = _combine(fits, "interleaved", config.n)
        result.alpha_g, result.alpha_g_err = alpha_g, s_g
        result.interleaved = interleaved_error(alpha, alpha_g, config.n, s_alpha, s_g)
    return result
