"""CR gate calibration experiments run against a simulated device.

Each experiment prepares |00>, plays a schedule built from echoed CR
blocks and single-qubit gates, and measures the target qubit in the Z
basis.  ``shots=None`` returns exact expectation values instead of
sampled estimates.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import channels as ch
from .device import DeviceModel
from .fitting import FitError, FitResult, cosine_fit, curve_fit
from .pulse import Compensation, PulseShape, echoed_cr, evolve_pulse, rotation

THRESHOLD = 1e-3 * np.pi
FINE_N = tuple(range(10))
XY4_N = tuple(range(0, 33, 2))
MAX_DECAY = 0.2  # per N; larger values mean the fit is unidentified

_X = ch.PAULIS["X"]
_Y = ch.PAULIS["Y"]
_I2 = np.eye(2, dtype=complex)


def _rx(theta):
    return rotation("X", theta)


def _ry(theta):
    return rotation("Y", theta)


class CalibrationError(RuntimeError):
    """A calibration experiment could not produce a usable estimate."""

    def __init__(self, message: str, residual_norm: float = float("nan")):
        super().__init__(message)
        self.residual_norm = residual_norm


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass
class SessionLog:
    """Experiment records, one per scan or loop iteration, as JSON lines."""

    records: list = field(default_factory=list)

    def add(self, experiment: str, **payload) -> None:
        self.records.append({"experiment": experiment, **_jsonable(payload)})

    def write(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _fit_record(fit: FitResult | None) -> dict | None:
    if fit is None:
        return None
    return {"params": fit.params, "stderr": fit.stderr, "residual_norm": fit.residual_norm}


def write_scan_csv(path: str | Path, x_name: str, x: Sequence[float], columns: dict[str, Sequence[float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([x_name, *columns])
        for i, xv in enumerate(x):
            w.writerow([repr(float(xv)), *(repr(float(col[i])) for col in columns.values())])


# -- schedule simulation ---------------------------------------------------

class _Runner:
    """Builds and measures calibration schedules on one device."""

    def __init__(self, device: DeviceModel, shots: int | None, rng):
        self.device = device
        self.shots = shots
        self.rng = as_rng(rng)
        self.readout = device.readout
        self.v0 = ch.vec(ch.basis_state("00"))

    def layer(self, u_control=_I2, u_target=_I2) -> np.ndarray:
        return self.device.single_qubit_layer(u_control, u_target).superop

    def pulse(self, u: np.ndarray, duration: float) -> np.ndarray:
        return self.device.idle(duration).superop @ np.kron(u.conj(), u)

    def echo(self, shape: PulseShape, comp: Compensation | None = None) -> np.ndarray:
        u = echoed_cr(self.device.cr, shape, compensation=comp)
        return self.pulse(u, 2 * shape.tau_cr + 2 * self.device.sq_gate_time)

    def measure_z(self, v: np.ndarray) -> tuple[float, tuple[int, int] | None]:
        """<Z> of the target qubit (and its marginal counts when sampling)."""
        rho = ch.unvec(v)
        p = ch.outcome_probabilities(rho, self.readout)
        p_t0 = p[0] + p[2]
        if self.shots is None:
            return float(2 * p_t0 - 1), None
        n0 = int(self.rng.binomial(self.shots, min(max(p_t0, 0.0), 1.0)))
        return (2 * n0 - self.shots) / self.shots, (n0, self.shots - n0)

    def run(self, ops: Sequence[np.ndarray]) -> tuple[float, tuple[int, int] | None]:
        v = self.v0
        for op in ops:
            v = op @ v
        return self.measure_z(v)

    def repeat(self, prep: Sequence[np.ndarray], block: np.ndarray, counts: Sequence[int], post=()):
        """Measure ``post o block^k o prep`` for each k in ``counts``."""
        v = self.v0
        for op in prep:
            v = op @ v
        values, raw = [], []
        done = 0
        for k in sorted(counts):
            while done < k:
                v = block @ v
                done += 1
            w = v
            for op in post:
                w = op @ w
            val, c = self.measure_z(w)
            values.append(val)
            raw.append(c)
        order = np.argsort(np.argsort(counts))
        return np.array(values)[order], [raw[i] for i in order]


# -- rough scans -----------------------------------------------------------

@dataclass(frozen=True)
class RoughAmplitudeResult:
    amp: float
    amplitudes: np.ndarray
    values: np.ndarray
    fit: FitResult


def rough_amplitude_scan(
    device: DeviceModel,
    tau_sq: float,
    amplitudes: Sequence[float] | None = None,
    shots: int | None = 1024,
    rng=None,
    log: SessionLog | None = None,
) -> RoughAmplitudeResult:
    """Scan the echo amplitude at phase 0 and fit ``a cos(2 pi f A) + b``.

    The rough amplitude is the smallest positive root of a controlled
    rotation of pi/4, i.e. ``1 / (8 f)``.
    """
    amplitudes = np.linspace(0.0, 1.0, 41) if amplitudes is None else np.asarray(amplitudes, float)
    if amplitudes.min() < 0 or amplitudes.max() > 1:
        raise ValueError("scan amplitudes must lie in [0, 1]")
    runner = _Runner(device, shots, rng)
    values, raw = [], []
    for a in amplitudes:
        val, c = runner.run([runner.echo(device.shape(tau_sq, a, 0.0))])
        values.append(val)
        raw.append(c)
    values = np.array(values)
    noise = 1.0 / np.sqrt(shots) if shots else 1e-9
    if np.ptp(values) < 5 * noise:
        raise CalibrationError("no oscillation in the amplitude scan", float(np.std(values) * np.sqrt(values.size)))
    try:
        fit = cosine_fit(amplitudes, values, phase=0.0)
    except FitError as exc:
        raise CalibrationError(f"amplitude fit failed: {exc}", exc.residual_norm) from exc
    a, f, _ = fit.params
    if f <= 0 or a <= 0 or not fit.converged:
        raise CalibrationError("amplitude fit did not find a decaying cosine", fit.residual_norm)
    amp0 = 1.0 / (8.0 * f)
    if log is not None:
        log.add("rough_amplitude", tau_sq=tau_sq, x=amplitudes, values=values, counts=raw,
                fit=_fit_record(fit), result={"amp": amp0})
    return RoughAmplitudeResult(float(amp0), amplitudes, values, fit)


@dataclass(frozen=True)
class RoughPhaseResult:
    phi: float
    phases: np.ndarray
    ground: np.ndarray
    excited: np.ndarray
    ground_fit: FitResult
    excited_fit: FitResult


def _unit_cosine_fit(x, y) -> tuple[FitResult, float, float]:
    """Fit ``a cos(x - psi) + b``; returns (fit, a >= 0, psi)."""
    basis = np.column_stack([np.cos(x), np.sin(x), np.ones_like(x)])
    (c, s, b), *_ = np.linalg.lstsq(basis, y, rcond=None)
    p0 = [np.hypot(c, s), np.arctan2(s, c), b]
    fit = curve_fit(lambda xx, a, psi, bb: a * np.cos(xx - psi) + bb, x, y, p0)
    a, psi, _ = fit.params
    if a < 0:
        a, psi = -a, psi + np.pi
    return fit, float(a), float(np.angle(np.exp(1j * psi)))


def rough_phase_scan(
    device: DeviceModel,
    tau_sq: float,
    amp: float,
    phases: Sequence[float] | None = None,
    shots: int | None = 1024,
    rng=None,
    log: SessionLog | None = None,
) -> RoughPhaseResult:
    """Scan the CR phase with the control in |0> and |1> (two echoes each).

    The optimal phase sends the ground-state curve to -1 and the
    excited-state curve to +1.
    """
    phases = np.linspace(-np.pi, np.pi, 41, endpoint=False) if phases is None else np.asarray(phases, float)
    runner = _Runner(device, shots, rng)
    project = [runner.layer(u_target=_rx(np.pi / 2))]
    # virtual [IZ]_{pi/2} before a Z measurement has no effect
    flip = runner.layer(u_control=_X)
    ground, excited = [], []
    raw_g, raw_e = [], []
    for phi in phases:
        e = runner.echo(device.shape(tau_sq, amp, phi))
        g_val, g_c = runner.run([e, e, *project])
        e_val, e_c = runner.run([flip, e, e, *project])
        ground.append(g_val)
        excited.append(e_val)
        raw_g.append(g_c)
        raw_e.append(e_c)
    ground, excited = np.array(ground), np.array(excited)
    noise = 1.0 / np.sqrt(shots) if shots else 1e-9
    if np.ptp(ground) < 5 * noise or np.ptp(excited) < 5 * noise:
        raise CalibrationError("no phase dependence in the rough phase scan")
    fit_g, a_g, psi_g = _unit_cosine_fit(phases, ground)
    fit_e, a_e, psi_e = _unit_cosine_fit(phases, excited)
    mismatch = np.angle(np.exp(1j * (psi_g - psi_e - np.pi)))
    if abs(mismatch) > np.pi / 4:
        raise CalibrationError(
            f"ground/excited curves are not antiphase (offset {mismatch:.3f} rad); phase is ambiguous"
        )
    phi0 = float(np.angle(a_e * np.exp(1j * psi_e) + a_g * np.exp(1j * (psi_g + np.pi))))
    if log is not None:
        log.add("rough_phase", tau_sq=tau_sq, amp=amp, x=phases, ground=ground, excited=excited,
                counts_ground=raw_g, counts_excited=raw_e, fit_ground=_fit_record(fit_g),
                fit_excited=_fit_record(fit_e), result={"phi": phi0})
    return RoughPhaseResult(phi0, phases, ground, excited, fit_g, fit_e)


# -- closed-loop fine calibration -------------------------------------------

@dataclass(frozen=True)
class LoopStep:
    value: float  # amplitude or phase used for this measurement
    residual: float  # rotation error per gate (rad)
    stderr: float
    values: tuple[float, ...]


@dataclass(frozen=True)
class FineLoopResult:
    value: float
    history: tuple[LoopStep, ...]
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def residuals(self) -> list[float]:
        return [s.residual for s in self.history]


def amplitude_error_model(n, delta, decay, slope, offset):
    return np.exp(-decay * n) * np.cos(4 * (np.pi / 4 + delta) * n + np.pi / 2) + slope * n + offset


def _fit_per_gate_error(ns, values, model, grid) -> FitResult:
    """Grid-initialised LM fit of ``model(n, delta, decay, slope, offset)``."""
    ns = np.asarray(ns, float)
    best = None
    for d in grid:
        base = model(ns, d, 0.0, 0.0, 0.0)
        basis = np.column_stack([ns, np.ones_like(ns)])
        coef, *_ = np.linalg.lstsq(basis, values - base, rcond=None)
        score = np.sum((base + basis @ coef - values) ** 2)
        if best is None or score < best[0]:
            best = (score, d, coef)
    _, d0, (s0, o0) = best
    fit = curve_fit(model, ns, values, [d0, 0.0, s0, o0])
    if 0 <= fit.params[1] <= MAX_DECAY:
        return fit
    # near-flat data let the decay swallow the signal; pin it instead
    pinned = curve_fit(lambda n, d, s, o: model(n, d, 0.0, s, o), ns, values, [d0, s0, o0])
    params = np.insert(pinned.params, 1, 0.0)
    stderr = np.insert(pinned.stderr, 1, 0.0)
    cov = np.zeros((4, 4))
    keep = [0, 2, 3]
    cov[np.ix_(keep, keep)] = pinned.covariance
    return FitResult(params, stderr, cov, pinned.residual_norm, pinned.chisq, pinned.dof,
                     pinned.nfev, pinned.converged)


def fine_amplitude_loop(
    device: DeviceModel,
    tau_sq: float,
    amp: float,
    phi: float,
    n_list: Sequence[int] = FINE_N,
    shots: int | None = 1024,
    threshold: float = THRESHOLD,
    max_iters: int = 10,
    rng=None,
    log: SessionLog | None = None,
) -> FineLoopResult:
    """Amplify the over-rotation with ``echo^{4N} [IX]_{pi/2}`` and correct A.

    Update rule: ``A <- A (pi/4) / (pi/4 + delta_A)``.
    """
    rng = as_rng(rng)
    runner = _Runner(device, shots, rng)
    prep = [runner.layer(u_target=_rx(np.pi / 2))]
    history = []
    converged = False
    for _ in range(max_iters):
        e = runner.echo(device.shape(tau_sq, amp, phi))
        block = np.linalg.matrix_power(e, 4)
        values, raw = runner.repeat(prep, block, n_list)
        fit = _fit_per_gate_error(n_list, values, amplitude_error_model, np.linspace(-0.2, 0.2, 161))
        delta = float(fit.params[0])
        history.append(LoopStep(amp, delta, float(fit.stderr[0]), tuple(values)))
        if log is not None:
            log.add("fine_amplitude", tau_sq=tau_sq, amp=amp, phi=phi, x=list(n_list), values=values,
                    counts=raw, fit=_fit_record(fit), result={"delta": delta})
        if abs(delta) < threshold:
            converged = True
            break
        amp = amp * (np.pi / 4) / (np.pi / 4 + delta)
        if not 0 < amp <= 1:
            break
    return FineLoopResult(float(amp), tuple(history), converged)


def _phase_signal(ns: np.ndarray, delta: float) -> np.ndarray:
    """Ideal target <Z> of ``[IY]_{pi/2} (echo [IY])^N [IX]_{pi/2}`` for axis tilt ``delta``."""
    n_axis = np.cos(delta) * _X + np.sin(delta) * _Y
    r = np.cos(np.pi / 8) * _I2 - 1j * np.sin(np.pi / 8) * n_axis
    step = r @ _Y
    psi = _rx(np.pi / 2) @ np.array([1, 0], dtype=complex)
    z = ch.PAULIS["Z"]
    post = _ry(np.pi / 2)
    out = []
    cache = {0: psi}
    k_max = int(max(ns))
    for k in range(1, k_max + 1):
        cache[k] = step @ cache[k - 1]
    for k in ns:
        phi = post @ cache[int(k)]
        out.append(np.real(phi.conj() @ z @ phi))
    return np.array(out)


def phase_error_model(n, delta, decay, slope, offset):
    return np.exp(-decay * n) * _phase_signal(n, delta) + slope * n + offset


def fine_phase_loop(
    device: DeviceModel,
    tau_sq: float,
    amp: float,
    phi: float,
    n_list: Sequence[int] = FINE_N,
    shots: int | None = 1024,
    threshold: float = THRESHOLD,
    max_iters: int = 10,
    rng=None,
    log: SessionLog | None = None,
) -> FineLoopResult:
    """Amplify the ZY admixture with ``[IY]_{pi/2} (echo [IY])^N [IX]_{pi/2}``.

    The fitted tilt of the controlled-rotation axis is subtracted from the
    CR phase each iteration.
    """
    rng = as_rng(rng)
    runner = _Runner(device, shots, rng)
    prep = [runner.layer(u_target=_rx(np.pi / 2))]
    post = [runner.layer(u_target=_ry(np.pi / 2))]
    y_gate = runner.layer(u_target=_Y)
    history = []
    converged = False
    for _ in range(max_iters):
        block = runner.echo(device.shape(tau_sq, amp, phi)) @ y_gate
        values, raw = runner.repeat(prep, block, n_list, post)
        fit = _fit_per_gate_error(n_list, values, phase_error_model, np.linspace(-0.5, 0.5, 101))
        delta = float(fit.params[0])
        history.append(LoopStep(phi, delta, float(fit.stderr[0]), tuple(values)))
        if log is not None:
            log.add("fine_phase", tau_sq=tau_sq, amp=amp, phi=phi, x=list(n_list), values=values,
                    counts=raw, fit=_fit_record(fit), result={"delta": delta})
        if abs(delta) < threshold:
            converged = True
            break
        phi = float(np.angle(np.exp(1j * (phi - delta))))
    return FineLoopResult(float(phi), tuple(history), converged)


# -- crosstalk ---------------------------------------------------------------

@dataclass(frozen=True)
class CrosstalkResult:
    magnitude: float  # Hz, sqrt(omega_IX^2 + omega_IY^2) / 2 pi
    stderr: float  # Hz
    times: np.ndarray
    values: np.ndarray
    comp_amp: float = 0.0
    comp_phase: float = 0.0
    history: tuple = ()

    @property
    def compensation(self) -> Compensation:
        return Compensation(self.comp_amp, self.comp_phase)


def xy4_crosstalk(
    device: DeviceModel,
    tau_sq: float,
    amp: float,
    phi: float,
    n_list: Sequence[int] = XY4_N,
    shots: int | None = 1024,
    rng=None,
    compensation: Compensation | None = None,
    log: SessionLog | None = None,
) -> CrosstalkResult:
    """Estimate the local rotation rate with ``([YI] U_CR [XI] U_CR)^{2N}``.

    The controlled terms are refocused by the alternating control flips;
    the target's <Z> oscillates at the local rate over the CR-on time
    ``4 N tau_CR``.  Flat data give magnitude 0 with infinite error.
    """
    runner = _Runner(device, shots, rng)
    shape = device.shape(tau_sq, amp, phi)
    u_cr = evolve_pulse(device.cr, shape, compensation=compensation)
    cr = runner.pulse(u_cr, shape.tau_cr)
    block = runner.layer(u_control=_Y) @ cr @ runner.layer(u_control=_X) @ cr
    values, raw = runner.repeat([], block @ block, n_list)
    times = 4 * np.asarray(n_list, float) * shape.tau_cr
    noise = 1.0 / np.sqrt(shots) if shots else 1e-7
    magnitude, stderr, fit = 0.0, float("inf"), None
    if np.ptp(values) > 5 * noise:
        try:
            fit = cosine_fit(times, values, phase=0.0, decay=True)
            magnitude, stderr = abs(float(fit.params[1])), float(fit.stderr[1])
        except FitError:
            fit = None
    if log is not None:
        log.add("xy4", tau_sq=tau_sq, amp=amp, phi=phi,
                compensation=None if compensation is None else asdict(compensation),
                x=times, values=values, counts=raw, fit=_fit_record(fit),
                result={"magnitude_hz": magnitude})
    comp = compensation or Compensation()
    return CrosstalkResult(magnitude, stderr, times, values, comp.amp, comp.phase)


def calibrate_compensation(
    device: DeviceModel,
    tau_sq: float,
    amp: float,
    phi: float,
    initial: Compensation | None = None,
    shots: int | None = 1024,
    rng=None,
    target: float = 2e3,
    rounds: int = 4,
    probe_rate: tuple[float, float] = (2 * np.pi * 50e3, 2 * np.pi * 250e3),
    log: SessionLog | None = None,
) -> CrosstalkResult:
    """Find the compensation tone (A', phi') that cancels the local term.

    The XY-4 rate squared is quadratic in ``z = A' exp(i phi')``:
    ``m(z) = |L + c z|^2``.  Four probes around the current guess
    determine ``L`` and ``c`` and the next guess is ``-L / c``.  The probe
    step shifts the rate by ``probe_rate`` (rad/s, clipped range).
    """
    rng = as_rng(rng)
    z = complex(0.0) if initial is None else initial.amp * np.exp(1j * initial.phase)

    def rate_sq(zz: complex) -> float:
        comp = Compensation(abs(zz), float(np.angle(zz)))
        res = xy4_crosstalk(device, tau_sq, amp, phi, shots=shots, rng=rng, compensation=comp, log=log)
        return (2 * np.pi * res.magnitude) ** 2

    m0 = rate_sq(z)
    history = [(abs(z), float(np.angle(z)), np.sqrt(m0) / (2 * np.pi))]
    c_abs = device.cr.target_drive
    for _ in range(rounds):
        if np.sqrt(m0) / (2 * np.pi) < target:
            break
        # probes must shift the rate measurably but stay below the XY-4 sampling limit
        probe = np.clip(0.5 * np.sqrt(m0), *probe_rate)
        eps = probe / c_abs
        m_plus, m_minus, m_imag = rate_sq(z + eps), rate_sq(z - eps), rate_sq(z + 1j * eps)
        c_sq = (m_plus + m_minus - 2 * m0) / (2 * eps**2)
        if c_sq <= 0:
            break  # probes too noisy to resolve the response
        u = (m_plus - m_minus) / (4 * eps) + 1j * (m0 + eps**2 * c_sq - m_imag) / (2 * eps)
        c_abs = np.sqrt(c_sq)
        trial = z - np.conj(u) / c_sq
        m_trial = rate_sq(trial)
        history.append((abs(trial), float(np.angle(trial)), np.sqrt(m_trial) / (2 * np.pi)))
        if m_trial >= m0:
            break
        z, m0 = trial, m_trial
    final = xy4_crosstalk(device, tau_sq, amp, phi, shots=shots, rng=rng,
                          compensation=Compensation(abs(z), float(np.angle(z))), log=log)
    return CrosstalkResult(final.magnitude, final.stderr, final.times, final.values,
                           abs(z), float(np.angle(z)), tuple(history))


# -- full calibration --------------------------------------------------------

@dataclass(frozen=True)
class CalibrationResult:
    tau_sq: float
    amp0: float
    phi0: float
    amp1: float
    phi1: float
    amplitude_loop: FineLoopResult
    phase_loop: FineLoopResult
    threshold: float = THRESHOLD

    @property
    def converged(self) -> bool:
        return self.amplitude_loop.converged and self.phase_loop.converged

    def shape(self, device: DeviceModel) -> PulseShape:
        return device.shape(self.tau_sq, self.amp1, self.phi1)

    def to_dict(self) -> dict:
        def loop(res: FineLoopResult):
            return {
                "value": res.value,
                "converged": res.converged,
                "iterations": res.iterations,
                "history": [{"value": s.value, "residual": s.residual, "stderr": s.stderr} for s in res.history],
            }

        return _jsonable({
            "tau_sq_ns": self.tau_sq * 1e9,
            "amp0": self.amp0,
            "phi0": self.phi0,
            "amp1": self.amp1,
            "phi1": self.phi1,
            "threshold": self.threshold,
            "converged": self.converged,
            "amplitude_loop": loop(self.amplitude_loop),
            "phase_loop": loop(self.phase_loop),
        })


def calibrate(
    device: DeviceModel,
    tau_sq: float,
    shots: int | None = 1024,
    rng=None,
    threshold: float = THRESHOLD,
    max_iters: int = 10,
    log: SessionLog | None = None,
    start: tuple[float, float] | None = None,
) -> CalibrationResult:
    """Rough amplitude and phase scans followed by both closed loops.

    ``start`` skips the rough scans and seeds the loops with (A, phi).
    """
    rng = as_rng(rng)
    if start is None:
        amp0 = rough_amplitude_scan(device, tau_sq, shots=shots, rng=rng, log=log).amp
        phi0 = rough_phase_scan(device, tau_sq, amp0, shots=shots, rng=rng, log=log).phi
    else:
        amp0, phi0 = start
    amp_loop = fine_amplitude_loop(device, tau_sq, amp0, phi0, shots=shots, threshold=threshold,
                                   max_iters=max_iters, rng=rng, log=log)
    phase_loop = fine_phase_loop(device, tau_sq, amp_loop.value, phi0, shots=shots, threshold=threshold,
                                 max_iters=max_iters, rng=rng, log=log)
    return CalibrationResult(tau_sq, amp0, phi0, amp_loop.value, phase_loop.value, amp_loop, phase_loop, threshold)
