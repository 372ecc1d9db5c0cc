"""Cross-resonance pulse model and the echoed CS schedule.

Two-qubit operators are ordered control (x) target.  Rotations follow
``[BC]_theta = exp(-i theta/2 B(x)C)``.  All rates are angular (rad/s) and
all durations are in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channels import pauli

EDGE_DEFAULT = 28.16e-9
SIGMA_DEFAULT = 14.08e-9
OVERHEAD_DEFAULT = 106.7e-9
EDGE_SLICES = 32

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)
_MAGNUS_NODES = np.array([-1.0, 1.0]) / np.sqrt(3)

ZX = pauli("ZX")
ZY = pauli("ZY")
ZZ = pauli("ZZ")
ZI = pauli("ZI")
IX = pauli("IX")
IY = pauli("IY")
IZ = pauli("IZ")
XI = pauli("XI")
YI = pauli("YI")
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


def rotation(label: str, theta: float) -> np.ndarray:
    """``[label]_theta`` for a Pauli label such as ``"ZX"``."""
    p = pauli(label)
    return np.cos(theta / 2) * np.eye(p.shape[0]) - 1j * np.sin(theta / 2) * p


@dataclass(frozen=True)
class CRModel:
    """Interaction rates of a CR drive as functions of amplitude and phase.

    ``zx, zx_cubic``: controlled rotation g_Z(A) = zx A + zx_cubic A^3.
    ``ix``: local target drive from the CR tone, aligned with the CR phase.
    ``crosstalk, crosstalk_cubic, crosstalk_phase``: physical crosstalk on
    the target, rotated by ``crosstalk_phase`` from the CR phase.
    ``zi``: Stark shift coefficient (even in A).  ``zz, iz``: static terms.
    ``target_drive, target_phase``: Rabi rate per unit amplitude and phase
    offset of the target drive line used by a compensation tone.
    """

    zx: float = 0.0
    zx_cubic: float = 0.0
    ix: float = 0.0
    zi: float = 0.0
    theta0: float = 0.0
    crosstalk: float = 0.0
    crosstalk_cubic: float = 0.0
    crosstalk_phase: float = np.pi / 2
    zz: float = 0.0
    iz: float = 0.0
    target_drive: float = 2 * np.pi * 150e6
    target_phase: float = 0.0

    def g_z(self, amp):
        return self.zx * amp + self.zx_cubic * amp**3

    def local(self, amp, phi):
        """Complex local drive rate omega_IX + i omega_IY."""
        base = np.exp(1j * (phi + self.theta0))
        xt = (self.crosstalk * amp + self.crosstalk_cubic * amp**3) * np.exp(1j * self.crosstalk_phase)
        return (self.ix * amp + xt) * base

    def rates(self, amp: float, phi: float) -> dict[str, float]:
        gz = self.g_z(amp)
        loc = self.local(amp, phi)
        return {
            "ZI": self.zi * amp**2,
            "ZX": gz * np.cos(phi + self.theta0),
            "ZY": gz * np.sin(phi + self.theta0),
            "ZZ": self.zz,
            "IX": float(np.real(loc)),
            "IY": float(np.imag(loc)),
            "IZ": self.iz,
        }


@dataclass(frozen=True)
class Compensation:
    """Flat-top tone on the target drive, sharing the CR envelope."""

    amp: float = 0.0
    phase: float = 0.0

    def rate(self, model: CRModel) -> complex:
        return model.target_drive * self.amp * np.exp(1j * (self.phase + model.target_phase))


@dataclass(frozen=True)
class PulseShape:
    """Flat-top pulse with lifted-Gaussian rising and falling edges."""

    tau_sq: float
    amp: float = 0.0
    phi: float = 0.0
    tau_edge: float = EDGE_DEFAULT
    sigma: float = SIGMA_DEFAULT

    def __post_init__(self):
        if self.tau_sq < 0 or self.tau_edge < 0 or self.sigma <= 0:
            raise ValueError(f"invalid pulse durations: {self}")

    @property
    def tau_cr(self) -> float:
        return self.tau_sq + 2 * self.tau_edge

    def with_params(self, amp: float | None = None, phi: float | None = None) -> "PulseShape":
        return replace(self, amp=self.amp if amp is None else amp, phi=self.phi if phi is None else phi)

    def edge_envelope(self, t):
        """Rising edge on [0, tau_edge], zero at t=0 and one at t=tau_edge."""
        t = np.asarray(t, dtype=float)
        g0 = np.exp(-self.tau_edge**2 / (2 * self.sigma**2))
        g = np.exp(-((t - self.tau_edge) ** 2) / (2 * self.sigma**2))
        return (g - g0) / (1 - g0)

    def envelope(self, t):
        t = np.asarray(t, dtype=float)
        rise = self.edge_envelope(t)
        fall = self.edge_envelope(self.tau_cr - t)
        return np.where(t < self.tau_edge, rise, np.where(t > self.tau_edge + self.tau_sq, fall, 1.0))

    @property
    def tau_eff(self) -> float:
        """Envelope area: the duration of an equivalent square pulse."""
        if self.tau_edge == 0:
            return self.tau_sq
        cuts = np.linspace(0.0, self.tau_edge, 65)
        half = 0.5 * np.diff(cuts)
        nodes = cuts[:-1, None] + half[:, None] * (_GL_NODES[None, :] + 1)
        edge = np.sum(half[:, None] * _GL_WEIGHTS[None, :] * self.edge_envelope(nodes))
        return self.tau_sq + 2 * float(edge)


@dataclass(frozen=True)
class ScheduleTiming:
    overhead: float = OVERHEAD_DEFAULT

    def tau_cs(self, shape: PulseShape) -> float:
        return 2 * shape.tau_cr + self.overhead


def cr_hamiltonian(model: CRModel, amp: float, phi: float, compensation: complex = 0.0) -> np.ndarray:
    """Block-diagonal effective CR Hamiltonian (rad/s)."""
    if abs(amp) > 1 + 1e-12:
        raise ValueError(f"|A| must not exceed 1, got {amp}")
    r = model.rates(amp, phi)
    ix = r["IX"] + np.real(compensation)
    iy = r["IY"] + np.imag(compensation)
    return 0.5 * (
        r["ZI"] * ZI + r["ZX"] * ZX + r["ZY"] * ZY + r["ZZ"] * ZZ + ix * IX + iy * IY + r["IZ"] * IZ
    )


def _expm_hermitian_batch(hs: np.ndarray, dts: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(hs)
    phases = np.exp(-1j * vals * dts[:, None])
    return np.einsum("kij,kj,klj->kil", vecs, phases, vecs.conj())


def _segments(shape: PulseShape, slices: int):
    """(start, duration, is_flat) for each constant segment."""
    segs = []
    if shape.tau_edge > 0:
        edges = np.linspace(0.0, shape.tau_edge, slices + 1)
        segs += [(a, b - a, False) for a, b in zip(edges[:-1], edges[1:])]
    if shape.tau_sq > 0:
        segs.append((shape.tau_edge, shape.tau_sq, True))
    if shape.tau_edge > 0:
        start = shape.tau_edge + shape.tau_sq
        edges = start + np.linspace(0.0, shape.tau_edge, slices + 1)
        segs += [(a, b - a, False) for a, b in zip(edges[:-1], edges[1:])]
    return segs


def evolve_pulse(
    model: CRModel,
    shape: PulseShape,
    amp: float | None = None,
    phi: float | None = None,
    compensation: Compensation | None = None,
    slices: int = EDGE_SLICES,
) -> np.ndarray:
    """Unitary of one shaped CR pulse (optionally with a compensation tone).

    Each edge slice uses a fourth-order Magnus step: the slice-averaged
    Hamiltonian plus the leading commutator correction.  The flat top is
    a single segment.
    """
    amp = shape.amp if amp is None else amp
    phi = shape.phi if phi is None else phi
    comp = 0.0 if compensation is None else compensation.rate(model)
    segs = _segments(shape, slices)
    if not segs:
        return np.eye(4, dtype=complex)
    hs, dts = [], []
    for start, dt, flat in segs:
        if flat:
            hs.append(cr_hamiltonian(model, amp, phi, comp))
        else:
            ts = start + 0.5 * dt * (_GL_NODES + 1)
            env = shape.envelope(ts)
            h = sum(w * cr_hamiltonian(model, amp * e, phi, comp * e) for w, e in zip(_GL_WEIGHTS, env))
            # second Magnus term from the 2-point Gauss nodes makes each slice fourth order
            e1, e2 = shape.envelope(start + 0.5 * dt * (1 + _MAGNUS_NODES))
            h1 = cr_hamiltonian(model, amp * e1, phi, comp * e1)
            h2 = cr_hamiltonian(model, amp * e2, phi, comp * e2)
            hs.append(0.5 * h - 1j * (np.sqrt(3) * dt / 12) * (h2 @ h1 - h1 @ h2))  # Gauss weights sum to 2
        dts.append(dt)
    us = _expm_hermitian_batch(np.array(hs), np.array(dts))
    out = np.eye(4, dtype=complex)
    for u in us:
        out = u @ out
    return out


def echoed_cr(
    model: CRModel,
    shape: PulseShape,
    amp: float | None = None,
    phi: float | None = None,
    compensation: Compensation | None = None,
    slices: int = EDGE_SLICES,
) -> np.ndarray:
    """``[XI] U_CR(-A, phi) [XI] U_CR(A, phi)``; the compensation tone flips with A."""
    amp = shape.amp if amp is None else amp
    phi = shape.phi if phi is None else phi
    neg = None if compensation is None else replace(compensation, amp=-compensation.amp)
    u_plus = evolve_pulse(model, shape, amp, phi, compensation, slices)
    u_minus = evolve_pulse(model, shape, -amp, phi, neg, slices)
    return XI @ u_minus @ XI @ u_plus


def cs_schedule(
    model: CRModel,
    shape: PulseShape,
    inverse: bool = False,
    compensation: Compensation | None = None,
) -> np.ndarray:
    """``[IH] [IX]_{pi/4} [ZI]_{pi/4} [ZX]_{-pi/4} [IH]`` with the echo as ZX.

    The calibrated echo realises ``[ZX]_{+pi/4}``; the negative angle is
    obtained by shifting the CR phase (and any compensation tone) by pi.  The inverse gate negates the
    local angles and uses the echo at the calibrated phase.
    """
    ih = np.kron(np.eye(2), HADAMARD)
    sign = -1.0 if inverse else 1.0
    phi = shape.phi if inverse else shape.phi + np.pi
    if compensation is not None and not inverse:
        # the tone is calibrated relative to the CR phase and follows its shift
        compensation = replace(compensation, phase=compensation.phase + np.pi)
    echo = echoed_cr(model, shape, shape.amp, phi, compensation)
    return ih @ rotation("IX", sign * np.pi / 4) @ rotation("ZI", sign * np.pi / 4) @ echo @ ih


def ideal_amplitude(model: CRModel, shape: PulseShape, angle: float = np.pi / 4) -> float:
    """Amplitude for which the echo gives ``[ZX]_angle`` (linear g_Z only)."""
    if model.zx == 0:
        raise ValueError("model has no linear ZX coefficient")
    if model.zx_cubic:
        from scipy.optimize import brentq

        f = lambda a: 2 * model.g_z(a) * shape.tau_eff - angle  # noqa: E731
        return float(brentq(f, 0.0, 1.0))
    return angle / (2 * model.zx * shape.tau_eff)


def mean_local_rate(model: CRModel, shape: PulseShape, compensation: Compensation | None = None) -> float:
    """Envelope-averaged |omega_IX + i omega_IY| over one pulse (rad/s)."""
    comp = 0.0 if compensation is None else compensation.rate(model)
    segs = _segments(shape, EDGE_SLICES)
    total = 0.0 + 0.0j
    for start, dt, flat in segs:
        if flat:
            total += (model.local(shape.amp, shape.phi) + comp) * dt
        else:
            ts = start + 0.5 * dt * (_GL_NODES + 1)
            env = shape.envelope(ts)
            total += 0.5 * dt * sum(
                w * (model.local(shape.amp * e, shape.phi) + comp * e) for w, e in zip(_GL_WEIGHTS, env)
            )
    return float(abs(total) / shape.tau_cr) if shape.tau_cr > 0 else 0.0
