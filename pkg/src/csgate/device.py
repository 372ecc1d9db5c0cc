"""Simulated two-qubit CR device and its JSON configuration.

Config units: coherence times in microseconds (``null`` = infinite),
durations in nanoseconds, interaction rates as ``omega / 2 pi`` in kHz,
angles in radians.  Everything is converted to SI (s, rad/s) on load.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import channels as ch
from .pulse import (
    EDGE_DEFAULT,
    OVERHEAD_DEFAULT,
    SIGMA_DEFAULT,
    Compensation,
    CRModel,
    PulseShape,
    ScheduleTiming,
    cs_schedule,
    rotation,
)

TWO_PI_KHZ = 2 * np.pi * 1e3

_CR_FIELDS = {
    "zx_khz": "zx",
    "zx_cubic_khz": "zx_cubic",
    "ix_khz": "ix",
    "zi_khz": "zi",
    "crosstalk_khz": "crosstalk",
    "crosstalk_cubic_khz": "crosstalk_cubic",
    "zz_khz": "zz",
    "iz_khz": "iz",
    "target_drive_khz": "target_drive",
}
_CR_ANGLES = ("theta0", "crosstalk_phase", "target_phase")


class ConfigError(ValueError):
    """Malformed device configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class DeviceModel:
    t1: tuple[float, float] = (np.inf, np.inf)
    t2: tuple[float, float] = (np.inf, np.inf)
    cr: CRModel = field(default_factory=CRModel)
    p1_given_0: tuple[float, float] = (0.0, 0.0)
    p0_given_1: tuple[float, float] = (0.0, 0.0)
    tau_edge: float = EDGE_DEFAULT
    sigma: float = SIGMA_DEFAULT
    overhead: float = OVERHEAD_DEFAULT
    sq_gate_time: float = 35.56e-9
    element_time: float = 0.0
    element_error: float = 0.0
    sq_gate_error: tuple[float, float] = (0.0, 0.0)
    coherent_zz: float = 0.0
    drive_error: float = 0.0
    drive_error_power: float = 10.0
    name: str = "device"

    def __post_init__(self):
        for q in range(2):
            t1, t2 = self.t1[q], self.t2[q]
            if not t1 > 0 or not t2 > 0:
                raise ConfigError("t1" if not t1 > 0 else "t2", f"coherence times must be positive (qubit {q})")
            if t2 > 2 * t1 * (1 + 1e-12):
                raise ConfigError("t2", f"T2 exceeds 2*T1 on qubit {q}")
        for name in ("p1_given_0", "p0_given_1", "sq_gate_error"):
            vals = getattr(self, name)
            if len(vals) != 2 or any(not 0 <= v <= 1 for v in vals):
                raise ConfigError(name, "need two probabilities in [0, 1]")
        if not 0 <= self.element_error < 0.75:
            raise ConfigError("element_error", "must lie in [0, 0.75)")

    # -- construction -------------------------------------------------
    @classmethod
    def noiseless(cls, **cr_overrides) -> "DeviceModel":
        cr = CRModel(zx=TWO_PI_KHZ * 5000.0, **cr_overrides)
        return cls(cr=cr, name="noiseless")

    @classmethod
    def from_dict(cls, cfg: dict) -> "DeviceModel":
        if not isinstance(cfg, dict):
            raise ConfigError("<root>", "config must be a JSON object")

        def need(key, src=cfg, prefix=""):
            if key not in src:
                raise ConfigError(prefix + key, "missing required field")
            return src[key]

        def pair(key, scale, default=None, src=cfg, prefix=""):
            raw = src.get(key, default) if default is not None else need(key, src, prefix)
            if not isinstance(raw, (list, tuple)) or len(raw) != 2:
                raise ConfigError(prefix + key, "expected a list of two values")
            out = []
            for v in raw:
                if v is None:
                    out.append(np.inf)
                elif isinstance(v, (int, float)):
                    out.append(float(v) * scale)
                else:
                    raise ConfigError(prefix + key, f"non-numeric value {v!r}")
            return tuple(out)

        cr_cfg = need("cr")
        if not isinstance(cr_cfg, dict):
            raise ConfigError("cr", "expected an object")
        cr_kwargs = {}
        for key, attr in _CR_FIELDS.items():
            if key in cr_cfg:
                cr_kwargs[attr] = _number(cr_cfg[key], "cr." + key) * TWO_PI_KHZ
        for key in _CR_ANGLES:
            if key in cr_cfg:
                cr_kwargs[key] = _number(cr_cfg[key], "cr." + key)
        unknown = set(cr_cfg) - set(_CR_FIELDS) - set(_CR_ANGLES)
        if unknown:
            raise ConfigError("cr." + sorted(unknown)[0], "unknown field")
        if "zx_khz" not in cr_cfg:
            raise ConfigError("cr.zx_khz", "missing required field")

        readout = cfg.get("readout", {})
        timing = cfg.get("timing", {})
        errors = cfg.get("errors", {})
        kwargs = dict(
            t1=pair("t1", 1e-6),
            t2=pair("t2", 1e-6),
            cr=CRModel(**cr_kwargs),
            p1_given_0=pair("p1_given_0", 1.0, [0, 0], readout, "readout."),
            p0_given_1=pair("p0_given_1", 1.0, [0, 0], readout, "readout."),
            sq_gate_error=pair("sq_gate", 1.0, [0, 0], errors, "errors."),
            name=str(cfg.get("name", "device")),
        )
        for key, attr in (
            ("tau_edge_ns", "tau_edge"),
            ("sigma_ns", "sigma"),
            ("overhead_ns", "overhead"),
            ("sq_gate_ns", "sq_gate_time"),
            ("element_ns", "element_time"),
        ):
            if key in timing:
                kwargs[attr] = _number(timing[key], "timing." + key) / 1e9
        for key, attr in (
            ("element", "element_error"),
            ("coherent_zz", "coherent_zz"),
            ("drive", "drive_error"),
            ("drive_power", "drive_error_power"),
        ):
            if key in errors:
                kwargs[attr] = _number(errors[key], "errors." + key)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        def us(v):
            return None if not np.isfinite(v) else _tidy(v * 1e6)

        cr = asdict(self.cr)
        cr_out = {key: _tidy(cr[attr] / TWO_PI_KHZ) for key, attr in _CR_FIELDS.items()}
        cr_out.update({key: cr[key] for key in _CR_ANGLES})
        return {
            "name": self.name,
            "t1": [us(v) for v in self.t1],
            "t2": [us(v) for v in self.t2],
            "cr": cr_out,
            "readout": {"p1_given_0": list(self.p1_given_0), "p0_given_1": list(self.p0_given_1)},
            "timing": {
                "tau_edge_ns": _tidy(self.tau_edge * 1e9),
                "sigma_ns": _tidy(self.sigma * 1e9),
                "overhead_ns": _tidy(self.overhead * 1e9),
                "sq_gate_ns": _tidy(self.sq_gate_time * 1e9),
                "element_ns": _tidy(self.element_time * 1e9),
            },
            "errors": {
                "element": self.element_error,
                "sq_gate": list(self.sq_gate_error),
                "coherent_zz": self.coherent_zz,
                "drive": self.drive_error,
                "drive_power": self.drive_error_power,
            },
        }

    @classmethod
    def load(cls, path: str | Path) -> "DeviceModel":
        try:
            cfg = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from exc
        return cls.from_dict(cfg)

    @classmethod
    def builtin(cls, name: str) -> "DeviceModel":
        text = resources.files("csgate").joinpath("configs", f"{name}.json").read_text()
        return cls.from_dict(json.loads(text))

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_cr(self, **changes) -> "DeviceModel":
        return replace(self, cr=replace(self.cr, **changes))

    # -- derived objects ----------------------------------------------
    def shape(self, tau_sq: float, amp: float = 0.0, phi: float = 0.0) -> PulseShape:
        return PulseShape(tau_sq, amp, phi, self.tau_edge, self.sigma)

    @property
    def timing(self) -> ScheduleTiming:
        return ScheduleTiming(self.overhead)

    def tau_cs(self, shape: PulseShape) -> float:
        return self.timing.tau_cs(shape)

    @property
    def readout(self) -> ch.ReadoutModel:
        return ch.ReadoutModel.from_flips(self.p1_given_0, self.p0_given_1)

    def idle(self, duration: float) -> ch.QuantumChannel:
        """T1/T2 relaxation of both qubits over ``duration``."""
        return ch.tensor(
            ch.damping(duration, self.t1[0], self.t2[0]),
            ch.damping(duration, self.t1[1], self.t2[1]),
        )

    def single_qubit_layer(self, u0: np.ndarray, u1: np.ndarray) -> ch.QuantumChannel:
        """Parallel single-qubit gates with their depolarizing error and relaxation."""
        ideal = ch.unitary_channel(np.kron(u0, u1))
        depol = ch.tensor(
            ch.depolarizing(1, 1 - 2 * self.sq_gate_error[0]),
            ch.depolarizing(1, 1 - 2 * self.sq_gate_error[1]),
        )
        return ch.compose_channels(self.idle(self.sq_gate_time), ch.compose_channels(depol, ideal))

    def element_noise(self) -> ch.QuantumChannel:
        """Error channel attached to every random group element."""
        alpha = 1 - 4 * self.element_error / 3
        return ch.compose_channels(self.idle(self.element_time), ch.depolarizing(2, alpha))

    def drive_error_rate(self, amp: float) -> float:
        return self.drive_error * abs(amp) ** self.drive_error_power


def _tidy(x: float) -> float:
    """Drop unit-conversion round-off so configs survive a JSON round trip."""
    return float(f"{x:.12g}")


def _number(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    return float(value)


def noisy_cs_channel(
    device: DeviceModel,
    shape: PulseShape,
    inverse: bool = False,
    compensation: Compensation | None = None,
) -> ch.QuantumChannel:
    """CS (or its inverse) from the pulse schedule, followed by the device noise.

    The ideal-schedule unitary is followed by an optional coherent ZZ
    rotation, an amplitude-dependent depolarizing term and T1/T2
    relaxation over the full gate time.
    """
    u = cs_schedule(device.cr, shape, inverse=inverse, compensation=compensation)
    if device.coherent_zz:
        u = rotation("ZZ", device.coherent_zz) @ u
    chan = ch.unitary_channel(u)
    r_drive = device.drive_error_rate(shape.amp)
    if r_drive:
        chan = ch.compose_channels(ch.depolarizing(2, 1 - 4 * r_drive / 3), chan)
    return ch.compose_channels(device.idle(device.tau_cs(shape)), chan)
