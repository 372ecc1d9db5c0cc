"""Command-line entry point: ``csgate {calibrate,rb,qpt,sweep,coherence}``.

Exit codes: 0 success, 1 configuration error, 2 non-convergence,
64 usage error.  The device config comes from ``--config``, then the
``CSGATE_CONFIG`` environment variable, then the shipped paper-anchored
config.  ``builtin:NAME`` selects a shipped config by name.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import channels as ch
from .calibration import CalibrationError, SessionLog, calibrate, write_scan_csv
from .device import ConfigError, DeviceModel
from .group import cs_element
from .rb import FULL_LENGTHS, PulseBackend, RBConfig, run_experiment
from .scenarios import CS, DEFAULT_TAUS_NS, SweepSpec, run_qpt, run_sweep

ENV_CONFIG = "CSGATE_CONFIG"
DEFAULT_CONFIG = "builtin:paper_anchored"

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def load_device(spec: str | None) -> DeviceModel:
    spec = spec or os.environ.get(ENV_CONFIG) or DEFAULT_CONFIG
    if spec.startswith("builtin:"):
        try:
            return DeviceModel.builtin(spec.split(":", 1)[1])
        except FileNotFoundError as exc:
            raise ConfigError("config", f"no shipped config named {spec!r}") from exc
    path = Path(spec)
    if not path.is_file():
        raise ConfigError("config", f"cannot read config file {spec!r}")
    return DeviceModel.load(path)


def _meta(device: DeviceModel, seed: int | None) -> dict:
    return {"version": __version__, "config_hash": device.config_hash(), "seed": seed}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True, allow_nan=False) + "\n")


def _stamp_csv(path: Path, meta: dict) -> None:
    body = path.read_text()
    head = f"# csgate {meta['version']} config_hash={meta['config_hash']} seed={meta['seed']}\n"
    path.write_text(head + body)


def _shots(value: str) -> int | None:
    if value == "exact":
        return None
    try:
        shots = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError("shots must be a positive integer or 'exact'")
    if shots < 1:
        raise argparse.ArgumentTypeError("shots must be positive")
    return shots


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="csgate", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"csgate {__version__}")
    p.add_argument("--config", help=f"device config path or builtin:NAME (default: ${ENV_CONFIG} or {DEFAULT_CONFIG})")
    p.add_argument("--threads", type=int, default=1, help="worker threads for sequence and sweep execution")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--seed", type=int, default=0)
        if out:
            sp.add_argument("--out", type=Path, required=True, help="output directory")

    c = sub.add_parser("calibrate", help="rough scans and closed-loop fine calibration")
    common(c)
    c.add_argument("--tau-sq", type=float, default=21.3, help="flat-top width in ns")
    c.add_argument("--shots", type=_shots, default=1024, help="shots per point, or 'exact'")
    c.add_argument("--threshold", type=float, default=1e-3 * np.pi)
    c.add_argument("--max-iters", type=int, default=10)

    r = sub.add_parser("rb", help="standard and interleaved RB of the CS gate")
    common(r)
    r.add_argument("--tau-sq", type=float, default=21.3)
    r.add_argument("--interleaved", choices=("cs", "none"), default="cs")
    r.add_argument("--lengths", type=_int_list, default=FULL_LENGTHS)
    r.add_argument("--samples", type=int, default=10)
    r.add_argument("--shots", type=_shots, default=1024)
    r.add_argument("--calibration", type=Path, help="calibration.json to reuse (default: exact calibration)")

    q = sub.add_parser("qpt", help="process tomography of the CS gate")
    common(q)
    q.add_argument("--tau-sq", type=float, default=21.3)
    q.add_argument("--shots", type=int, default=1024)
    q.add_argument("--calibration", type=Path)

    s = sub.add_parser("sweep", help="flat-top width sweep (resumes from --out)")
    common(s)
    s.add_argument("--taus", type=_float_list, default=DEFAULT_TAUS_NS, help="flat-top widths in ns")
    s.add_argument("--samples", type=int, default=10)
    s.add_argument("--shots", type=int, default=1024)
    s.add_argument("--qpt-shots", type=int, default=1024)
    s.add_argument("--no-qpt", action="store_true")

    k = sub.add_parser("coherence", help="coherence-limited average gate error")
    k.add_argument("--t1", type=float, nargs="+", help="T1 per qubit in us (default: from config)")
    k.add_argument("--t2", type=float, nargs="+", help="T2 per qubit in us (default: from config)")
    g = k.add_mutually_exclusive_group()
    g.add_argument("--gate-time", type=float, help="gate time in ns")
    g.add_argument("--tau-sq", type=float, help="flat-top width in ns (gate time from the timing model)")
    k.add_argument("--json", action="store_true")
    return p


def _load_calibration(path: Path | None, device: DeviceModel, tau_sq: float):
    if path is None:
        cal = calibrate(device, tau_sq, shots=None)
        return cal.amp1, cal.phi1
    rec = json.loads(path.read_text())
    if rec.get("config_hash") != device.config_hash():
        raise ConfigError("calibration", "calibration file was produced for a different device config")
    return rec["result"]["amp1"], rec["result"]["phi1"]


def cmd_calibrate(args, device) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    meta = _meta(device, args.seed)
    log = SessionLog()
    log.add("session", **meta, tau_sq_ns=args.tau_sq)
    try:
        result = calibrate(device, args.tau_sq * 1e-9, shots=args.shots, rng=args.seed,
                           threshold=args.threshold, max_iters=args.max_iters, log=log)
    except CalibrationError as exc:
        log.write(args.out / "session.jsonl")
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    log.write(args.out / "session.jsonl")
    _write_json(args.out / "calibration.json", {**meta, "result": result.to_dict()})
    for rec in log.records:
        exp = rec["experiment"]
        if exp == "rough_amplitude":
            cols = {"z": rec["values"]}
            name, xname = "rough_amplitude.csv", "amplitude"
        elif exp == "rough_phase":
            cols = {"ground": rec["ground"], "excited": rec["excited"]}
            name, xname = "rough_phase.csv", "phase_rad"
        else:
            continue
        write_scan_csv(args.out / name, xname, rec["x"], cols)
        _stamp_csv(args.out / name, meta)
    for exp in ("fine_amplitude", "fine_phase"):
        recs = [r for r in log.records if r["experiment"] == exp]
        if recs:
            path = args.out / f"{exp}.csv"
            write_scan_csv(path, "N", recs[0]["x"], {f"iter_{i}": r["values"] for i, r in enumerate(recs)})
            _stamp_csv(path, meta)
    print(json.dumps({"converged": result.converged, "amp": result.amp1, "phi": result.phi1}))
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_rb(args, device) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    meta = _meta(device, args.seed)
    tau_sq = args.tau_sq * 1e-9
    amp, phi = _load_calibration(args.calibration, device, tau_sq)
    config = RBConfig(n=2, lengths=args.lengths, samples=args.samples, shots=args.shots,
                      interleaved=cs_element() if args.interleaved == "cs" else None)
    result = run_experiment(PulseBackend(device, device.shape(tau_sq, amp, phi)), config, args.seed, args.threads)
    result.write_json(args.out / "rb.json", include_sequences=True, **meta, tau_sq_ns=args.tau_sq, amp=amp, phi=phi)
    result.write_decay_csv(args.out / "decay.csv")
    _stamp_csv(args.out / "decay.csv", meta)
    summary = {"alpha": result.alpha, "r": result.r}
    if result.interleaved is not None:
        it = result.interleaved
        summary.update(r_g=it.r_g, epsilon=it.epsilon, interval=[it.lower, it.upper])
    print(json.dumps(summary))
    return EXIT_OK


def cmd_qpt(args, device) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    meta = _meta(device, args.seed)
    tau_sq = args.tau_sq * 1e-9
    amp, phi = _load_calibration(args.calibration, device, tau_sq)
    r_qpt = run_qpt(device, device.shape(tau_sq, amp, phi), args.shots, np.random.default_rng(args.seed))
    _write_json(args.out / "qpt.json", {**meta, "tau_sq_ns": args.tau_sq, "amp": amp, "phi": phi,
                                        "shots": args.shots, "r_qpt": r_qpt})
    print(json.dumps({"r_qpt": r_qpt}))
    return EXIT_OK


def cmd_sweep(args, device) -> int:
    spec = SweepSpec(taus_ns=args.taus, seed=args.seed, samples=args.samples, shots=args.shots,
                     qpt_shots=args.qpt_shots, run_qpt=not args.no_qpt)
    report = run_sweep(device, spec, args.out, threads=args.threads)
    meta = _meta(device, args.seed)
    for name in ("fig2_errors.csv", "fig1_decay.csv"):
        if (args.out / name).exists():
            _stamp_csv(args.out / name, meta)
    bad = [p.tau_sq_ns for p in report.points if any(v != "ok" for v in p.status.values())]
    print(json.dumps({"points": len(report.points), "incomplete": bad}))
    return EXIT_NOT_CONVERGED if bad else EXIT_OK


def cmd_coherence(args, device: DeviceModel | None) -> int:
    if (args.t1 is None) != (args.t2 is None):
        raise UsageError("csgate coherence: give both --t1 and --t2 or neither")
    if args.t1 is not None and len(args.t1) != len(args.t2):
        raise UsageError("csgate coherence: --t1 and --t2 need one value per qubit")
    if args.t1 is None or args.gate_time is None:
        device = device or load_device(args.config)
    t1s = tuple(t * 1e-6 for t in args.t1) if args.t1 else device.t1
    t2s = tuple(t * 1e-6 for t in args.t2) if args.t2 else device.t2
    if args.gate_time is not None:
        gate_time = args.gate_time * 1e-9
    else:
        gate_time = device.tau_cs(device.shape((args.tau_sq if args.tau_sq is not None else 21.3) * 1e-9))
    try:
        value = ch.coherence_limit(t1s, t2s, gate_time)
    except ValueError as exc:
        raise ConfigError("t2" if "T2" in str(exc) else "t1", str(exc)) from exc
    if args.json:
        print(json.dumps({"version": __version__, "t1_s": list(t1s), "t2_s": list(t2s),
                          "gate_time_s": gate_time, "coherence_limit": value}))
    else:
        print(repr(value))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        if args.command == "coherence":
            explicit = args.t1 is not None and args.gate_time is not None
            return cmd_coherence(args, None if explicit else load_device(args.config))
        device = load_device(args.config)
        handler = {"calibrate": cmd_calibrate, "rb": cmd_rb, "qpt": cmd_qpt, "sweep": cmd_sweep}[args.command]
        return handler(args, device)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
