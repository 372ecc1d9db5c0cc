import json
from dataclasses import replace

import numpy as np
import pytest

from csgate import channels as ch
from csgate import scenarios
from csgate.device import DeviceModel
from csgate.rb import REDUCED_LENGTHS

QUICK = scenarios.SweepSpec(taus_ns=(21.3,), samples=4, qpt_shots=256, run_crosstalk=False)


def test_noiseless_point_is_exact():
    # calibration shot noise would leave a small coherent error, so calibrate exactly
    d = DeviceModel.noiseless(theta0=0.4)
    rec, res = scenarios.run_point(d, 21.3e-9, seed=0, spec=replace(QUICK, calibration_shots=None))
    assert rec.status["rb"] == "ok"
    assert rec.r_rb == 0.0 and rec.alpha == 1.0 and rec.alpha_g == 1.0
    assert rec.coherence_limit == 0.0
    assert rec.true_error < 1e-6
    assert rec.tau_cs_ns == pytest.approx(261.94)


def test_damping_only_point_matches_coherence_limit():
    d = DeviceModel(t1=(59.6e-6, 77.1e-6), t2=(92.5e-6, 69.1e-6), cr=DeviceModel.noiseless(theta0=0.4).cr)
    spec = replace(QUICK, samples=10, run_qpt=False)
    rec, _ = scenarios.run_point(d, 21.3e-9, seed=1, spec=spec)
    assert abs(rec.r_rb - rec.coherence_limit) < max(3 * rec.r_rb_err, 5e-4)


def test_failed_stage_degrades_gracefully():
    dead = DeviceModel.noiseless(theta0=0.4).with_cr(zx=0.0)
    rec, res = scenarios.run_point(dead, 21.3e-9, seed=0, spec=QUICK)
    assert rec.status["calibration"].startswith("failed")
    assert rec.status["rb"] == "skipped" and res is None


def test_sweep_deterministic_and_resumable(tmp_path, anchored):
    spec = scenarios.SweepSpec(taus_ns=(0.0, 64.0), samples=2, qpt_shots=128, calibration_shots=None)
    a, b = tmp_path / "a", tmp_path / "b"
    scenarios.run_sweep(anchored, spec, a)
    scenarios.run_sweep(anchored, spec, b, threads=2)
    for name in ("report.json", "fig2_errors.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    point = a / "points" / "tau_0064.000ns.json"
    before = point.stat().st_mtime_ns
    (a / "points" / "tau_0000.000ns.json").unlink()
    scenarios.run_sweep(anchored, spec, a)
    assert point.stat().st_mtime_ns == before  # reused, not recomputed
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    report = json.loads((a / "report.json").read_text())
    assert report["config_hash"] == anchored.config_hash() and "version" in report
    limits = [p["coherence_limit"] for p in report["points"]]
    assert limits == sorted(limits)


def test_sweep_ignores_stale_points(tmp_path, anchored):
    spec = scenarios.SweepSpec(taus_ns=(0.0,), samples=2, run_qpt=False, calibration_shots=None)
    scenarios.run_sweep(anchored, spec, tmp_path)
    other = replace(spec, seed=5)
    report = scenarios.run_sweep(anchored, other, tmp_path)
    assert report.points[0].seed == 5


def test_compensation_zero_crosstalk_agrees():
    d = DeviceModel.builtin("paper_anchored").with_cr(crosstalk=0.0, crosstalk_cubic=0.0)
    out = scenarios.compare_compensation(d, 0.0, seed=0, lengths=REDUCED_LENGTHS, samples=6)
    assert out["agree_2sigma"]


def test_compensation_helps_under_large_crosstalk():
    base = DeviceModel.builtin("paper_anchored")
    d = replace(base.with_cr(crosstalk=2 * np.pi * 4e6, crosstalk_cubic=0.0), drive_error=0.0)
    out = scenarios.compare_compensation(d, 0.0, seed=0, samples=10)
    assert out["results"]["with"]["true_error"] < out["results"]["without"]["true_error"]
    assert out["difference"] > 2 * out["difference_sigma"]


@pytest.mark.slow
def test_anchored_compensation_decade(anchored):
    out = scenarios.compare_compensation(anchored, 0.0, seed=0)
    for label in ("with", "without"):
        assert 1e-2 <= out["results"][label]["r_rb"] < 1e-1


def test_coherence_limit_column_uses_channel_value(anchored):
    rec, _ = scenarios.run_point(anchored, 21.3e-9, seed=0,
                                 spec=replace(QUICK, run_qpt=False, calibration_shots=None, samples=2))
    assert rec.coherence_limit == ch.coherence_limit(anchored.t1, anchored.t2, rec.tau_cs_ns * 1e-9)
