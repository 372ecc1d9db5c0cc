import json
import shutil
import subprocess

import pytest

from csgate import __version__
from csgate import channels as ch
from csgate.calibration import calibrate
from csgate.cli import main
from csgate.device import DeviceModel
from csgate.group import cs_element
from csgate.rb import PulseBackend, RBConfig, run_experiment

NOISELESS = "builtin:noiseless"
SHORT = "1,5,10,20,40"


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_unknown_subcommand(capsys):
    code, _, err = _run(capsys, "frobnicate")
    assert code == 64 and "usage" in err


def test_missing_t1_names_field(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"t2": [60, 70], "cr": {"zx_khz": 5000}}))
    code, _, err = _run(capsys, "--config", cfg, "calibrate", "--out", tmp_path / "o")
    assert code == 1 and "t1" in err


def test_calibrate_noiseless(tmp_path, capsys):
    code, out, _ = _run(capsys, "--config", NOISELESS, "calibrate", "--out", tmp_path, "--shots", "exact")
    assert code == 0 and json.loads(out)["converged"]
    doc = json.loads((tmp_path / "calibration.json").read_text())
    assert doc["version"] == __version__ and doc["seed"] == 0
    assert doc["config_hash"] == DeviceModel.builtin("noiseless").config_hash()
    for loop in ("amplitude_loop", "phase_loop"):
        assert abs(doc["result"][loop]["history"][-1]["residual"]) < doc["result"]["threshold"]
    for name in ("rough_amplitude.csv", "rough_phase.csv", "fine_amplitude.csv", "fine_phase.csv"):
        header = (tmp_path / name).read_text().splitlines()[0]
        assert header.startswith("# csgate") and "config_hash=" in header and "seed=0" in header
    assert (tmp_path / "session.jsonl").read_text().count("\n") >= 4


def test_calibrate_not_converged(tmp_path, capsys):
    # shot noise (~5e-4 rad) keeps the residual above a 1e-9 threshold
    code, _, _ = _run(capsys, "--config", NOISELESS, "calibrate", "--out", tmp_path,
                      "--threshold", "1e-9", "--max-iters", "2")
    assert code == 2


def test_rb_noiseless_and_repeatable(tmp_path, capsys):
    runs = []
    for name in ("a", "b"):
        code, out, _ = _run(capsys, "--config", NOISELESS, "rb", "--out", tmp_path / name,
                            "--lengths", SHORT, "--samples", 3)
        assert code == 0
        runs.append(json.loads(out))
    assert runs[0]["r"] == 0 and runs[0]["r_g"] == 0 and runs[0]["interval"] == [0, 0]
    for f in ("rb.json", "decay.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    doc = json.loads((tmp_path / "a" / "rb.json").read_text())
    assert {"lower", "upper", "epsilon", "r_g"} <= set(doc["interleaved"])


def test_rb_matches_library(tmp_path, capsys, anchored):
    code, _, _ = _run(capsys, "rb", "--out", tmp_path, "--lengths", SHORT, "--samples", 2, "--seed", 4)
    assert code == 0
    doc = json.loads((tmp_path / "rb.json").read_text())
    cal = calibrate(anchored, 21.3e-9, shots=None)
    config = RBConfig(lengths=tuple(int(x) for x in SHORT.split(",")), samples=2, interleaved=cs_element())
    res = run_experiment(PulseBackend(anchored, cal.shape(anchored)), config, 4)
    assert doc["alpha"] == res.alpha and doc["interleaved"]["r_g"] == res.interleaved.r_g


def test_rb_reuses_calibration_file(tmp_path, capsys):
    _run(capsys, "--config", NOISELESS, "calibrate", "--out", tmp_path / "cal", "--shots", "exact")
    code, out, _ = _run(capsys, "--config", NOISELESS, "rb", "--out", tmp_path / "rb", "--lengths", SHORT,
                        "--samples", 2, "--interleaved", "none", "--calibration", tmp_path / "cal" / "calibration.json")
    assert code == 0 and json.loads(out)["r"] == 0
    code, _, err = _run(capsys, "rb", "--out", tmp_path / "rb2", "--lengths", SHORT,
                        "--calibration", tmp_path / "cal" / "calibration.json")
    assert code == 1 and "calibration" in err


def test_qpt_writes_report(tmp_path, capsys):
    code, out, _ = _run(capsys, "qpt", "--out", tmp_path, "--shots", 256)
    assert code == 0
    doc = json.loads((tmp_path / "qpt.json").read_text())
    assert doc["r_qpt"] == json.loads(out)["r_qpt"] and 0 < doc["r_qpt"] < 0.1


def test_coherence_matches_library(capsys):
    code, out, _ = _run(capsys, "coherence", "--t1", 59.6, 77.1, "--t2", 92.5, 69.1, "--gate-time", 263.1)
    assert code == 0
    assert out.strip() == repr(ch.coherence_limit((59.6e-6, 77.1e-6), (92.5e-6, 69.1e-6), 263.1e-9))


def test_coherence_usage_and_config_errors(capsys):
    assert _run(capsys, "coherence", "--t1", 50, "--gate-time", 100)[0] == 64
    code, _, err = _run(capsys, "coherence", "--t1", 10, "--t2", 30, "--gate-time", 100)
    assert code == 1 and "t2" in err


def test_env_config(monkeypatch, capsys, tmp_path):
    monkeypatch.setenv("CSGATE_CONFIG", NOISELESS)
    code, out, _ = _run(capsys, "coherence", "--json")
    assert code == 0 and json.loads(out)["coherence_limit"] == 0.0


def test_sweep_resumes(tmp_path, capsys):
    args = ("--config", NOISELESS, "sweep", "--out", tmp_path, "--taus", "0,21.3", "--samples", 2, "--no-qpt")
    assert _run(capsys, *args)[0] == 0
    first = (tmp_path / "fig2_errors.csv").read_bytes()
    (tmp_path / "points" / "tau_0021.300ns.json").unlink()
    assert _run(capsys, *args)[0] == 0
    assert (tmp_path / "fig2_errors.csv").read_bytes() == first


def test_entry_point_installed():
    exe = shutil.which("csgate")
    if exe is None:
        pytest.skip("console script not on PATH")
    out = subprocess.run([exe, "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
