import json
import subprocess
import sys

import numpy as np
import pytest

from eploop import cli
from eploop.config import shipped_config_path
from eploop.dynamics import IntegratorError
from eploop.output import read_csv


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_doc(err):
    return json.loads(err.strip().splitlines()[-1])


def write_config(tmp_path, doc, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_spectrum_shipped(tmp_path, capsys):
    code, out, _ = run(capsys, "spectrum", "--config", shipped_config_path("fig1-braid"), "--out", tmp_path)
    assert code == 0
    assert out.strip() == "(1 2)"
    header, data = read_csv(tmp_path / "fig1-braid_track.csv")
    assert header[:5] == ["step", "t", "phi", "p1", "p2"]
    assert data.shape == (257, 9)
    assert (tmp_path / "fig1-braid_signature.txt").read_text() == "(1 2)\n"
    assert (tmp_path / "fig1-braid_braid.gp").exists()


def test_evolve_pure_decay(tmp_path, capsys):
    code, _, _ = run(capsys, "evolve", "--config", shipped_config_path("decay-check"), "--out", tmp_path, "--threads", 1)
    assert code == 0
    header, data = read_csv(tmp_path / "decay-check_vector1.csv")
    last = dict(zip(header, data[-1]))
    scale = np.exp(last["log_norm"])
    assert last["t"] == 10.0
    assert abs(complex(last["Re_a_1"], last["Im_a_1"])) * scale == pytest.approx(np.exp(-1.0), rel=1e-9)
    assert abs(complex(last["Re_a_2"], last["Im_a_2"])) * scale == pytest.approx(np.exp(-0.1), rel=1e-9)
    manifest = json.loads((tmp_path / "decay-check_manifest.json").read_text())
    assert manifest["oracle"][0]["max_weighted_error"] < 1e-12


def test_detect_canonical(tmp_path, capsys):
    code, out, _ = run(capsys, "detect", "--config", shipped_config_path("detect-canonical"), "--out", tmp_path)
    assert code == 0
    doc = json.loads((tmp_path / "detect-canonical_detect.json").read_text())
    (found,) = doc["found"]
    assert found["order"] == 2
    assert np.hypot(found["p1"], found["p2"] - 1.0) < 1e-6


def test_set_override(tmp_path, capsys):
    code, out, _ = run(
        capsys, "spectrum", "--config", shipped_config_path("fig1-braid"), "--out", tmp_path,
        "--set", "loop.center=[0.0, 0.5]", "--set", "name=outside",
    )
    assert code == 0 and out.strip() == "()"
    doc = json.loads((tmp_path / "outside_manifest.json").read_text())
    assert doc["config"]["loop"]["center"] == [0.0, 0.5]


def test_schema_violation(tmp_path, capsys):
    cfg = write_config(tmp_path, {"family": {"builtin": "canonical-ep2"}, "colour": "blue"})
    out = tmp_path / "out"
    code, _, err = run(capsys, "spectrum", "--config", cfg, "--out", out)
    assert code == 2
    assert error_doc(err)["error"] == "config"
    assert not out.exists()


def test_missing_config_and_bad_family(tmp_path, capsys):
    code, _, err = run(capsys, "spectrum", "--config", tmp_path / "none.json", "--out", tmp_path / "o")
    assert code == 2
    cfg = write_config(tmp_path, {"family": {"builtin": "no-such-family"}})
    code, _, err = run(capsys, "spectrum", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2
    bad = tmp_path / "fam.json"
    bad.write_text(json.dumps({"dim": 2, "terms": [{"e1": 0, "e2": 0, "re": [1, 2, 3, 4], "im": [0, 0, 0, 0]}]}))
    cfg = write_config(tmp_path, {"family": {"file": "fam.json"}})
    code, _, err = run(capsys, "spectrum", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2 and "symmetric" in error_doc(err)["message"]
    assert not (tmp_path / "o").exists()


def test_on_ep_exit(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "family": {"builtin": "canonical-ep2"},
        "loop": {"center": [0.1, 1.0], "delta": 0.1, "n_steps": 64},
    })
    code, _, err = run(capsys, "spectrum", "--config", cfg, "--out", tmp_path / "o")
    assert code == 3
    assert error_doc(err)["error"] == "on_ep"


def test_refinement_exit(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "family": {"builtin": "canonical-ep2"},
        "loop": {"center": [0.0, 1.0], "delta": 0.1, "n_steps": 8},
        "spectral": {"refinement_limit": 2, "overlap_tol": 1e-9},
    })
    code, _, err = run(capsys, "spectrum", "--config", cfg, "--out", tmp_path / "o")
    assert code == 4
    assert error_doc(err)["error"] == "refinement"


def test_integrator_exit(tmp_path, capsys, monkeypatch):
    def boom(*args, **kwargs):
        raise IntegratorError("step size underflow")

    monkeypatch.setattr(cli.ex, "run_flip", boom)
    code, _, err = run(capsys, "evolve", "--config", shipped_config_path("decay-check"), "--out", tmp_path / "o")
    assert code == 5
    assert error_doc(err) == {"error": "integrator", "code": 5, "message": "step size underflow"}


def test_validate_pass_and_fail(tmp_path, capsys, monkeypatch):
    cfg = write_config(tmp_path, {
        "name": "v",
        "family": {"builtin": "canonical-ep2"},
        "loop": {"center": [0.0, -1.0], "delta": 0.1, "n_steps": 64, "traversal_time": 5.0},
        "validate": {"coupling_points": 5},
    })
    code, out, _ = run(capsys, "validate", "--config", cfg, "--out", tmp_path / "ok")
    assert code == 0, out
    assert "FAIL" not in out
    report = json.loads((tmp_path / "ok" / "v_validate.json").read_text())
    assert all(report["report"]["checks"].values())

    monkeypatch.setattr(cli, "coupling_check", lambda *a, **k: {"max_rel_error": 1.0})
    code, out, err = run(capsys, "validate", "--config", cfg, "--out", tmp_path / "bad")
    assert code == 1
    assert "FAIL coupling<=1e-5" in out
    assert error_doc(err)["error"] == "validation"
    assert not (tmp_path / "bad").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "eploop", "spectrum", "--config", str(shipped_config_path("braid-outside")),
         "--out", str(tmp_path)],
        capture_output=True, text=True, env={"EPLOOP_LOG": "DEBUG", "PATH": ""},
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip() == "()"
