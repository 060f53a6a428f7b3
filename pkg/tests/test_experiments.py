import json

import numpy as np
import pytest

from eploop import experiments as ex
from eploop.config import (
    ConfigError,
    apply_overrides,
    config_hash,
    load_config,
    resolve,
    shipped_config_path,
    shipped_configs,
)

QUICK = {
    "name": "quick",
    "family": {"builtin": "canonical-ep2"},
    "loop": {"mode": "absolute", "center": [0.0, -1.0], "delta": 0.1, "n_steps": 64, "traversal_time": 10.0},
    "initial": [0],
}


def quick(**extra):
    return resolve({**QUICK, **extra})


def test_every_shipped_config_resolves():
    names = shipped_configs()
    assert {"fig1-braid", "fig2-flip", "fig3-spectators", "fig5-shift-scan", "fig8-ep3-spectators"} <= set(names)
    for name in names:
        cfg = load_config(shipped_config_path(name))
        assert cfg["name"] == name


def test_defaults_are_explicit():
    cfg = quick()
    assert cfg["dynamics"] == {"rtol": 1e-10, "atol": 1e-14, "adiabatic": True, "oracle": False}
    assert cfg["spectral"]["overlap_tol"] == 0.1


@pytest.mark.parametrize(
    "doc",
    [
        {"family": {"builtin": "canonical-ep2"}, "bogus": 1},
        {"family": {"builtin": "canonical-ep2"}, "loop": {"n_steps": "many"}},
        {"family": {}},
        {"family": {"builtin": "canonical-ep2"}, "scan": {"s_min": 2.0, "s_max": 1.0}},
        {"family": {"builtin": "canonical-ep2"}, "loop": {"direction": 0}},
    ],
)
def test_invalid_configs(doc):
    with pytest.raises(ConfigError):
        resolve(doc)


def test_overrides():
    doc = apply_overrides(QUICK, ["loop.delta=0.2", "dynamics.oracle=true", "name=renamed"])
    assert doc["loop"]["delta"] == 0.2 and doc["dynamics"]["oracle"] is True and doc["name"] == "renamed"
    with pytest.raises(ConfigError):
        apply_overrides(QUICK, ["no-equals-sign"])


def test_initial_conditions():
    cfg = resolve({**QUICK, "family": {"builtin": "ep2-spectators"}, "initial": ["cycle", 1, {"random": 2, "seed": 3}]})
    track = ex.build_track(cfg, ex.build_family(cfg), ex.build_loop(cfg))
    ics = ex.initial_conditions(cfg, track)
    labels = [lab for lab, _ in ics]
    assert labels[:2] == ["basis1", "basis4"]
    assert labels[2] == "basis2"
    assert labels[3:] == ["random1", "random2"]
    for _, v in ics[3:]:
        assert np.linalg.norm(v) == pytest.approx(1)
    bad = resolve({**QUICK, "initial": [5]})
    with pytest.raises(ConfigError):
        ex.initial_conditions(bad, ex.build_track(bad, ex.build_family(bad), ex.build_loop(bad)))


def test_braid_runner():
    res = ex.run_braid(load_config(shipped_config_path("fig1-braid")))
    assert res.signature == "(1 2)"
    assert res.checks["max_biorthonormality_error"] < 1e-10


def test_flip_runner_and_dominance():
    res = ex.run_flip(quick(initial=["all"], dynamics={"oracle": True}))
    assert len(res.results) == 2
    assert len(set(res.dominance.values())) == 1
    for err in res.oracle_errors:
        assert err["max_weighted_error"] < 1e-8


def test_scan_small():
    cfg = quick(scan={"s_min": 0.0, "s_max": 2.0, "n_s": 5})
    scan = ex.run_shift_scan(cfg)
    assert [x.ok for x in scan.samples] == [True, True, False, True, True]
    assert scan.samples[2].status.startswith("flagged")
    for x in scan.samples:
        if x.ok:
            assert x.enclosed == (x.signature != "()")
    flip = ex.run_flip(cfg)
    np.testing.assert_array_equal(scan.samples[0].result.a, flip.results[0].a)
    jump = ex.scan_jump(scan)
    assert jump["s_minus"] == 0.5 and jump["s_plus"] == 1.5


def test_outputs_are_deterministic(tmp_path):
    cfg = quick(initial=["all"])
    for d in ("a", "b"):
        ex.write_flip(ex.run_flip(cfg), tmp_path / d)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "quick_basis1.csv" in names and "quick_manifest.json" in names
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    text = (tmp_path / "a" / "quick_basis1.csv").read_bytes()
    assert b"\r" not in text
    header = text.split(b"\n")[0].decode().split(",")
    assert header[:4] == ["t", "log_norm", "Re_a_1", "Im_a_1"]


def test_manifest_round_trip(tmp_path):
    cfg = quick()
    ex.write_flip(ex.run_flip(cfg), tmp_path / "first")
    doc = json.loads((tmp_path / "first" / "quick_manifest.json").read_text())
    assert doc["config_sha256"] == config_hash(cfg)
    again = resolve(doc["config"])
    assert again == cfg
    ex.write_flip(ex.run_flip(again), tmp_path / "second")
    a = (tmp_path / "first" / "quick_basis1.csv").read_bytes()
    assert a == (tmp_path / "second" / "quick_basis1.csv").read_bytes()


def test_scan_outputs(tmp_path):
    cfg = quick(scan={"s_min": 0.0, "s_max": 1.5, "n_s": 3, "surface": True})
    files = ex.write_scan(ex.run_shift_scan(cfg), tmp_path)
    names = {f.name for f in files}
    assert {"quick_finals.csv", "quick_surface.csv", "quick_finals.gp", "quick_manifest.json"} <= names


@pytest.mark.parametrize("coupling", [0.025, 0.075])
def test_spectator_takeover_survives_coupling_change(coupling):
    cfg = load_config(
        shipped_config_path("fig3-spectators"),
        [f"family.params.coupling={coupling}", "dynamics.oracle=false", "dynamics.adiabatic=false"],
    )
    res = ex.run_flip(cfg)
    pair = [i for c in res.track.signature.cycles if len(c) > 1 for i in c]
    assert all(r.final_dominant not in pair for r in res.results)
