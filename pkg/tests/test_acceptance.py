"""Acceptance criteria 1-12, one test per criterion.

Each test prints ``PASS``/``FAIL`` with the measured figures; the lines are also
repeated in the pytest terminal summary.  Run with
``pytest tests/test_acceptance.py -v`` (add ``-s`` to see lines as they come).
"""

import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from eploop import experiments as ex
from eploop.config import load_config, shipped_config_path, shipped_configs
from eploop.dynamics import weighted
from eploop.family import BUILTINS, ParameterPoint, builtin, builtin_canonical_ep2, builtin_ep3_companion
from eploop.loops import ParameterLoop, rectangle_loop
from eploop.spectral import OnEPError, biorthonormality_error, continue_loop, detect_ep, eigen_frame
from eploop.validation import coupling_check

CANON = builtin_canonical_ep2()
EP3 = builtin_ep3_companion()


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def shipped(name, *overrides):
    return load_config(shipped_config_path(name), overrides)


def circle(center, r=0.1, **kw):
    return ParameterLoop(mode="absolute", center=ParameterPoint(*center), delta=r, **kw)


def cycle_labels(track):
    return sorted(i for c in track.signature.cycles if len(c) > 1 for i in c)


# 1 -------------------------------------------------------------------------------


def test_01_canonical_eigenvalues():
    rng = np.random.default_rng(1)
    lams = []
    while len(lams) < 90:
        z = complex(*rng.uniform(-2, 2, size=2))
        if min(abs(z - 1j), abs(z + 1j)) >= 1e-3:
            lams.append(z)
    # ten more right at the excluded disc around the EPs
    for k in range(10):
        ep = 1j if k % 2 == 0 else -1j
        lams.append(ep + 1e-3 * (1 + k / 10) * np.exp(1j * rng.uniform(0, 2 * np.pi)))

    start = time.perf_counter()
    worst = 0.0
    for z in lams:
        mus = eigen_frame(CANON, (z.real, z.imag)).mus
        root = np.sqrt(1 + z * z)
        for r in (root, -root):
            worst = max(worst, float(np.abs(mus - r).min()))
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-12 and elapsed < 1.0, f"max error {worst:.2e}, {elapsed:.3f} s")


# 2 -------------------------------------------------------------------------------


def test_02_braid_signatures():
    cases = [
        (CANON, dict(center=(0, 1)), "(1 2)"),
        (CANON, dict(center=(0, 0.5)), "()"),
        (EP3, dict(center=(0, 0)), "(1 2 3)"),
        (EP3, dict(center=(0, 0), turns=3), "()"),
    ]
    ok, notes = True, []
    for fam, kw, expected in cases:
        for n in (256, 512):
            t0 = time.perf_counter()
            sig = continue_loop(fam, circle(kw["center"], n_steps=n, turns=kw.get("turns", 1))).signature.notation()
            dt = time.perf_counter() - t0
            ok &= sig == expected and dt < 5.0
            notes.append(f"{sig}@{n}:{dt:.2f}s")
    verdict(2, ok, ", ".join(notes))


# 3 -------------------------------------------------------------------------------


def test_03_branch_near_ep():
    rho = 0.01
    track = continue_loop(CANON, circle((0, 1), r=rho, n_steps=256))
    e = track.energies()
    phis = track.phis
    lead = lambda phi: np.sqrt(2 * rho) * np.exp(1j * (np.pi / 4 + phi / 2))  # noqa: E731
    label = int(np.argmin(np.abs(e[0] - lead(0.0))))
    idx = np.arange(0, 256, 16)
    err = np.abs(e[idx, label] - lead(phis[idx])).max()
    verdict(3, err <= 2 * rho, f"16 angles, max deviation {err:.2e} vs bound {2 * rho}")


# 4 -------------------------------------------------------------------------------


def _experiment_tracks():
    for name in shipped_configs():
        cfg = shipped(name)
        if "detect" in cfg:
            fam = ex.build_family(cfg)
            (a, b), (c, d) = cfg["detect"]["rectangle"]
            yield name, fam, continue_loop(fam, rectangle_loop((a, b), (c, d), n_steps=cfg["detect"].get("n_steps", 32)))
            continue
        fam = ex.build_family(cfg)
        shifts = [cfg["loop"]["shift"]]
        if name == "fig5-shift-scan":
            sc = cfg["scan"]
            shifts = np.linspace(sc["s_min"], sc["s_max"], sc["n_s"])
        for s in shifts:
            try:
                yield f"{name}@s={s:g}", fam, ex.build_track(cfg, fam, ex.build_loop(cfg, shift=float(s)))
            except OnEPError:
                continue  # the scan sample sitting on the EP is flagged, not part of the output


def test_04_biorthonormality():
    worst, n_frames, n_runs = 0.0, 0, 0
    for _, fam, track in _experiment_tracks():
        n_runs += 1
        for fr in track.frames:
            worst = max(worst, biorthonormality_error(fam, fr))
            n_frames += 1
    verdict(4, worst <= 1e-10, f"{n_frames} frames in {n_runs} tracks, max |lCr - I| {worst:.2e}")


# 5 -------------------------------------------------------------------------------


def test_05_coupling_oracle():
    kwargs = {"diagonal": {"energies": [-0.1j, -0.01j, 0.3 - 0.05j]}}
    report = {}
    for name in BUILTINS:
        fam = builtin(name, **kwargs.get(name, {}))
        report[name] = coupling_check(fam, n=50, seed=20160301)["max_rel_error"]
    worst = max(report.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in report.items())
    verdict(5, worst <= 1e-5, f"50 points each: {detail}")


# 6 -------------------------------------------------------------------------------


def test_06_dynamics_oracle():
    start = time.perf_counter()
    worst, notes = 0.0, []
    for name in ("fig2-flip", "fig3-spectators", "fig8-ep3-flip"):
        res = ex.run_flip(shipped(name, "dynamics.oracle=true", "dynamics.adiabatic=false"))
        w = max(e["max_weighted_error"] for e in res.oracle_errors)
        assert len(res.oracle_errors) == len(res.results)
        worst = max(worst, w)
        notes.append(f"{name} {w:.1e}")
    elapsed = time.perf_counter() - start
    verdict(6, worst <= 1e-8 and elapsed < 60, f"{', '.join(notes)}; {elapsed:.1f} s")


# 7 -------------------------------------------------------------------------------


def test_07_flip_universality():
    rand = ex.run_flip(shipped("fig2-flip", 'initial=[{"random": 8, "seed": 7}]', "dynamics.oracle=false",
                               "dynamics.adiabatic=false"))
    doms = set(rand.dominance.values())
    basis = ex.run_flip(shipped("fig2-flip", "dynamics.oracle=false"))
    devs = []
    for r in basis.results:
        half = r.times <= 0.5 * r.times[-1]
        devs.append(float(np.abs(r.weighted - r.adiabatic_weighted)[half].max()))
    tracking = sum(d <= 0.05 for d in devs)
    ok = len(doms) == 1 and tracking == 1
    verdict(7, ok, f"random dominant indices {sorted(d + 1 for d in doms)}, "
                   f"first-half adiabatic deviation {devs[0]:.3f}/{devs[1]:.3f}")


# 8 -------------------------------------------------------------------------------


def test_08_spectator_takeover():
    res = ex.run_flip(shipped("fig3-spectators", "dynamics.oracle=false", "dynamics.adiabatic=false"))
    pair = cycle_labels(res.track)
    doms = [r.final_dominant for r in res.results]
    ok = len(pair) == 2 and len(doms) == 2 and all(d not in pair for d in doms)
    verdict(8, ok, f"EP pair states {[i + 1 for i in pair]}, final dominant {[d + 1 for d in doms]}")


# 9 -------------------------------------------------------------------------------


def test_09_shift_scan_jump():
    scan = ex.run_shift_scan(shipped("fig5-shift-scan"))
    s = scan.s
    ok_mask = np.array([x.ok for x in scan.samples])
    jump = ex.scan_jump(scan, index=0, at=1.0)
    enclosed = scan.enclosed
    flips = all(enclosed[i] == bool(s[i] < 1.0) for i in np.where(ok_mask)[0])
    consistent = all(x.enclosed == (x.signature != "()") for x in scan.samples if x.ok)
    dom = scan.final_dominant
    left = dom[ok_mask & (s < 1)]
    right = dom[ok_mask & (s > 1)]
    index_jump = len(set(left)) == 1 and len(set(right)) == 1 and left[0] != right[0]
    large = ok_mask & (s >= 1.5)
    fin = scan.final_weighted[large]
    ad = scan.final_adiabatic_weighted[large]
    adiabatic = all(
        np.array_equal(np.argsort(-f), np.argsort(-a)) for f, a in zip(fin, ad)
    )
    ok = jump["jump"] > 10 * jump["max_adjacent_variation"] and flips and consistent and index_jump and adiabatic
    verdict(9, ok, f"jump {jump['jump']:.4f} vs adjacent variation {jump['max_adjacent_variation']:.2e}; "
                   f"enclosure flips at s=1: {flips}; adiabatic ordering for s>=1.5: {adiabatic}; "
                   f"{int((~ok_mask).sum())} sample(s) flagged")


# 10 ------------------------------------------------------------------------------


def test_10_ep3_flip():
    three = ex.run_flip(shipped("fig8-ep3-flip", "dynamics.oracle=false", "dynamics.adiabatic=false"))
    doms3 = {r.final_dominant for r in three.results}
    six = ex.run_flip(shipped("fig8-ep3-spectators", "dynamics.oracle=false", "dynamics.adiabatic=false"))
    block = cycle_labels(six.track)
    spectators = [i for i in range(six.family.dim) if i not in block]
    final_e = six.track.frames[-1].energies
    narrowest = min(spectators, key=lambda i: abs(final_e[i].imag))
    doms6 = [r.final_dominant for r in six.results]
    ok = len(doms3) == 1 and len(block) == 3 and len(doms6) == 3 and all(d == narrowest for d in doms6)
    verdict(10, ok, f"3-state dominant {sorted(d + 1 for d in doms3)}; 6-state dominant {[d + 1 for d in doms6]}, "
                    f"narrowest spectator {narrowest + 1} (Im E = {final_e[narrowest].imag:.3f})")


# 11 ------------------------------------------------------------------------------


def test_11_ep_detection():
    start = time.perf_counter()
    canon = detect_ep(CANON, ((-0.5, 0.5), (0.5, 1.5)))
    ep3 = detect_ep(EP3, ((-0.5, -0.5), (0.5, 0.5)))
    elapsed = time.perf_counter() - start
    ok = len(canon) == 1 and len(ep3) == 1
    if ok:
        d2 = np.hypot(canon[0].point.p1, canon[0].point.p2 - 1)
        d3 = np.hypot(ep3[0].point.p1, ep3[0].point.p2)
        ok = d2 <= 1e-6 and d3 <= 1e-6 and canon[0].order == 2 and ep3[0].order == 3 and elapsed < 30
        detail = f"canonical off by {d2:.1e} (order {canon[0].order}), companion off by {d3:.1e} (order {ep3[0].order}); {elapsed:.1f} s"
    else:
        detail = f"found {len(canon)} and {len(ep3)} points"
    verdict(11, ok, detail)


# 12 ------------------------------------------------------------------------------


def test_12_weighted_algebra():
    rng = np.random.default_rng(12)
    err = 0.0
    for k in range(1, 9):
        for _ in range(50):
            a = rng.normal(size=k) + 1j * rng.normal(size=k)
            w = weighted(a)
            err = max(err, abs(w.sum() - 1))
            c = 10.0 ** rng.uniform(-150, 150) * np.exp(1j * rng.uniform(0, 2 * np.pi))
            err = max(err, np.abs(weighted(c * a) - w).max())
    examples = [
        ([1, 0], [1, 0]),
        ([0.3 - 2j, 0.3 - 2j], [0.5, 0.5]),
        ([1e-200j, 1e-200j], [0.5, 0.5]),
        ([1, 2j, -2], [1 / 9, 4 / 9, 4 / 9]),
    ]
    for a, expected in examples:
        err = max(err, np.abs(weighted(a) - expected).max())
    verdict(12, err <= 1e-12, f"max deviation {err:.1e}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
