"""Config-driven reproductions of the braid, flip and shift-scan scenarios.

Every runner takes a resolved config (see :mod:`eploop.config`) and returns a
result object; the ``write_*`` functions turn results into CSV files, a run
manifest and optional gnuplot scripts.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import output
from .dynamics import (
    EvolutionResult,
    IntegratorError,
    evolve_adiabatic,
    evolve_full,
    evolve_oracle,
    on_common_scale,
    prepare_state,
)
from .family import MatrixFamily, ParameterPoint, builtin, load_family
from .loops import ParameterLoop, winding_number
from .spectral import (
    ContinuationTrack,
    SpectralError,
    biorthonormality_error,
    continue_loop,
    detect_ep,
    residual,
)

log = logging.getLogger(__name__)


# -- building blocks from config -------------------------------------------------


def build_family(cfg: dict, base_dir=None) -> MatrixFamily:
    spec = cfg["family"]
    if "builtin" in spec:
        return builtin(spec["builtin"], **spec.get("params", {}))
    path = Path(spec["file"])
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    return load_family(path)


def build_loop(cfg: dict, shift: float | None = None) -> ParameterLoop:
    lp = cfg["loop"]
    return ParameterLoop(
        center=ParameterPoint(*lp["center"]),
        delta=lp["delta"],
        shift=lp["shift"] if shift is None else shift,
        n_steps=lp["n_steps"],
        traversal_time=lp["traversal_time"],
        direction=lp["direction"],
        turns=lp["turns"],
        mode=lp["mode"],
        vertices=tuple(tuple(v) for v in lp.get("vertices", ())),
    )


def build_track(cfg: dict, family: MatrixFamily, loop: ParameterLoop) -> ContinuationTrack:
    sp = cfg["spectral"]
    return continue_loop(
        family,
        loop,
        cfg["tracked"],
        overlap_tol=sp["overlap_tol"],
        refinement_limit=sp["refinement_limit"],
        gap_tol=sp["gap_tol"],
    )


def initial_conditions(cfg: dict, track: ContinuationTrack) -> list[tuple[str, np.ndarray]]:
    """Expand the ``initial`` list into ``(label, vector)`` pairs over tracked states."""
    k = len(track.tracked)
    out = []

    def basis(i):
        v = np.zeros(k, dtype=complex)
        v[i] = 1.0
        return v

    for item in cfg["initial"]:
        if isinstance(item, int):
            if item >= k:
                raise cfgmod.ConfigError(f"initial state {item} outside tracked subset of size {k}")
            out.append((f"basis{item + 1}", basis(item)))
        elif item == "all":
            out += [(f"basis{i + 1}", basis(i)) for i in range(k)]
        elif item == "cycle":
            moving = [i for c in track.signature.cycles if len(c) > 1 for i in c]
            out += [(f"basis{i + 1}", basis(i)) for i in sorted(moving)]
        elif isinstance(item, dict):
            rng = np.random.default_rng(item.get("seed", 0))
            for n in range(item["random"]):
                v = rng.normal(size=k) + 1j * rng.normal(size=k)
                out.append((f"random{n + 1}", v / np.linalg.norm(v)))
        else:
            if len(item) != k:
                raise cfgmod.ConfigError(f"explicit initial vector needs {k} entries")
            v = np.array([complex(*z) if isinstance(z, list) else complex(z) for z in item])
            out.append((f"vector{len(out) + 1}", v))
    if not out:
        raise cfgmod.ConfigError("no initial conditions")
    return out


def known_eps(cfg: dict, family: MatrixFamily) -> list[ParameterPoint]:
    eps = cfg.get("ep") or family.meta.get("ep") or []
    return [ParameterPoint(*p) for p in eps]


def enclosure(loop: ParameterLoop, eps) -> bool | None:
    if not eps:
        return None
    return any(winding_number(loop, p) != 0 for p in eps)


def frame_checks(family: MatrixFamily, track: ContinuationTrack) -> dict:
    return {
        "max_biorthonormality_error": max(biorthonormality_error(family, f) for f in track.frames),
        "max_relative_residual": max(residual(family, f) for f in track.frames),
        "n_frames": len(track.frames),
    }


# -- braid -----------------------------------------------------------------------


@dataclass(eq=False)
class BraidResult:
    config: dict
    family: MatrixFamily
    loop: ParameterLoop
    track: ContinuationTrack
    checks: dict

    @property
    def signature(self) -> str:
        return self.track.signature.notation()


def run_braid(cfg: dict, base_dir=None) -> BraidResult:
    family = build_family(cfg, base_dir)
    loop = build_loop(cfg)
    track = build_track(cfg, family, loop)
    return BraidResult(cfg, family, loop, track, frame_checks(family, track))


# -- flip ------------------------------------------------------------------------


@dataclass(eq=False)
class FlipResult:
    config: dict
    family: MatrixFamily
    loop: ParameterLoop
    track: ContinuationTrack
    labels: list[str]
    results: list[EvolutionResult]
    checks: dict
    oracle_errors: list[dict] = field(default_factory=list)

    @property
    def dominance(self) -> dict[str, int]:
        return {lab: r.final_dominant for lab, r in zip(self.labels, self.results)}


def _evolve_one(family, loop, track, a0, cfg):
    dyn = cfg["dynamics"]
    res = evolve_full(family, loop, track.tracked, a0, track=track, rtol=dyn["rtol"], atol=dyn["atol"])
    if dyn["adiabatic"]:
        res.adiabatic_log = evolve_adiabatic(family, track, a0)
    return res


def oracle_comparison(family, loop, track, result: EvolutionResult, rtol, atol) -> dict:
    """Compare instantaneous-basis coefficients with fixed-basis projections."""
    orc = evolve_oracle(family, loop, prepare_state(track, result.a0), track, rtol=rtol, atol=atol)
    full = on_common_scale(result.a, result.log_norm, orc.log_norm)
    scale = np.abs(orc.projections).max(axis=1)
    return {
        "max_rel_coefficient_error": float((np.abs(full - orc.projections).max(axis=1) / scale).max()),
        "max_weighted_error": float(np.abs(result.weighted - orc.weighted).max()),
    }


def _pool(workers: int):
    return ProcessPoolExecutor(max_workers=workers) if workers > 1 else None


def _map(fn, args_list, workers):
    pool = _pool(workers)
    if pool is None:
        return [fn(*a) for a in args_list]
    with pool:
        futs = [pool.submit(fn, *a) for a in args_list]
        return [f.result() for f in futs]


def _flip_worker(cfg, base_dir, a0):
    family = build_family(cfg, base_dir)
    loop = build_loop(cfg)
    track = build_track(cfg, family, loop)
    return _evolve_one(family, loop, track, a0, cfg)


def run_flip(cfg: dict, base_dir=None, workers: int = 1) -> FlipResult:
    family = build_family(cfg, base_dir)
    loop = build_loop(cfg)
    track = build_track(cfg, family, loop)
    ics = initial_conditions(cfg, track)
    if workers > 1:
        results = _map(_flip_worker, [(cfg, base_dir, v) for _, v in ics], workers)
    else:
        results = [_evolve_one(family, loop, track, v, cfg) for _, v in ics]
    out = FlipResult(cfg, family, loop, track, [lab for lab, _ in ics], results, frame_checks(family, track))
    if cfg["dynamics"]["oracle"]:
        if len(track.tracked) != family.dim:
            log.warning("oracle comparison skipped: only %d of %d states tracked", len(track.tracked), family.dim)
        else:
            dyn = cfg["dynamics"]
            out.oracle_errors = [
                oracle_comparison(family, loop, track, r, dyn["rtol"], dyn["atol"]) for r in results
            ]
    return out


# -- shift scan --------------------------------------------------------------------


@dataclass(eq=False)
class ScanSample:
    s: float
    status: str
    enclosed: bool | None
    signature: str = ""
    result: EvolutionResult | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(eq=False)
class ScanResult:
    config: dict
    label: str
    samples: list[ScanSample]

    @property
    def s(self) -> np.ndarray:
        return np.array([x.s for x in self.samples])

    def _stack(self, fn, k):
        return np.array([fn(x.result) if x.ok else np.full(k, np.nan) for x in self.samples])

    @property
    def k(self) -> int:
        return next(x.result.a.shape[1] for x in self.samples if x.ok)

    @property
    def final_weighted(self) -> np.ndarray:
        return self._stack(lambda r: r.final_weighted, self.k)

    @property
    def final_adiabatic_weighted(self) -> np.ndarray:
        return self._stack(lambda r: r.adiabatic_weighted[-1], self.k)

    @property
    def final_dominant(self) -> np.ndarray:
        return np.array([x.result.final_dominant if x.ok else -1 for x in self.samples])

    @property
    def adiabatic_dominant(self) -> np.ndarray:
        return np.array(
            [int(np.argmax(x.result.adiabatic_weighted[-1])) if x.ok else -1 for x in self.samples]
        )

    @property
    def enclosed(self) -> list[bool | None]:
        return [x.enclosed for x in self.samples]

    @property
    def nontrivial(self) -> list[bool | None]:
        return [x.signature not in ("", "()") if x.ok else None for x in self.samples]


def _scan_sample(cfg, base_dir, s, a0):
    family = build_family(cfg, base_dir)
    loop = build_loop(cfg, shift=s)
    eps = known_eps(cfg, family)
    try:
        track = build_track(cfg, family, loop)
        result = _evolve_one(family, loop, track, a0, cfg)
    except (SpectralError, IntegratorError) as exc:
        return ScanSample(float(s), f"flagged: {exc}", None)
    enclosed = enclosure(loop, eps)
    sig = track.signature.notation()
    if enclosed is None:
        enclosed = sig != "()"
    return ScanSample(float(s), "ok", enclosed, sig, result)


def run_shift_scan(cfg: dict, base_dir=None, workers: int = 1) -> ScanResult:
    sc = cfg["scan"]
    grid = np.linspace(sc["s_min"], sc["s_max"], sc["n_s"])
    family = build_family(cfg, base_dir)
    track0 = build_track(cfg, family, build_loop(cfg, shift=float(grid[0])))
    label, a0 = initial_conditions(cfg, track0)[0]
    samples = _map(_scan_sample, [(cfg, base_dir, float(s), a0) for s in grid], workers)
    return ScanResult(cfg, label, samples)


def scan_jump(scan: ScanResult, index: int = 0, at: float = 1.0) -> dict:
    """Jump of the final weighted coefficient across ``s = at`` vs. the
    largest change between neighbouring samples on either side."""
    s = scan.s
    w = scan.final_weighted[:, index]
    ok = np.array([x.ok for x in scan.samples])
    left = np.where(ok & (s < at))[0]
    right = np.where(ok & (s > at))[0]
    jump = abs(w[right[0]] - w[left[-1]])
    var = max(
        np.abs(np.diff(w[left])).max(initial=0.0),
        np.abs(np.diff(w[right])).max(initial=0.0),
    )
    return {"jump": float(jump), "max_adjacent_variation": float(var), "s_minus": float(s[left[-1]]), "s_plus": float(s[right[0]])}


# -- detection -----------------------------------------------------------------------


def run_detect(cfg: dict, base_dir=None):
    family = build_family(cfg, base_dir)
    det = cfg["detect"]
    return detect_ep(
        family,
        det["rectangle"],
        max_order=det.get("max_order", 3),
        rel_diameter=det.get("rel_diameter", 1e-8),
        tracked=cfg["tracked"],
        n_steps=det.get("n_steps", 32),
    )


# -- output ----------------------------------------------------------------------------


def manifest(cfg: dict, kind: str, **extra) -> dict:
    doc = {
        "kind": kind,
        "config": cfg,
        "config_sha256": cfgmod.config_hash(cfg),
        "tolerances": {**cfg["dynamics"], **cfg["spectral"]},
    }
    doc.update(extra)
    return doc


def write_braid(res: BraidResult, out: Path) -> list[Path]:
    name = res.config["name"]
    files = [output.write_track(out / f"{name}_track.csv", res.track)]
    files.append(output.write_text(out / f"{name}_signature.txt", res.signature + "\n"))
    if res.config["plots"]:
        files.append(output.write_text(
            out / f"{name}_braid.gp",
            output.gnuplot_braid(f"{name}_track.csv", len(res.track.tracked), name),
        ))
    doc = manifest(res.config, "spectrum", signature=res.signature, checks=res.checks,
                   outputs=[f.name for f in files])
    files.append(output.write_json(out / f"{name}_manifest.json", doc))
    return files


def write_flip(res: FlipResult, out: Path) -> list[Path]:
    name = res.config["name"]
    files = []
    for lab, r in zip(res.labels, res.results):
        csv_name = f"{name}_{lab}.csv"
        files.append(output.write_evolution(out / csv_name, r))
        if res.config["plots"]:
            files.append(output.write_text(
                out / f"{name}_{lab}.gp", output.gnuplot_evolution(csv_name, r.a.shape[1], f"{name} {lab}")
            ))
    files.append(output.write_track(out / f"{name}_track.csv", res.track))
    dominance = [
        {"initial": lab, "final_dominant": r.final_dominant + 1, "final_weighted": r.final_weighted}
        for lab, r in zip(res.labels, res.results)
    ]
    doc = manifest(
        res.config, "evolve",
        signature=res.track.signature.notation(),
        dominance=dominance,
        checks=res.checks,
        oracle=res.oracle_errors,
        outputs=[f.name for f in files],
    )
    files.append(output.write_json(out / f"{name}_manifest.json", doc))
    return files


def write_scan(res: ScanResult, out: Path) -> list[Path]:
    name = res.config["name"]
    k = res.k
    header = ["s", "ok", "enclosed", "nontrivial_signature", "log_norm"]
    for i in range(1, k + 1):
        header += [f"Re_a_{i}", f"Im_a_{i}", f"weighted_{i}", f"ad_weighted_{i}", f"ad_log_abs_{i}"]
    rows = []
    for x in res.samples:
        row = [x.s, x.ok, bool(x.enclosed), x.ok and x.signature != "()"]
        if x.ok:
            r = x.result
            row.append(r.log_norm[-1])
            wad = r.adiabatic_weighted[-1]
            for i in range(k):
                a = r.a[-1, i]
                row += [a.real, a.imag, r.final_weighted[i], wad[i], np.real(r.adiabatic_log[-1, i])]
        else:
            row += [np.nan] * (1 + 5 * k)
        rows.append(row)
    files = [output.write_csv(out / f"{name}_finals.csv", header, rows)]
    if res.config["scan"]["surface"]:
        sh = ["s", "t"] + [f"weighted_{i}" for i in range(1, k + 1)]
        srows = []
        for x in res.samples:
            if not x.ok:
                continue
            w = x.result.weighted
            for n, t in enumerate(x.result.times):
                srows.append([x.s, t, *w[n]])
        files.append(output.write_csv(out / f"{name}_surface.csv", sh, srows))
    if res.config["plots"]:
        files.append(output.write_text(out / f"{name}_finals.gp", output.gnuplot_scan(f"{name}_finals.csv", k, name)))
    doc = manifest(
        res.config, "scan",
        initial=res.label,
        samples=[
            {"s": x.s, "status": x.status, "enclosed": x.enclosed, "signature": x.signature,
             "final_dominant": (x.result.final_dominant + 1) if x.ok else None}
            for x in res.samples
        ],
        outputs=[f.name for f in files],
    )
    files.append(output.write_json(out / f"{name}_manifest.json", doc))
    return files


def default_workers() -> int:
    return os.cpu_count() or 1
