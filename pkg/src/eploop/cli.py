"""Command-line front end.

    eploop {spectrum,evolve,scan,detect,validate} --config RUN.json [--out DIR]
           [--threads N] [--set key.path=value ...]

Exit codes: 0 success, 1 failed validation checks, 2 config error, 3 on-EP
frame, 4 refinement failure, 5 integrator abort.  Errors are reported as one
JSON object on stderr.  Set ``EPLOOP_LOG`` (e.g. ``DEBUG``) for diagnostics.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import output
from .config import ConfigError, load_config
from .dynamics import IntegratorError, NearEPError
from .family import FamilyError
from .spectral import ContinuationError, OnEPError, SpectralError, biorthonormality_error, residual
from .validation import adiabatic_limit_check, coupling_check

log = logging.getLogger("eploop")

EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_ON_EP = 3
EXIT_REFINEMENT = 4
EXIT_INTEGRATOR = 5


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "code": code, "message": message}) + "\n")
    return code


def cmd_spectrum(cfg, out: Path, base_dir, threads) -> int:
    res = ex.run_braid(cfg, base_dir)
    ex.write_braid(res, out)
    print(res.signature)
    return 0


def cmd_evolve(cfg, out: Path, base_dir, threads) -> int:
    res = ex.run_flip(cfg, base_dir, workers=threads)
    ex.write_flip(res, out)
    for lab, dom in res.dominance.items():
        print(f"{lab}: final dominant state {dom + 1}")
    return 0


def cmd_scan(cfg, out: Path, base_dir, threads) -> int:
    res = ex.run_shift_scan(cfg, base_dir, workers=threads)
    ex.write_scan(res, out)
    for x in res.samples:
        dom = x.result.final_dominant + 1 if x.ok else "-"
        print(f"s={x.s:.4f} {x.status if not x.ok else 'ok'} enclosed={x.enclosed} dominant={dom}")
    return 0


def cmd_detect(cfg, out: Path, base_dir, threads) -> int:
    found = ex.run_detect(cfg, base_dir)
    name = cfg["name"]
    rows = [
        {"p1": d.point.p1, "p2": d.point.p2, "order": d.order, "status": d.status,
         "box": [list(d.box[0]), list(d.box[1])]}
        for d in found
    ]
    output.write_json(out / f"{name}_detect.json", ex.manifest(cfg, "detect", found=rows))
    for r in rows:
        print(f"{r['status']}: ({r['p1']:.10g}, {r['p2']:.10g}) order {r['order']}")
    if not rows:
        print("no exceptional point found")
    return 0


def cmd_validate(cfg, out: Path, base_dir, threads) -> int:
    """Run the invariant suite on the configured family and loop."""
    family = ex.build_family(cfg, base_dir)
    loop = ex.build_loop(cfg)
    track = ex.build_track(cfg, family, loop)
    val = cfg["validate"]
    dyn = cfg["dynamics"]
    report = {
        "biorthonormality": max(biorthonormality_error(family, f) for f in track.frames),
        "residual": max(residual(family, f) for f in track.frames),
        "signature": track.signature.notation(),
        "signature_composition": track.composed_signature().notation() == track.full_signature.notation(),
        "coupling": coupling_check(family, val["coupling_points"], val["seed"], val["fd_step"]),
    }
    oracle, weighted_sum, adiabatic = [], 0.0, []
    for lab, a0 in ex.initial_conditions(cfg, track):
        res = ex._evolve_one(family, loop, track, a0, cfg)
        weighted_sum = max(weighted_sum, float(np.abs(res.weighted.sum(axis=1) - 1).max()))
        if len(track.tracked) == family.dim:
            oracle.append({"initial": lab, **ex.oracle_comparison(family, loop, track, res, dyn["rtol"], dyn["atol"])})
        adiabatic.append({"initial": lab, "max_weighted_difference": adiabatic_limit_check(family, loop, track, a0)})
    report.update(oracle=oracle, weighted_normalization=weighted_sum, adiabatic_limit=adiabatic)

    checks = {
        "biorthonormality<=1e-10": report["biorthonormality"] <= 1e-10,
        "residual<=1e-10": report["residual"] <= 1e-10,
        "signature_composition": report["signature_composition"],
        "coupling<=1e-5": report["coupling"]["max_rel_error"] <= 1e-5,
        "oracle_weighted<=1e-8": all(o["max_weighted_error"] <= 1e-8 for o in oracle),
        "oracle_coefficients<=1e-6": all(o["max_rel_coefficient_error"] <= 1e-6 for o in oracle),
        "weighted_normalization<=1e-12": weighted_sum <= 1e-12,
        "adiabatic_limit<=1e-8": all(a["max_weighted_difference"] <= 1e-8 for a in adiabatic),
    }
    report["checks"] = checks
    for k, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {k}")
    if not all(checks.values()):
        # a failed validation leaves the output directory untouched
        failed = [k for k, ok in checks.items() if not ok]
        return _fail(EXIT_VALIDATION, "validation", f"failed checks: {', '.join(failed)}")
    output.write_json(out / f"{cfg['name']}_validate.json", ex.manifest(cfg, "validate", report=report))
    return 0


COMMANDS = {
    "spectrum": cmd_spectrum,
    "evolve": cmd_evolve,
    "scan": cmd_scan,
    "detect": cmd_detect,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eploop",
        description="Eigenvalue braids and population transfer around exceptional points",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, type=Path, help="run configuration (JSON)")
    parser.add_argument("--out", type=Path, help="output directory (overrides config 'output')")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker pool size")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry by dotted path; VALUE is parsed as JSON")
    return parser


def main(argv=None) -> int:
    level = os.environ.get("EPLOOP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if cfg["family"].get("builtin") is None and cfg["family"].get("file") is None:
            raise ConfigError("family needs builtin or file")
        if args.command == "detect" and "detect" not in cfg:
            raise ConfigError("detect command needs a 'detect' block")
        base_dir = args.config.resolve().parent
        # fail on an unusable family before any output exists
        ex.build_family(cfg, base_dir)
        out = args.out if args.out is not None else Path(cfg["output"])
        return COMMANDS[args.command](cfg, out, base_dir, args.threads)
    except (ConfigError, FamilyError, KeyError, TypeError) as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except (OnEPError, NearEPError) as exc:
        return _fail(EXIT_ON_EP, "on_ep", str(exc))
    except ContinuationError as exc:
        return _fail(EXIT_REFINEMENT, "refinement", str(exc))
    except IntegratorError as exc:
        return _fail(EXIT_INTEGRATOR, "integrator", str(exc))
    except SpectralError as exc:
        return _fail(EXIT_ON_EP, "spectral", str(exc))


if __name__ == "__main__":
    sys.exit(main())
