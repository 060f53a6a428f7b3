"""CSV, manifest and gnuplot writers.

CSV files use ',' separators, '.' decimals, LF line endings and 17 significant
digits, so repeated runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def track_rows(track):
    k = len(track.tracked)
    header = ["step", "t", "phi", "p1", "p2"]
    for i in range(1, k + 1):
        header += [f"Re_E_{i}", f"Im_E_{i}"]
    energies = track.energies()
    rows = []
    for step, (fr, e) in enumerate(zip(track.frames, energies)):
        row = [step, fr.t, fr.phi, fr.point.p1, fr.point.p2]
        for z in e:
            row += [z.real, z.imag]
        rows.append(row)
    return header, rows


def write_track(path, track) -> Path:
    header, rows = track_rows(track)
    return write_csv(path, header, rows)


def evolution_rows(result):
    k = result.a.shape[1]
    header = ["t", "log_norm"]
    for i in range(1, k + 1):
        header += [
            f"Re_a_{i}", f"Im_a_{i}", f"abs2_a_{i}", f"weighted_{i}",
            f"Re_E_{i}", f"Im_E_{i}", f"abs_a_ad_{i}2",
        ]
    w = result.weighted
    if result.adiabatic_log is not None:
        with np.errstate(over="ignore", under="ignore"):
            ad2 = np.exp(2 * np.real(result.adiabatic_log))
    else:
        ad2 = np.full(result.a.shape, np.nan)
    rows = []
    for n, t in enumerate(result.times):
        row = [t, result.log_norm[n]]
        for i in range(k):
            a = result.a[n, i]
            e = result.energies[n, i]
            row += [a.real, a.imag, abs(a) ** 2, w[n, i], e.real, e.imag, ad2[n, i]]
        rows.append(row)
    return header, rows


def write_evolution(path, result) -> Path:
    header, rows = evolution_rows(result)
    return write_csv(path, header, rows)


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="\n") as fh:
        fh.write(text)
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, doc) -> Path:
    return write_text(path, json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def gnuplot_braid(csv_name: str, k: int, title: str) -> str:
    plots = ", ".join(
        f"'{csv_name}' using {6 + 2 * i}:{7 + 2 * i} with lines title 'E_{i + 1}'" for i in range(k)
    )
    return (
        "set datafile separator ','\n"
        f"set title '{title}'\n"
        "set xlabel 'Re E'\nset ylabel 'Im E'\n"
        "set key autotitle columnhead\n"
        f"plot {plots}\n"
    )


def gnuplot_evolution(csv_name: str, k: int, title: str) -> str:
    cols = lambda i: 3 + 7 * i  # noqa: E731
    w = ", ".join(
        f"'{csv_name}' using 1:{cols(i) + 3} with lines title 'w_{i + 1}'" for i in range(k)
    )
    return (
        "set datafile separator ','\n"
        f"set title '{title}'\n"
        "set xlabel 't'\nset ylabel 'weighted population'\n"
        "set yrange [0:1]\n"
        f"plot {w}\n"
    )


def gnuplot_scan(csv_name: str, k: int, title: str) -> str:
    w = ", ".join(
        f"'{csv_name}' using 1:{8 + 5 * i} with points title 'w_{i + 1}'" for i in range(k)
    )
    return (
        "set datafile separator ','\n"
        f"set title '{title}'\n"
        "set xlabel 's'\nset ylabel 'final weighted population'\n"
        "set yrange [0:1]\n"
        f"plot {w}\n"
    )
