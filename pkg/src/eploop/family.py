"""Parameter-dependent matrix pencils.

A family is a finite monomial expansion

    A(p1, p2) = sum_k p1**e1_k * p2**e2_k * B_k

together with a constant real symmetric positive-definite metric ``C`` and an
energy scale ``s_E`` relating raw pencil eigenvalues to energies, ``mu = s_E * E``.
Families are immutable; assembling allocates a fresh matrix per call.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

SYMMETRY_RTOL = 1e-14


class FamilyError(ValueError):
    """Base class for invalid family definitions."""


class MalformedFamilyError(FamilyError):
    pass


class DimensionError(FamilyError):
    pass


class MetricError(FamilyError):
    pass


class SymmetryError(FamilyError):
    pass


@dataclass(frozen=True)
class ParameterPoint:
    """A point ``(p1, p2)`` in the real parameter plane."""

    p1: float
    p2: float

    def __post_init__(self):
        if not (np.isfinite(self.p1) and np.isfinite(self.p2)):
            raise ValueError(f"non-finite parameter point ({self.p1}, {self.p2})")

    @property
    def lam(self) -> complex:
        """Complex embedding ``p1 + i p2``."""
        return complex(self.p1, self.p2)

    def as_array(self) -> np.ndarray:
        return np.array([self.p1, self.p2])


@dataclass(frozen=True, eq=False)
class MatrixFamily:
    dim: int
    terms: tuple[tuple[tuple[int, int], np.ndarray], ...]
    metric: np.ndarray | None = None
    symmetric: bool = True
    energy_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.dim
        if not isinstance(n, (int, np.integer)) or n < 1:
            raise DimensionError(f"dim must be a positive integer, got {n!r}")
        if not self.terms:
            raise MalformedFamilyError("family has no terms")
        if not (np.isfinite(self.energy_scale) and self.energy_scale > 0):
            raise MalformedFamilyError(f"energy_scale must be positive, got {self.energy_scale}")

        terms = []
        seen = set()
        for exps, mat in self.terms:
            e1, e2 = (int(e) for e in exps)
            if e1 < 0 or e2 < 0:
                raise MalformedFamilyError(f"negative exponent in {exps}")
            if (e1, e2) in seen:
                raise MalformedFamilyError(f"duplicate exponent pair {(e1, e2)}")
            seen.add((e1, e2))
            mat = np.array(mat, dtype=complex)
            if mat.shape != (n, n):
                raise DimensionError(f"term {(e1, e2)} has shape {mat.shape}, expected {(n, n)}")
            if not np.all(np.isfinite(mat)):
                raise MalformedFamilyError(f"term {(e1, e2)} has non-finite entries")
            if self.symmetric:
                scale = max(np.abs(mat).max(), np.finfo(float).tiny)
                if np.abs(mat - mat.T).max() > SYMMETRY_RTOL * scale:
                    raise SymmetryError(f"term {(e1, e2)} is not complex symmetric")
            mat.setflags(write=False)
            terms.append(((e1, e2), mat))
        object.__setattr__(self, "terms", tuple(terms))

        metric = np.eye(n) if self.metric is None else np.array(self.metric, dtype=float)
        if metric.shape != (n, n):
            raise DimensionError(f"metric has shape {metric.shape}, expected {(n, n)}")
        if not np.all(np.isfinite(metric)):
            raise MetricError("metric has non-finite entries")
        if np.abs(metric - metric.T).max() > SYMMETRY_RTOL * np.abs(metric).max():
            raise MetricError("metric is not symmetric")
        try:
            chol = scipy.linalg.cholesky(metric, lower=True)
        except np.linalg.LinAlgError as exc:
            raise MetricError("metric is not positive definite") from exc
        metric.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_identity_metric", bool(np.array_equal(metric, np.eye(n))))

    @property
    def metric_cholesky(self) -> np.ndarray:
        """Lower Cholesky factor ``L`` with ``C = L L^T``."""
        return self._chol

    @property
    def identity_metric(self) -> bool:
        return self._identity_metric

    def term_dict(self) -> dict[tuple[int, int], np.ndarray]:
        return dict(self.terms)

    def __eq__(self, other):
        if not isinstance(other, MatrixFamily):
            return NotImplemented
        if (self.dim, self.symmetric, self.energy_scale) != (
            other.dim, other.symmetric, other.energy_scale
        ):
            return False
        if not np.array_equal(self.metric, other.metric):
            return False
        mine, theirs = self.term_dict(), other.term_dict()
        return mine.keys() == theirs.keys() and all(
            np.array_equal(mine[k], theirs[k]) for k in mine
        )

    __hash__ = None


def _point(p) -> tuple[float, float]:
    if isinstance(p, ParameterPoint):
        return p.p1, p.p2
    p1, p2 = p
    return float(p1), float(p2)


def assemble(family: MatrixFamily, p) -> np.ndarray:
    """Evaluate ``A(p)``."""
    p1, p2 = _point(p)
    out = np.zeros((family.dim, family.dim), dtype=complex)
    for (e1, e2), mat in family.terms:
        coeff = (p1**e1) * (p2**e2)
        if coeff != 0.0:
            out += coeff * mat
    return out


def assemble_derivative(family: MatrixFamily, p, dpdt) -> np.ndarray:
    """Exact time derivative ``dA/dt = dA/dp1 * p1' + dA/dp2 * p2'``."""
    p1, p2 = _point(p)
    v1, v2 = (float(v) for v in dpdt)
    out = np.zeros((family.dim, family.dim), dtype=complex)
    for (e1, e2), mat in family.terms:
        coeff = 0.0
        if e1 > 0 and v1 != 0.0:
            coeff += e1 * p1 ** (e1 - 1) * p2**e2 * v1
        if e2 > 0 and v2 != 0.0:
            coeff += e2 * p1**e1 * p2 ** (e2 - 1) * v2
        if coeff != 0.0:
            out += coeff * mat
    return out


# -- built-in models -------------------------------------------------------

_X = np.array([[0.0, 1.0], [1.0, 0.0]])


def builtin_canonical_ep2() -> MatrixFamily:
    """``[[1, lam], [lam, -1]]`` with ``lam = p1 + i p2``; EPs at ``lam = +-i``."""
    return MatrixFamily(
        dim=2,
        terms=(
            ((0, 0), np.diag([1.0, -1.0]).astype(complex)),
            ((1, 0), _X.astype(complex)),
            ((0, 1), 1j * _X),
        ),
        symmetric=True,
        meta={"name": "canonical-ep2", "ep": [[0.0, 1.0], [0.0, -1.0]]},
    )


def builtin_ep3_companion() -> MatrixFamily:
    """Companion matrix of ``mu**3 = lam``; a third-order EP at ``lam = 0``."""
    const = np.zeros((3, 3), dtype=complex)
    const[0, 1] = const[1, 2] = 1.0
    corner = np.zeros((3, 3), dtype=complex)
    corner[2, 0] = 1.0
    return MatrixFamily(
        dim=3,
        terms=(((0, 0), const), ((1, 0), corner), ((0, 1), 1j * corner)),
        symmetric=False,
        meta={"name": "ep3-companion", "ep": [[0.0, 0.0]]},
    )


def builtin_diagonal(energies: Sequence[complex]) -> MatrixFamily:
    """Parameter-independent diagonal family with the given eigenvalues.

    Entries may be complex numbers or ``[re, im]`` pairs (the JSON form).
    """
    energies = np.array([complex(*e) if isinstance(e, (list, tuple)) else complex(e) for e in energies])
    return MatrixFamily(
        dim=len(energies),
        terms=(((0, 0), np.diag(energies)),),
        symmetric=True,
        meta={"name": "diagonal"},
    )


def with_spectators(
    base: MatrixFamily,
    spectator_energies: Sequence[complex],
    coupling: float,
    block_shift: complex = 0.0,
    pattern: np.ndarray | None = None,
) -> MatrixFamily:
    """Append uncoupled-by-default spectator resonances to ``base``.

    The result is ``(base + block_shift) ⊕ diag(spectator_energies)`` plus a
    constant symmetric off-block coupling ``coupling * pattern``.  ``pattern``
    has shape ``(base.dim, n_spectators)`` and defaults to all ones.  The
    constant shift moves the base eigenvalues without touching its eigenvectors.
    """
    spec = np.asarray(spectator_energies, dtype=complex)
    n0, ns = base.dim, len(spec)
    n = n0 + ns
    if pattern is None:
        pattern = np.ones((n0, ns))
    pattern = np.asarray(pattern, dtype=float)
    if pattern.shape != (n0, ns):
        raise DimensionError(f"coupling pattern must have shape {(n0, ns)}")

    terms = []
    for exps, mat in base.terms:
        big = np.zeros((n, n), dtype=complex)
        big[:n0, :n0] = mat
        if exps == (0, 0):
            big[:n0, :n0] += block_shift * np.eye(n0)
            big[n0:, n0:] = np.diag(spec)
            big[:n0, n0:] = coupling * pattern
            big[n0:, :n0] = coupling * pattern.T
        terms.append((exps, big))
    if (0, 0) not in base.term_dict():
        big = np.zeros((n, n), dtype=complex)
        big[:n0, :n0] = block_shift * np.eye(n0)
        big[n0:, n0:] = np.diag(spec)
        big[:n0, n0:] = coupling * pattern
        big[n0:, :n0] = coupling * pattern.T
        terms.append(((0, 0), big))

    metric = np.eye(n)
    metric[:n0, :n0] = base.metric
    return MatrixFamily(
        dim=n,
        terms=tuple(terms),
        metric=metric,
        symmetric=base.symmetric,
        energy_scale=base.energy_scale,
        meta={**base.meta, "spectators": [[z.real, z.imag] for z in spec], "coupling": coupling},
    )


# Spectator constants for the four-state analog: both EP-pair states decay
# faster than either spectator everywhere on the radius-0.1 loop.
EP2_BLOCK_SHIFT = -0.6j
EP2_SPECTATOR_ENERGIES = (0.15, -0.25)


def builtin_ep2_with_spectators(
    coupling: float = 0.05,
    spectator_widths: Sequence[float] = (1e-2, 5e-2),
    spectator_energies: Sequence[float] = EP2_SPECTATOR_ENERGIES,
    block_shift: complex = EP2_BLOCK_SHIFT,
) -> MatrixFamily:
    """Canonical EP2 pair plus two spectator resonances.

    Spectator ``k`` sits at ``spectator_energies[k] - 1j * spectator_widths[k]``.
    With ``coupling=0`` the blocks decouple exactly.
    """
    energies = [e - 1j * abs(w) for e, w in zip(spectator_energies, spectator_widths)]
    fam = with_spectators(builtin_canonical_ep2(), energies, coupling, block_shift)
    return _renamed(fam, "ep2-spectators")


EP3_BLOCK_SHIFT = -1.0j
# (energy, width): one wider than, one narrower than, one inside the EP3 band.
EP3_SPECTATORS = ((0.3, 1.6), (-0.2, 0.3), (0.1, 0.9))


def builtin_ep3_with_spectators(
    coupling: float = 0.05,
    spectators: Iterable[tuple[float, float]] = EP3_SPECTATORS,
    block_shift: complex = EP3_BLOCK_SHIFT,
) -> MatrixFamily:
    """EP3 companion block plus three spectator resonances ``(energy, width)``."""
    energies = [e - 1j * abs(w) for e, w in spectators]
    fam = with_spectators(builtin_ep3_companion(), energies, coupling, block_shift)
    return _renamed(fam, "ep3-spectators")


def _renamed(fam: MatrixFamily, name: str) -> MatrixFamily:
    return MatrixFamily(
        dim=fam.dim,
        terms=fam.terms,
        metric=fam.metric,
        symmetric=fam.symmetric,
        energy_scale=fam.energy_scale,
        meta={**fam.meta, "name": name, "ep": fam.meta.get("ep", [])},
    )


BUILTINS = {
    "canonical-ep2": builtin_canonical_ep2,
    "ep3-companion": builtin_ep3_companion,
    "ep2-spectators": builtin_ep2_with_spectators,
    "ep3-spectators": builtin_ep3_with_spectators,
    "diagonal": builtin_diagonal,
}


def builtin(name: str, **kwargs) -> MatrixFamily:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown builtin family {name!r}; known: {sorted(BUILTINS)}") from None
    return factory(**kwargs)


# -- file format -------------------------------------------------------------


def family_to_dict(family: MatrixFamily) -> dict:
    doc = {
        "dim": family.dim,
        "symmetric": family.symmetric,
        "energy_scale": family.energy_scale,
        "terms": [
            {
                "e1": e1,
                "e2": e2,
                "re": mat.real.ravel().tolist(),
                "im": mat.imag.ravel().tolist(),
            }
            for (e1, e2), mat in family.terms
        ],
    }
    if not family.identity_metric:
        doc["metric"] = family.metric.ravel().tolist()
    if family.meta:
        doc["meta"] = family.meta
    return doc


def family_from_dict(doc: dict) -> MatrixFamily:
    if not isinstance(doc, dict):
        raise MalformedFamilyError("family document must be a JSON object")
    unknown = set(doc) - {"dim", "symmetric", "energy_scale", "metric", "terms", "meta"}
    if unknown:
        raise MalformedFamilyError(f"unknown fields {sorted(unknown)}")
    try:
        n = doc["dim"]
        raw_terms = doc["terms"]
    except KeyError as exc:
        raise MalformedFamilyError(f"missing field {exc.args[0]!r}") from None
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise MalformedFamilyError(f"dim must be a positive integer, got {n!r}")
    if not isinstance(raw_terms, list):
        raise MalformedFamilyError("terms must be an array")

    def square(values, what):
        try:
            arr = np.asarray(values, dtype=float)
        except (TypeError, ValueError):
            raise MalformedFamilyError(f"{what} must be an array of numbers") from None
        if arr.ndim != 1 or arr.size != n * n:
            raise DimensionError(f"{what} has {arr.size} entries, expected {n * n}")
        return arr.reshape(n, n)

    terms = []
    for i, t in enumerate(raw_terms):
        if not isinstance(t, dict) or not {"e1", "e2", "re", "im"} <= set(t):
            raise MalformedFamilyError(f"term {i} must have e1, e2, re, im")
        mat = square(t["re"], f"term {i} re") + 1j * square(t["im"], f"term {i} im")
        terms.append(((t["e1"], t["e2"]), mat))

    metric = square(doc["metric"], "metric") if "metric" in doc else None
    return MatrixFamily(
        dim=n,
        terms=tuple(terms),
        metric=metric,
        symmetric=bool(doc.get("symmetric", True)),
        energy_scale=float(doc.get("energy_scale", 1.0)),
        meta=dict(doc.get("meta", {})),
    )


def save_family(family: MatrixFamily, path) -> None:
    # json writes floats with repr(), which round-trips exactly
    Path(path).write_text(json.dumps(family_to_dict(family), indent=1) + "\n")


def load_family(path) -> MatrixFamily:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedFamilyError(f"{path}: not valid JSON ({exc})") from None
    return family_from_dict(doc)
