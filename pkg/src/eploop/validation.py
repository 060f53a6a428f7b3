"""Independent checks of the spectral and dynamical machinery.

Finite differences live here and nowhere else: the production path computes
couplings analytically.
"""

from __future__ import annotations

import numpy as np

from .dynamics import coupling_matrix, evolve_adiabatic, evolve_full, weighted_from_log
from .family import MatrixFamily, ParameterPoint, assemble_derivative
from .spectral import align, eigen_frame


def fd_coupling(family: MatrixFamily, point, velocity, h: float = 1e-6) -> np.ndarray:
    """``kappa_ij = l_i C dr_j/dt`` by central differences along ``p + t * velocity``.

    Neighbouring frames are matched and gauge-fixed against the central one.
    """
    p = np.asarray(point.as_array() if isinstance(point, ParameterPoint) else point, dtype=float)
    v = np.asarray(velocity, dtype=float)
    f0 = eigen_frame(family, p)
    fp, _, _ = align(family, f0, eigen_frame(family, p + h * v))
    fm, _, _ = align(family, f0, eigen_frame(family, p - h * v))
    dr = (fp.right - fm.right) / (2 * h)
    return f0.left.T @ (family.metric @ dr)


def analytic_coupling(family: MatrixFamily, point, velocity) -> np.ndarray:
    p = np.asarray(point.as_array() if isinstance(point, ParameterPoint) else point, dtype=float)
    fr = eigen_frame(family, p)
    return coupling_matrix(fr, assemble_derivative(family, p, velocity))


def sample_points(family: MatrixFamily, n: int, rng, box=None, min_gap: float = 0.05):
    """Random ``(point, unit velocity)`` pairs with well-separated eigenvalues.

    The default box is ``[-1.5, 1.5]^2``; points within 0.05 of a known EP or
    with an eigenvalue gap below ``min_gap`` are rejected.
    """
    (a, b), (c, d) = box or ((-1.5, -1.5), (1.5, 1.5))
    eps = [np.array(e) for e in family.meta.get("ep", [])]
    out = []
    while len(out) < n:
        p = np.array([rng.uniform(a, c), rng.uniform(b, d)])
        if any(np.hypot(*(p - e)) < 0.05 for e in eps):
            continue
        fr = eigen_frame(family, p)
        if fr.on_ep:
            continue
        mus = fr.mus
        gaps = np.abs(mus[:, None] - mus[None, :]) + np.diag(np.full(len(mus), np.inf))
        if gaps.min() < min_gap:
            continue
        ang = rng.uniform(0, 2 * np.pi)
        out.append((p, np.array([np.cos(ang), np.sin(ang)])))
    return out


def coupling_check(family: MatrixFamily, n: int = 50, seed: int = 0, h: float = 1e-6, box=None) -> dict:
    """Worst relative disagreement between analytic and finite-difference couplings."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_diag = 0.0
    for p, v in sample_points(family, n, rng, box):
        an = analytic_coupling(family, p, v)
        fd = fd_coupling(family, p, v, h)
        off = ~np.eye(family.dim, dtype=bool)
        scale = np.abs(an).max()
        if scale == 0:
            err = np.abs(fd[off]).max(initial=0.0)
        else:
            err = np.abs(an[off] - fd[off]).max(initial=0.0) / scale
        worst = max(worst, float(err))
        worst_diag = max(worst_diag, float(np.abs(np.diag(fd)).max() / max(scale, 1.0)))
    return {"points": n, "max_rel_error": worst, "max_fd_diagonal": worst_diag}


def adiabatic_limit_check(family, loop, track, a0, rtol=1e-10, atol=1e-14) -> float:
    """Max weighted difference between decoupled full evolution and the adiabatic reference."""
    res = evolve_full(family, loop, track.tracked, a0, track=track, rtol=rtol, atol=atol, couplings=False)
    wad = weighted_from_log(evolve_adiabatic(family, track, a0))
    return float(np.abs(res.weighted - wad).max())
