"""Time evolution of resonance occupations along a parameter loop.

The state is expanded in the instantaneous eigenbasis, ``psi(t) = sum_i a_i(t) r_i(t)``,
and the coefficients obey

    da_i/dt = -i E_i a_i - sum_j kappa_ij a_j,   kappa_ij = l_i C dr_j/dt.

For constant ``C`` the couplings follow from ``dA/dt`` without differentiating
eigenvectors: ``kappa_ij = l_i (dA/dt) r_j / (mu_j - mu_i)`` for ``i != j``.

Coefficients are carried as ``a * exp(log_norm)``; whenever the largest
``|a_i|`` leaves ``[1e-3, 1e3]`` the magnitude is moved into ``log_norm`` so
deep decay (or gain) never under- or overflows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.integrate import quad_vec, solve_ivp

from .family import MatrixFamily, assemble, assemble_derivative
from .loops import ParameterLoop
from .spectral import (
    GAP_TOL,
    ContinuationTrack,
    OnEPError,
    SpectralError,
    SpectralFrame,
    align,
    continue_loop,
    eigen_frame,
)

log = logging.getLogger(__name__)

RTOL = 1e-10
ATOL = 1e-14
RESCALE_LO, RESCALE_HI = 1e-3, 1e3
QUAD_TOL = 1e-10
MIN_STEP_FRACTION = 1e-13


class IntegratorError(RuntimeError):
    pass


class NearEPError(SpectralError):
    pass


def weighted(a) -> np.ndarray:
    """Populations relative to the surviving total, ``|a_i|^2 / sum_j |a_j|^2``."""
    a = np.asarray(a, dtype=complex)
    if a.ndim == 1:
        a = a[None, :]
        squeeze = True
    else:
        squeeze = False
    # factor out the largest modulus first so tiny vectors do not underflow
    scale = np.abs(a).max(axis=-1, keepdims=True)
    if np.any(scale == 0) or not np.all(np.isfinite(scale)):
        raise ValueError("weighted coefficients undefined for an all-zero vector")
    w = np.abs(a / scale) ** 2
    w /= w.sum(axis=-1, keepdims=True)
    return w[0] if squeeze else w


def weighted_from_log(log_a: np.ndarray) -> np.ndarray:
    """``weighted`` for coefficients given as complex logarithms (``-inf`` allowed)."""
    re = np.real(log_a)
    top = re.max(axis=-1, keepdims=True)
    w = np.exp(2 * (re - top))
    return w / w.sum(axis=-1, keepdims=True)


def coupling_matrix(
    frame: SpectralFrame, a_dot: np.ndarray, gap_tol: float = GAP_TOL
) -> np.ndarray:
    """Non-adiabatic couplings ``kappa_ij = l_i C dr_j/dt`` with zero diagonal."""
    mus = frame.mus
    num = frame.left.T @ a_dot @ frame.right
    den = mus[None, :] - mus[:, None]
    n = len(mus)
    off = ~np.eye(n, dtype=bool)
    scale = max(np.abs(mus).max(), 1.0)
    if n > 1 and np.abs(den[off]).min() < gap_tol * scale:
        raise NearEPError(f"eigenvalue gap below tolerance at {frame.point}")
    kappa = np.zeros((n, n), dtype=complex)
    kappa[off] = num[off] / den[off]
    return kappa


def gauge_drift(
    family: MatrixFamily, frame: SpectralFrame, ref: SpectralFrame, kappa: np.ndarray
) -> np.ndarray:
    """Diagonal coupling ``l_i C dr_i/dt`` of a frame gauge-fixed against ``ref``.

    Frames aligned to a fixed reference carry a small diagonal term in general
    families; it vanishes identically in the c-product (symmetric) case.
    """
    if frame.symmetric:
        return np.zeros(frame.dim, dtype=complex)
    cm = (lambda v: v) if family.identity_metric else (lambda v: family.metric @ v)
    lr = frame.left.T @ cm(ref.right)  # l_j C r_i^ref
    rl = ref.left.T @ cm(frame.right)  # l_i^ref C r_j
    diag_lr = np.diag(lr)
    diag_rl = np.diag(rl)
    # d/dt of l_i contracted with r_i^ref, and l_i^ref contracted with dr_i/dt
    t1 = -np.einsum("ij,ji->i", kappa, lr) / diag_lr
    t2 = np.einsum("ji,ij->i", kappa, rl) / diag_rl
    return 0.5 * (t1 - t2)


@dataclass(eq=False)
class EvolutionResult:
    times: np.ndarray
    a: np.ndarray
    log_norm: np.ndarray
    energies: np.ndarray
    tracked: tuple[int, ...]
    a0: np.ndarray
    adiabatic_log: np.ndarray | None = None
    signature: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def weighted(self) -> np.ndarray:
        return weighted(self.a)

    @property
    def adiabatic_weighted(self) -> np.ndarray | None:
        if self.adiabatic_log is None:
            return None
        return weighted_from_log(self.adiabatic_log)

    @property
    def physical_log(self) -> np.ndarray:
        """Complex log of the physical coefficients."""
        with np.errstate(divide="ignore"):
            return np.log(self.a.astype(complex)) + self.log_norm[:, None]

    @property
    def final_weighted(self) -> np.ndarray:
        return self.weighted[-1]

    @property
    def final_dominant(self) -> int:
        """Position (within ``tracked``) of the largest final weighted coefficient."""
        return int(np.argmax(self.final_weighted))


def _rescale(y: np.ndarray, log_norm: float) -> tuple[np.ndarray, float]:
    m = np.abs(y).max()
    if m == 0 or not np.isfinite(m):
        raise IntegratorError(f"coefficient vector degenerated (max |a| = {m})")
    if m < RESCALE_LO or m > RESCALE_HI:
        return y / m, log_norm + float(np.log(m))
    return y, log_norm


def _integrate_segments(rhs_for, times, y0, rtol, atol, t_total):
    """Integrate piecewise over ``times`` with RK45, rescaling between pieces."""
    ys = [np.asarray(y0, dtype=complex)]
    logs = [0.0]
    y, ln = _rescale(ys[0], 0.0)
    ys[0], logs[0] = y, ln
    first_step = None
    min_step = MIN_STEP_FRACTION * t_total
    for k in range(len(times) - 1):
        t0, t1 = times[k], times[k + 1]
        fun = rhs_for(k)
        sol = solve_ivp(
            fun, (t0, t1), y, method="RK45", rtol=rtol, atol=atol,
            first_step=min(first_step, t1 - t0) if first_step else None,
        )
        if sol.status != 0:
            raise IntegratorError(f"integration failed on [{t0!r}, {t1!r}]: {sol.message}")
        steps = np.diff(sol.t)
        if len(steps) > 1 and steps[:-1].min() < min_step:
            raise IntegratorError(f"step underflow near t={t0!r} (dt < {min_step:.3g})")
        first_step = float(steps[-2] if len(steps) > 1 else steps[-1])
        y, ln = _rescale(sol.y[:, -1], ln)
        ys.append(y)
        logs.append(ln)
    return np.array(ys), np.array(logs)


def _energies(track: ContinuationTrack) -> np.ndarray:
    return track.energies(tracked_only=True)


def evolve_full(
    family: MatrixFamily,
    loop: ParameterLoop,
    tracked: Sequence[int] | None,
    a0,
    track: ContinuationTrack | None = None,
    rtol: float = RTOL,
    atol: float = ATOL,
    couplings: bool = True,
) -> EvolutionResult:
    """Integrate the occupation coefficients in the instantaneous eigenbasis.

    Energies and couplings come from frames computed afresh at every time the
    integrator asks for, aligned to the nearest earlier frame of ``track``.
    ``couplings=False`` drops ``kappa`` (adiabatic limit).  Output is sampled at
    the track's frame times, and coefficients refer to the track's frames.
    """
    if track is None:
        track = continue_loop(family, loop, tracked)
    idx = np.array(track.tracked)
    a0 = np.asarray(a0, dtype=complex)
    if a0.shape != (len(idx),):
        raise ValueError(f"a0 must have {len(idx)} entries, got shape {a0.shape}")

    def rhs_for(k):
        ref = track.frames[k]

        def rhs(t, a):
            p = loop.point_at(t)
            raw = eigen_frame(family, p)
            fr, _, _ = align(family, ref, raw)
            m = np.diag(-1j * fr.energies[idx])
            if couplings:
                adot = assemble_derivative(family, p, loop.velocity_at(t))
                kappa = coupling_matrix(fr, adot)
                beta = gauge_drift(family, fr, ref, kappa)
                m = m - kappa[np.ix_(idx, idx)] - np.diag(beta[idx])
            return m @ a

        return rhs

    times = track.times
    a, ln = _integrate_segments(rhs_for, times, a0, rtol, atol, loop.total_time)
    return EvolutionResult(
        times=times,
        a=a,
        log_norm=ln,
        energies=_energies(track),
        tracked=track.tracked,
        a0=a0,
        signature=track.signature.notation(),
        meta={"rtol": rtol, "atol": atol, "couplings": couplings},
    )


def evolve_adiabatic(
    family: MatrixFamily, track: ContinuationTrack, a0, tol: float = QUAD_TOL
) -> np.ndarray:
    """Complex logs of ``a_ad,i(t) = a_i(0) exp(-i int_0^t E_i dt')`` at track times.

    The energy integral runs segment by segment with adaptive quadrature on
    freshly computed, track-aligned energies.
    """
    loop = track.loop
    idx = np.array(track.tracked)
    a0 = np.asarray(a0, dtype=complex)
    times = track.times
    phase = np.zeros((len(times), len(idx)), dtype=complex)
    for k in range(len(times) - 1):
        ref = track.frames[k]

        def energy(t):
            fr, _, _ = align(family, ref, eigen_frame(family, loop.point_at(t)))
            e = fr.energies[idx]
            return np.concatenate([e.real, e.imag])

        val, _ = quad_vec(energy, times[k], times[k + 1], epsabs=tol * 1e-2, epsrel=tol)
        phase[k + 1] = phase[k] + val[: len(idx)] + 1j * val[len(idx):]
    with np.errstate(divide="ignore"):
        return np.log(a0)[None, :] - 1j * phase


def attach_adiabatic(family: MatrixFamily, result: EvolutionResult, track: ContinuationTrack):
    result.adiabatic_log = evolve_adiabatic(family, track, result.a0)
    return result


@dataclass(eq=False)
class OracleResult:
    times: np.ndarray
    psi: np.ndarray
    log_norm: np.ndarray
    projections: np.ndarray

    @property
    def weighted(self) -> np.ndarray:
        return weighted(self.projections)


def evolve_oracle(
    family: MatrixFamily,
    loop: ParameterLoop,
    psi0,
    track: ContinuationTrack,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> OracleResult:
    """Integrate ``C dpsi/dt = -i A(t) psi / s_E`` in the fixed basis.

    Projections ``a_i = l_i C psi`` use the track's frames, so they are directly
    comparable with :func:`evolve_full` when all states are tracked.
    """
    chol = (family.metric_cholesky, True)
    scale = family.energy_scale

    def rhs_for(k):
        def rhs(t, psi):
            h = assemble(family, loop.point_at(t))
            if family.identity_metric:
                return -1j * (h @ psi) / scale
            return -1j * scipy.linalg.cho_solve(chol, h @ psi) / scale

        return rhs

    times = track.times
    psi, ln = _integrate_segments(rhs_for, times, psi0, rtol, atol, loop.total_time)
    idx = list(track.tracked)
    cm = family.metric
    proj = np.array(
        [fr.left[:, idx].T @ (cm @ v) for fr, v in zip(track.frames, psi)]
    )
    return OracleResult(times=times, psi=psi, log_norm=ln, projections=proj)


def prepare_state(track: ContinuationTrack, a0) -> np.ndarray:
    """Fixed-basis vector ``sum_i a0_i r_i(0)`` over the tracked states."""
    fr = track.frames[0]
    return fr.right[:, list(track.tracked)] @ np.asarray(a0, dtype=complex)


def on_common_scale(a: np.ndarray, log_a: np.ndarray, log_b: np.ndarray) -> np.ndarray:
    """Express coefficients carried with ``log_a`` on the scale ``log_b``."""
    return a * np.exp(log_a - log_b)[:, None]
