"""Eigen-frames of the pencil ``A(p) r = mu C r`` and their continuation.

Right vectors ``r_i`` and left vectors ``l_i`` are normalized so that
``l_i C r_j = delta_ij``.  For complex symmetric families ``l_i = r_i`` and the
pairing is the c-product (no complex conjugation anywhere).  Vectors are stored
as columns of ``right`` / ``left``.

Continuation follows eigenpairs around a closed loop by maximal overlap and
fixes the gauge of every frame relative to its predecessor, which gives a
discrete parallel transport: the diagonal derivative coupling ``l_i C dr_i/dt``
vanishes to second order in the step.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .family import MatrixFamily, ParameterPoint, assemble
from .loops import ParameterLoop, discretize, rectangle_loop

log = logging.getLogger(__name__)

GAP_TOL = 1e-12
# unit-vector c-overlap below which a pair counts as self-orthogonal; rounding
# alone leaves O(sqrt(eps)) overlaps at an exact EP, so 1e-14 would never trigger
SELF_ORTH_TOL = 1e-7
VANISHING_OVERLAP = 1e-8
OVERLAP_TOL = 0.1
REFINEMENT_LIMIT = 12
EXACT_ASSIGNMENT_MAX = 64
TIE_TOL = 1e-12


class SpectralError(RuntimeError):
    pass


class OnEPError(SpectralError):
    """A frame on the path is (numerically) at an exceptional point."""

    def __init__(self, point: ParameterPoint, detail: str = ""):
        self.point = point
        msg = f"on-EP frame at (p1, p2) = ({point.p1!r}, {point.p2!r})"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class ContinuationError(SpectralError):
    """Adjacent frames too far apart to be matched reliably."""


class RefinementError(ContinuationError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralFrame:
    point: ParameterPoint
    mus: np.ndarray
    energies: np.ndarray
    right: np.ndarray
    left: np.ndarray
    on_ep: bool = False
    ep_reason: str = ""
    symmetric: bool = True
    t: float | None = None
    phi: float | None = None

    @property
    def dim(self) -> int:
        return len(self.mus)

    def permuted(self, order: Sequence[int]) -> "SpectralFrame":
        """Frame whose state ``i`` is state ``order[i]`` of this one."""
        order = np.asarray(order)
        return replace(
            self,
            mus=self.mus[order],
            energies=self.energies[order],
            right=self.right[:, order],
            left=self.left[:, order],
        )

    def rescaled(self, factors) -> "SpectralFrame":
        """Multiply right vectors by ``factors`` and divide left vectors by them."""
        factors = np.asarray(factors, dtype=complex)
        left = self.right * factors if self.symmetric else self.left / factors
        return replace(self, right=self.right * factors, left=left)


def _metric_apply(family: MatrixFamily, v: np.ndarray) -> np.ndarray:
    return v if family.identity_metric else family.metric @ v


def overlap_matrix(family: MatrixFamily, a: SpectralFrame, b: SpectralFrame) -> np.ndarray:
    """``O[i, j] = l_i^a C r_j^b``."""
    return a.left.T @ _metric_apply(family, b.right)


def biorthonormality_error(family: MatrixFamily, frame: SpectralFrame) -> float:
    o = overlap_matrix(family, frame, frame)
    return float(np.abs(o - np.eye(frame.dim)).max())


def residual(family: MatrixFamily, frame: SpectralFrame) -> float:
    """Max relative residual ``|A r - mu C r| / ||A||`` over the frame."""
    a = assemble(family, frame.point)
    res = a @ frame.right - _metric_apply(family, frame.right) * frame.mus
    scale = np.linalg.norm(frame.right, axis=0) * max(np.linalg.norm(a), 1e-300)
    return float((np.linalg.norm(res, axis=0) / scale).max())


def eigen_frame(
    family: MatrixFamily,
    point,
    gap_tol: float = GAP_TOL,
    self_orth_tol: float = SELF_ORTH_TOL,
) -> SpectralFrame:
    """Solve the generalized problem at ``point`` and bi-orthonormalize.

    Eigenvalues come out sorted by ``(Re mu, Im mu)``.  Frames at or numerically
    next to an exceptional point are returned with ``on_ep=True``; their vectors
    are not normalized.
    """
    if not isinstance(point, ParameterPoint):
        point = ParameterPoint(*point)
    a = assemble(family, point)
    if not np.all(np.isfinite(a)):
        raise SpectralError(f"non-finite matrix at {point}")
    n = family.dim
    chol = family.metric_cholesky
    if family.identity_metric:
        red = a
    else:
        x = scipy.linalg.solve_triangular(chol, a, lower=True)
        red = scipy.linalg.solve_triangular(chol, x.T, lower=True).T

    if family.symmetric:
        mus, yr = scipy.linalg.eig(red, check_finite=False)
        yl = yr
    else:
        mus, vl, yr = scipy.linalg.eig(red, left=True, right=True, check_finite=False)
        yl = vl.conj()

    order = np.lexsort((mus.imag, mus.real))
    mus, yr, yl = mus[order], yr[:, order], yl[:, order]

    # unit-vector overlaps: inverse eigenvalue condition numbers
    pair = np.einsum("ij,ij->j", yl, yr)
    col_l = np.sqrt((np.abs(yl) ** 2).sum(axis=0))
    col_r = col_l if family.symmetric else np.sqrt((np.abs(yr) ** 2).sum(axis=0))
    pair_unit = np.abs(pair) / (col_l * col_r)
    # Frobenius norm as the scale of A
    norm_a = max(np.sqrt((np.abs(red) ** 2).sum()), np.finfo(float).tiny)
    gaps = np.abs(mus[:, None] - mus[None, :]) + np.diag(np.full(n, np.inf))
    reason = ""
    if n > 1 and gaps.min() < gap_tol * norm_a:
        reason = f"eigenvalue gap {gaps.min():.3e} below {gap_tol:g}*||A||"
    elif pair_unit.min() < self_orth_tol:
        reason = f"self-orthogonal eigenvector (|l.C.r| = {pair_unit.min():.3e})"

    if not reason:
        s = np.sqrt(pair)
        yr = yr / s
        yl = yl / s
    if family.identity_metric:
        right, left = yr, yl
    else:
        right = scipy.linalg.solve_triangular(chol, yr, lower=True, trans="T")
        left = right if family.symmetric else scipy.linalg.solve_triangular(
            chol, yl, lower=True, trans="T"
        )
    return SpectralFrame(
        point=point,
        mus=mus,
        energies=mus / family.energy_scale,
        right=right,
        left=left,
        on_ep=bool(reason),
        ep_reason=reason,
        symmetric=family.symmetric,
    )


def overlap_scores(family: MatrixFamily, prev: SpectralFrame, nxt: SpectralFrame) -> np.ndarray:
    """Gauge-invariant overlap ``P[i, j] = (l_i C r'_j)(l'_j C r_i)``.

    For symmetric families this is ``(r_i C r'_j)**2``.  Rows sum to one when
    the frames are complete.
    """
    fwd = overlap_matrix(family, prev, nxt)
    bwd = overlap_matrix(family, nxt, prev)
    return fwd * bwd.T


def match_step(
    family: MatrixFamily,
    prev: SpectralFrame,
    nxt: SpectralFrame,
    scores: np.ndarray | None = None,
) -> np.ndarray:
    """Assignment ``perm`` with ``nxt`` state ``perm[i]`` continuing ``prev`` state ``i``.

    Maximizes the summed overlap magnitude; ties go to the closer eigenvalue.
    """
    if scores is None:
        scores = overlap_scores(family, prev, nxt)
    score = np.sqrt(np.abs(scores))
    dist = np.abs(prev.mus[:, None] - nxt.mus[None, :])
    n = len(score)
    if n <= EXACT_ASSIGNMENT_MAX:
        # distance enters below the tie tolerance so it only breaks ties
        cost = -score + 0.1 * TIE_TOL * dist / max(dist.max(), np.finfo(float).tiny)
        rows, cols = linear_sum_assignment(cost)
        perm = np.empty(n, dtype=int)
        perm[rows] = cols
        return perm
    return _greedy_assignment(score, dist)


def _greedy_assignment(score: np.ndarray, dist: np.ndarray) -> np.ndarray:
    n = len(score)
    perm = -np.ones(n, dtype=int)
    taken = np.zeros(n, dtype=bool)
    for flat in np.lexsort((dist.ravel(), -score.ravel())):
        i, j = divmod(int(flat), n)
        if perm[i] < 0 and not taken[j]:
            perm[i] = j
            taken[j] = True
    improved = True
    while improved:
        improved = False
        for i in range(n):
            for k in range(i + 1, n):
                a, b = perm[i], perm[k]
                gain = score[i, b] + score[k, a] - score[i, a] - score[k, b]
                if gain > TIE_TOL:
                    perm[i], perm[k] = b, a
                    improved = True
    return perm


def gauge_fix(family: MatrixFamily, prev: SpectralFrame, nxt: SpectralFrame) -> SpectralFrame:
    """Rescale the (already matched) states of ``nxt`` to continue ``prev`` smoothly.

    Symmetric families only admit a sign flip, chosen so that
    ``Re(r_i C r'_i) > 0``.  General families take the complex factor ``c`` with
    ``l_i C (c r'_i) = (l'_i / c) C r_i``, the branch with positive real part;
    this is second-order accurate parallel transport.
    """
    fwd = np.einsum("ij,ij->j", prev.left, _metric_apply(family, nxt.right))
    if np.abs(fwd).min() < VANISHING_OVERLAP:
        raise ContinuationError(
            f"vanishing overlap {np.abs(fwd).min():.2e} between frames at {prev.point} "
            f"and {nxt.point}; refine the discretization"
        )
    if nxt.symmetric:
        return nxt.rescaled(np.where(fwd.real < 0, -1.0, 1.0))
    bwd = np.einsum("ij,ij->j", nxt.left, _metric_apply(family, prev.right))
    if np.abs(bwd).min() < VANISHING_OVERLAP:
        raise ContinuationError(f"vanishing overlap between frames at {prev.point} and {nxt.point}")
    c = np.sqrt(bwd / fwd)
    c = np.where((c * fwd).real < 0, -c, c)
    return nxt.rescaled(c)


def align(
    family: MatrixFamily, prev: SpectralFrame, nxt: SpectralFrame
) -> tuple[SpectralFrame, np.ndarray, float]:
    """Match, reorder and gauge-fix ``nxt`` against ``prev``.

    Returns the aligned frame, the assignment (indices into ``nxt``'s own
    order) and the worst matched-overlap deviation ``max_i |1 - P_ii|``.
    """
    if nxt.on_ep:
        raise OnEPError(nxt.point, nxt.ep_reason)
    scores = overlap_scores(family, prev, nxt)
    perm = match_step(family, prev, nxt, scores)
    worst = float(np.abs(1.0 - scores[np.arange(len(perm)), perm]).max())
    return gauge_fix(family, prev, nxt.permuted(perm)), perm, worst


# -- permutations ------------------------------------------------------------


@dataclass(frozen=True)
class PermutationSignature:
    """Loop permutation: state ``i`` ends where state ``perm[i]`` started."""

    perm: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.perm) != list(range(len(self.perm))):
            raise ValueError(f"not a permutation: {self.perm}")

    @property
    def cycles(self) -> list[tuple[int, ...]]:
        seen, out = set(), []
        for start in range(len(self.perm)):
            if start in seen:
                continue
            cyc, i = [], start
            while i not in seen:
                seen.add(i)
                cyc.append(i)
                i = self.perm[i]
            out.append(tuple(cyc))
        return out

    @property
    def is_identity(self) -> bool:
        return all(i == p for i, p in enumerate(self.perm))

    @property
    def order(self) -> int:
        """Length of the longest cycle."""
        return max((len(c) for c in self.cycles), default=1)

    def inverse(self) -> "PermutationSignature":
        inv = [0] * len(self.perm)
        for i, p in enumerate(self.perm):
            inv[p] = i
        return PermutationSignature(tuple(inv))

    def compose(self, other: "PermutationSignature") -> "PermutationSignature":
        """Apply ``self`` then ``other``."""
        return PermutationSignature(tuple(other.perm[p] for p in self.perm))

    def notation(self) -> str:
        """One-based cycle notation, e.g. ``(1 2)``; identity is ``()``."""
        parts = [c for c in self.cycles if len(c) > 1]
        if not parts:
            return "()"
        return "".join("(" + " ".join(str(i + 1) for i in c) + ")" for c in parts)

    def __str__(self):
        return self.notation()


# -- continuation --------------------------------------------------------------


@dataclass(eq=False)
class ContinuationTrack:
    frames: list[SpectralFrame]
    match_maps: list[np.ndarray]
    signature: PermutationSignature
    full_signature: PermutationSignature
    tracked: tuple[int, ...]
    loop: ParameterLoop | None = None
    step_overlaps: list[float] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([f.t for f in self.frames])

    @property
    def phis(self) -> np.ndarray:
        return np.array([f.phi for f in self.frames])

    def energies(self, tracked_only: bool = True) -> np.ndarray:
        e = np.array([f.energies for f in self.frames])
        return e[:, list(self.tracked)] if tracked_only else e

    def composed_signature(self) -> PermutationSignature:
        """Composition of the per-step maps (sorted index to sorted index)."""
        perm = np.arange(len(self.match_maps[0])) if self.match_maps else np.arange(
            self.frames[0].dim
        )
        sig = PermutationSignature(tuple(int(i) for i in perm))
        for m in self.match_maps:
            sig = sig.compose(PermutationSignature(tuple(int(i) for i in m)))
        return sig

    def frame_index_at(self, t: float) -> int:
        """Index of the last stored frame with time <= t."""
        times = self.times
        k = int(np.searchsorted(times, t, side="right") - 1)
        return min(max(k, 0), len(times) - 2)


def continue_loop(
    family: MatrixFamily,
    loop: ParameterLoop,
    tracked: Sequence[int] | None = None,
    overlap_tol: float = OVERLAP_TOL,
    refinement_limit: int = REFINEMENT_LIMIT,
    gap_tol: float = GAP_TOL,
    workers: int = 1,
) -> ContinuationTrack:
    """Follow all eigenpairs around ``loop`` and compute its permutation signature.

    An interval whose matched overlaps deviate from one by more than
    ``overlap_tol`` is bisected, at most ``refinement_limit`` times.
    ``tracked`` selects labels (sorted order of the first frame) for the
    reported signature; it must be closed under the loop permutation.
    """
    tracked = tuple(range(family.dim)) if tracked is None else tuple(int(i) for i in tracked)
    if not tracked or any(not 0 <= i < family.dim for i in tracked) or len(set(tracked)) != len(tracked):
        raise ValueError(f"invalid tracked subset {tracked}")

    samples = discretize(loop)
    frames_raw = _parallel_frames(family, [p for _, p in samples], gap_tol, workers)
    for (t, p), fr in zip(samples, frames_raw):
        if fr.on_ep:
            raise OnEPError(p, fr.ep_reason)

    def fresh(t: float) -> SpectralFrame:
        fr = eigen_frame(family, loop.point_at(t), gap_tol=gap_tol)
        if fr.on_ep:
            raise OnEPError(fr.point, fr.ep_reason)
        return fr

    first = replace(frames_raw[0], t=samples[0][0], phi=loop.phi_at(samples[0][0]))
    frames = [first]
    # sorted index of each label in the most recent raw frame
    label_pos = np.arange(family.dim)
    step_maps: list[np.ndarray] = []
    overlaps: list[float] = []

    for k in range(1, len(samples)):
        t_end = samples[k][0]
        pending = [(t_end, frames_raw[k], 0)]
        while pending:
            t_b, raw_b, depth = pending[-1]
            prev = frames[-1]
            aligned, perm, worst = align(family, prev, raw_b)
            if worst > overlap_tol:
                if depth >= refinement_limit:
                    raise RefinementError(
                        f"refinement limit {refinement_limit} exceeded between t={prev.t!r} "
                        f"and t={t_b!r} near {raw_b.point} (overlap deviation {worst:.3g})"
                    )
                t_mid = 0.5 * (prev.t + t_b)
                pending.append((t_mid, fresh(t_mid), depth + 1))
                continue
            pending.pop()
            # perm maps labels to sorted indices of raw_b
            step = np.empty(family.dim, dtype=int)
            step[label_pos] = perm
            step_maps.append(step)
            label_pos = perm
            overlaps.append(worst)
            frames.append(replace(aligned, t=t_b, phi=loop.phi_at(t_b)))

    full = PermutationSignature(tuple(int(i) for i in label_pos))
    sig = _restrict(full, tracked)
    return ContinuationTrack(
        frames=frames,
        match_maps=step_maps,
        signature=sig,
        full_signature=full,
        tracked=tracked,
        loop=loop,
        step_overlaps=overlaps,
    )


def _restrict(full: PermutationSignature, tracked: tuple[int, ...]) -> PermutationSignature:
    pos = {lab: k for k, lab in enumerate(tracked)}
    try:
        return PermutationSignature(tuple(pos[full.perm[lab]] for lab in tracked))
    except KeyError:
        raise ContinuationError(
            f"tracked subset {tracked} is not closed under the loop permutation {full}"
        ) from None


def _parallel_frames(family, points, gap_tol, workers):
    if workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda p: eigen_frame(family, p, gap_tol=gap_tol), points))
    return [eigen_frame(family, p, gap_tol=gap_tol) for p in points]


# -- EP detection ----------------------------------------------------------------

SPLIT_FRACTION = 0.5 * (math.sqrt(5.0) - 1.0)


@dataclass(frozen=True)
class DetectedEP:
    point: ParameterPoint
    order: int
    box: tuple[tuple[float, float], tuple[float, float]]
    status: str = "ep"


def boundary_signature(
    family: MatrixFamily,
    lo,
    hi,
    tracked: Sequence[int] | None = None,
    n_steps: int = 32,
) -> PermutationSignature:
    loop = rectangle_loop(lo, hi, n_steps=n_steps, traversal_time=1.0)
    return continue_loop(family, loop, tracked).full_signature


def detect_ep(
    family: MatrixFamily,
    search_rectangle,
    max_order: int = 3,
    rel_diameter: float = 1e-8,
    tracked: Sequence[int] | None = None,
    n_steps: int = 32,
) -> list[DetectedEP]:
    """Locate EPs inside ``((p1_lo, p2_lo), (p1_hi, p2_hi))`` by loop bisection.

    A box whose boundary has a non-identity signature is split into four
    (at the golden ratio, so an EP sitting on the centre of the search box
    never lands on a split line) until its diameter falls below
    ``rel_diameter`` times the original.  The reported order is the longest
    cycle of the box signature.  Boxes whose signature cannot be computed,
    or whose non-trivial signature is not reproduced by any child, are
    reported with ``status="undecided"``.
    """
    (a, b), (c, d) = search_rectangle
    lo, hi = (min(a, c), min(b, d)), (max(a, c), max(b, d))
    target = rel_diameter * math.hypot(hi[0] - lo[0], hi[1] - lo[1])
    found: list[DetectedEP] = []

    def sig_of(lo_, hi_):
        try:
            return boundary_signature(family, lo_, hi_, tracked, n_steps)
        except SpectralError as exc:
            log.debug("undecided box %s-%s: %s", lo_, hi_, exc)
            return None

    def centre(lo_, hi_):
        return ParameterPoint(0.5 * (lo_[0] + hi_[0]), 0.5 * (lo_[1] + hi_[1]))

    def recurse(lo_, hi_, sig):
        diam = math.hypot(hi_[0] - lo_[0], hi_[1] - lo_[1])
        if diam < target:
            status = "ep" if sig.order <= max_order else "undecided"
            found.append(DetectedEP(centre(lo_, hi_), sig.order, (lo_, hi_), status))
            return
        xm = lo_[0] + SPLIT_FRACTION * (hi_[0] - lo_[0])
        ym = lo_[1] + SPLIT_FRACTION * (hi_[1] - lo_[1])
        children = [
            ((lo_[0], lo_[1]), (xm, ym)),
            ((xm, lo_[1]), (hi_[0], ym)),
            ((lo_[0], ym), (xm, hi_[1])),
            ((xm, ym), (hi_[0], hi_[1])),
        ]
        hit = False
        for clo, chi in children:
            csig = sig_of(clo, chi)
            if csig is None:
                found.append(DetectedEP(centre(clo, chi), 0, (clo, chi), "undecided"))
                hit = True
            elif not csig.is_identity:
                recurse(clo, chi, csig)
                hit = True
        if not hit:
            found.append(DetectedEP(centre(lo_, hi_), sig.order, (lo_, hi_), "undecided"))

    top = sig_of(lo, hi)
    if top is None:
        return [DetectedEP(centre(lo, hi), 0, (lo, hi), "undecided")]
    if not top.is_identity:
        recurse(lo, hi, top)
    return found
