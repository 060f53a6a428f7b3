"""Closed paths in the parameter plane.

Three shapes are supported:

``relative``
    gamma = g0 * (1 + delta * (s + cos phi)),  f = f0 * (1 + delta * sin phi)
``absolute``
    p = center + delta * (s + cos phi, sin phi)
``polygon``
    piecewise-linear path through ``vertices``; each edge spans an equal share
    of phi, so corners are samples whenever ``n_steps`` is a multiple of the
    vertex count

Time runs at uniform angular speed, ``phi(t) = direction * 2 pi t / T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .family import ParameterPoint

# 1 atomic unit of time in seconds
AU_TIME_SECONDS = 2.418884e-17

MODES = ("relative", "absolute", "polygon")


@dataclass(frozen=True)
class ParameterLoop:
    center: ParameterPoint = ParameterPoint(0.0, 0.0)
    delta: float = 0.01
    shift: float = 0.0
    n_steps: int = 256
    traversal_time: float = 1.0
    direction: int = 1
    turns: int = 1
    mode: str = "relative"
    vertices: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not isinstance(self.center, ParameterPoint):
            object.__setattr__(self, "center", ParameterPoint(*self.center))
        if self.delta < 0 or not math.isfinite(self.delta):
            raise ValueError(f"delta must be non-negative, got {self.delta}")
        if self.n_steps < 8:
            raise ValueError(f"n_steps must be >= 8, got {self.n_steps}")
        if not self.traversal_time > 0:
            raise ValueError(f"traversal_time must be positive, got {self.traversal_time}")
        if self.direction not in (1, -1):
            raise ValueError(f"direction must be +1 or -1, got {self.direction}")
        if self.turns < 1:
            raise ValueError(f"turns must be >= 1, got {self.turns}")
        if self.mode == "polygon":
            verts = tuple((float(a), float(b)) for a, b in self.vertices)
            if len(verts) < 3:
                raise ValueError("polygon loops need at least 3 vertices")
            object.__setattr__(self, "vertices", verts)
            pts = np.array(verts + verts[:1])
            if np.any(np.hypot(*np.diff(pts, axis=0).T) == 0):
                raise ValueError("polygon has repeated consecutive vertices")

    @property
    def total_time(self) -> float:
        return self.traversal_time * self.turns

    @property
    def angular_speed(self) -> float:
        return self.direction * 2 * math.pi / self.traversal_time

    def phi_at(self, t: float) -> float:
        return self.angular_speed * t

    def point_at(self, t: float) -> ParameterPoint:
        return loop_point(self, self.phi_at(t))

    def velocity_at(self, t: float) -> np.ndarray:
        """``dp/dt`` at time ``t`` (one-sided from the right at polygon corners)."""
        return loop_tangent(self, self.phi_at(t)) * self.angular_speed

    def polygon_corner_phis(self) -> np.ndarray:
        if self.mode != "polygon":
            return np.empty(0)
        return 2 * math.pi * np.arange(len(self.vertices)) / len(self.vertices)


def polygon_loop(vertices, **kwargs) -> ParameterLoop:
    return ParameterLoop(mode="polygon", vertices=tuple(vertices), **kwargs)


def rectangle_loop(lo, hi, **kwargs) -> ParameterLoop:
    """Counter-clockwise boundary of the axis-aligned box ``[lo, hi]``."""
    (a, b), (c, d) = lo, hi
    return polygon_loop([(a, b), (c, b), (c, d), (a, d)], **kwargs)


def _polygon_position(loop: ParameterLoop, phi: float) -> tuple[np.ndarray, np.ndarray]:
    nv = len(loop.vertices)
    x = ((phi / (2 * math.pi)) % 1.0) * nv
    k = min(int(x), nv - 1)
    u = x - k
    a = np.array(loop.vertices[k])
    b = np.array(loop.vertices[(k + 1) % nv])
    return a + u * (b - a), (b - a) * nv / (2 * math.pi)


def loop_point(loop: ParameterLoop, phi: float) -> ParameterPoint:
    if loop.mode == "polygon":
        p = _polygon_position(loop, phi)[0]
        return ParameterPoint(float(p[0]), float(p[1]))
    c, s, d = math.cos(phi), math.sin(phi), loop.delta
    g0, f0 = loop.center.p1, loop.center.p2
    if loop.mode == "relative":
        return ParameterPoint(g0 * (1 + d * (loop.shift + c)), f0 * (1 + d * s))
    return ParameterPoint(g0 + d * (loop.shift + c), f0 + d * s)


def loop_tangent(loop: ParameterLoop, phi: float) -> np.ndarray:
    """``dp/dphi``."""
    if loop.mode == "polygon":
        return _polygon_position(loop, phi)[1]
    c, s, d = math.cos(phi), math.sin(phi), loop.delta
    if loop.mode == "relative":
        return np.array([-loop.center.p1 * d * s, loop.center.p2 * d * c])
    return np.array([-d * s, d * c])


def discretize(loop: ParameterLoop) -> list[tuple[float, ParameterPoint]]:
    """``n_steps * turns + 1`` samples at uniform phi spacing; last equals first."""
    n = loop.n_steps * loop.turns
    dt = loop.traversal_time / loop.n_steps
    out = []
    for k in range(n + 1):
        t = k * dt
        # wrap phi into one turn so closure is exact in floating point
        phi = loop.direction * 2 * math.pi * ((k % loop.n_steps) / loop.n_steps)
        out.append((t, loop_point(loop, phi)))
    return out


def winding_number(loop: ParameterLoop, point, n: int | None = None) -> int:
    """Winding number of the loop (one turn) around ``point`` by angle summation."""
    if isinstance(point, ParameterPoint):
        x0, y0 = point.p1, point.p2
    else:
        x0, y0 = point
    n = n or max(loop.n_steps, 64)
    phis = loop.direction * 2 * math.pi * np.arange(n + 1) / n
    if loop.mode == "polygon":
        phis = np.union1d(phis, loop.direction * loop.polygon_corner_phis())
        phis = phis[::-1] if loop.direction < 0 else phis
    pts = np.array([loop_point(loop, ph).as_array() for ph in phis])
    ang = np.arctan2(pts[:, 1] - y0, pts[:, 0] - x0)
    dang = np.diff(ang)
    dang = (dang + math.pi) % (2 * math.pi) - math.pi
    return int(round(dang.sum() / (2 * math.pi)))
