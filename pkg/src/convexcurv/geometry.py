"""Points, polygonal paths, the lift onto a graph, and lifted lengths.

A *surface* argument is anything with a ``function`` (vectorised callable
``(..., n) -> (...)``) and a ``domain`` exposing ``contains``; in practice a
:class:`convexcurv.metric.GraphSurface`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError

DEFAULT_LENGTH_RTOL = 1e-8
DEFAULT_M_CAP = 2**20


def as_point(x, dim: int | None = None) -> np.ndarray:
    """Return ``x`` as a finite 1-d float array, checking its dimension."""
    p = np.atleast_1d(np.asarray(x, dtype=float))
    if p.ndim != 1 or p.size == 0:
        raise DomainError(f"a point must be a non-empty vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise DomainError(f"point has non-finite coordinates: {p}")
    if dim is not None and p.size != dim:
        raise DomainError(f"expected a point of dimension {dim}, got {p.size}")
    return p


@dataclass(frozen=True, eq=False)
class PolygonalPath:
    """Breakpoints ``p_1, ..., p_k`` traversed with equal parameter time each."""

    breakpoints: np.ndarray

    def __post_init__(self) -> None:
        pts = np.array(self.breakpoints, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] < 1:
            raise DomainError("a polygonal path needs k >= 2 breakpoints of equal dimension")
        if not np.all(np.isfinite(pts)):
            raise DomainError("polygonal path has non-finite breakpoints")
        pts.setflags(write=False)
        object.__setattr__(self, "breakpoints", pts)

    @classmethod
    def segment(cls, p, q) -> PolygonalPath:
        return cls(np.vstack([as_point(p), as_point(q)]))

    @property
    def k(self) -> int:
        return self.breakpoints.shape[0]

    @property
    def dimension(self) -> int:
        return self.breakpoints.shape[1]

    @property
    def start(self) -> np.ndarray:
        return self.breakpoints[0]

    @property
    def end(self) -> np.ndarray:
        return self.breakpoints[-1]

    def __call__(self, t: float) -> np.ndarray:
        return polygonal_path_eval(self, t)

    def reversed(self) -> PolygonalPath:
        return PolygonalPath(self.breakpoints[::-1])

    def with_midpoints(self) -> PolygonalPath:
        """Insert the midpoint of every segment; the map ``t -> tau(t)`` is unchanged."""
        b = self.breakpoints
        out = np.empty((2 * b.shape[0] - 1, b.shape[1]))
        out[0::2] = b
        out[1::2] = 0.5 * (b[:-1] + b[1:])
        return PolygonalPath(out)

    def base_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.breakpoints, axis=0), axis=1).sum())

    def to_list(self) -> list[list[float]]:
        return self.breakpoints.tolist()


def polygonal_path_eval(path: PolygonalPath, t: float) -> np.ndarray:
    """Evaluate the polygonal path at ``t`` in [0, 1].

    Segment ``i`` (0-based) occupies ``[i/(k-1), (i+1)/(k-1)]`` and is the
    constant-speed linear path ``(1-s) p_i + s p_{i+1}``.
    """
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"path parameter must lie in [0, 1], got {t}")
    nseg = path.k - 1
    s = t * nseg
    i = min(int(np.floor(s)), nseg - 1)
    local = s - i
    b = path.breakpoints
    return (1.0 - local) * b[i] + local * b[i + 1]


def path_samples(path: PolygonalPath, m: int) -> np.ndarray:
    """Points ``tau(j / ((k-1) m))`` for all ``j``, i.e. ``m`` equal steps per segment."""
    if m < 1:
        raise DomainError(f"subdivision count must be >= 1, got {m}")
    b = path.breakpoints
    s = np.arange(m) / m
    starts, ends = b[:-1], b[1:]
    inner = starts[:, None, :] * (1.0 - s)[None, :, None] + ends[:, None, :] * s[None, :, None]
    return np.vstack([inner.reshape(-1, b.shape[1]), b[-1:]])


class LiftedPoint(NamedTuple):
    base: np.ndarray
    height: float

    def as_vector(self) -> np.ndarray:
        return np.append(self.base, self.height)


def _check_in_domain(surface, points: np.ndarray) -> None:
    inside = np.atleast_1d(surface.domain.contains(points))
    if not np.all(inside):
        bad = np.atleast_2d(points)[~inside][0]
        raise DomainError(f"point {bad.tolist()} lies outside the surface domain")


def lift(surface, x) -> LiftedPoint:
    """The point ``(x, f(x))`` of the graph over ``x``."""
    p = as_point(x, surface.function.dimension)
    _check_in_domain(surface, p)
    return LiftedPoint(p, float(surface.function(p)))


def lift_points(surface, points: np.ndarray) -> np.ndarray:
    """Vectorised lift of an ``(N, n)`` array to ``(N, n + 1)``; no domain check."""
    heights = np.asarray(surface.function(points), dtype=float)
    return np.hstack([points, heights[:, None]])


def polyline_length(points: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def segment_lift_length(surface, p, q, m: int) -> float:
    """Chordal length of the lifted segment ``p -> q`` using ``m`` equal steps.

    This never exceeds the true lifted length and grows under refinement.
    """
    return path_lift_length(surface, PolygonalPath.segment(p, q), m)


def path_lift_length(surface, path: PolygonalPath, m: int) -> float:
    """Sum of :func:`segment_lift_length` over consecutive breakpoints."""
    _check_in_domain(surface, path.breakpoints)
    return polyline_length(lift_points(surface, path_samples(path, m)))


def converged_path_length(
    surface,
    path: PolygonalPath,
    m: int = 256,
    rtol: float = DEFAULT_LENGTH_RTOL,
    m_cap: int = DEFAULT_M_CAP,
) -> tuple[float, int]:
    """Double ``m`` until the relative change drops below ``rtol`` (or ``m_cap``).

    Returns ``(length, m_used)``.
    """
    prev = path_lift_length(surface, path, m)
    while 2 * m <= m_cap:
        m *= 2
        cur = path_lift_length(surface, path, m)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            return cur, m
        prev = cur
    return prev, m


def points_to_json(points: Sequence) -> list:
    return np.asarray(points, dtype=float).tolist()
