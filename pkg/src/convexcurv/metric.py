"""Induced length metric on graph surfaces via polygonal-path optimisation.

Distances are estimated by minimising the chordal length of lifted
polygonal paths. Breakpoint counts follow the dyadic schedule
``k = 2, 3, 5, 9, 17, ...`` and every path is sampled at the same ``M + 1``
path parameters ``j / M``; inserting midpoints therefore leaves the sampled
curve unchanged, which makes the upper bound exactly non-increasing in ``k``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from ._random import derive_seed, rng_for
from .errors import DomainError
from .functions import FunctionSpec, QuadraticForm, Region, lipschitz_estimate
from .geometry import (
    PolygonalPath,
    _check_in_domain,
    as_point,
    lift,
    lift_points,
    path_lift_length,
    path_samples,
    polyline_length,
)


@dataclass(frozen=True, eq=False)
class GraphSurface:
    """Graph of ``function`` over the ball ``domain``.

    ``lipschitz`` is stored as ``max(1, L)``; ``bilipschitz`` is
    ``sqrt(1 + L**2)``, the distortion of the lift ``x -> (x, f(x))``.
    """

    function: FunctionSpec
    domain: Region
    lipschitz: float
    bilipschitz: float = field(init=False)

    def __post_init__(self) -> None:
        if self.domain.dimension != self.function.dimension:
            raise DomainError(f"domain dimension {self.domain.dimension} != function dimension "
                              f"{self.function.dimension}")
        if not self.domain.within(self.function.domain):
            raise DomainError("surface domain is not contained in the function's domain of definition")
        L = max(1.0, float(self.lipschitz))
        object.__setattr__(self, "lipschitz", L)
        object.__setattr__(self, "bilipschitz", math.sqrt(1.0 + L * L))

    @classmethod
    def build(cls, function: FunctionSpec, domain: Region, lipschitz: float | None = None,
              samples: int = 2000, rng_seed: int = 0) -> GraphSurface:
        if lipschitz is None:
            lipschitz = lipschitz_estimate(function, domain, samples, rng_seed)
        return cls(function, domain, lipschitz)

    @property
    def dimension(self) -> int:
        return self.function.dimension

    def to_dict(self) -> dict:
        return {"function": self.function.to_dict(), "domain": self.domain.to_dict(),
                "lipschitz": self.lipschitz}


@dataclass(frozen=True)
class DistanceOptions:
    k_max: int = 32
    m: int = 256
    tol: float = 1e-4
    multistart: int = 8
    rng_seed: int = 0
    #: largest total subdivision reached by m-doubling
    m_max: int = 4096
    #: optimiser iterations per breakpoint level
    max_iter: int = 200

    def __post_init__(self) -> None:
        if self.k_max < 2 or self.m < 1 or not self.tol > 0 or self.multistart < 1 or self.m_max < self.m:
            raise DomainError(f"invalid distance options: {self}")

    def with_seed(self, seed: int) -> DistanceOptions:
        return replace(self, rng_seed=seed)

    @classmethod
    def from_dict(cls, d: dict) -> DistanceOptions:
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True, eq=False)
class DistanceEstimate:
    """Intrinsic distance with bounds and its witnessing path.

    ``lower_bound`` is the ambient chord between the lifted endpoints.
    ``upper_bound`` is the lifted length of ``witness``, extrapolated by one
    m-doubling step and capped by ``sqrt(1 + L^2) |a - b|``. ``error`` is
    the numerical resolution of ``value``: the last k-increment change plus
    the last m-doubling change.
    """

    value: float
    lower_bound: float
    upper_bound: float
    witness: PolygonalPath
    k: int
    m: int
    converged: bool
    error: float = 0.0
    history: tuple = ()

    def reversed(self) -> DistanceEstimate:
        return replace(self, witness=self.witness.reversed())

    def resolution_interval(self) -> tuple[float, float]:
        return (max(self.lower_bound, self.value - self.error), min(self.upper_bound, self.value + self.error))

    def to_dict(self) -> dict:
        return {"value": self.value, "lower": self.lower_bound, "upper": self.upper_bound, "k": self.k,
                "m": self.m, "converged": self.converged, "error": self.error,
                "witness": self.witness.to_list()}


class _PathLength:
    """Sampled lifted length of paths with fixed endpoints, with its gradient.

    Interior breakpoints are free variables; they are radially projected onto
    the surface domain before evaluation.
    """

    def __init__(self, surface: GraphSurface, a: np.ndarray, b: np.ndarray, k: int, M: int) -> None:
        self.surface, self.a, self.b, self.k = surface, a, b, k
        m = M // (k - 1)
        s = np.arange(m) / m
        W = np.zeros((M + 1, k))
        for i in range(k - 1):
            rows = slice(i * m, (i + 1) * m)
            W[rows, i] = 1.0 - s
            W[rows, i + 1] = s
        W[M, k - 1] = 1.0
        self.W = W

    def breakpoints(self, v: np.ndarray) -> np.ndarray:
        inner = self.surface.domain.project(v.reshape(self.k - 2, -1))
        return np.vstack([self.a, inner, self.b])

    def __call__(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        n = self.a.size
        raw = v.reshape(self.k - 2, n)
        B = self.breakpoints(v)
        X = self.W @ B
        fx, gf = self.surface.function._eval_grad(X)
        DX = np.diff(X, axis=0)
        Df = np.diff(np.asarray(fx, dtype=float))
        ell = np.sqrt(np.einsum("ij,ij->i", DX, DX) + Df * Df)
        inv = 1.0 / np.where(ell > 0, ell, 1.0)
        Ux, Uf = DX * inv[:, None], Df * inv
        gX = np.zeros_like(X)
        gX[:-1] -= Ux
        gX[1:] += Ux
        gz = np.zeros(X.shape[0])
        gz[:-1] -= Uf
        gz[1:] += Uf
        gX += gz[:, None] * gf
        gB = (self.W.T @ gX)[1:-1]
        # chain rule through the radial projection for points outside the ball
        d = raw - self.surface.domain.center
        r = np.sqrt(np.einsum("ij,ij->i", d, d))
        R = self.surface.domain.radius
        out = r > R
        if out.any():
            dh = d[out] / r[out, None]
            g = gB[out]
            gB[out] = (R / r[out, None]) * (g - dh * np.einsum("ij,ij->i", dh, g)[:, None])
        return float(ell.sum()), gB.ravel()


def _sampled_length(surface: GraphSurface, path: PolygonalPath, M: int) -> float:
    return polyline_length(lift_points(surface, path_samples(path, M // (path.k - 1))))


def _straight_is_geodesic(surface: GraphSurface) -> bool:
    f = surface.function
    return surface.dimension == 1 or (isinstance(f, QuadraticForm) and f.is_affine)


def _optimize(surface, a, b, seed_path: PolygonalPath, M: int, max_iter: int) -> tuple[PolygonalPath, float]:
    obj = _PathLength(surface, a, b, seed_path.k, M)
    v0 = seed_path.breakpoints[1:-1].ravel()
    J0, _ = obj(v0)
    res = minimize(obj, v0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": 1e-12, "gtol": 1e-10})
    J1, _ = obj(res.x)
    if J1 <= J0:
        return PolygonalPath(obj.breakpoints(res.x)), J1
    return seed_path, J0


def _relative(change: float, scale: float) -> float:
    return change / scale if scale > 0 else 0.0


def _dyadic_levels(k_max: int) -> list[int]:
    levels, k = [], 3
    while k <= k_max:
        levels.append(k)
        k = 2 * k - 1
    return levels


def _estimate(surface: GraphSurface, a: np.ndarray, b: np.ndarray, opts: DistanceOptions) -> DistanceEstimate:
    chord = float(np.linalg.norm(lift(surface, a).as_vector() - lift(surface, b).as_vector()))
    cap = surface.bilipschitz * float(np.linalg.norm(a - b))
    M = opts.m
    path = PolygonalPath.segment(a, b)
    J = _sampled_length(surface, path, M)
    history = [(2, M, J)]
    change_k = 0.0 if _straight_is_geodesic(surface) else math.inf
    abs_change_k = 0.0
    converged = False
    if not _straight_is_geodesic(surface):
        rng = rng_for(opts.rng_seed, "distance-multistart")
        for k in _dyadic_levels(opts.k_max):
            if M % (k - 1):
                break
            seeds = [path.with_midpoints()]
            if k == 3:
                mid = seeds[0].breakpoints[1]
                scale = 0.1 * float(np.linalg.norm(b - a))
                for _ in range(opts.multistart - 1):
                    jittered = surface.domain.project(mid + scale * rng.standard_normal(mid.size))
                    seeds.append(PolygonalPath(np.vstack([a, jittered, b])))
            results = [_optimize(surface, a, b, s, M, opts.max_iter) for s in seeds]
            new_path, new_J = min(results, key=lambda r: r[1])
            if new_J > J:  # the warm start is one of the seeds; keep it
                new_path, new_J = seeds[0], J
            abs_change_k = J - new_J
            change_k = _relative(abs_change_k, J)
            path, J = new_path, new_J
            history.append((k, M, J))
            change_m = _relative(_sampled_length(surface, path, 2 * M) - J, J)
            if change_k < opts.tol and change_m < opts.tol:
                converged = True
                break
            if change_m >= opts.tol and 2 * M <= opts.m_max:
                M *= 2
                J = _sampled_length(surface, path, M)
                history.append((path.k, M, J))
    J_M = _sampled_length(surface, path, M)
    J_2M = _sampled_length(surface, path, 2 * M)
    change_m = _relative(J_2M - J_M, J_M)
    if _straight_is_geodesic(surface):
        converged = change_m < opts.tol
    else:
        converged = converged or (change_k < opts.tol and change_m < opts.tol)
    value = J_2M
    upper = max(value, min(2.0 * J_2M - J_M, cap))
    return DistanceEstimate(value=value, lower_bound=min(chord, value), upper_bound=upper, witness=path,
                            k=path.k, m=2 * M, converged=bool(converged),
                            error=float((J_2M - J_M) + abs_change_k), history=tuple(history))


def intrinsic_distance(surface: GraphSurface, a, b, opts: DistanceOptions | None = None) -> DistanceEstimate:
    """Estimate the intrinsic distance between the lifts of ``a`` and ``b``.

    The pair is put in lexicographic order before the search so that
    ``(a, b)`` and ``(b, a)`` give identical numbers; the witness is then
    reversed if needed.
    """
    opts = opts or DistanceOptions()
    a = as_point(a, surface.dimension)
    b = as_point(b, surface.dimension)
    _check_in_domain(surface, np.vstack([a, b]))
    if np.array_equal(a, b):
        return DistanceEstimate(0.0, 0.0, 0.0, PolygonalPath(np.vstack([a, b])), 2, opts.m, True)
    if tuple(b) < tuple(a):
        return _estimate(surface, b, a, opts).reversed()
    return _estimate(surface, a, b, opts)


def refine_path(surface: GraphSurface, path: PolygonalPath, m: int = 64, iterations: int = 100,
                step_tol: float = 1e-12) -> PolygonalPath:
    """Coordinate-wise pattern search on the interior breakpoints.

    Endpoints stay fixed; moved points are projected back into the domain.
    The lifted length (at ``m`` steps per segment) never increases.
    """
    B = np.array(path.breakpoints)
    if B.shape[0] <= 2:
        return path
    current = path_lift_length(surface, path, m)
    step = 0.25 * max(path.base_length() / (B.shape[0] - 1), 1e-9)
    for _ in range(iterations):
        moved = False
        for i in range(1, B.shape[0] - 1):
            for d in range(B.shape[1]):
                for sign in (1.0, -1.0):
                    trial = B.copy()
                    trial[i, d] += sign * step
                    trial[i] = surface.domain.project(trial[i])
                    value = path_lift_length(surface, PolygonalPath(trial), m)
                    if value < current:
                        B, current, moved = trial, value, True
                        break
        if not moved:
            step *= 0.5
            if step < step_tol:
                break
    return PolygonalPath(B)


def _pair_job(args):
    surface, a, b, opts = args
    return intrinsic_distance(surface, a, b, opts)


def distance_matrix(surface: GraphSurface, points, opts: DistanceOptions | None = None,
                    jobs: int = 1) -> list[list[DistanceEstimate]]:
    """All pairwise estimates; entry ``(i, j)`` uses seed ``hash(seed, i, j)`` with ``i < j``."""
    opts = opts or DistanceOptions()
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] < 2:
        raise DomainError("distance_matrix needs at least two points")
    _check_in_domain(surface, P)
    pairs = [(i, j) for i in range(len(P)) for j in range(i + 1, len(P))]
    tasks = [(surface, P[i], P[j], opts.with_seed(derive_seed(opts.rng_seed, "pair", i, j))) for i, j in pairs]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_pair_job, tasks))
    else:
        results = [_pair_job(t) for t in tasks]
    out: list[list[DistanceEstimate | None]] = [[None] * len(P) for _ in range(len(P))]
    for i in range(len(P)):
        out[i][i] = DistanceEstimate(0.0, 0.0, 0.0, PolygonalPath(np.vstack([P[i], P[i]])), 2, opts.m, True)
    for (i, j), est in zip(pairs, results):
        out[i][j] = est
        out[j][i] = est.reversed()
    return out  # type: ignore[return-value]
