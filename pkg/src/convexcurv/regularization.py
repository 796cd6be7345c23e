"""Convexity-preserving smoothing: mollification and inf-sup convolution.

``Mollified`` evaluates ``sum_q w_q f(x - delta y_q)`` with non-negative,
symmetric quadrature weights of the bump ``exp(-1/(1 - |y|^2))`` on the unit
ball; as a convex combination of translates it is exactly convex and exactly
``L``-Lipschitz whenever ``f`` is, and it reproduces affine functions.

``InfSupConvolution`` evaluates

    g(x) = inf_z sup_y [ f(y) - |y - z|^2 / (2 eps) + |x - z|^2 / eps ]

by nested, vectorised grid search with zoom refinement. For ``L``-Lipschitz
``f`` the inner maximiser satisfies ``|y - z| <= L eps`` and the outer
minimiser ``|z - x| <= L eps / 2``, so both searches run on windows twice
that size around their centre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, ClassVar

import numpy as np
from scipy.stats import qmc

from ._random import rng_for
from .errors import DomainError, PreconditionError, UnreliableEvaluationError, UnsupportedOperationError
from .functions import (
    FunctionSpec,
    Region,
    convexity_check,
    finite_difference_gradient,
    lipschitz_estimate,
    register,
    sampled_lipschitz,
    spec_from_dict,
)
from .geometry import PolygonalPath, converged_path_length

DEFAULT_GAUSS_POINTS = 32
DEFAULT_QMC_SAMPLES = 2**14
_CHUNK = 2_000_000  # max points per inner evaluation call


def _bump(r2: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def default_quadrature(n: int) -> dict:
    if n <= 3:
        return {"kind": "tensor_gauss", "points": DEFAULT_GAUSS_POINTS}
    return {"kind": "quasi_monte_carlo", "samples": DEFAULT_QMC_SAMPLES, "seed": 0}


@lru_cache(maxsize=32)
def _unit_rule(n: int, kind: str, size: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nodes in the unit ball, raw cube weights and bump values."""
    if kind == "tensor_gauss":
        if n > 3:
            raise DomainError("tensor Gauss quadrature is limited to n <= 3")
        x, w = np.polynomial.legendre.leggauss(size)
        grids = np.meshgrid(*([x] * n), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        raw = np.prod(np.stack(np.meshgrid(*([w] * n), indexing="ij")).reshape(n, -1), axis=0)
    elif kind == "quasi_monte_carlo":
        half = qmc.Sobol(d=n, scramble=True, seed=seed).random(size // 2) * 2.0 - 1.0
        nodes = np.vstack([half, -half])  # antithetic pairs keep the rule symmetric
        raw = np.full(nodes.shape[0], 2.0**n / nodes.shape[0])
    else:
        raise DomainError(f"unknown quadrature kind {kind!r}")
    bump = _bump(np.sum(nodes**2, axis=1))
    keep = bump > 0
    return nodes[keep], raw[keep], bump[keep]


def _rule_key(n: int, quadrature: dict) -> tuple[int, str, int, int]:
    kind = quadrature.get("kind", "tensor_gauss")
    size = int(quadrature.get("points", DEFAULT_GAUSS_POINTS) if kind == "tensor_gauss"
               else quadrature.get("samples", DEFAULT_QMC_SAMPLES))
    if size < 2:
        raise DomainError("quadrature needs at least 2 points")
    return n, kind, size, int(quadrature.get("seed", 0))


def mollifier_constant(n: int, delta: float, quadrature: dict | None = None) -> float:
    """Normalisation ``c`` making the quadrature integral of the bump equal to 1."""
    _, raw, bump = _unit_rule(*_rule_key(n, quadrature or default_quadrature(n)))
    return 1.0 / (delta**n * float(raw @ bump))


def mollifier_weight(x, delta: float, quadrature: dict | None = None) -> float:
    """``c exp(-1/(1 - |x/delta|^2))`` inside the ``delta``-ball, else 0."""
    if not delta > 0:
        raise DomainError("delta must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    r2 = float(np.sum((x / delta) ** 2))
    if r2 >= 1.0:
        return 0.0
    return mollifier_constant(x.size, delta, quadrature) * math.exp(-1.0 / (1.0 - r2))


@dataclass(frozen=True)
class MollifierParams:
    delta: float
    quadrature: dict | None = None

    def __post_init__(self) -> None:
        if not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta}")


def _require_convex(spec: FunctionSpec, what: str) -> None:
    if not spec.convex:
        raise UnsupportedOperationError(f"{what} requires a convex function; {spec.family} is not convex")


def _chunked(fun, Y: np.ndarray) -> np.ndarray:
    """Evaluate ``fun`` on ``Y`` of shape (N, Q, n) in memory-bounded chunks."""
    N, Q, _ = Y.shape
    rows = max(1, _CHUNK // max(Q, 1))
    if N <= rows:
        return np.asarray(fun(Y))
    return np.concatenate([np.asarray(fun(Y[i:i + rows])) for i in range(0, N, rows)])


@register
@dataclass(frozen=True, eq=False)
class Mollified(FunctionSpec):
    """Quadrature approximation of ``f * phi_delta``."""

    inner: FunctionSpec
    delta: float
    quadrature: dict = field(default_factory=dict)
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    family: ClassVar[str] = "mollified"
    convex: ClassVar[bool] = True

    def __post_init__(self) -> None:
        _require_convex(self.inner, "mollification")
        if not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta}")
        dom = self.inner.domain
        if dom is not None and not self.delta < dom.radius / 2:
            raise PreconditionError(f"delta={self.delta} must be < R/2 = {dom.radius / 2}")
        quad = dict(self.quadrature) or default_quadrature(self.inner.dimension)
        nodes, raw, bump = _unit_rule(*_rule_key(self.inner.dimension, quad))
        w = raw * bump
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "quadrature", quad)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", w / w.sum())

    @property
    def dimension(self) -> int:
        return self.inner.dimension

    @property
    def smooth(self) -> bool:
        return self.inner.smooth

    @property
    def level(self) -> float:
        return self.delta

    @property
    def domain(self) -> Region | None:
        dom = self.inner.domain
        return None if dom is None else dom.shrunk(self.delta)

    def _check_erosion(self, X):
        dom = self.domain
        if dom is not None and not np.all(dom.contains(X)):
            raise DomainError(f"mollified evaluation within delta={self.delta} of the domain boundary")

    def _eval(self, X):
        self._check_erosion(X)
        flat = X.reshape(-1, self.dimension)
        Y = flat[:, None, :] - self.delta * self.nodes[None, :, :]
        return (_chunked(self.inner._eval, Y) @ self.weights).reshape(X.shape[:-1])

    def _grad(self, X):
        self._check_erosion(X)
        flat = X.reshape(-1, self.dimension)
        Y = flat[:, None, :] - self.delta * self.nodes[None, :, :]
        G = _chunked(self.inner._grad, Y)
        return np.einsum("nqi,q->ni", G, self.weights).reshape(X.shape)

    def lipschitz_bound(self, region):
        return self.inner.lipschitz_bound(Region(region.center, region.radius + self.delta))

    def params(self):
        return {"inner": self.inner.to_dict(), "delta": self.delta, "quadrature": self.quadrature}

    @classmethod
    def from_params(cls, params, dimension):
        return cls(spec_from_dict(params["inner"]), params["delta"], params.get("quadrature") or {})


def mollify(spec: FunctionSpec, params: MollifierParams) -> Mollified:
    return Mollified(spec, params.delta, params.quadrature or {})


# --------------------------------------------------------------------------
# inf-sup convolution


def _offsets(n: int, g: int) -> np.ndarray:
    ax = np.linspace(-1.0, 1.0, g)
    grids = np.meshgrid(*([ax] * n), indexing="ij")
    return np.stack([m.ravel() for m in grids], axis=1)


@dataclass(frozen=True)
class InfSupParams:
    epsilon: float
    search_domain: Region
    #: grid points per axis for the initial window search
    grid: int | None = None
    #: grid points per axis for each zoom level
    zoom: int | None = None
    lipschitz: float | None = None

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")


@register
@dataclass(frozen=True, eq=False)
class InfSupConvolution(FunctionSpec):
    inner: FunctionSpec
    epsilon: float
    search_domain: Region
    lipschitz: float | None = None
    grid: int | None = None
    zoom: int | None = None
    candidates: int | None = None

    family: ClassVar[str] = "inf_sup"
    convex: ClassVar[bool] = True
    smooth: ClassVar[bool] = True

    def __post_init__(self) -> None:
        _require_convex(self.inner, "inf-sup convolution")
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if self.search_domain.dimension != self.inner.dimension:
            raise DomainError("search domain dimension mismatch")
        if not self.search_domain.within(self.inner.domain):
            raise DomainError("search domain exceeds the inner function's domain")
        L = self.lipschitz
        if L is None:
            L = lipschitz_estimate(self.inner, self.search_domain, 2000, 0)
        n = self.inner.dimension
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "lipschitz", max(1.0, float(L)))
        object.__setattr__(self, "grid", int(self.grid or (64 if n == 1 else 9)))
        object.__setattr__(self, "zoom", int(self.zoom or (17 if n == 1 else 9)))
        object.__setattr__(self, "candidates", int(self.candidates or (3 if n == 1 else 1)))
        if self.grid < 3 or self.zoom < 3:
            raise DomainError("grid and zoom need at least 3 points per axis")
        if 1.5 * self.lipschitz * self.epsilon >= self.search_domain.radius:
            raise PreconditionError("epsilon too large: the search domain has no interior evaluation region")

    @property
    def dimension(self) -> int:
        return self.inner.dimension

    @property
    def level(self) -> float:
        return self.epsilon

    @property
    def margin(self) -> float:
        return 1.5 * self.lipschitz * self.epsilon

    @property
    def domain(self) -> Region:
        return self.search_domain.shrunk(self.margin)

    def _zoom_levels(self, spacing: float) -> int:
        shrink = (self.zoom - 1) / 2.0
        target = 1e-12 * max(1.0, self.search_domain.radius)
        return max(1, math.ceil(math.log(max(spacing, target) / target) / math.log(shrink)))

    def _inner_objective(self, Y, Z):
        vals = np.asarray(self.inner._eval(Y)) - np.sum((Y - Z) ** 2, axis=-1) / (2 * self.epsilon)
        return np.where(self.search_domain.contains(Y), vals, -np.inf)

    def sup_convolution(self, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``sup_y f(y) - |y - z|^2/(2 eps)`` for ``Z`` of shape (N, n); returns values and maximisers."""
        n = self.dimension
        w = 2.0 * self.lipschitz * self.epsilon
        off = _offsets(n, self.grid) * w
        Y = Z[:, None, :] + off[None]
        V = self._inner_objective(Y, Z[:, None, :])
        K = min(self.candidates, off.shape[0])
        if n == 1:
            left = np.concatenate([np.full((V.shape[0], 1), -np.inf), V[:, :-1]], axis=1)
            right = np.concatenate([V[:, 1:], np.full((V.shape[0], 1), -np.inf)], axis=1)
            ranked = np.where((V >= left) & (V >= right), V, -np.inf)
        else:
            ranked = V
        idx = np.argsort(-ranked, axis=1, kind="stable")[:, :K]
        centers = np.take_along_axis(Y, idx[:, :, None], axis=1)  # (N, K, n)
        h = 2.0 * w / (self.grid - 1)
        zoff = _offsets(n, self.zoom)
        for _ in range(self._zoom_levels(h)):
            cand = centers[:, :, None, :] + h * zoff[None, None]
            vals = self._inner_objective(cand, Z[:, None, None, :])
            best = np.argmax(vals, axis=2)
            centers = np.take_along_axis(cand, best[:, :, None, None], axis=2)[:, :, 0, :]
            h *= 2.0 / (self.zoom - 1)
        final = self._inner_objective(centers, Z[:, None, :])
        k = np.argmax(final, axis=1)
        ystar = np.take_along_axis(centers, k[:, None, None], axis=1)[:, 0, :]
        value = np.take_along_axis(final, k[:, None], axis=1)[:, 0]
        self._check_interior(ystar, Z, w, "inner sup")
        return value, ystar

    def _check_interior(self, opt, centre, w, what):
        on_domain_edge = np.linalg.norm(opt - self.search_domain.center, axis=-1) >= self.search_domain.radius * (1 - 1e-9)
        on_window_edge = np.max(np.abs(opt - centre), axis=-1) >= w * (1 - 1e-6)
        if np.any(on_domain_edge | on_window_edge):
            raise UnreliableEvaluationError(f"{what} attained on the boundary of its search set; "
                                            "shrink epsilon or enlarge the search domain")

    def _outer_objective(self, Z, X):
        shape = Z.shape[:-1]
        flat = Z.reshape(-1, self.dimension)
        sup, _ = self.sup_convolution(flat)
        return sup.reshape(shape) + np.sum((X - Z) ** 2, axis=-1) / self.epsilon

    def _eval(self, X):
        if not np.all(self.domain.contains(X)):
            raise DomainError(f"inf-sup evaluation needs points within {self.domain.radius} of the search centre")
        n = self.dimension
        flat = X.reshape(-1, n)
        w = self.lipschitz * self.epsilon
        off = _offsets(n, self.grid) * w
        Z = flat[:, None, :] + off[None]
        V = self._outer_objective(Z, flat[:, None, :])
        centers = np.take_along_axis(Z, np.argmin(V, axis=1)[:, None, None], axis=1)[:, 0, :]
        h = 2.0 * w / (self.grid - 1)
        zoff = _offsets(n, self.zoom)
        for _ in range(self._zoom_levels(h)):
            cand = centers[:, None, :] + h * zoff[None]
            vals = self._outer_objective(cand, flat[:, None, :])
            centers = np.take_along_axis(cand, np.argmin(vals, axis=1)[:, None, None], axis=1)[:, 0, :]
            h *= 2.0 / (self.zoom - 1)
        value = self._outer_objective(centers[:, None, :], flat[:, None, :])[:, 0]
        self._check_interior(centers, flat, w, "outer inf")
        return value.reshape(X.shape[:-1])

    def _grad(self, X):
        h = 1e-5 * max(self.epsilon, 1e-3)
        return finite_difference_gradient(self._eval, X, h)

    def lipschitz_bound(self, region):
        return self.inner.lipschitz_bound(region)

    def params(self):
        return {"inner": self.inner.to_dict(), "epsilon": self.epsilon,
                "search_domain": self.search_domain.to_dict(), "lipschitz": self.lipschitz,
                "grid": self.grid, "zoom": self.zoom}

    @classmethod
    def from_params(cls, params, dimension):
        return cls(spec_from_dict(params["inner"]), params["epsilon"], Region.from_dict(params["search_domain"]),
                   params.get("lipschitz"), params.get("grid"), params.get("zoom"))


def inf_sup_convolution(spec: FunctionSpec, params: InfSupParams) -> InfSupConvolution:
    return InfSupConvolution(spec, params.epsilon, params.search_domain, params.lipschitz, params.grid, params.zoom)


# --------------------------------------------------------------------------
# property report


@dataclass
class RegularizationReport:
    kind: str
    level: float
    lipschitz: float
    sup_dev: float
    lip_ratio: float
    convexity_violations: int
    convexity_gap: float
    grad_dev: float | None = None
    length_dev: float | None = None
    second_diff_max: float | None = None
    second_diff_bound: float | None = None
    failures: list[str] = field(default_factory=list)

    TABLE_COLUMNS: ClassVar[tuple[str, ...]] = ("level", "sup_dev", "lip_ratio", "convexity_gap", "grad_dev",
                                                "length_dev", "second_diff_max")

    def row(self) -> dict[str, Any]:
        return {c: getattr(self, c) for c in self.TABLE_COLUMNS}

    def to_dict(self) -> dict:
        return {"kind": self.kind, "level": self.level, "lipschitz": self.lipschitz, "sup_dev": self.sup_dev,
                "lip_ratio": self.lip_ratio, "convexity": {"violations": self.convexity_violations,
                                                           "worst_gap": self.convexity_gap},
                "grad_dev": self.grad_dev, "length_dev": self.length_dev,
                "second_diff_max": self.second_diff_max, "second_diff_bound": self.second_diff_bound,
                "failures": list(self.failures)}


def probe_paths(region: Region, count: int, rng: np.random.Generator) -> list[PolygonalPath]:
    """Axis diameters of the region plus ``count`` random chords inside it."""
    n, c, r = region.dimension, region.center, region.radius
    paths = [PolygonalPath(np.vstack([c - r * e, c + r * e])) for e in np.eye(n)]
    for _ in range(count):
        p, q = region.sample(rng, 2)
        paths.append(PolygonalPath(np.vstack([p, q])))
    return paths


class _Graph:
    def __init__(self, function, domain):
        self.function, self.domain = function, domain


def axis_grid(region: Region, points: int) -> np.ndarray:
    """``points`` equally spaced points on each axis diameter of the region."""
    if points < 2:
        return np.empty((0, region.dimension))
    s = np.linspace(-region.radius, region.radius, points)
    return np.vstack([region.center + s[:, None] * e for e in np.eye(region.dimension)])


def regularization_report(original: FunctionSpec, regularized: FunctionSpec, region: Region, probes: int = 64,
                          rng_seed: int = 0, length_paths: int = 4, length_rtol: float = 1e-9,
                          length_m_cap: int = 2**16, axis_points: int = 129) -> RegularizationReport:
    """Measure the properties a regularisation is supposed to keep.

    Deviations are taken over the centre, ``probes`` random points and an
    ``axis_points`` grid on each axis diameter; the grid keeps kinks of
    piecewise inputs from slipping between random probes at small levels.
    """
    kind = regularized.family
    level = float(getattr(regularized, "level", math.nan))
    rng = rng_for(rng_seed, "regularization", kind, level)
    failures: list[str] = []
    L = lipschitz_estimate(original, region, 2000, rng_seed)

    X = np.vstack([region.center, region.sample(rng, max(probes - 1, 1)), axis_grid(region, axis_points)])
    sup_dev = float(np.max(np.abs(np.asarray(regularized(X)) - np.asarray(original(X)))))
    lip = sampled_lipschitz(regularized, region, probes, rng_seed)
    conv = convexity_check(regularized, region, probes, 1e-9, rng_seed)

    grad_dev = None
    if original.smooth:
        h = level / 100 if math.isfinite(level) else 1e-6
        inner = region.shrunk(h) if h < region.radius else region
        Xg = inner.project(X)
        fd = finite_difference_gradient(lambda A: np.asarray(regularized(A)), Xg, h)
        grad_dev = float(np.max(np.linalg.norm(fd - original.gradient(Xg), axis=-1)))

    length_dev = None
    if kind == "mollified":
        devs = []
        for path in probe_paths(region, length_paths, rng):
            try:
                lf, _ = converged_path_length(_Graph(original, region), path, 256, length_rtol, length_m_cap)
                lg, _ = converged_path_length(_Graph(regularized, region), path, 256, length_rtol, length_m_cap)
                devs.append(abs(lg - lf))
            except Exception as exc:  # recorded, not fatal
                failures.append(f"length probe: {exc}")
        length_dev = max(devs) if devs else None

    second_max = second_bound = None
    if kind == "inf_sup":
        h = level / 10
        inner = region.shrunk(h)
        Xs = inner.project(X)
        worst = -math.inf
        for e in np.eye(region.dimension):
            d2 = (np.asarray(regularized(Xs + h * e)) - 2 * np.asarray(regularized(Xs))
                  + np.asarray(regularized(Xs - h * e))) / h**2
            worst = max(worst, float(np.max(d2)))
        second_max = worst
        second_bound = 2.0 / level

    return RegularizationReport(kind=kind, level=level, lipschitz=L, sup_dev=sup_dev, lip_ratio=lip / L,
                                convexity_violations=conv.violations, convexity_gap=conv.worst_gap,
                                grad_dev=grad_dev, length_dev=length_dev, second_diff_max=second_max,
                                second_diff_bound=second_bound, failures=failures)
