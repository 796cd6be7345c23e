"""Convex (and deliberately nonconvex) function families on R^n.

Every family is an immutable value object that evaluates vectorised:
``spec(X)`` accepts an array of shape ``(..., n)`` and returns ``(...)``.
Families serialise to ``{"family": ..., "dimension": ..., "params": {...}}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, ClassVar

import numpy as np
from scipy.optimize import nnls

from ._random import rng_for
from .errors import (
    ChartRadiusError,
    DegenerateSpanError,
    DomainError,
    EvaluationError,
    PreconditionError,
    UnsupportedOperationError,
)
from .geometry import as_point

GRAM_SCHMIDT_RTOL = 1e-12
BOUNDARY_SLACK = 1e-10
KINK_RTOL = 1e-12

FAMILIES: dict[str, type[FunctionSpec]] = {}


def register(cls):
    FAMILIES[cls.family] = cls
    return cls


# --------------------------------------------------------------------------
# regions


@dataclass(frozen=True, eq=False)
class Region:
    """Closed Euclidean ball ``B_R(center)``, optionally cut by a box."""

    center: np.ndarray
    radius: float
    box: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self) -> None:
        c = as_point(self.center)
        object.__setattr__(self, "center", c)
        r = float(self.radius)
        if not (r > 0 and math.isfinite(r)):
            raise DomainError(f"region radius must be positive, got {self.radius}")
        object.__setattr__(self, "radius", r)
        if self.box is not None:
            lo, hi = (as_point(v, c.size) for v in self.box)
            if np.any(lo > hi):
                raise DomainError("box lower bounds exceed upper bounds")
            object.__setattr__(self, "box", (lo, hi))

    @classmethod
    def ball(cls, center, radius: float) -> Region:
        return cls(np.asarray(center, dtype=float), radius)

    @property
    def dimension(self) -> int:
        return self.center.size

    def contains(self, x, tol: float = 1e-12):
        X = np.asarray(x, dtype=float)
        slack = tol * max(1.0, self.radius)
        ok = np.linalg.norm(X - self.center, axis=-1) <= self.radius + slack
        if self.box is not None:
            lo, hi = self.box
            ok = ok & np.all((X >= lo - slack) & (X <= hi + slack), axis=-1)
        return ok

    def project(self, x) -> np.ndarray:
        """Radial projection onto the ball (then clipping to the box)."""
        X = np.array(x, dtype=float)
        d = X - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        scale = np.where(r > self.radius, self.radius / np.maximum(r, 1e-300), 1.0)
        X = self.center + d * scale
        if self.box is not None:
            X = np.clip(X, *self.box)
        return X

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """``count`` points uniform in the region (rejection against the box)."""
        n = self.dimension
        out = np.empty((0, n))
        while out.shape[0] < count:
            need = count - out.shape[0]
            g = rng.standard_normal((need, n))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            u = rng.random(need) ** (1.0 / n)
            pts = self.center + self.radius * u[:, None] * g
            if self.box is not None:
                pts = pts[self.contains(pts)]
            out = np.vstack([out, pts])
        return out[:count]

    def sample_sphere(self, rng: np.random.Generator, count: int) -> np.ndarray:
        g = rng.standard_normal((count, self.dimension))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return self.project(self.center + self.radius * g)

    def shrunk(self, margin: float) -> Region:
        if margin >= self.radius:
            raise DomainError(f"margin {margin} consumes the whole region of radius {self.radius}")
        return Region(self.center, self.radius - margin, self.box)

    def within(self, other: Region | None) -> bool:
        if other is None:
            return True
        return bool(np.linalg.norm(self.center - other.center) + self.radius <= other.radius * (1 + 1e-12))

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"center": self.center.tolist(), "radius": self.radius}
        if self.box is not None:
            d["box"] = [self.box[0].tolist(), self.box[1].tolist()]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Region:
        box = d.get("box")
        return cls(np.asarray(d["center"], dtype=float), float(d["radius"]),
                   None if box is None else (np.asarray(box[0]), np.asarray(box[1])))


# --------------------------------------------------------------------------
# function families


class FunctionSpec:
    """Base class for all function families."""

    family: ClassVar[str] = ""
    dimension: int
    #: whether the family is convex (checked or by construction)
    convex: bool = True
    #: whether the gradient is Lipschitz, i.e. the function is C^{1,1}
    smooth: bool = False

    @property
    def domain(self) -> Region | None:
        """Region the function is defined on; ``None`` means all of R^n."""
        return None

    def __call__(self, x) -> np.ndarray | float:
        X = np.asarray(x, dtype=float)
        if X.shape[-1:] != (self.dimension,):
            raise DomainError(f"{self.family} expects points of dimension {self.dimension}, got shape {X.shape}")
        out = self._eval(X)
        return float(out) if X.ndim == 1 else out

    def gradient(self, x) -> np.ndarray:
        """Gradient (or minimal-norm subgradient at kinks), vectorised."""
        X = np.asarray(x, dtype=float)
        if X.shape[-1:] != (self.dimension,):
            raise DomainError(f"{self.family} expects points of dimension {self.dimension}, got shape {X.shape}")
        return self._grad(X)

    def _eval(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _grad(self, X: np.ndarray) -> np.ndarray:
        return finite_difference_gradient(self._eval, X, 1e-6)

    def _eval_grad(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values and gradients together; families override this to share work."""
        return self._eval(X), self._grad(X)

    def lipschitz_bound(self, region: Region) -> float | None:
        """An exact Lipschitz constant over ``region`` from family data, if known."""
        return None

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"family": self.family, "dimension": self.dimension, "params": self.params()}

    @classmethod
    def from_params(cls, params: dict, dimension: int) -> FunctionSpec:
        raise NotImplementedError


def finite_difference_gradient(fun: Callable[[np.ndarray], np.ndarray], X: np.ndarray, h: float) -> np.ndarray:
    """Central differences of a vectorised function along each axis."""
    n = X.shape[-1]
    G = np.empty(X.shape)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        G[..., i] = (fun(X + e) - fun(X - e)) / (2 * h)
    return G


@register
@dataclass(frozen=True, eq=False)
class QuadraticForm(FunctionSpec):
    """``f(x) = 1/2 x^T A x + b^T x + c``; convex iff ``A`` is PSD."""

    A: np.ndarray
    b: np.ndarray
    c: float = 0.0

    family: ClassVar[str] = "quadratic_form"
    smooth: ClassVar[bool] = True

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise DomainError(f"A must be square, got {A.shape}")
        b = np.zeros(A.shape[0]) if self.b is None else as_point(self.b, A.shape[0])
        A = 0.5 * (A + A.T)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))
        eig = np.linalg.eigvalsh(A) if A.size else np.zeros(1)
        object.__setattr__(self, "convex", bool(eig.min() >= -1e-12 * max(1.0, np.abs(eig).max())))

    @property
    def dimension(self) -> int:
        return self.A.shape[0]

    @classmethod
    def half_norm_squared(cls, n: int) -> QuadraticForm:
        return cls(np.eye(n), np.zeros(n), 0.0)

    @classmethod
    def affine(cls, a, b0: float = 0.0) -> QuadraticForm:
        a = as_point(a)
        return cls(np.zeros((a.size, a.size)), a, b0)

    @classmethod
    def zero(cls, n: int) -> QuadraticForm:
        return cls(np.zeros((n, n)), np.zeros(n), 0.0)

    @property
    def is_affine(self) -> bool:
        return not np.any(self.A)

    def _eval(self, X):
        return 0.5 * np.einsum("...i,ij,...j->...", X, self.A, X) + X @ self.b + self.c

    def _grad(self, X):
        return X @ self.A + self.b

    def lipschitz_bound(self, region):
        # sup of |Ax + b| over the ball, bounded by |A c + b| + |A| R
        return float(np.linalg.norm(self.A @ region.center + self.b) + np.linalg.norm(self.A, 2) * region.radius)

    def params(self):
        return {"A": self.A.tolist(), "b": self.b.tolist(), "c": self.c}

    @classmethod
    def from_params(cls, params, dimension):
        A = np.asarray(params.get("A", np.zeros((dimension, dimension))), dtype=float)
        if A.ndim == 0:
            A = float(A) * np.eye(dimension)
        return cls(A, np.asarray(params.get("b", np.zeros(dimension)), dtype=float), params.get("c", 0.0))


def _min_norm_hull_point(G: np.ndarray) -> np.ndarray:
    """Minimal-norm element of the convex hull of the rows of ``G``."""
    if G.shape[0] == 1:
        return G[0].copy()
    big = 1e3 * (1.0 + np.abs(G).max())
    A = np.vstack([G.T, big * np.ones((1, G.shape[0]))])
    rhs = np.zeros(A.shape[0])
    rhs[-1] = big
    lam, _ = nnls(A, rhs)
    lam /= lam.sum()
    return lam @ G


@register
@dataclass(frozen=True, eq=False)
class MaxAffine(FunctionSpec):
    """``f(x) = max_i <a_i, x> + b_i``."""

    normals: np.ndarray
    offsets: np.ndarray

    family: ClassVar[str] = "max_affine"

    def __post_init__(self) -> None:
        N = np.atleast_2d(np.asarray(self.normals, dtype=float))
        o = np.atleast_1d(np.asarray(self.offsets, dtype=float))
        if N.shape[0] != o.size or N.shape[0] == 0:
            raise DomainError("max_affine needs one offset per normal and at least one piece")
        object.__setattr__(self, "normals", N)
        object.__setattr__(self, "offsets", o)

    @property
    def dimension(self) -> int:
        return self.normals.shape[1]

    @property
    def smooth(self) -> bool:
        return self.normals.shape[0] == 1

    def _values(self, X):
        return X @ self.normals.T + self.offsets

    def _eval(self, X):
        return self._values(X).max(axis=-1)

    def _grad_from(self, X, V, top):
        active = V >= top[..., None] - KINK_RTOL * (1.0 + np.abs(top[..., None]))
        flat_active = active.reshape(-1, active.shape[-1])
        out = self.normals[np.argmax(V, axis=-1)].reshape(-1, self.dimension)
        for idx in np.nonzero(flat_active.sum(axis=1) > 1)[0]:
            out[idx] = _min_norm_hull_point(self.normals[flat_active[idx]])
        return out.reshape(X.shape)

    def _grad(self, X):
        V = self._values(X)
        return self._grad_from(X, V, V.max(axis=-1))

    def _eval_grad(self, X):
        V = self._values(X)
        top = V.max(axis=-1)
        return top, self._grad_from(X, V, top)

    def lipschitz_bound(self, region):
        return float(np.linalg.norm(self.normals, axis=1).max())

    def params(self):
        return {"pieces": [{"a": a.tolist(), "b": float(b)} for a, b in zip(self.normals, self.offsets)]}

    @classmethod
    def from_params(cls, params, dimension):
        pieces = params["pieces"]
        return cls(np.array([p["a"] for p in pieces], dtype=float).reshape(len(pieces), dimension),
                   np.array([p.get("b", 0.0) for p in pieces], dtype=float))


@register
@dataclass(frozen=True, eq=False)
class NormScaled(FunctionSpec):
    """``f(x) = alpha * |x|``."""

    alpha: float
    n: int

    family: ClassVar[str] = "norm_scaled"

    def __post_init__(self) -> None:
        if not self.alpha >= 0:
            raise DomainError(f"norm_scaled needs alpha >= 0, got {self.alpha}")
        object.__setattr__(self, "alpha", float(self.alpha))
        if self.n < 1:
            raise DomainError("dimension must be positive")

    @property
    def dimension(self) -> int:
        return self.n

    @property
    def smooth(self) -> bool:
        return self.alpha == 0

    def _eval(self, X):
        return self.alpha * np.linalg.norm(X, axis=-1)

    def _grad(self, X):
        r = np.linalg.norm(X, axis=-1, keepdims=True)
        return np.where(r > 0, self.alpha * X / np.maximum(r, 1e-300), 0.0)

    def lipschitz_bound(self, region):
        return self.alpha

    def params(self):
        return {"alpha": self.alpha}

    @classmethod
    def from_params(cls, params, dimension):
        return cls(params.get("alpha", 1.0), dimension)


@register
@dataclass(frozen=True, eq=False)
class LogSumExp(FunctionSpec):
    """Smoothed maximum ``T log sum_i exp((<a_i, x> + b_i) / T)``."""

    normals: np.ndarray
    offsets: np.ndarray
    temperature: float = 1.0

    family: ClassVar[str] = "log_sum_exp"
    smooth: ClassVar[bool] = True

    def __post_init__(self) -> None:
        MaxAffine.__post_init__(self)  # same shape checks
        if not self.temperature > 0:
            raise DomainError("temperature must be positive")
        object.__setattr__(self, "temperature", float(self.temperature))

    @property
    def dimension(self) -> int:
        return self.normals.shape[1]

    def _scaled(self, X):
        return (X @ self.normals.T + self.offsets) / self.temperature

    def _eval(self, X):
        Z = self._scaled(X)
        top = Z.max(axis=-1, keepdims=True)
        return self.temperature * (top[..., 0] + np.log(np.exp(Z - top).sum(axis=-1)))

    def _grad(self, X):
        Z = self._scaled(X)
        W = np.exp(Z - Z.max(axis=-1, keepdims=True))
        W /= W.sum(axis=-1, keepdims=True)
        return W @ self.normals

    def lipschitz_bound(self, region):
        return float(np.linalg.norm(self.normals, axis=1).max())

    def params(self):
        return {"pieces": [{"a": a.tolist(), "b": float(b)} for a, b in zip(self.normals, self.offsets)],
                "temperature": self.temperature}

    @classmethod
    def from_params(cls, params, dimension):
        base = MaxAffine.from_params(params, dimension)
        return cls(base.normals, base.offsets, params.get("temperature", 1.0))


@register
@dataclass(frozen=True, eq=False)
class Restricted(FunctionSpec):
    """``c -> f(base + E c)`` for an orthonormal basis ``E`` (columns)."""

    inner: FunctionSpec
    base: np.ndarray
    basis: np.ndarray

    family: ClassVar[str] = "restricted"

    def __post_init__(self) -> None:
        base = as_point(self.base, self.inner.dimension)
        E = np.asarray(self.basis, dtype=float)
        if E.ndim != 2 or E.shape[0] != base.size or E.shape[1] < 1:
            raise DomainError(f"basis must have shape ({base.size}, m), got {E.shape}")
        if not np.allclose(E.T @ E, np.eye(E.shape[1]), atol=1e-10):
            raise DomainError("basis columns must be orthonormal")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "basis", E)
        object.__setattr__(self, "convex", self.inner.convex)

    @property
    def dimension(self) -> int:
        return self.basis.shape[1]

    @property
    def smooth(self) -> bool:
        return self.inner.smooth

    def embed(self, C) -> np.ndarray:
        return self.base + np.asarray(C, dtype=float) @ self.basis.T

    def _eval(self, X):
        return np.asarray(self.inner._eval(self.embed(X)))

    def _grad(self, X):
        return self.inner._grad(self.embed(X)) @ self.basis

    def lipschitz_bound(self, region):
        return self.inner.lipschitz_bound(Region(self.embed(region.center), region.radius))

    def params(self):
        return {"inner": self.inner.to_dict(), "base": self.base.tolist(), "basis": self.basis.tolist()}

    @classmethod
    def from_params(cls, params, dimension):
        return cls(spec_from_dict(params["inner"]), np.asarray(params["base"]), np.asarray(params["basis"]))


# --------------------------------------------------------------------------
# convex bodies and their lower-boundary charts


@dataclass(frozen=True, eq=False)
class Halfspace:
    """``{x : <normal, x> <= offset}``."""

    normal: np.ndarray
    offset: float
    kind: ClassVar[str] = "halfspace"

    def slack(self, X):
        return X @ self.normal - self.offset

    def to_dict(self):
        return {"type": self.kind, "normal": np.asarray(self.normal).tolist(), "offset": float(self.offset)}


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float
    kind: ClassVar[str] = "ball"

    def slack(self, X):
        return np.linalg.norm(X - self.center, axis=-1) - self.radius

    def to_dict(self):
        return {"type": self.kind, "center": np.asarray(self.center).tolist(), "radius": float(self.radius)}


@dataclass(frozen=True, eq=False)
class Sublevel:
    """``{x : f(x) <= level}`` for a convex ``f``."""

    function: FunctionSpec
    level: float
    kind: ClassVar[str] = "sublevel"

    def slack(self, X):
        return np.asarray(self.function._eval(X)) - self.level

    def to_dict(self):
        return {"type": self.kind, "function": self.function.to_dict(), "level": float(self.level)}


Constraint = Halfspace | Ball | Sublevel


def constraint_from_dict(d: dict) -> Constraint:
    kind = d.get("type")
    if kind == "halfspace":
        return Halfspace(np.asarray(d["normal"], dtype=float), float(d["offset"]))
    if kind == "ball":
        return Ball(np.asarray(d["center"], dtype=float), float(d["radius"]))
    if kind == "sublevel":
        return Sublevel(spec_from_dict(d["function"]), float(d["level"]))
    raise DomainError(f"unknown constraint type {kind!r}")


@dataclass(frozen=True, eq=False)
class ConvexBody:
    """Intersection of halfspaces, balls and convex sublevel sets."""

    constraints: tuple
    dimension: int
    interior_point: np.ndarray | None = None
    diameter_bound: float | None = None

    def __post_init__(self) -> None:
        cons = tuple(self.constraints)
        if not cons:
            raise DomainError("a convex body needs at least one constraint")
        object.__setattr__(self, "constraints", cons)
        for c in cons:
            if isinstance(c, Sublevel) and not c.function.convex:
                raise PreconditionError("sublevel constraints must use convex functions")
        candidates = [] if self.interior_point is None else [as_point(self.interior_point, self.dimension)]
        candidates += [as_point(c.center, self.dimension) for c in cons if isinstance(c, Ball)]
        for p in candidates:
            if self.max_slack(p) < 0:
                object.__setattr__(self, "interior_point", p)
                break
        else:
            raise PreconditionError("convex body has no certified interior point (strict slack required)")

    def max_slack(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.max(np.stack([np.asarray(c.slack(X), dtype=float) for c in self.constraints]), axis=0)

    def contains(self, X):
        return self.max_slack(X) <= 0.0

    def on_boundary(self, x) -> bool:
        return bool(abs(self.max_slack(as_point(x, self.dimension))) <= BOUNDARY_SLACK)

    def diameter(self) -> float:
        radii = [2 * c.radius for c in self.constraints if isinstance(c, Ball)]
        if self.diameter_bound is not None:
            radii.append(float(self.diameter_bound))
        if not radii:
            raise PreconditionError("body is not known to be bounded: add a ball constraint or diameter_bound")
        return min(radii)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"dimension": self.dimension,
                             "constraints": [c.to_dict() for c in self.constraints],
                             "interior_point": np.asarray(self.interior_point).tolist()}
        if self.diameter_bound is not None:
            d["diameter_bound"] = self.diameter_bound
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ConvexBody:
        return cls(tuple(constraint_from_dict(c) for c in d["constraints"]), int(d["dimension"]),
                   d.get("interior_point"), d.get("diameter_bound"))


def _orthonormal_complement(u: np.ndarray) -> np.ndarray:
    """Columns spanning the hyperplane orthogonal to the unit vector ``u``."""
    n = u.size
    _, _, vt = np.linalg.svd(u[None, :])
    B = vt[1:].T.copy()
    for j in range(B.shape[1]):  # fix signs for determinism
        i = np.argmax(np.abs(B[:, j]))
        if B[i, j] < 0:
            B[:, j] *= -1
    return B.reshape(n, n - 1)


@register
@dataclass(frozen=True, eq=False)
class LowerBoundaryChart(FunctionSpec):
    """Height of the bottom endpoint of ``L_x`` intersected with the body.

    Chart coordinates ``t`` live in the hyperplane through ``x0`` normal to
    the up direction ``u = (y - x0)/|y - x0|``; ``L_x`` is the line through
    ``x = x0 + B t`` spanned by ``u``.
    """

    body: ConvexBody
    x0: np.ndarray
    y: np.ndarray
    chart_radius: float
    bisection_tol: float = 1e-12
    u: np.ndarray = field(init=False)
    hyperplane_basis: np.ndarray = field(init=False)

    family: ClassVar[str] = "boundary_chart"

    def __post_init__(self) -> None:
        n = self.body.dimension
        if n < 2:
            raise DomainError("boundary charts need an ambient dimension of at least 2")
        x0, y = as_point(self.x0, n), as_point(self.y, n)
        if not self.body.on_boundary(x0):
            raise PreconditionError(f"x0={x0.tolist()} is not on the boundary of the body")
        if not self.body.max_slack(y) < 0:
            raise PreconditionError(f"y={y.tolist()} is not an interior point of the body")
        if not (self.chart_radius > 0 and self.bisection_tol > 0):
            raise DomainError("chart_radius and bisection_tol must be positive")
        u = (y - x0) / np.linalg.norm(y - x0)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "chart_radius", float(self.chart_radius))
        object.__setattr__(self, "bisection_tol", float(self.bisection_tol))
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "hyperplane_basis", _orthonormal_complement(u))
        # every chart line must meet the body: probe the chart boundary
        probes = np.vstack([np.zeros(n - 1), np.eye(n - 1), -np.eye(n - 1)]) * self.chart_radius
        self._eval(probes)

    @property
    def dimension(self) -> int:
        return self.body.dimension - 1

    @property
    def domain(self) -> Region:
        return Region(np.zeros(self.dimension), self.chart_radius)

    @property
    def height_scale(self) -> float:
        return float(np.linalg.norm(self.y - self.x0))

    def ambient(self, T) -> np.ndarray:
        """Ambient base points ``x0 + B t`` of chart coordinates."""
        return self.x0 + np.asarray(T, dtype=float) @ self.hyperplane_basis.T

    def ambient_boundary_point(self, T) -> np.ndarray:
        T = np.asarray(T, dtype=float)
        return self.ambient(T) + np.asarray(self._eval(T))[..., None] * self.u

    def _eval(self, X):
        shape = X.shape[:-1]
        T = X.reshape(-1, self.dimension)
        if np.any(np.linalg.norm(T, axis=1) > self.chart_radius * (1 + 1e-12)):
            raise DomainError("chart coordinate outside the chart radius")
        P = self.ambient(T)
        hi = np.full(T.shape[0], self.height_scale)
        lo = hi - self.body.diameter()
        if not np.all(self.body.contains(P + hi[:, None] * self.u)):
            raise ChartRadiusError("a chart line misses the interior witness x + (y - x0); shrink chart_radius")
        if np.any(self.body.contains(P + lo[:, None] * self.u)):
            raise EvaluationError("line search failed: the lower bracket end lies inside the body")
        steps = max(1, math.ceil(math.log2((hi[0] - lo[0]) / self.bisection_tol)))
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            inside = self.body.contains(P + mid[:, None] * self.u)
            hi = np.where(inside, mid, hi)
            lo = np.where(inside, lo, mid)
        return (0.5 * (lo + hi)).reshape(shape)

    def _grad(self, X):
        h = max(1e-6 * self.chart_radius, 1e3 * self.bisection_tol)
        T = np.asarray(X, dtype=float)
        r = self.chart_radius - h
        norms = np.linalg.norm(T, axis=-1, keepdims=True)
        T = np.where(norms > r, T * r / np.maximum(norms, 1e-300), T)
        return finite_difference_gradient(self._eval, T, h)

    def params(self):
        return {"body": self.body.to_dict(), "x0": self.x0.tolist(), "y": self.y.tolist(),
                "chart_radius": self.chart_radius, "bisection_tol": self.bisection_tol}

    @classmethod
    def from_params(cls, params, dimension):
        return cls(ConvexBody.from_dict(params["body"]), np.asarray(params["x0"]), np.asarray(params["y"]),
                   params["chart_radius"], params.get("bisection_tol", 1e-12))


def spec_from_dict(d: dict) -> FunctionSpec:
    try:
        cls = FAMILIES[d["family"]]
    except KeyError:
        raise DomainError(f"unknown function family {d.get('family')!r}") from None
    spec = cls.from_params(d.get("params", {}), int(d["dimension"]))
    if spec.dimension != int(d["dimension"]):
        raise DomainError(f"declared dimension {d['dimension']} disagrees with parameters ({spec.dimension})")
    return spec


# --------------------------------------------------------------------------
# operations


def evaluate(spec: FunctionSpec, x) -> float:
    return float(spec(as_point(x, spec.dimension)))


def subgradient(spec: FunctionSpec, x) -> np.ndarray:
    """Gradient where differentiable, minimal-norm subgradient at kinks."""
    if not spec.convex:
        raise UnsupportedOperationError(f"subgradient is undefined for the nonconvex {spec.family} spec")
    return np.asarray(spec.gradient(as_point(x, spec.dimension)), dtype=float)


def sampled_lipschitz(spec: FunctionSpec, region: Region, samples: int, rng_seed: int) -> float:
    """Largest difference quotient over random pairs, far and near."""
    rng = rng_for(rng_seed, "lipschitz", spec.family)
    half = max(1, samples // 2)
    X = np.vstack([region.sample(rng, samples - half), region.sample_sphere(rng, half)])
    Y = region.sample(rng, X.shape[0])
    step = rng.standard_normal(X.shape)
    step *= 1e-4 * region.radius / np.linalg.norm(step, axis=1, keepdims=True)
    Z = region.project(X + step)
    A, B = np.vstack([X, X]), np.vstack([Y, Z])
    d = np.linalg.norm(A - B, axis=1)
    keep = d > 1e-9 * region.radius
    fa, fb = np.asarray(spec(A[keep])), np.asarray(spec(B[keep]))
    return float(np.max(np.abs(fa - fb) / d[keep])) if np.any(keep) else 0.0


def lipschitz_estimate(spec: FunctionSpec, region: Region, samples: int = 2000, rng_seed: int = 0) -> float:
    """Sampled Lipschitz constant, clamped below by exact family data."""
    if samples < 2:
        raise DomainError("lipschitz_estimate needs at least 2 samples")
    est = sampled_lipschitz(spec, region, samples, rng_seed)
    exact = spec.lipschitz_bound(region)
    return est if exact is None else max(est, float(exact))


@dataclass(frozen=True)
class ConvexityReport:
    violations: int
    worst_gap: float
    samples: int
    worst_pair: tuple[list[float], list[float]] | None = None

    def to_dict(self) -> dict:
        return {"violations": self.violations, "worst_gap": self.worst_gap, "samples": self.samples,
                "worst_pair": self.worst_pair}


def convexity_check(spec: FunctionSpec, region: Region, samples: int = 10_000, tol: float = 1e-9,
                    rng_seed: int = 0) -> ConvexityReport:
    """Midpoint convexity audit; a positive gap is a violation."""
    if samples < 1 or tol < 0:
        raise DomainError("convexity_check needs samples >= 1 and tol >= 0")
    rng = rng_for(rng_seed, "convexity", spec.family)
    X, Y = region.sample(rng, samples), region.sample(rng, samples)
    gap = np.asarray(spec(0.5 * (X + Y))) - 0.5 * (np.asarray(spec(X)) + np.asarray(spec(Y)))
    i = int(np.argmax(gap))
    return ConvexityReport(int(np.sum(gap > tol)), float(gap[i]), samples, (X[i].tolist(), Y[i].tolist()))


def gram_schmidt(vectors: np.ndarray, rtol: float = GRAM_SCHMIDT_RTOL) -> np.ndarray:
    """Orthonormal basis (columns) of the span of the rows, dropping near-dependent ones."""
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    scale = np.linalg.norm(V, axis=1).max() if V.size else 0.0
    basis: list[np.ndarray] = []
    if scale == 0.0:
        return np.zeros((V.shape[1], 0))
    for v in V:
        w = v.copy()
        for _ in range(2):  # re-orthogonalise once for stability
            for e in basis:
                w -= (w @ e) * e
        nrm = np.linalg.norm(w)
        if nrm > rtol * scale:
            basis.append(w / nrm)
    return np.array(basis).T.reshape(V.shape[1], len(basis))


def restrict_to_span(spec: FunctionSpec, base, points) -> Restricted:
    """Restrict ``spec`` to the affine span of ``points`` through ``base``."""
    base = as_point(base, spec.dimension)
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.size == 0:
        raise DegenerateSpanError("no points given")
    if P.shape[1] != spec.dimension:
        raise DomainError(f"points must have dimension {spec.dimension}")
    E = gram_schmidt(P - base)
    if E.shape[1] == 0:
        raise DegenerateSpanError("all points coincide with the base point")
    return Restricted(spec, base, E)


def lower_boundary_function(body: ConvexBody, x0, y, chart_radius: float,
                            bisection_tol: float = 1e-12) -> LowerBoundaryChart:
    """Chart of the body's boundary near ``x0`` as a convex function."""
    return LowerBoundaryChart(body, as_point(x0, body.dimension), as_point(y, body.dimension),
                              chart_radius, bisection_tol)
