"""Comparison angles, the quadruple condition, and sampled verification.

Angles at a vertex ``y`` follow the middle-letter convention: the angle
``xyz`` is computed from the legs ``d(x, y)``, ``d(y, z)`` and the opposite
side ``d(x, z)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from ._random import derive_seed, rng_for
from .errors import DomainError, TriangleInequalityError
from .functions import Region
from .metric import DistanceEstimate, DistanceOptions, GraphSurface, distance_matrix

CLAMP_TOL = 1e-9
MIN_SEPARATION = 1e-9
FLAT_SLACK = 1e-6
SLACK_SAFETY = 2.0
#: floating-point floors: relative error of a summed path length, and absolute
#: error of a computed cosine argument
ROUNDOFF_REL = 1e-12
ROUNDOFF_U = 16 * np.finfo(float).eps

# (leg, leg, opposite) index triples into (ab, ac, ap, bc, bp, cp)
_APEX_TRIANGLES = ((0, 1, 3), (1, 2, 5), (2, 0, 4))
PAIR_NAMES = ("ab", "ac", "ap", "bc", "bp", "cp")
_PAIR_INDEX = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


class Verdict(str, Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    INCONCLUSIVE = "inconclusive"


def _cosine_argument(d_xy: float, d_yz: float, d_xz: float) -> float:
    # ordering the legs makes the result exactly symmetric; (p - s) is exact when the
    # longer leg and the opposite side are close, which avoids cancellation in p^2 - s^2
    p, q = (d_xy, d_yz) if d_xy >= d_yz else (d_yz, d_xy)
    return ((p - d_xz) * (p + d_xz) + q * q) / (2.0 * (p * q))


def comparison_angle(d_xy: float, d_yz: float, d_xz: float) -> float:
    """Angle at ``y`` of the Euclidean triangle with the given side lengths."""
    if not (d_xy > 0 and d_yz > 0 and d_xz > 0):
        raise DomainError(f"comparison angle needs positive distances, got {(d_xy, d_yz, d_xz)}")
    u = _cosine_argument(d_xy, d_yz, d_xz)
    if abs(u) > 1.0 + CLAMP_TOL:
        raise TriangleInequalityError(f"distances {(d_xy, d_yz, d_xz)} violate the triangle inequality "
                                      f"(cosine argument {u})")
    # Kahan's needle-triangle formula: a few ulps at every angle, where acos(u) loses
    # up to eps/angle near 0 and pi
    p, q = (d_xy, d_yz) if d_xy >= d_yz else (d_yz, d_xy)
    s = d_xz
    mu = s - (p - q) if q >= s else q - (p - s)
    num = ((p - q) + s) * mu
    den = (p + (q + s)) * ((p - s) + q)
    if num <= 0.0:
        return 0.0
    if den <= 0.0:
        return math.pi
    return 2.0 * math.atan(math.sqrt(num / den))


def quadruple_excess(d_ab: float, d_ac: float, d_ap: float, d_bc: float, d_bp: float, d_cp: float) -> float:
    """Sum of the three comparison angles at apex ``a`` minus ``2 pi``."""
    return (comparison_angle(d_ab, d_ac, d_bc) + comparison_angle(d_ac, d_ap, d_cp)
            + comparison_angle(d_ap, d_ab, d_bp) - 2.0 * math.pi)


def angle_sum_slack(values: Sequence[float], radii: Sequence[float], safety: float = SLACK_SAFETY) -> float:
    """Worst-case change of the apex angle sum when each distance moves by its radius.

    The cosine argument of each angle is perturbed by its first-order
    sensitivity (times ``safety``); the angle range is then read off the
    monotone arccos over the clamped argument interval, which stays finite
    for degenerate triangles.
    """
    d = np.asarray(values, dtype=float)
    r = np.maximum(np.asarray(radii, dtype=float), ROUNDOFF_REL * d)
    total = 0.0
    for i, j, o in _APEX_TRIANGLES:
        p, q, s = d[i], d[j], d[o]
        u = _cosine_argument(p, q, s)
        du_dp = (p * p - q * q + s * s) / (2 * p * p * q)
        du_dq = (q * q - p * p + s * s) / (2 * q * q * p)
        du_ds = -s / (p * q)
        du = safety * (abs(du_dp) * r[i] + abs(du_dq) * r[j] + abs(du_ds) * r[o]) + ROUNDOFF_U
        uc = min(1.0, max(-1.0, u))
        theta = math.acos(uc)
        lo = math.acos(min(1.0, uc + du))
        hi = math.acos(max(-1.0, uc - du))
        total += max(theta - lo, hi - theta)
    return total


@dataclass(frozen=True, eq=False)
class Quadruple:
    """Apex ``a`` and satellites ``b, c, p`` (base points)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    p: np.ndarray

    def __post_init__(self) -> None:
        pts = [np.asarray(x, dtype=float) for x in (self.a, self.b, self.c, self.p)]
        for name, x in zip("abcp", pts):
            object.__setattr__(self, name, x)
        if len({x.shape for x in pts}) != 1:
            raise DomainError("quadruple points must share one dimension")
        if self.min_separation() <= MIN_SEPARATION:
            raise DomainError("quadruple points must be pairwise distinct")

    @classmethod
    def from_array(cls, pts) -> Quadruple:
        P = np.asarray(pts, dtype=float)
        return cls(P[0], P[1], P[2], P[3])

    def as_array(self) -> np.ndarray:
        return np.vstack([self.a, self.b, self.c, self.p])

    def min_separation(self) -> float:
        P = self.as_array()
        return min(float(np.linalg.norm(P[i] - P[j])) for i, j in _PAIR_INDEX)

    def to_list(self) -> list:
        return self.as_array().tolist()


@dataclass(frozen=True, eq=False)
class QuadrupleReport:
    quad: Quadruple
    distances: tuple[DistanceEstimate, ...]
    angles: tuple[float, float, float]
    angle_sum: float
    excess: float
    slack: float
    verdict: Verdict
    diagnostic: str = ""

    @property
    def margin(self) -> float:
        """``excess - slack``; positive means a certified violation."""
        return self.excess - self.slack

    def to_dict(self, with_witnesses: bool = False) -> dict:
        dist = {}
        for name, est in zip(PAIR_NAMES, self.distances):
            block = est.to_dict() if with_witnesses else {k: v for k, v in est.to_dict().items() if k != "witness"}
            dist[name] = block
        return {"quad": self.quad.to_list(), "distances": dist, "angles": list(self.angles),
                "angle_sum": self.angle_sum, "excess": self.excess, "slack": self.slack,
                "verdict": self.verdict.value, "diagnostic": self.diagnostic}


def classify(excess: float, slack: float) -> Verdict:
    if excess > slack:
        return Verdict.VIOLATED
    if excess < -slack or (slack < FLAT_SLACK and abs(excess) <= slack):
        return Verdict.SATISFIED
    return Verdict.INCONCLUSIVE


def report_from_distances(quad: Quadruple, ests: Sequence[DistanceEstimate]) -> QuadrupleReport:
    """Angles, excess, slack and verdict from six estimates ``(ab, ac, ap, bc, bp, cp)``."""
    values = [e.value for e in ests]
    try:
        angles = (comparison_angle(values[0], values[1], values[3]),
                  comparison_angle(values[1], values[2], values[5]),
                  comparison_angle(values[2], values[0], values[4]))
    except TriangleInequalityError as exc:
        return QuadrupleReport(quad, tuple(ests), (math.nan,) * 3, math.nan, math.nan, math.inf,
                               Verdict.INCONCLUSIVE, str(exc))
    lo_hi = [e.resolution_interval() for e in ests]
    radii = [max(e.value - lo, hi - e.value, 0.0) for e, (lo, hi) in zip(ests, lo_hi)]
    total = sum(angles)
    excess = total - 2.0 * math.pi
    slack = angle_sum_slack(values, radii)
    return QuadrupleReport(quad, tuple(ests), angles, total, excess, slack, classify(excess, slack))


def check_quadruple(surface: GraphSurface, quad: Quadruple, opts: DistanceOptions | None = None) -> QuadrupleReport:
    """Six intrinsic distances, the apex angle sum, and a verdict."""
    opts = opts or DistanceOptions()
    P = quad.as_array()
    if not np.all(surface.domain.contains(P)):
        raise DomainError("quadruple leaves the surface domain")
    D = distance_matrix(surface, P, opts)
    return report_from_distances(quad, [D[i][j] for i, j in _PAIR_INDEX])


def sample_quadruple(region: Region, rng: np.random.Generator, max_tries: int = 1000) -> Quadruple:
    for _ in range(max_tries):
        P = region.sample(rng, 4)
        try:
            return Quadruple.from_array(P)
        except DomainError:
            continue
    raise DomainError("could not sample four distinct points in the region")


@dataclass
class QuadrupleAggregate:
    checked: int = 0
    satisfied: int = 0
    violated: int = 0
    inconclusive: int = 0
    max_excess: float = -math.inf
    argmax_quad: int | None = None
    reports: list[QuadrupleReport] = field(default_factory=list)

    def add(self, index: int, rep: QuadrupleReport) -> None:
        self.checked += 1
        if rep.verdict is Verdict.SATISFIED:
            self.satisfied += 1
        elif rep.verdict is Verdict.VIOLATED:
            self.violated += 1
        else:
            self.inconclusive += 1
        if not math.isnan(rep.excess) and rep.excess > self.max_excess:
            self.max_excess, self.argmax_quad = rep.excess, index
        self.reports.append(rep)

    @property
    def max_slack(self) -> float:
        finite = [r.slack for r in self.reports if math.isfinite(r.slack)]
        return max(finite) if finite else math.nan

    def to_dict(self) -> dict:
        best = None if self.argmax_quad is None else self.reports[self.argmax_quad]
        return {"checked": self.checked, "satisfied": self.satisfied, "violated": self.violated,
                "inconclusive": self.inconclusive, "max_excess": self.max_excess,
                "max_slack": self.max_slack, "argmax_quad": self.argmax_quad,
                "argmax_report": None if best is None else best.to_dict()}


def _quad_job(args) -> QuadrupleReport:
    surface, region, opts, seed, index = args
    quad = sample_quadruple(region, rng_for(seed, "quad", index))
    return check_quadruple(surface, quad, opts.with_seed(derive_seed(seed, "quad-distances", index)))


def sample_quadruple_condition(surface: GraphSurface, region: Region, count: int,
                               opts: DistanceOptions | None = None, rng_seed: int = 0,
                               jobs: int = 1) -> QuadrupleAggregate:
    """Check ``count`` random quadruples; quad ``i`` depends only on ``(rng_seed, i)``."""
    if count < 1:
        raise DomainError("count must be >= 1")
    if not region.within(surface.domain):
        raise DomainError("check region must lie inside the surface domain")
    opts = opts or DistanceOptions()
    tasks = [(surface, region, opts, rng_seed, i) for i in range(count)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            reports = list(pool.map(_quad_job, tasks, chunksize=max(1, count // (4 * jobs))))
    else:
        reports = [_quad_job(t) for t in tasks]
    agg = QuadrupleAggregate()
    for i, rep in enumerate(reports):
        agg.add(i, rep)
    return agg


@dataclass(frozen=True)
class SearchOptions:
    seeds: int = 32
    initial_step: float = 0.1
    min_step: float = 1e-3
    max_evals: int = 400


def search_violation(surface: GraphSurface, region: Region, opts: DistanceOptions | None = None,
                     rng_seed: int = 0, search: SearchOptions | None = None) -> QuadrupleReport:
    """Random seeding, then coordinate ascent of ``excess - slack`` over the four points."""
    opts = opts or DistanceOptions()
    search = search or SearchOptions()
    rng = rng_for(rng_seed, "search")
    evals = 0

    def score(rep: QuadrupleReport) -> float:
        return -math.inf if math.isnan(rep.margin) else rep.margin

    def evaluate(P: np.ndarray) -> QuadrupleReport | None:
        nonlocal evals
        try:
            quad = Quadruple.from_array(P)
        except DomainError:
            return None
        evals += 1
        return check_quadruple(surface, quad, opts.with_seed(derive_seed(rng_seed, "search-eval", evals)))

    best: QuadrupleReport | None = None
    for _ in range(search.seeds):
        rep = evaluate(sample_quadruple(region, rng).as_array())
        if rep is not None and (best is None or score(rep) > score(best)):
            best = rep
    assert best is not None
    P = best.quad.as_array()
    step = search.initial_step * region.radius
    while step >= search.min_step * region.radius and evals < search.max_evals:
        improved = False
        for i in range(4):
            for d in range(P.shape[1]):
                for sign in (1.0, -1.0):
                    trial = P.copy()
                    trial[i, d] += sign * step
                    trial[i] = region.project(trial[i])
                    rep = evaluate(trial)
                    if rep is not None and score(rep) > score(best):
                        best, P, improved = rep, trial, True
                        break
                if evals >= search.max_evals:
                    break
        if not improved:
            step *= 0.5
    return best
