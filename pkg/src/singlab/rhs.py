"""Singular right-hand sides built from powers of distance functions.

A right-hand side is the series

    F(x) = sum_k  c_k / ||d(., A_k)^(-g_k)||_{L2}  *  d(x, A_k)^(-g_k)

truncated to finitely many terms.  L^p norms of distance powers are estimated
over dyadic distance shells around the set, with an extrapolated tail, and are
carried as intervals so that coefficient schedules can be certified from the
lower bounds.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from singlab.distance import DomainBox, counter_rng, distance, neighborhood_draw
from singlab.errors import ConsistencyError, DimensionMismatchError, DomainError
from singlab.fractal_sets import BoxUnion, DimensionEstimate, box_counting_dimension, loglog_fit

FIT_TOLERANCE = 0.05
LOW_CONFIDENCE_R2 = 0.9
DEFAULT_BUDGET = 4000
MAX_SHELLS = 48
_Z = 2.0  # half-width of Monte Carlo intervals, in standard errors


# ---------------------------------------------------------------------------
# coefficient schedule


def coefficient_schedule(norms: Sequence[tuple[float, float]]) -> list[float]:
    """c_k = min(2^-k, 2^-k * lower_k) for k = 1, 2, ...

    With this choice both sum(c_k) and sum(c_k / lower_k) have tails bounded
    by 2^-K after K terms.
    """
    out = []
    for k, norm in enumerate(norms, start=1):
        lower = float(norm[0])
        if not lower > 0:
            raise DomainError(f"norm lower bound of term {k} is {lower}; must be positive")
        out.append(min(2.0 ** -k, 2.0 ** -k * lower))
    return out


def schedule_tails(coeffs: Sequence[float], lowers: Sequence[float], K: int) -> tuple[Fraction, Fraction]:
    """Exact tails after K terms of sum(c_k) and sum(c_k / lower_k).

    Listed terms are summed in exact rational arithmetic; the unlisted
    remainder of a schedule-conforming series is bounded by 2^-M.
    """
    m = len(coeffs)
    rest = Fraction(1, 2 ** m)
    t1 = sum((Fraction(c) for c in coeffs[K:]), Fraction(0)) + rest
    t2 = sum((Fraction(c) / Fraction(lo) for c, lo in zip(coeffs[K:], lowers[K:])), Fraction(0)) + rest
    return t1, t2


# ---------------------------------------------------------------------------
# shell statistics and L^p norms


@dataclass(frozen=True)
class ShellStats:
    """Per-shell volume and integral estimates over dyadic distance shells.

    Shell j is {x in domain : outer_j / 2 <= d(x, A) < outer_j}.
    """

    outer: np.ndarray
    volumes: np.ndarray
    volume_errors: np.ndarray
    integrals: np.ndarray
    integral_errors: np.ndarray


def _top_radius(A: BoxUnion, domain: DomainBox) -> float:
    corners = np.array(np.meshgrid(*zip(domain.lo, domain.hi), indexing="ij")).reshape(domain.dim, -1).T
    reach = float(np.max(np.linalg.norm(corners - A.lo[0], axis=1)))
    return 2.0 ** math.ceil(math.log2(max(reach, 1e-300)))


def shell_stats(
    A: BoxUnion,
    domain: DomainBox,
    exponent: float,
    outer: Sequence[float],
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
) -> ShellStats:
    """Volume and integral of d(x,A)^(-exponent) on each shell, by importance sampling.

    Each shell is sampled from the union of its outer-radius box expansions,
    so thin shells close to the set cost no more than thick ones.
    """
    vols, verr, ints, ierr = [], [], [], []
    for j, delta in enumerate(outer):
        draw = neighborhood_draw(A, domain, float(delta), budget, counter_rng(seed, j))
        inside = domain.contains(draw.points) & (draw.distances >= delta / 2) & (draw.distances < delta)
        w = np.where(inside, draw.weights, 0.0)
        with np.errstate(divide="ignore"):
            f = np.where(inside, w * draw.distances ** -exponent, 0.0)
        vols.append(w.mean())
        verr.append(w.std(ddof=1) / math.sqrt(budget))
        ints.append(f.mean())
        ierr.append(f.std(ddof=1) / math.sqrt(budget))
    return ShellStats(np.asarray(outer, dtype=float), np.array(vols), np.array(verr), np.array(ints), np.array(ierr))


@dataclass(frozen=True)
class NormEstimate:
    """Interval estimate of (integral over the domain of d(x,A)^(-g p))^(1/p)."""

    interval: tuple[float, float]
    value: float
    p: float
    shells: ShellStats | None = field(repr=False)
    decay_ratio: float | None
    decay_ratio_bounds: tuple[float, float] | None
    decaying: bool
    guaranteed: bool | None
    tail: tuple[float, float] = (0.0, 0.0)

    @property
    def contributions(self) -> np.ndarray:
        return np.array([]) if self.shells is None else self.shells.integrals

    def contains(self, value: float) -> bool:
        return self.interval[0] <= value <= self.interval[1]

    def to_dict(self) -> dict:
        return {
            "interval": list(self.interval),
            "value": self.value,
            "p": self.p,
            "decay_ratio": self.decay_ratio,
            "decay_ratio_bounds": list(self.decay_ratio_bounds) if self.decay_ratio_bounds else None,
            "decaying": self.decaying,
            "guaranteed": self.guaranteed,
            "tail": list(self.tail),
            "shell_outer": [] if self.shells is None else self.shells.outer.tolist(),
            "shell_contributions": self.contributions.tolist(),
        }


def _decay_fit(values: np.ndarray, errors: np.ndarray, window: int = 10):
    """Geometric ratio between consecutive shells from the deepest ``window`` shells."""
    idx = np.flatnonzero(values > 0)[-window:]
    if len(idx) < 3:
        return None, None
    x = idx.astype(float)
    y = np.log(values[idx])
    slope, intercept, _ = loglog_fit(x, y)
    resid = y - (slope * x + intercept)
    # scatter about the line and propagated MC error, whichever is larger
    sigma_y = max(float(np.sqrt(np.sum(resid ** 2) / max(len(x) - 2, 1))),
                  float(np.sqrt(np.mean((errors[idx] / values[idx]) ** 2))))
    se = sigma_y / math.sqrt(float(np.sum((x - x.mean()) ** 2)))
    return math.exp(slope), (math.exp(slope - _Z * se), math.exp(slope + _Z * se))


def _geometric_tail(last: float, ratio: float) -> float:
    return math.inf if ratio >= 1 else last * ratio / (1 - ratio)


def lp_norm_estimate(
    A: BoxUnion,
    gamma: float,
    p: float,
    domain: DomainBox,
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
    max_shells: int = MAX_SHELLS,
) -> NormEstimate:
    """Stratified estimate of the L^p(domain) norm of d(., A)^(-gamma).

    Shells are dyadic in the distance, from a radius enclosing the domain down
    to the set's resolution.  Beyond the last shell a geometric tail is
    extrapolated from the decay of the deepest shell contributions; a
    non-decaying sequence yields an infinite upper bound.
    """
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    if A.dim != domain.dim:
        raise DimensionMismatchError("set and domain dimensions differ")
    q = gamma * p
    guaranteed = None if A.target_dim is None else bool(q < domain.dim - A.target_dim)
    if gamma == 0:
        v = domain.volume ** (1 / p)
        return NormEstimate((v, v), v, p, None, None, None, True, True)
    top = _top_radius(A, domain)
    floor = max(A.resolution, top * 2.0 ** -max_shells)
    outer = [top * 2.0 ** -j for j in range(max_shells + 1) if top * 2.0 ** -(j + 1) >= floor * (1 - 1e-12)]
    stats = shell_stats(A, domain, q, outer, budget, seed)
    partial = float(stats.integrals.sum())
    sigma = float(np.sqrt(np.sum(stats.integral_errors ** 2)))
    ratio, bounds = _decay_fit(stats.integrals, stats.integral_errors)
    if ratio is None:
        decaying = True
        tail = (0.0, 0.0)
        est_tail = 0.0
    else:
        last = float(stats.integrals[-1])
        decaying = bounds[1] < 1
        tail = (_geometric_tail(last, bounds[0]), _geometric_tail(last, bounds[1]))
        est_tail = _geometric_tail(last, ratio)
        if guaranteed and bounds[0] > 1 and q < domain.dim - A.target_dim - 0.1:
            raise ConsistencyError(
                f"shell contributions grow by {ratio:.3f} per shell although gamma*p={q} "
                f"< N - dim = {domain.dim - A.target_dim}"
            )
    lo_int = max(partial - _Z * sigma + tail[0], partial * 1e-3, np.finfo(float).tiny)
    hi_int = partial + _Z * sigma + tail[1]
    value_int = partial + est_tail
    root = 1.0 / p
    return NormEstimate(
        interval=(lo_int ** root, hi_int ** root),
        value=value_int ** root,
        p=p,
        shells=stats,
        decay_ratio=ratio,
        decay_ratio_bounds=bounds,
        decaying=decaying,
        guaranteed=guaranteed,
        tail=tail,
    )


# ---------------------------------------------------------------------------
# Harvey-Polking integrability


@dataclass(frozen=True)
class IntegrabilityReport:
    gamma: float
    p: float
    ambient_dim: int
    dim_estimate: DimensionEstimate
    dim_upper: float
    threshold: float
    verdict: str
    shell_slope: float
    shell_r_squared: float
    norm: NormEstimate | None
    low_confidence: bool
    theorem_grade: bool

    @property
    def guaranteed(self) -> bool:
        return self.verdict == "guaranteed"

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "p": self.p,
            "ambient_dim": self.ambient_dim,
            "dim_estimate": self.dim_estimate.to_dict(),
            "dim_upper": self.dim_upper,
            "threshold": self.threshold,
            "verdict": self.verdict,
            "shell_slope": self.shell_slope,
            "shell_r_squared": self.shell_r_squared,
            "norm": None if self.norm is None else self.norm.to_dict(),
            "low_confidence": self.low_confidence,
            "theorem_grade": self.theorem_grade,
        }

    CSV_FIELDS = ("gamma", "p", "dim_slope", "dim_upper", "threshold", "verdict",
                  "shell_slope", "norm_lo", "norm_hi", "low_confidence", "theorem_grade")

    def csv_row(self) -> str:
        norm = self.norm.interval if self.norm is not None else ("", "")
        row = [self.gamma, self.p, self.dim_estimate.slope, self.dim_upper, self.threshold, self.verdict,
               self.shell_slope, norm[0], norm[1], self.low_confidence, self.theorem_grade]
        buf = io.StringIO()
        csv.writer(buf).writerow(row)
        return buf.getvalue()


def default_domain(A: BoxUnion) -> DomainBox:
    blo, bhi = A.bounding_box()
    pad = max(A.diameter, 1e-3)
    return DomainBox(tuple(blo - pad), tuple(bhi + pad))


def shell_scaling(
    A: BoxUnion, domain: DomainBox, budget: int = DEFAULT_BUDGET, seed: int = 0, shells: int = 16
) -> tuple[float, float, ShellStats]:
    """Fit vol({delta/2 <= d < delta}) ~ delta^s; s estimates N - dim."""
    size = A.diameter if A.diameter > 0 else domain.diameter
    top = 2.0 ** math.floor(math.log2(size / 4))
    floor = max(4 * A.resolution, top * 2.0 ** -shells)
    outer = [top * 2.0 ** -j for j in range(shells + 1) if top * 2.0 ** -(j + 1) >= floor * (1 - 1e-12)]
    if len(outer) < 3:
        raise DomainError(f"set resolution {A.resolution:.3g} leaves fewer than 3 shells below {top:.3g}")
    stats = shell_stats(A, domain, 0.0, outer, budget, seed)
    good = stats.volumes > 0
    slope, _, r2 = loglog_fit(np.log(stats.outer[good]), np.log(stats.volumes[good]))
    return slope, r2, stats


def hp_check(
    A: BoxUnion,
    gamma: float,
    p: float,
    domain: DomainBox | None = None,
    *,
    fit_tolerance: float = FIT_TOLERANCE,
    scale_range: tuple[float, float] | None = None,
    estimate_norm: bool = True,
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
) -> IntegrabilityReport:
    """Integrability verdict for d(., A)^(-gamma) in L^p from the measured box dimension.

    The verdict is ``guaranteed`` iff gamma < (N - dim_upper) / p with
    ``dim_upper = slope + fit_tolerance``.  The shell-volume scaling exponent
    is reported alongside as the empirical side of the same inequality.
    """
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    domain = default_domain(A) if domain is None else domain
    n = A.dim
    est = box_counting_dimension(A, scale_range)
    dim_upper = est.slope + fit_tolerance
    threshold = (n - dim_upper) / p
    verdict = "guaranteed" if gamma < threshold else "not-guaranteed"
    slope, r2, _ = shell_scaling(A, domain, budget, seed)
    norm = lp_norm_estimate(A, gamma, p, domain, budget, seed) if estimate_norm else None
    return IntegrabilityReport(
        gamma=gamma,
        p=p,
        ambient_dim=n,
        dim_estimate=est,
        dim_upper=dim_upper,
        threshold=threshold,
        verdict=verdict,
        shell_slope=slope,
        shell_r_squared=r2,
        norm=norm,
        low_confidence=est.r_squared < LOW_CONFIDENCE_R2,
        theorem_grade=bool(2 < gamma < (n - dim_upper) / 2),
    )


# ---------------------------------------------------------------------------
# right-hand sides


@dataclass(frozen=True)
class RhsTerm:
    A: BoxUnion
    gamma: float
    c: float
    norm: tuple[float, float]
    normalizer: float
    theorem_grade: bool = False
    label: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.norm[0] > 0:
            raise DomainError("norm interval needs a positive lower bound")
        if self.theorem_grade and not 2 < self.gamma:
            raise DomainError(f"theorem-grade term needs gamma > 2, got {self.gamma}")

    @property
    def normalized_c(self) -> float:
        return self.c / self.normalizer


@dataclass(frozen=True, eq=False)
class SingularRhs:
    domain: DomainBox
    terms: tuple[RhsTerm, ...]
    truncation: int
    union: BoxUnion = field(repr=False)

    @classmethod
    def from_terms(cls, domain: DomainBox, terms: Sequence[RhsTerm], truncation: int | None = None) -> "SingularRhs":
        terms = tuple(terms)
        if not terms:
            raise DomainError("a right-hand side needs at least one term")
        K = len(terms) if truncation is None else truncation
        return cls(domain, terms, K, terms[0].A.union(*(t.A for t in terms[1:])))

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def gamma_max(self) -> float:
        return max(t.gamma for t in self.terms)

    @property
    def normalized_coefficients(self) -> np.ndarray:
        return np.array([t.normalized_c for t in self.terms])

    @property
    def theorem_grade(self) -> bool:
        return all(t.theorem_grade for t in self.terms)

    def certified_sums(self) -> tuple[float, float]:
        """Upper bounds on sum(c_k) and sum(c_k / lower_k), including the unlisted remainder."""
        lowers = [t.norm[0] for t in self.terms]
        t1, t2 = schedule_tails([t.c for t in self.terms], lowers, 0)
        return float(t1), float(t2)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return eval_rhs(self, x)[0]

    def to_dict(self) -> dict:
        from singlab.fractal_sets import set_document

        return {
            "domain": self.domain.to_dict(),
            "sets": [set_document(t.A) for t in self.terms],
            "terms": [
                {
                    "set_ref": i,
                    "gamma": t.gamma,
                    "c": t.c,
                    "norm": list(t.norm),
                    "normalizer": t.normalizer,
                    "theorem_grade": t.theorem_grade,
                    "label": list(t.label),
                }
                for i, t in enumerate(self.terms)
            ],
            "truncation": self.truncation,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SingularRhs":
        sets = [BoxUnion.from_dict(s) for s in doc["sets"]]
        terms = [
            RhsTerm(
                sets[t["set_ref"]],
                float(t["gamma"]),
                float(t["c"]),
                tuple(t["norm"]),
                float(t.get("normalizer", 0.5 * (t["norm"][0] + t["norm"][1]))),
                bool(t.get("theorem_grade", False)),
                tuple(t.get("label", ())),
            )
            for t in doc["terms"]
        ]
        return cls.from_terms(DomainBox.from_dict(doc["domain"]), terms, doc.get("truncation"))


def _inside_open(A: BoxUnion, domain: DomainBox) -> bool:
    blo, bhi = A.bounding_box()
    return bool(np.all(blo > domain.lo_array) and np.all(bhi < domain.hi_array))


def build_rhs(
    sets: Sequence[BoxUnion],
    exponents: Sequence[float],
    domain: DomainBox,
    K: int | None = None,
    *,
    labels: Sequence[tuple[int, ...]] | None = None,
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
    fit_tolerance: float = FIT_TOLERANCE,
    reports: list | None = None,
) -> SingularRhs:
    """Assemble a theorem-grade right-hand side from (set, exponent) pairs.

    Every pair must satisfy 2 < gamma < (N - dim_upper) / 2 with the measured
    dimension; the L2 norm of each distance power is estimated and the
    coefficients follow :func:`coefficient_schedule` on the lower bounds.
    """
    if len(sets) != len(exponents):
        raise DimensionMismatchError(f"{len(sets)} sets but {len(exponents)} exponents")
    K = len(sets) if K is None else int(K)
    if not 1 <= K <= len(sets):
        raise DomainError(f"truncation {K} outside 1..{len(sets)}")
    labels = [(i + 1,) for i in range(len(sets))] if labels is None else list(labels)
    norms, grade = [], []
    for i, (A, g) in enumerate(zip(sets[:K], exponents[:K])):
        if A.dim != domain.dim:
            raise DimensionMismatchError(f"set {labels[i]} lives in R^{A.dim}, domain in R^{domain.dim}")
        if not _inside_open(A, domain):
            raise DomainError(f"closure of set {labels[i]} is not inside the domain")
        rep = hp_check(A, g, 2, domain, fit_tolerance=fit_tolerance, budget=budget, seed=seed + i)
        if reports is not None:
            reports.append(rep)
        if not g > 2:
            raise DomainError(f"set {labels[i]}: gamma={g} violates 2 < gamma")
        if not rep.guaranteed:
            raise DomainError(
                f"set {labels[i]}: gamma={g} violates gamma < (N - dim_upper)/2 = "
                f"({domain.dim} - {rep.dim_upper:.4f})/2 = {rep.threshold:.4f}"
            )
        norms.append(rep.norm)
        grade.append(rep.theorem_grade)
    coeffs = coefficient_schedule([n.interval for n in norms])
    terms = [
        RhsTerm(A, float(g), c, n.interval, n.value if math.isfinite(n.value) else n.interval[0], tg, tuple(lab))
        for A, g, c, n, tg, lab in zip(sets, exponents, coeffs, norms, grade, labels)
    ]
    return SingularRhs.from_terms(domain, terms, K)


def diagonal_order(K: int, J: int) -> list[tuple[int, int]]:
    """(k, j) pairs with 1 <= k <= K, 1 <= j <= J enumerated along anti-diagonals."""
    return [(k, s - k) for s in range(2, K + J + 1) for k in range(1, K + 1) if 1 <= s - k <= J]


def eval_rhs(F: SingularRhs, x, K: int | None = None) -> tuple[np.ndarray | float, np.ndarray | float]:
    """Partial sum of the first K normalized terms and a bound on the neglected rest.

    The bound is (sum_{k>K} c~_k) * max(1, d(x, A)^(-gamma_max)).  Points of
    the singular set get (+inf, 0).
    """
    K = F.truncation if K is None else int(K)
    if not 0 <= K <= len(F.terms):
        raise DomainError(f"K={K} outside 0..{len(F.terms)}")
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    value = np.zeros(len(pts))
    for t in F.terms[:K]:
        d = distance(pts, t.A)
        with np.errstate(divide="ignore"):
            value += t.normalized_c * d ** -t.gamma
    dA = distance(pts, F.union)
    on_set = dA == 0
    rest = float(sum(t.normalized_c for t in F.terms[K:]))
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = rest * np.maximum(1.0, dA ** -F.gamma_max)
    value[on_set] = np.inf
    tail[on_set] = 0.0
    if single:
        return float(value[0]), float(tail[0])
    return value, tail


def lipschitz_bound(F: SingularRhs, delta: float) -> float:
    """gamma_max * min(1, delta)^(-gamma_max - 1) * sum(c~_k): Lipschitz constant off the delta-neighborhood."""
    if not 0 < delta < F.domain.diameter:
        raise DomainError(f"delta={delta} outside (0, diam(domain)={F.domain.diameter:.4g})")
    g = F.gamma_max
    return g * min(1.0, delta) ** (-g - 1) * float(F.normalized_coefficients.sum())


def power_difference_bound(u, v, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Both sides of |u^a - v^a| <= |a| max(u^(a-1), v^(a-1)) |u - v| for u, v > 0."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    lhs = np.abs(u ** alpha - v ** alpha)
    rhs = abs(alpha) * np.maximum(u ** (alpha - 1), v ** (alpha - 1)) * np.abs(u - v)
    return lhs, rhs


# ---------------------------------------------------------------------------
# dense singularities in one dimension


@dataclass(frozen=True)
class SteinPartialSum:
    """u_n(x) = sum_{k=1}^{n-1} k^(-1/2) |x - k/n|^(-gamma) on (0, 1)."""

    gamma: float
    n: int
    points: np.ndarray = field(repr=False)
    coefficients: np.ndarray = field(repr=False)

    def __call__(self, x):
        """Values at scalars, 1-D arrays of abscissae, or (M, 1) point arrays."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 2 and x.shape[1] == 1:
            x = x[:, 0]
        diff = np.abs(x[..., None] - self.points)
        with np.errstate(divide="ignore"):
            return np.sum(self.coefficients * diff ** -self.gamma, axis=-1)

    @property
    def singular_points(self) -> np.ndarray:
        return self.points


def stein_dense_function(domain: DomainBox, gamma: float, n: int) -> SteinPartialSum:
    if domain.dim != 1 or domain.lo != (0.0,) or domain.hi != (1.0,):
        raise DomainError("the dense-singularity partial sum is defined on (0, 1)")
    if not 0 < gamma < 1:
        raise DomainError(f"gamma={gamma} must lie in (0, 1) in one dimension")
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    k = np.arange(1, n)
    return SteinPartialSum(float(gamma), int(n), k / n, k ** -0.5)

