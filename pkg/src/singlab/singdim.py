"""Singular sets, the pointwise singular-dimension map and its checks.

For right-hand sides built from box unions the singular set is taken to be
the constructed union itself; for sampled fields it is detected from local
power-law fits.  Dimensions of flagged cell sets are box counts on nested
dyadic meshes aligned with the flagging lattice.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from singlab.errors import DomainError, InsufficientDataError
from singlab.fractal_sets import (
    BoxUnion,
    DimensionEstimate,
    count_cells,
    geometric_scales,
    loglog_fit,
    occupied_cells,
)
from singlab.poisson import GridField, fit_singularity_order
from singlab.rhs import SingularRhs

USC_SLACK = 0.2
MONOTONE_TOLERANCE = 0.1
STABILITY_TOLERANCE = 0.1


@dataclass(frozen=True)
class SingularSample:
    center: tuple[float, ...]
    flagged: bool
    exponent: float
    confidence: float

    def __post_init__(self):
        if self.flagged and not self.exponent < -0.05:
            raise DomainError(f"flagged sample with exponent {self.exponent} >= -0.05")


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(points) - np.asarray(self.center), axis=1) <= self.radius


@dataclass(frozen=True, eq=False)
class FlaggedCells:
    """Flagged cells ``origin + size * [i, i+1)`` of a lattice, by integer index."""

    origin: np.ndarray
    size: float
    index: np.ndarray = field(repr=False)

    @property
    def centers(self) -> np.ndarray:
        return self.origin + self.size * (self.index + 0.5)

    def samples(self) -> list[SingularSample]:
        return [SingularSample(tuple(map(float, c)), True, -math.inf, 1.0) for c in self.centers]

    def within(self, ball: Ball) -> "FlaggedCells":
        keep = ball.contains(self.centers) if len(self.index) else np.zeros(0, dtype=bool)
        return FlaggedCells(self.origin, self.size, self.index[keep])

    @classmethod
    def from_samples(cls, samples: Sequence[SingularSample], size: float, origin: Sequence[float]) -> "FlaggedCells":
        origin = np.asarray(origin, dtype=float)
        pts = np.array([s.center for s in samples if s.flagged], dtype=float).reshape(-1, len(origin))
        idx = np.floor((pts - origin) / size).astype(np.int64)
        return cls(origin, float(size), np.unique(idx, axis=0))


def flag_rhs_cells(F: SingularRhs | BoxUnion, size: float, origin: Sequence[float] | None = None) -> FlaggedCells:
    """Cells of the ``size`` lattice meeting the constructed singular set, exactly."""
    A = F.union if isinstance(F, SingularRhs) else F
    if origin is None:
        origin = F.domain.lo_array if isinstance(F, SingularRhs) else A.bounding_box()[0]
    origin = np.asarray(origin, dtype=float)
    return FlaggedCells(origin, float(size), occupied_cells(A, size, origin))


def _local_maxima(u: GridField) -> np.ndarray:
    v = u.values
    n = v.ndim
    peak = np.ones(v.shape, dtype=bool)
    interior = u.grid.interior()
    for ax in range(n):
        for shift in (1, -1):
            nb = np.roll(v, shift, axis=ax)
            peak &= (v >= nb) | ~np.isfinite(v)
    return np.argwhere(peak & interior)


def singular_set_estimate(
    source: SingularRhs | GridField, spacing: float, *, window: tuple[float, float] | None = None
) -> list[SingularSample]:
    """Flagged lattice cells of ``source``.

    For a right-hand side every cell of the ``spacing`` lattice meeting the
    constructed union is returned.  For a field the candidates are local
    maxima and non-finite nodes; each gets a power-law fit over ``window``
    (default twice the node spacing up to ``spacing``) and is flagged when the
    fit is a confident blow-up.
    """
    if isinstance(source, SingularRhs):
        return flag_rhs_cells(source, spacing).samples()
    u = source
    h = float(np.max(u.h))
    window = (2 * h, max(spacing, 8 * h)) if window is None else window
    axes = [u.grid.axis(i) for i in range(u.grid.dim)]
    out = []
    for node in _local_maxima(u):
        a = np.array([axes[i][k] for i, k in enumerate(node)])
        try:
            fit = fit_singularity_order(u, a, None, window)
        except InsufficientDataError:
            continue
        flagged = bool(fit.singular or not np.isfinite(u.values[tuple(node)]))
        expo = fit.exponent
        if flagged and not expo < -0.05:
            expo = -math.inf  # infinite node value without a resolvable power law
        out.append(SingularSample(tuple(map(float, a)), flagged, float(expo), float(fit.r_squared)))
    return out


@dataclass(frozen=True)
class FlaggedDimension:
    estimate: DimensionEstimate | None
    value: float
    empty: bool
    n_cells: int

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "empty": self.empty,
            "n_cells": self.n_cells,
            "estimate": None if self.estimate is None else self.estimate.to_dict(),
        }


def dimension_of_flagged(cells: FlaggedCells, within: Ball | None = None, max_scale: float | None = None) -> FlaggedDimension:
    """Box-count dimension of the flagged cells inside ``within``.

    Counts use meshes of size ``cell * 2^m`` formed by integer index shifts, so
    every mesh is nested in the flagging lattice.  The coarsest mesh is about
    half the extent of the restricted set (or ``max_scale``).
    """
    sub = cells if within is None else cells.within(within)
    m = len(sub.index)
    if m == 0:
        return FlaggedDimension(None, 0.0, True, 0)
    if m == 1:
        return FlaggedDimension(None, 0.0, False, 1)
    idx = sub.index - sub.index.min(axis=0)
    extent = float(np.max(idx.max(axis=0) + 1))
    if max_scale is not None:
        extent = min(extent, 2 * max_scale / sub.size)
    levels = max(int(math.floor(math.log2(max(extent, 1.0) / 2))), 0)
    counts, scales = [], []
    for s in range(levels + 1):
        coarse = np.unique(idx >> s, axis=0)
        counts.append(len(coarse))
        scales.append(sub.size * 2.0 ** s)
    if len(scales) < 2:
        return FlaggedDimension(None, 0.0, False, m)
    slope, icpt, r2 = loglog_fit(np.log(1.0 / np.array(scales)), np.log(counts))
    dim = len(sub.origin)
    est = DimensionEstimate(float(min(max(slope, 0.0), dim)), icpt, tuple(scales), tuple(counts), r2)
    return FlaggedDimension(est, est.slope, False, m)


@dataclass(frozen=True)
class PointEstimate:
    point: tuple[float, ...]
    radii: tuple[float, ...]
    estimates: tuple[float, ...]
    empty: tuple[bool, ...]
    confidence: float

    @property
    def limit(self) -> float:
        return self.estimates[-1]

    def at_radius(self, r: float) -> float | None:
        """Estimate at the smallest recorded radius >= r."""
        ok = [e for rad, e in zip(self.radii, self.estimates) if rad >= r * (1 - 1e-12)]
        return ok[-1] if ok else None

    def to_dict(self) -> dict:
        return {
            "point": list(self.point),
            "radii": list(self.radii),
            "estimates": list(self.estimates),
            "empty": list(self.empty),
            "limit": self.limit,
            "confidence": self.confidence,
        }


def _check_radii(radii: Sequence[float], cell: float) -> tuple[float, ...]:
    radii = tuple(float(r) for r in radii)
    if not radii or any(b >= a for a, b in zip(radii, radii[1:])):
        raise DomainError(f"radii must be strictly decreasing, got {radii}")
    if radii[-1] < 4 * cell * (1 - 1e-12):
        raise DomainError(f"smallest radius {radii[-1]:g} is unresolvable; minimum usable radius is {4 * cell:g}")
    return radii


def sd_at_point(a: Sequence[float], cells: FlaggedCells, radii: Sequence[float]) -> PointEstimate:
    """Per-radius dimension of the flagged set in B_r(a); the limit is the smallest-radius value."""
    radii = _check_radii(radii, cells.size)
    a = tuple(float(x) for x in a)
    ests, empt, conf = [], [], 1.0
    for r in radii:
        fd = dimension_of_flagged(cells, Ball(a, r))
        ests.append(fd.value)
        empt.append(fd.empty)
        conf = 1.0 if fd.estimate is None else fd.estimate.r_squared
    return PointEstimate(a, radii, tuple(ests), tuple(empt), conf)


@dataclass(frozen=True)
class SdMap:
    points: np.ndarray = field(repr=False)
    spacing: tuple[float, ...]
    radii: tuple[float, ...]
    entries: tuple[PointEstimate, ...] = field(repr=False)

    @property
    def limits(self) -> np.ndarray:
        return np.array([e.limit for e in self.entries])

    def monotone_violations(self, tol: float = MONOTONE_TOLERANCE) -> list[tuple[int, float]]:
        """Points where a smaller radius gave a larger estimate by more than ``tol``."""
        out = []
        for i, e in enumerate(self.entries):
            worst = max((small - big for big, small in zip(e.estimates, e.estimates[1:])), default=0.0)
            if worst > tol:
                out.append((i, worst))
        return out

    def to_dict(self) -> dict:
        return {"spacing": list(self.spacing), "radii": list(self.radii), "points": [e.to_dict() for e in self.entries]}

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.points.shape[1]
        w.writerow([f"x_{i + 1}" for i in range(n)] + [f"r_{r!r}" for r in self.radii] + ["limit", "confidence"])
        for p, e in zip(self.points, self.entries):
            w.writerow([repr(float(c)) for c in p] + [repr(v) for v in e.estimates] + [repr(e.limit), repr(e.confidence)])
        return buf.getvalue()


def lattice_points(lo: Sequence[float], hi: Sequence[float], spacing: Sequence[float]) -> np.ndarray:
    """Cell centers of the lattice with the given per-axis spacing over [lo, hi]."""
    axes = []
    for a, b, s in zip(lo, hi, spacing):
        n = max(int(round((b - a) / s)), 1)
        axes.append(a + (np.arange(n) + 0.5) * (b - a) / n)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def sd_map(points: np.ndarray, cells: FlaggedCells, radii: Sequence[float], spacing: Sequence[float]) -> SdMap:
    entries = tuple(sd_at_point(p, cells, radii) for p in np.asarray(points, dtype=float))
    return SdMap(np.asarray(points, dtype=float), tuple(float(s) for s in spacing), tuple(float(r) for r in radii), entries)


@dataclass(frozen=True)
class UscViolation:
    index: int
    point: tuple[float, ...]
    magnitude: float
    neighbor: int

    def to_dict(self) -> dict:
        return {"index": self.index, "point": list(self.point), "magnitude": self.magnitude, "neighbor": self.neighbor}


def usc_check(m: SdMap, slack: float = USC_SLACK, reach: float | None = None) -> list[UscViolation]:
    """Discrete upper-semicontinuity test, one entry per violating lattice point.

    Point a violates when some lattice neighbour b within ``reach`` (default
    twice the largest lattice spacing) has a limit estimate exceeding a's
    estimate on a ball around a that contains b's smallest ball,
    B_{|a-b| + r_min}(a), by more than ``slack``.  Neighbours whose enclosing
    radius exceeds every recorded radius are skipped.
    """
    reach = 2 * max(m.spacing) if reach is None else reach
    pts = m.points
    rmin = m.radii[-1]
    limits = m.limits
    out = []
    for i, e in enumerate(m.entries):
        dist = np.linalg.norm(pts - pts[i], axis=1)
        worst, who = 0.0, -1
        for j in np.flatnonzero((dist <= reach * (1 + 1e-12)) & (dist > 0)):
            ref = e.at_radius(dist[j] + rmin)
            if ref is None:
                continue
            gap = limits[j] - ref
            if gap > slack and gap > worst:
                worst, who = float(gap), int(j)
        if who >= 0:
            out.append(UscViolation(i, tuple(map(float, pts[i])), worst, who))
    return out


@dataclass(frozen=True)
class StabilityReport:
    union_slope: float
    member_slopes: tuple[float, ...]
    difference: float
    scales: tuple[float, ...]
    passed: bool

    def to_dict(self) -> dict:
        return {
            "union_slope": self.union_slope,
            "member_slopes": list(self.member_slopes),
            "max_member_slope": max(self.member_slopes),
            "difference": self.difference,
            "scales": list(self.scales),
            "passed": self.passed,
        }


def countable_stability_check(
    sets: Sequence[BoxUnion], scales_per_decade: int = 10, tolerance: float = STABILITY_TOLERANCE
) -> StabilityReport:
    """Compare the box-count slope of a union with the largest member slope on one shared mesh family."""
    if not sets:
        raise DomainError("need at least one set")
    union = sets[0].union(*sets[1:])
    origin = union.bounding_box()[0]
    sized = [s.diameter for s in sets if s.diameter > 0]
    if not sized:
        return StabilityReport(0.0, tuple(0.0 for _ in sets), 0.0, (), True)
    eps_max = min(sized) / 2
    eps_min = max(max(s.resolution for s in sets), max(sized) * 2.0 ** -10)
    scales = geometric_scales(eps_min, eps_max, scales_per_decade)
    if len(scales) < 3:
        raise DomainError(f"matched scale range [{eps_min:.3g}, {eps_max:.3g}] is too narrow")
    x = np.log(1.0 / scales)

    def slope(s: BoxUnion) -> float:
        counts = [count_cells(s, e, origin) for e in scales]
        return float(min(max(loglog_fit(x, np.log(counts))[0], 0.0), s.dim))

    member = tuple(slope(s) for s in sets)
    u = slope(union)
    diff = abs(u - max(member))
    return StabilityReport(u, member, diff, tuple(map(float, scales)), diff <= tolerance)
