"""Generalized Cantor sets, Cantor grills, placements and box counting.

Every set handled here is a finite union of closed axis-aligned boxes
(:class:`BoxUnion`).  Limit sets such as Cantor sets are realized at a finite
generation; the Hausdorff distance between the realization and the limit set
is carried along as ``BoxUnion.resolution`` so that estimators know below
which scale the realization stops looking like the limit set.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from singlab.errors import (
    DimensionMismatchError,
    DomainError,
    InsufficientScalesError,
    PrecisionError,
)

# Shortest interval we agree to build: keeps ~3 significant digits of every
# endpoint difference inside [0, 1].
MIN_INTERVAL_LENGTH = 1e3 * np.finfo(float).eps
MAX_GENERATION = 26
PLACEMENT_MARGIN = 0.05
# Relative slack used when mapping box endpoints onto mesh indices.
_MESH_TOL = 1e-9
_MAX_CELLS = 60_000_000


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class RatioSchedule:
    """Per-generation contraction ratios of a two-children Cantor construction."""

    ratios: tuple[float, ...]

    def __post_init__(self):
        ratios = tuple(float(r) for r in self.ratios)
        if not ratios:
            raise DomainError("ratio schedule must contain at least one generation")
        for n, r in enumerate(ratios, start=1):
            if not 0.0 < r < 0.5:
                raise DomainError(f"ratio of generation {n} is {r}; must lie in (0, 1/2)")
        object.__setattr__(self, "ratios", ratios)

    @classmethod
    def uniform(cls, d: float, generations: int) -> "RatioSchedule":
        return cls((2.0 ** (-1.0 / d),) * generations)

    def __len__(self) -> int:
        return len(self.ratios)

    def length_at(self, generation: int) -> float:
        return math.prod(self.ratios[:generation])


def _cantor_intervals(ratios: Sequence[float]) -> np.ndarray:
    lefts = np.zeros(1)
    length = 1.0
    for lam in ratios:
        child = lam * length
        lefts = np.column_stack((lefts, lefts + length - child)).ravel()
        length = child
    return np.column_stack((lefts, lefts + length))


@dataclass(frozen=True)
class GeneralizedCantorSet:
    schedule: RatioSchedule
    generation: int
    intervals: np.ndarray = field(repr=False)
    target_dim: float

    @property
    def interval_length(self) -> float:
        return self.schedule.length_at(self.generation)

    @property
    def hausdorff_bound(self) -> float:
        """Upper bound on the Hausdorff distance to the limit set."""
        return self.interval_length

    def at_generation(self, generation: int) -> "GeneralizedCantorSet":
        if not 1 <= generation <= len(self.schedule):
            raise DomainError(f"generation {generation} outside 1..{len(self.schedule)}")
        return GeneralizedCantorSet(
            self.schedule,
            generation,
            _frozen(_cantor_intervals(self.schedule.ratios[:generation])),
            self.target_dim,
        )

    def as_box_union(self) -> "BoxUnion":
        return BoxUnion(
            self.intervals[:, :1],
            self.intervals[:, 1:],
            target_dim=self.target_dim,
            resolution=self.hausdorff_bound,
        )

    def to_dict(self) -> dict:
        return {
            "kind": "cantor",
            "ratios": list(self.schedule.ratios),
            "generation": self.generation,
            "boxes": self.intervals.tolist(),
            "target_dim": self.target_dim,
            "placement": None,
        }


def max_safe_generation(ratio: float) -> int:
    return int(math.floor(math.log(MIN_INTERVAL_LENGTH) / math.log(ratio)))


def cantor_for_dimension(d: float, generation: int) -> GeneralizedCantorSet:
    """Uniform-ratio Cantor set whose limit has box and Hausdorff dimension ``d``.

    The ratio is ``2**(-1/d)`` so that ``2**n`` intervals of length
    ``ratio**n`` give ``log 2 / log(1/ratio) = d``.
    """
    if not 0.0 < d < 1.0:
        raise DomainError(f"target dimension {d} must lie in (0, 1)")
    if generation < 1:
        raise DomainError(f"generation must be >= 1, got {generation}")
    ratio = 2.0 ** (-1.0 / d)
    safe = min(max_safe_generation(ratio), MAX_GENERATION)
    if generation > safe:
        raise PrecisionError(
            f"generation {generation} for d={d} gives intervals of length "
            f"{ratio ** generation:.3g}; max safe generation is {safe}",
            max_safe_generation=safe,
        )
    schedule = RatioSchedule.uniform(d, generation)
    return GeneralizedCantorSet(schedule, generation, _frozen(_cantor_intervals(schedule.ratios)), d)


@dataclass(frozen=True, eq=False)
class BoxUnion:
    """Finite union of closed axis-aligned boxes in R^N.

    ``lo`` and ``hi`` have shape (boxes, N).  ``resolution`` bounds the
    Hausdorff distance to the idealized set this union approximates (0 when
    the union is the set itself).
    """

    lo: np.ndarray = field(repr=False)
    hi: np.ndarray = field(repr=False)
    target_dim: float | None = None
    resolution: float = 0.0

    def __post_init__(self):
        lo = np.atleast_2d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_2d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape:
            raise DimensionMismatchError(f"lo shape {lo.shape} != hi shape {hi.shape}")
        if lo.shape[0] == 0:
            raise DomainError("box union must contain at least one box")
        if np.any(lo > hi):
            raise DomainError("every box needs lo <= hi on each axis")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise DomainError("box bounds must be finite")
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "_tree", None)

    @classmethod
    def point(cls, p: Sequence[float]) -> "BoxUnion":
        p = np.asarray(p, dtype=float)[None, :]
        return cls(p, p, target_dim=0.0)

    @classmethod
    def cube(cls, lo: Sequence[float], hi: Sequence[float], target_dim: float | None = None) -> "BoxUnion":
        lo = np.asarray(lo, dtype=float)
        if target_dim is None:
            target_dim = float(np.count_nonzero(np.asarray(hi, dtype=float) > lo))
        return cls(lo[None, :], np.asarray(hi, dtype=float)[None, :], target_dim=target_dim)

    @property
    def dim(self) -> int:
        return self.lo.shape[1]

    @property
    def n_boxes(self) -> int:
        return self.lo.shape[0]

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lo.min(axis=0), self.hi.max(axis=0)

    @property
    def diameter(self) -> float:
        blo, bhi = self.bounding_box()
        return float(np.linalg.norm(bhi - blo))

    def vertices(self) -> np.ndarray:
        """All 2^N corners of every box, shape (boxes * 2^N, N)."""
        n = self.dim
        corners = np.array(np.meshgrid(*([[0, 1]] * n), indexing="ij")).reshape(n, -1).T.astype(bool)
        out = np.where(corners[None, :, :], self.hi[:, None, :], self.lo[:, None, :])
        return out.reshape(-1, n)

    def union(self, *others: "BoxUnion") -> "BoxUnion":
        parts = (self, *others)
        if len({p.dim for p in parts}) != 1:
            raise DimensionMismatchError("all box unions must share the ambient dimension")
        dims = [p.target_dim for p in parts]
        target = None if any(d is None for d in dims) else max(dims)
        return BoxUnion(
            np.vstack([p.lo for p in parts]),
            np.vstack([p.hi for p in parts]),
            target_dim=target,
            resolution=max(p.resolution for p in parts),
        )

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        inside = np.zeros(len(points), dtype=bool)
        for start in range(0, self.n_boxes, 4096):
            lo = self.lo[start:start + 4096]
            hi = self.hi[start:start + 4096]
            hit = np.all((points[:, None, :] >= lo[None]) & (points[:, None, :] <= hi[None]), axis=2)
            inside |= hit.any(axis=1)
        return inside

    def to_dict(self, kind: str = "box_union", ratios=None, generation=None, placement=None) -> dict:
        return {
            "kind": kind,
            "ratios": list(ratios) if ratios is not None else None,
            "generation": generation,
            "boxes": [[list(l), list(h)] for l, h in zip(self.lo.tolist(), self.hi.tolist())],
            "target_dim": self.target_dim,
            "resolution": self.resolution,
            "placement": placement.to_dict() if placement is not None else None,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BoxUnion":
        boxes = np.asarray(doc["boxes"], dtype=float)
        if boxes.ndim == 2:
            # cantor documents store intervals as [lo, hi] rows
            boxes = boxes[:, :, None]
        return cls(
            boxes[:, 0, :],
            boxes[:, 1, :],
            target_dim=doc.get("target_dim"),
            resolution=doc.get("resolution") or 0.0,
        )

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(boxes_to_csv_text(self))

    @classmethod
    def read_csv(cls, path: str | Path, target_dim: float | None = None) -> "BoxUnion":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = data.shape[1] // 2
        return cls(data[:, :n], data[:, n:], target_dim=target_dim)


@dataclass(frozen=True)
class AffinePlacement:
    """x -> scale * x[axis_permutation] + translation."""

    scale: float
    translation: tuple[float, ...]
    axis_permutation: tuple[int, ...]

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError(f"placement scale must be positive, got {self.scale}")
        perm = tuple(int(i) for i in self.axis_permutation)
        if sorted(perm) != list(range(len(perm))):
            raise DomainError(f"{perm} is not a permutation of 0..{len(perm) - 1}")
        if len(self.translation) != len(perm):
            raise DimensionMismatchError("translation and permutation lengths differ")
        object.__setattr__(self, "axis_permutation", perm)
        object.__setattr__(self, "translation", tuple(float(t) for t in self.translation))

    def apply_points(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return self.scale * x[:, list(self.axis_permutation)] + np.asarray(self.translation)

    def apply(self, s: BoxUnion) -> BoxUnion:
        perm = list(self.axis_permutation)
        t = np.asarray(self.translation)
        return BoxUnion(
            self.scale * s.lo[:, perm] + t,
            self.scale * s.hi[:, perm] + t,
            target_dim=s.target_dim,
            resolution=self.scale * s.resolution,
        )

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "translation": list(self.translation),
            "axis_permutation": list(self.axis_permutation),
        }


def cantor_grill(C: GeneralizedCantorSet, ambient_N: int, thick_axes: int) -> BoxUnion:
    """``C x [0,1]^m x {0}^(N-1-m)`` as a box union in R^N."""
    if thick_axes < 0 or thick_axes + 1 > ambient_N:
        raise DimensionMismatchError(
            f"grill needs 1 + thick_axes <= ambient_N, got thick_axes={thick_axes}, N={ambient_N}"
        )
    n_int = C.intervals.shape[0]
    lo = np.zeros((n_int, ambient_N))
    hi = np.zeros((n_int, ambient_N))
    lo[:, 0] = C.intervals[:, 0]
    hi[:, 0] = C.intervals[:, 1]
    hi[:, 1:1 + thick_axes] = 1.0
    return BoxUnion(lo, hi, target_dim=C.target_dim + thick_axes, resolution=C.hausdorff_bound)


def place(
    s: BoxUnion,
    center: Sequence[float],
    radius: float,
    axis_permutation: Sequence[int] | None = None,
    margin: float = PLACEMENT_MARGIN,
) -> tuple[BoxUnion, AffinePlacement]:
    """Scale and translate ``s`` so that it sits strictly inside a ball.

    The bounding box of the (permuted) set is centred on the ball centre and
    scaled so its circumscribed sphere has radius ``(1 - margin) * radius``;
    this is the largest scale for which every vertex of the bounding box, and
    hence of every box, stays within that distance.
    """
    if not radius > 0:
        raise DomainError(f"ball radius must be positive, got {radius}")
    center = np.asarray(center, dtype=float)
    if center.shape != (s.dim,):
        raise DimensionMismatchError(f"ball centre has shape {center.shape}, set lives in R^{s.dim}")
    perm = tuple(range(s.dim)) if axis_permutation is None else tuple(axis_permutation)
    blo, bhi = s.bounding_box()
    blo, bhi = blo[list(perm)], bhi[list(perm)]
    circumradius = 0.5 * float(np.linalg.norm(bhi - blo))
    if circumradius > 0:
        # shave one part in 1e9 so the vertex bound is strict in floating point
        scale = (1.0 - margin) * radius / circumradius * (1.0 - 1e-9)
    else:
        scale = 1.0
    translation = center - scale * 0.5 * (blo + bhi)
    placement = AffinePlacement(scale, tuple(translation), perm)
    return placement.apply(s), placement


@dataclass(frozen=True)
class DimensionEstimate:
    slope: float
    intercept: float
    scales_used: tuple[float, ...]
    counts: tuple[int, ...]
    r_squared: float
    saturated: bool = False
    excluded_scales: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "scales_used": list(self.scales_used),
            "counts": list(self.counts),
            "r_squared": self.r_squared,
            "saturated": self.saturated,
            "excluded_scales": list(self.excluded_scales),
        }


def _mesh_ranges(lo: np.ndarray, hi: np.ndarray, eps: float, origin: np.ndarray):
    a = np.floor((lo - origin) / eps + _MESH_TOL).astype(np.int64)
    b = np.ceil((hi - origin) / eps - _MESH_TOL).astype(np.int64) - 1
    return a, np.maximum(a, b)


def occupied_cells(s: BoxUnion, eps: float, origin: Sequence[float] | None = None) -> np.ndarray:
    """Integer indices of the eps-mesh cells met by the union, one row per cell.

    Cells are ``origin + eps * [i, i+1)`` per axis; a box whose face lies on a
    mesh plane is attributed only to the cells its interior (or, for
    degenerate axes, its coordinate) falls into.
    """
    origin = s.bounding_box()[0] if origin is None else np.asarray(origin, dtype=float)
    a, b = _mesh_ranges(s.lo, s.hi, eps, origin)
    spans = b - a + 1
    total = int(np.prod(spans, axis=1, dtype=np.int64).sum())
    if total > _MAX_CELLS:
        raise MemoryError(f"eps={eps:.3g} would enumerate {total} mesh cells; raise the smallest scale")
    n = s.dim
    chunks = []
    shapes, inverse = np.unique(spans, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    for k, shape in enumerate(shapes):
        base = a[inverse == k]
        if np.all(shape == 1):
            chunks.append(base)
            continue
        offs = np.indices(tuple(shape)).reshape(n, -1).T
        chunks.append((base[:, None, :] + offs[None, :, :]).reshape(-1, n))
    cells = np.vstack(chunks)
    return _unique_rows(cells)


def _unique_rows(cells: np.ndarray) -> np.ndarray:
    if len(cells) == 0:
        return cells
    mins = cells.min(axis=0)
    shifted = cells - mins
    radix = shifted.max(axis=0) + 1
    if float(np.prod(radix.astype(float))) < 2.0 ** 62:
        code = np.zeros(len(cells), dtype=np.int64)
        for k in range(cells.shape[1]):
            code = code * radix[k] + shifted[:, k]
        _, first = np.unique(code, return_index=True)
        return cells[np.sort(first)]
    return np.unique(cells, axis=0)


def count_cells(s: BoxUnion, eps: float, origin: Sequence[float] | None = None) -> int:
    return int(len(occupied_cells(s, eps, origin)))


def geometric_scales(eps_min: float, eps_max: float, scales_per_decade: int) -> np.ndarray:
    decades = math.log10(eps_max / eps_min)
    n = max(int(math.ceil(decades * scales_per_decade - 1e-9)), 1)
    return eps_max * 10.0 ** (-np.arange(n + 1) * decades / n)


def loglog_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Ordinary least squares y = slope * x + intercept; returns (slope, intercept, r^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    syy = float(np.sum((y - ym) ** 2))
    if sxx == 0:
        raise InsufficientScalesError("log-log fit needs at least two distinct abscissae")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    if syy == 0:
        return slope, intercept, 1.0
    resid = y - (slope * x + intercept)
    r2 = 1.0 - float(np.sum(resid ** 2)) / syy
    return slope, intercept, min(max(r2, 0.0), 1.0)


def default_scale_range(s: BoxUnion) -> tuple[float, float]:
    diam = s.diameter
    if diam == 0:
        return 1e-3, 1.0
    return max(s.resolution, diam * 2.0 ** -10), diam / 2


def box_counting_dimension(
    s: BoxUnion,
    scale_range: tuple[float, float] | None = None,
    scales_per_decade: int = 10,
    *,
    scales: Iterable[float] | None = None,
    origin: Sequence[float] | None = None,
) -> DimensionEstimate:
    """Box-counting dimension from an OLS fit of log N(eps) against log(1/eps).

    Scales finer than ``s.resolution`` are dropped (the finite realization is
    not the limit set there) and the estimate is marked ``saturated``.
    """
    if scales is None:
        eps_min, eps_max = scale_range if scale_range is not None else default_scale_range(s)
        if not 0 < eps_min < eps_max:
            raise DomainError(f"scale range needs 0 < eps_min < eps_max, got ({eps_min}, {eps_max})")
        diam = s.diameter
        if diam > 0 and eps_max > diam * (1 + 1e-12):
            raise DomainError(f"eps_max={eps_max} exceeds the set diameter {diam}")
        grid = geometric_scales(eps_min, eps_max, scales_per_decade)
    else:
        grid = np.asarray(sorted(scales, reverse=True), dtype=float)
    usable = grid[grid >= s.resolution * (1 - 1e-12)]
    excluded = tuple(float(e) for e in grid[grid < s.resolution * (1 - 1e-12)])
    if len(usable) < 3:
        raise InsufficientScalesError(
            f"only {len(usable)} scales at or above the set resolution {s.resolution:.3g}; need 3"
        )
    counts = np.array([count_cells(s, e, origin) for e in usable])
    slope, intercept, r2 = loglog_fit(np.log(1.0 / usable), np.log(counts))
    if excluded:
        warnings.warn(
            f"{len(excluded)} scales below the set resolution were excluded", RuntimeWarning, stacklevel=2
        )
    return DimensionEstimate(
        slope=float(min(max(slope, 0.0), s.dim)),
        intercept=intercept,
        scales_used=tuple(float(e) for e in usable),
        counts=tuple(int(c) for c in counts),
        r_squared=r2,
        saturated=bool(excluded),
        excluded_scales=excluded,
    )


def set_document(obj, placement: AffinePlacement | None = None) -> dict:
    """JSON-ready description of a Cantor set or box union."""
    if isinstance(obj, GeneralizedCantorSet):
        doc = obj.to_dict()
        doc["resolution"] = obj.hausdorff_bound
        if placement is not None:
            doc["placement"] = placement.to_dict()
        return doc
    return obj.to_dict(placement=placement)


def boxes_to_csv_text(s: BoxUnion) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    n = s.dim
    writer.writerow([f"lo_{i + 1}" for i in range(n)] + [f"hi_{i + 1}" for i in range(n)])
    for lo, hi in zip(s.lo.tolist(), s.hi.tolist()):
        writer.writerow([repr(v) for v in lo + hi])
    return buf.getvalue()
