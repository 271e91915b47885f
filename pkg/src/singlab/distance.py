"""Euclidean distance to box unions, neighborhood shells and shell sampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from singlab.errors import DimensionMismatchError, DomainError, EmptyShellError
from singlab.fractal_sets import BoxUnion, occupied_cells

ACCELERATE_ABOVE = 64
MIN_ACCEPTANCE = 1e-6
_BATCH = 4096
_WORK = 2_000_000


@dataclass(frozen=True)
class DomainBox:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise DimensionMismatchError("domain bounds need matching nonzero length")
        if any(h <= l for l, h in zip(lo, hi)):
            raise DomainError(f"domain box {lo}..{hi} has empty interior")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def unit(cls, n: int) -> "DomainBox":
        return cls((0.0,) * n, (1.0,) * n)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def lo_array(self) -> np.ndarray:
        return np.asarray(self.lo)

    @property
    def hi_array(self) -> np.ndarray:
        return np.asarray(self.hi)

    @property
    def sides(self) -> np.ndarray:
        return self.hi_array - self.lo_array

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.sides))

    def contains(self, points: np.ndarray, closed: bool = True) -> np.ndarray:
        points = np.atleast_2d(points)
        if closed:
            return np.all((points >= self.lo_array) & (points <= self.hi_array), axis=1)
        return np.all((points > self.lo_array) & (points < self.hi_array), axis=1)

    def as_box_union(self) -> BoxUnion:
        return BoxUnion(self.lo_array[None], self.hi_array[None], target_dim=float(self.dim))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_dict(cls, doc: dict) -> "DomainBox":
        return cls(tuple(doc["lo"]), tuple(doc["hi"]))


@dataclass(frozen=True)
class NeighborhoodShell:
    """Points of the domain whose distance to ``A`` lies in [inner, outer)."""

    A: BoxUnion
    inner: float
    outer: float

    def __post_init__(self):
        if self.inner < 0 or not self.outer > self.inner:
            raise DomainError(f"shell needs 0 <= inner < outer, got [{self.inner}, {self.outer})")

    def contains(self, points: np.ndarray) -> np.ndarray:
        d = distance(points, self.A)
        return (d >= self.inner) & (d < self.outer)


def _box_distances(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    gap = np.maximum(lo[None] - points[:, None], 0.0) + np.maximum(points[:, None] - hi[None], 0.0)
    return np.sqrt(np.einsum("pbn,pbn->pb", gap, gap))


def _pair_distances(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    gap = np.maximum(lo - points, 0.0) + np.maximum(points - hi, 0.0)
    return np.sqrt(np.einsum("pn,pn->p", gap, gap))


def _brute_force(points: np.ndarray, A: BoxUnion) -> np.ndarray:
    out = np.empty(len(points))
    step = max(1, _WORK // (A.n_boxes * A.dim))
    for start in range(0, len(points), step):
        chunk = points[start:start + step]
        out[start:start + step] = _box_distances(chunk, A.lo, A.hi).min(axis=1)
    return out


class BoxTree:
    """Bounding-volume hierarchy over the boxes of a union.

    Queries are exact branch-and-bound searches vectorized over points: a
    node is expanded only while its bounding-box distance can still beat the
    best distance found so far.
    """

    LEAF = 8

    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        n, dim = lo.shape
        # index n is an empty sentinel box used to pad short leaves
        self.lo = np.vstack((lo, np.full((1, dim), np.inf)))
        self.hi = np.vstack((hi, np.full((1, dim), -np.inf)))
        centers = 0.5 * (lo + hi)
        node_lo, node_hi, left, right, leaves = [], [], [], [], []
        order = np.arange(len(lo))
        stack = [(order, -1, False)]
        while stack:
            idx, parent, is_right = stack.pop()
            node = len(node_lo)
            node_lo.append(lo[idx].min(axis=0))
            node_hi.append(hi[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            leaves.append(None)
            if parent >= 0:
                (right if is_right else left)[parent] = node
            if len(idx) <= self.LEAF:
                leaves[node] = np.concatenate((idx, np.full(self.LEAF - len(idx), n)))
                continue
            spread = centers[idx].max(axis=0) - centers[idx].min(axis=0)
            axis = int(np.argmax(spread))
            part = idx[np.argsort(centers[idx, axis], kind="stable")]
            half = len(part) // 2
            stack.append((part[half:], node, True))
            stack.append((part[:half], node, False))
        self.node_lo = np.array(node_lo)
        self.node_hi = np.array(node_hi)
        self.left = np.array(left)
        self.right = np.array(right)
        self.is_leaf = self.left < 0
        leaf_boxes = np.full((len(node_lo), self.LEAF), n, dtype=np.int64)
        for node, boxes in enumerate(leaves):
            if boxes is not None:
                leaf_boxes[node] = boxes
        self.leaf_boxes = leaf_boxes

    def _leaf_min(self, points: np.ndarray, nodes: np.ndarray) -> np.ndarray:
        boxes = self.leaf_boxes[nodes]
        gap = np.maximum(self.lo[boxes] - points[:, None], 0.0) + np.maximum(points[:, None] - self.hi[boxes], 0.0)
        return np.sqrt(np.einsum("pkn,pkn->pk", gap, gap)).min(axis=1)

    def distance(self, points: np.ndarray) -> np.ndarray:
        m = len(points)
        # greedy descent gives every point an initial upper bound
        cur = np.zeros(m, dtype=np.int64)
        active = ~self.is_leaf[cur]
        while np.any(active):
            ia = np.flatnonzero(active)
            l, r = self.left[cur[ia]], self.right[cur[ia]]
            pa = points[ia]
            dl = _pair_distances(pa, self.node_lo[l], self.node_hi[l])
            dr = _pair_distances(pa, self.node_lo[r], self.node_hi[r])
            cur[ia] = np.where(dl <= dr, l, r)
            active[ia] = ~self.is_leaf[cur[ia]]
        best = self._leaf_min(points, cur)
        fp = np.arange(m)
        fn = np.zeros(m, dtype=np.int64)
        while len(fp):
            lb = _pair_distances(points[fp], self.node_lo[fn], self.node_hi[fn])
            keep = lb < best[fp]
            fp, fn = fp[keep], fn[keep]
            leaf = self.is_leaf[fn]
            if np.any(leaf):
                lp = fp[leaf]
                np.minimum.at(best, lp, self._leaf_min(points[lp], fn[leaf]))
            fp, fn = fp[~leaf], fn[~leaf]
            fp = np.concatenate((fp, fp))
            fn = np.concatenate((self.left[fn], self.right[fn]))
        return best

    def count_linf(self, points: np.ndarray, delta: float) -> np.ndarray:
        """Number of boxes whose delta-expansion (sup norm) contains each point."""
        counts = np.zeros(len(points))
        fp = np.arange(len(points))
        fn = np.zeros(len(points), dtype=np.int64)
        while len(fp):
            p = points[fp]
            inside = np.all((p >= self.node_lo[fn] - delta) & (p <= self.node_hi[fn] + delta), axis=1)
            fp, fn = fp[inside], fn[inside]
            leaf = self.is_leaf[fn]
            if np.any(leaf):
                lp, ln = fp[leaf], fn[leaf]
                boxes = self.leaf_boxes[ln]
                q = points[lp][:, None]
                hit = np.all((q >= self.lo[boxes] - delta) & (q <= self.hi[boxes] + delta), axis=2)
                np.add.at(counts, lp, hit.sum(axis=1))
            fp, fn = fp[~leaf], fn[~leaf]
            fp = np.concatenate((fp, fp))
            fn = np.concatenate((self.left[fn], self.right[fn]))
        return counts


def box_tree(A: BoxUnion) -> BoxTree:
    tree = A._tree
    if tree is None:
        tree = BoxTree(A.lo, A.hi)
        object.__setattr__(A, "_tree", tree)
    return tree


def distance(x, A: BoxUnion) -> np.ndarray | float:
    """Exact Euclidean distance from ``x`` (one point or an (M, N) array) to ``A``."""
    if A is None or A.n_boxes == 0:
        raise DomainError("distance to an empty set is undefined")
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != A.dim:
        raise DimensionMismatchError(f"points live in R^{pts.shape[1]}, set in R^{A.dim}")
    if A.n_boxes > ACCELERATE_ABOVE:
        d = box_tree(A).distance(pts)
    else:
        d = _brute_force(pts, A)
    return float(d[0]) if single else d


def point_distance(x, p: Sequence[float]) -> np.ndarray:
    return np.linalg.norm(np.atleast_2d(x) - np.asarray(p, dtype=float), axis=1)


def counter_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator: the same (seed, stream) always yields the same numbers."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream)]))


@dataclass(frozen=True)
class ShellSample:
    points: np.ndarray = field(repr=False)
    distances: np.ndarray = field(repr=False)
    acceptance_rate: float
    attempts: int

    def write_csv(self, path: str | Path) -> None:
        n = self.points.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x_{i + 1}" for i in range(n)] + ["distance"])
            for p, d in zip(self.points.tolist(), self.distances.tolist()):
                writer.writerow([repr(v) for v in p] + [repr(d)])


def shell_sample(
    shell: NeighborhoodShell,
    domain: DomainBox,
    count: int,
    seed: int,
    max_attempts: int = 2 ** 24,
) -> ShellSample:
    """Uniform rejection samples from ``domain`` restricted to ``shell``.

    Draws come in fixed-size batches from a counter-based stream, so the
    returned points depend only on (seed, count).  The acceptance rate
    estimates the relative volume of the shell inside the domain.
    """
    if count < 1:
        raise DomainError(f"count must be >= 1, got {count}")
    if domain.dim != shell.A.dim:
        raise DimensionMismatchError("domain and set dimensions differ")
    rng = counter_rng(seed)
    lo, sides = domain.lo_array, domain.sides
    kept_pts, kept_d = [], []
    accepted = attempts = 0
    while accepted < count:
        batch = lo + sides * rng.random((_BATCH, domain.dim))
        d = distance(batch, shell.A)
        hit = (d >= shell.inner) & (d < shell.outer)
        attempts += _BATCH
        if np.any(hit):
            kept_pts.append(batch[hit])
            kept_d.append(d[hit])
            accepted += int(hit.sum())
        if attempts >= max_attempts and accepted / attempts < MIN_ACCEPTANCE:
            raise EmptyShellError(
                f"shell [{shell.inner}, {shell.outer}) accepted {accepted} of {attempts} draws"
            )
    pts = np.vstack(kept_pts)[:count]
    dist = np.concatenate(kept_d)[:count]
    return ShellSample(pts, dist, accepted / attempts, attempts)


@dataclass(frozen=True)
class NeighborhoodDraw:
    """Weighted uniform draws from the delta-neighborhood of a box union.

    ``weights`` make ``mean(weights * f(points))`` an unbiased estimate of the
    integral of ``f`` over the union of delta-expanded boxes (clipped to the
    domain), which contains every point at distance < delta from the set.
    """

    points: np.ndarray
    distances: np.ndarray
    weights: np.ndarray
    proposal_volume: float


def _coarse_cover(A: BoxUnion, delta: float) -> BoxUnion:
    """Mesh-delta cells met by A when they are far fewer than A's boxes, else A itself.

    Expanded cells overlap boundedly, which keeps multiplicity counts cheap at
    large delta.
    """
    if A.n_boxes <= ACCELERATE_ABOVE:
        return A
    origin = A.bounding_box()[0]
    spans = np.ceil((A.hi - A.lo) / delta) + 1
    if np.prod(spans, axis=1).sum() > 4 * A.n_boxes:
        return A
    cells = occupied_cells(A, delta, origin)
    if 4 * len(cells) > A.n_boxes:
        return A
    return BoxUnion(origin + delta * cells, origin + delta * (cells + 1))


def neighborhood_draw(
    A: BoxUnion, domain: DomainBox, delta: float, count: int, rng: np.random.Generator
) -> NeighborhoodDraw:
    cover = _coarse_cover(A, delta)
    lo = np.maximum(cover.lo - delta, domain.lo_array)
    hi = np.minimum(cover.hi + delta, domain.hi_array)
    vols = np.prod(np.maximum(hi - lo, 0.0), axis=1)
    total = float(vols.sum())
    if total <= 0:
        raise EmptyShellError(f"delta-neighborhood of the set has zero volume inside the domain (delta={delta})")
    pick = rng.choice(cover.n_boxes, size=count, p=vols / total)
    pts = lo[pick] + (hi[pick] - lo[pick]) * rng.random((count, A.dim))
    if cover.n_boxes > ACCELERATE_ABOVE:
        # clipping to the domain cannot remove a sampled point from a box
        mult = box_tree(cover).count_linf(pts, delta)
    else:
        mult = np.zeros(count)
        step = max(1, _WORK // (cover.n_boxes * A.dim))
        for start in range(0, count, step):
            chunk = pts[start:start + step]
            inside = np.all((chunk[:, None] >= lo[None]) & (chunk[:, None] <= hi[None]), axis=2)
            mult[start:start + step] = inside.sum(axis=1)
    return NeighborhoodDraw(pts, distance(pts, A), total / np.maximum(mult, 1.0), total)
