"""Poisson problem -Lap u = F with zero Dirichlet data, at desk scale.

Closed-form radial solutions, a matrix-free finite-difference solver on box
grids, comparison-principle checks, singularity-order fits and smoothness
probes.
"""

from __future__ import annotations

import csv
import json
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded
from scipy.optimize import minimize_scalar

from singlab.distance import DomainBox, distance
from singlab.errors import ConvergenceError, DomainError, InputError, InsufficientDataError
from singlab.fractal_sets import BoxUnion, loglog_fit

DEFAULT_TOL = 1e-10
DETECTION_THRESHOLD = -0.05
LOW_CONFIDENCE_R2 = 0.8
MIN_FIT_SAMPLES = 8
SMOOTH_RATIO = 1.2


# ---------------------------------------------------------------------------
# radial closed form


@dataclass(frozen=True)
class RadialSolution:
    """u1(rho) = C1 rho^-(gamma-2) - C2 solving -Lap u1 = C rho^-gamma in B_r, u1 = 0 on the sphere."""

    N: int
    gamma: float
    C: float
    r: float
    C1: float
    C2: float

    @property
    def order(self) -> float:
        return self.gamma - 2

    def __call__(self, rho):
        rho = np.asarray(rho, dtype=float)
        with np.errstate(divide="ignore"):
            return self.C1 * rho ** -self.order - self.C2

    def source(self, rho):
        rho = np.asarray(rho, dtype=float)
        with np.errstate(divide="ignore"):
            return self.C * rho ** -self.gamma

    def to_dict(self) -> dict:
        return {"N": self.N, "gamma": self.gamma, "C": self.C, "r": self.r, "C1": self.C1, "C2": self.C2}


def radial_solution(N: int, gamma: float, C: float = 1.0, r: float = 1.0) -> RadialSolution:
    if N < 3:
        raise DomainError(f"radial solutions need N >= 3, got {N}")
    if not gamma > 2:
        raise DomainError(f"gamma={gamma}: factor (gamma - 2) must be positive, need 2 < gamma")
    if not gamma < N:
        raise DomainError(f"gamma={gamma}: factor (N - gamma) must be positive, need gamma < N={N}")
    if not (C > 0 and r > 0):
        raise DomainError("amplitude C and radius r must be positive")
    C1 = C / ((gamma - 2) * (N - gamma))
    return RadialSolution(N, float(gamma), float(C), float(r), C1, C1 * r ** -(gamma - 2))


def radial_fd_residual(sol: RadialSolution, h: float, rho_min: float = 0.1) -> float:
    """Max |-(u'' + (N-1) u'/rho) - C rho^-gamma| with centered differences on [rho_min, r]."""
    rho = np.arange(rho_min, sol.r + h / 2, h)
    u = sol(rho)
    d2 = (u[2:] - 2 * u[1:-1] + u[:-2]) / h ** 2
    d1 = (u[2:] - u[:-2]) / (2 * h)
    res = -(d2 + (sol.N - 1) * d1 / rho[1:-1]) - sol.source(rho[1:-1])
    return float(np.max(np.abs(res)))


def convergence_order(hs: Sequence[float], errors: Sequence[float]) -> float:
    slope, _, _ = loglog_fit(np.log(hs), np.log(errors))
    return slope


def radial_fv_solve(N: int, gamma: float, C: float, r: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Conservative 1-D solve of -(rho^(N-1) u')' = C rho^(N-1-gamma) on (0, r), u(r) = 0.

    Control volumes around nodes i*h use exact source integrals and zero flux
    at the origin, so the singular source never has to be sampled pointwise.
    Returns (rho, u) at nodes 0..n.
    """
    h = r / n
    rho = np.arange(n + 1) * h
    faces = np.clip((np.arange(n + 1) + 0.5) * h, 0, r)
    left = np.concatenate(([0.0], faces[:-1]))
    q = N - gamma
    rhs = C * (faces ** q - left ** q) / q
    k = faces ** (N - 1) / h  # conductance across face i+1/2
    m = n  # unknowns 0..n-1
    diag = np.zeros(m)
    upper = np.zeros(m)
    lower = np.zeros(m)
    diag += k[:m]
    upper[:-1] = -k[: m - 1]
    diag[1:] += k[: m - 1]
    lower[1:] = -k[: m - 1]
    ab = np.vstack([np.concatenate(([0.0], upper[:-1])), diag, np.concatenate((lower[1:], [0.0]))])
    u = solve_banded((1, 1), ab, rhs[:m])
    return rho, np.append(u, 0.0)


# ---------------------------------------------------------------------------
# grids and fields


@dataclass(frozen=True)
class Grid:
    """Tensor grid of ``counts[i]`` nodes per axis spanning the closed domain."""

    domain: DomainBox
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) != self.domain.dim:
            raise DomainError("one node count per axis is required")
        if min(self.counts) < 3:
            raise DomainError(f"need at least 3 nodes per axis, got {self.counts}")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @classmethod
    def uniform(cls, domain: DomainBox, n: int) -> "Grid":
        return cls(domain, (n,) * domain.dim)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def h(self) -> np.ndarray:
        return self.domain.sides / (np.array(self.counts) - 1)

    def axis(self, i: int) -> np.ndarray:
        return np.linspace(self.domain.lo[i], self.domain.hi[i], self.counts[i])

    def nodes(self) -> np.ndarray:
        """All node coordinates, row-major, shape (prod(counts), N)."""
        mesh = np.meshgrid(*(self.axis(i) for i in range(self.dim)), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def interior(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[(slice(1, -1),) * self.dim] = True
        return mask

    def to_dict(self) -> dict:
        return {"domain": self.domain.to_dict(), "counts": list(self.counts)}


@dataclass(frozen=True, eq=False)
class GridField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        object.__setattr__(self, "values", v)

    @property
    def h(self) -> np.ndarray:
        return self.grid.h

    @classmethod
    def from_function(cls, grid: Grid, f: Callable[[np.ndarray], np.ndarray]) -> "GridField":
        return cls(grid, np.asarray(f(grid.nodes()), dtype=float).reshape(grid.shape))

    def nodes_and_values(self) -> tuple[np.ndarray, np.ndarray]:
        return self.grid.nodes(), self.values.reshape(-1)

    # binary layout: N, counts (uint64), lo/hi pairs (float64), row-major float64 payload
    def to_bytes(self) -> bytes:
        g = self.grid
        head = struct.pack("<Q", g.dim) + struct.pack(f"<{g.dim}Q", *g.counts)
        bounds = [v for pair in zip(g.domain.lo, g.domain.hi) for v in pair]
        head += struct.pack(f"<{2 * g.dim}d", *bounds)
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "GridField":
        (n,) = struct.unpack_from("<Q", data, 0)
        counts = struct.unpack_from(f"<{n}Q", data, 8)
        bounds = struct.unpack_from(f"<{2 * n}d", data, 8 + 8 * n)
        offset = 8 + 8 * n + 16 * n
        values = np.frombuffer(data, dtype="<f8", offset=offset).astype(float)
        domain = DomainBox(tuple(bounds[0::2]), tuple(bounds[1::2]))
        return cls(Grid(domain, tuple(counts)), values)

    def sidecar(self) -> dict:
        finite = self.values[np.isfinite(self.values)]
        return {
            "grid": self.grid.to_dict(),
            "dtype": "float64-le",
            "order": "row-major",
            "nonfinite_nodes": int(self.values.size - finite.size),
            "min": float(finite.min()) if finite.size else None,
            "max": float(finite.max()) if finite.size else None,
        }

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True))

    @classmethod
    def read(cls, path: str | Path) -> "GridField":
        return cls.from_bytes(Path(path).read_bytes())

    def write_csv(self, path: str | Path) -> None:
        if self.grid.dim > 2:
            raise DomainError("CSV export is limited to N <= 2")
        pts, vals = self.nodes_and_values()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{i + 1}" for i in range(self.grid.dim)] + ["u"])
            for p, v in zip(pts, vals):
                w.writerow([repr(float(c)) for c in p] + [repr(float(v))])


# ---------------------------------------------------------------------------
# solver


@dataclass(frozen=True)
class SolveConfig:
    tol: float = DEFAULT_TOL
    max_iter: int | None = None
    method: str = "cg"  # or "direct"
    quadrature: str = "node"  # or "cell": adaptive cell averages of callable sources
    cell_rtol: float = 1e-3
    max_cell_evals: int = 2 ** 18


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    tolerance: float
    wall_time: float
    method: str
    residual_history: list[float] = field(default_factory=list, repr=False)

    def to_dict(self, timing: bool = True) -> dict:
        out = {"iterations": self.iterations, "residual": self.residual, "tolerance": self.tolerance, "method": self.method}
        if timing:
            out["wall_time"] = self.wall_time
        return out


def _laplacian(u: np.ndarray, h: np.ndarray) -> np.ndarray:
    """-Lap u on the whole array with zero values beyond the edges."""
    out = np.zeros_like(u)
    for ax in range(u.ndim):
        w = 1.0 / h[ax] ** 2
        out += 2 * w * u
        lo = [slice(None)] * u.ndim
        hi = [slice(None)] * u.ndim
        lo[ax], hi[ax] = slice(0, -1), slice(1, None)
        out[tuple(lo)] -= w * u[tuple(hi)]
        out[tuple(hi)] -= w * u[tuple(lo)]
    return out


def cell_average(F, pts: np.ndarray, h: np.ndarray, rtol: float = 1e-3, max_evals: int = 2 ** 18) -> np.ndarray:
    """Average of F over the cell of side h centered at each point.

    Midpoint rules with q = 2, 4, 8, ... subcells per axis; a node stops
    refining once two successive rules agree to ``rtol`` or q**N would exceed
    ``max_evals``.
    """
    n = pts.shape[1]

    def rule(sel, q):
        off = ((np.arange(q) + 0.5) / q - 0.5)
        grid = np.stack(np.meshgrid(*([off] * n), indexing="ij"), axis=-1).reshape(-1, n) * h
        acc = np.zeros(len(sel))
        # chunk so that at most ~1e6 points are evaluated at once
        step = max(1, 1_000_000 // len(grid))
        for start in range(0, len(sel), step):
            block = pts[sel[start:start + step]]
            vals = np.asarray(F((block[:, None, :] + grid[None]).reshape(-1, n)), dtype=float)
            acc[start:start + step] = vals.reshape(len(block), len(grid)).mean(axis=1)
        return acc

    todo = np.arange(len(pts))
    q = 2
    prev = rule(todo, q)
    out = prev.copy()
    while len(todo) and (2 * q) ** n <= max_evals:
        q *= 2
        cur = rule(todo, q)
        out[todo] = cur
        keep = np.abs(cur - prev) > rtol * np.abs(cur)
        todo, prev = todo[keep], cur[keep]
    return out


def sample_rhs(F, grid: Grid, mask: np.ndarray | None = None, config: "SolveConfig | None" = None) -> np.ndarray:
    """Right-hand side values at unknown nodes.

    Callable sources that are infinite at a node are evaluated half a cell
    further along the first axis.  Array sources that are infinite at a node
    take the mean of their finite first-axis neighbours.
    """
    active = grid.interior() if mask is None else (grid.interior() & mask)
    if isinstance(F, GridField):
        values = F.values.copy()
        if values.shape != grid.shape:
            raise DomainError(f"field shape {values.shape} differs from grid {grid.shape}")
        bad = active & ~np.isfinite(values)
        if np.any(bad):
            fwd = np.roll(values, -1, axis=0)
            bwd = np.roll(values, 1, axis=0)
            pair = np.stack([np.where(np.isfinite(fwd), fwd, np.nan), np.where(np.isfinite(bwd), bwd, np.nan)])
            fill = np.nanmean(np.where(bad, pair, np.nan), axis=0)
            values[bad] = fill[bad]
    elif callable(F) and config is not None and config.quadrature == "cell":
        pts = grid.nodes()[active.reshape(-1)]
        values = np.zeros(grid.shape)
        values[active] = cell_average(F, pts, grid.h, config.cell_rtol, config.max_cell_evals)
    elif callable(F):
        pts = grid.nodes()[active.reshape(-1)]
        vals = np.asarray(F(pts), dtype=float)
        bad = ~np.isfinite(vals)
        if np.any(bad):
            shifted = pts[bad].copy()
            shifted[:, 0] += grid.h[0] / 2
            vals[bad] = np.asarray(F(shifted), dtype=float)
        values = np.zeros(grid.shape)
        values[active] = vals
    else:
        values = np.asarray(F, dtype=float).reshape(grid.shape).copy()
    values = np.where(active, values, 0.0)
    if not np.all(np.isfinite(values)):
        raise InputError("right-hand side is not finite at some unknown nodes",
                         np.argwhere(~np.isfinite(values)).tolist())
    return values


def _pcg(b: np.ndarray, active: np.ndarray, h: np.ndarray, tol: float, max_iter: int):
    diag = float(np.sum(2.0 / h ** 2))

    def apply(v):
        return np.where(active, _laplacian(v, h), 0.0)

    # the system is linear; normalizing b keeps inner products clear of under/overflow
    scale = float(np.max(np.abs(b)))
    if scale == 0:
        return np.zeros_like(b), 0, [0.0]
    b = b / scale
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = float(np.sqrt(np.vdot(b, b)))
    history = [1.0]
    z = r / diag
    p = z.copy()
    rz = float(np.vdot(r, z))
    for it in range(1, max_iter + 1):
        Ap = apply(p)
        alpha = rz / float(np.vdot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        rel = float(np.sqrt(np.vdot(r, r))) / bnorm
        history.append(rel)
        if rel <= tol:
            return x * scale, it, history
        z = r / diag
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"CG did not reach {tol:g} in {max_iter} iterations (last {history[-1]:.3g})", history)


def _full_kron(grid: Grid) -> sp.csr_matrix:
    """Sparse -Lap over all nodes in row-major order."""
    mats = []
    for ax, n in enumerate(grid.counts):
        w = 1.0 / grid.h[ax] ** 2
        mats.append(sp.diags([-w, 2 * w, -w], [-1, 0, 1], shape=(n, n), format="csr"))
    total = None
    for ax in range(grid.dim):
        term = None
        for j in range(grid.dim):
            m = mats[j] if j == ax else sp.identity(grid.counts[j], format="csr")
            term = m if term is None else sp.kron(term, m, format="csr")
        total = term if total is None else total + term
    return total


def solve_poisson(
    F, grid: Grid, config: SolveConfig | None = None, mask: np.ndarray | None = None
) -> tuple[GridField, SolveReport]:
    """Solve -Lap u = F on the grid with u = 0 on boundary nodes and outside ``mask``.

    ``F`` is a GridField, an array over nodes, or a callable on (M, N) points.
    """
    config = SolveConfig() if config is None else config
    t0 = time.perf_counter()
    active = grid.interior() if mask is None else (grid.interior() & np.asarray(mask, dtype=bool))
    if not np.any(active):
        raise DomainError("grid has no interior unknowns")
    b = sample_rhs(F, grid, mask, config)
    h = grid.h
    if config.method == "direct":
        idx = np.flatnonzero(active.reshape(-1))
        A = _full_kron(grid)[idx][:, idx].tocsc()
        u = np.zeros(grid.shape)
        sol = spla.spsolve(A, b.reshape(-1)[idx])
        u.reshape(-1)[idx] = sol
        resid = b - np.where(active, _laplacian(u, h), 0.0)
        bn = float(np.linalg.norm(b))
        rel = float(np.linalg.norm(resid)) / bn if bn > 0 else 0.0
        report = SolveReport(1, rel, config.tol, time.perf_counter() - t0, "direct", [rel])
        return GridField(grid, u), report
    if config.method != "cg":
        raise DomainError(f"unknown solve method {config.method!r}")
    max_iter = config.max_iter or 20 * int(sum(grid.counts)) + 200
    u, iters, hist = _pcg(b, active, h, config.tol, max_iter)
    report = SolveReport(iters, hist[-1], config.tol, time.perf_counter() - t0, "cg", hist)
    return GridField(grid, u), report


# ---------------------------------------------------------------------------
# comparison principle


@dataclass(frozen=True)
class ComparisonResult:
    max_violation: float
    slack: float
    passed: bool
    u1: GridField = field(repr=False)
    u2: GridField = field(repr=False)

    def to_dict(self) -> dict:
        return {"max_violation": self.max_violation, "slack": self.slack, "passed": self.passed}


def discrete_comparison(F1, F2, grid: Grid, config: SolveConfig | None = None) -> ComparisonResult:
    """Solve for both right-hand sides and measure max(u1 - u2)."""
    config = SolveConfig() if config is None else config
    b1 = sample_rhs(F1, grid, None, config)
    b2 = sample_rhs(F2, grid, None, config)
    bad = np.argwhere(grid.interior() & (b1 > b2))
    if len(bad):
        raise InputError(f"F1 > F2 at {len(bad)} interior nodes", [tuple(int(i) for i in b) for b in bad])
    u1, _ = solve_poisson(b1, grid, config)
    u2, _ = solve_poisson(b2, grid, config)
    scale = max(1.0, float(np.max(np.abs(u1.values))), float(np.max(np.abs(u2.values))))
    slack = 10 * config.tol * scale
    viol = max(0.0, float(np.max(u1.values - u2.values)))
    return ComparisonResult(viol, slack, viol <= slack, u1, u2)


# ---------------------------------------------------------------------------
# singularity order


@dataclass(frozen=True)
class ExponentFit:
    exponent: float
    amplitude: float
    r_squared: float
    window: tuple[float, float]
    offset: float = 0.0
    n_samples: int = 0

    def __post_init__(self):
        if not self.window[0] < self.window[1]:
            raise DomainError(f"degenerate window {self.window}")

    @property
    def low_confidence(self) -> bool:
        return self.r_squared < LOW_CONFIDENCE_R2

    @property
    def singular(self) -> bool:
        return self.exponent < DETECTION_THRESHOLD and not self.low_confidence

    @property
    def order(self) -> float:
        return -self.exponent

    def to_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "amplitude": self.amplitude,
            "r_squared": self.r_squared,
            "window": list(self.window),
            "offset": self.offset,
            "n_samples": self.n_samples,
            "low_confidence": self.low_confidence,
            "singular": self.singular,
        }


def _fit_with_offset(d: np.ndarray, u: np.ndarray, joint_offset: bool) -> tuple[float, float, float, float]:
    x = np.log(d)
    if not joint_offset:
        if np.any(u <= 0):
            raise InsufficientDataError("values must be positive for a fit without offset")
        s, b, r2 = loglog_fit(x, np.log(u))
        return s, b, r2, 0.0
    spread = float(u.max() - u.min())
    if spread == 0:
        return 0.0, float(np.log(abs(u[0]) + 1e-300)), 0.0, 0.0
    c_min = max(0.0, -float(u.min())) + 1e-3 * spread

    def loss(t):
        c = c_min + math.exp(t) - math.exp(lo_t)
        return 1.0 - loglog_fit(x, np.log(u + c))[2]

    scale = max(spread, float(np.abs(u).max()))
    lo_t, hi_t = math.log(1e-9 * scale), math.log(1e6 * scale)
    grid = np.linspace(lo_t, hi_t, 121)
    vals = [loss(t) for t in grid]
    k = int(np.argmin(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    best = minimize_scalar(loss, bounds=(a, b), method="bounded", options={"xatol": 1e-10})
    t = best.x if best.fun <= vals[k] else grid[k]
    c = c_min + math.exp(t) - math.exp(lo_t)
    s, icpt, r2 = loglog_fit(x, np.log(u + c))
    return s, icpt, r2, c


def fit_singularity_order(
    u,
    a: Sequence[float],
    A: BoxUnion | None = None,
    window: tuple[float, float] = (1e-3, 1e-1),
    *,
    joint_offset: bool = True,
    samples: int = 64,
) -> ExponentFit:
    """Fit u ~ amplitude * d^exponent - offset over d(x, A) in ``window`` near ``a``.

    ``u`` is a GridField (nodes within the window around ``a`` are used) or a
    callable (sampled at log-spaced radii along the coordinate directions).
    With ``joint_offset`` the offset is chosen to maximise r^2.
    """
    a = np.asarray(a, dtype=float)
    rmin, rmax = window
    if isinstance(u, GridField):
        h = float(np.max(u.h))
        if rmin < 2 * h * (1 - 1e-12):
            raise DomainError(f"window start {rmin:g} below twice the grid spacing {2 * h:g}")
        pts, vals = u.nodes_and_values()
        rho = np.linalg.norm(pts - a, axis=1)
        sel = (rho <= rmax) & np.isfinite(vals)
        pts, vals = pts[sel], vals[sel]
    else:
        rad = np.geomspace(rmin, rmax, samples)
        dirs = np.vstack([np.eye(len(a)), -np.eye(len(a))])
        pts = (a + rad[:, None, None] * dirs[None]).reshape(-1, len(a))
        vals = np.asarray(u(pts), dtype=float)
    d = np.linalg.norm(pts - a, axis=1) if A is None else np.asarray(distance(pts, A), dtype=float)
    sel = (d >= rmin * (1 - 1e-12)) & (d <= rmax * (1 + 1e-12)) & np.isfinite(vals)
    d, vals = d[sel], vals[sel]
    if len(d) < MIN_FIT_SAMPLES or np.ptp(d) == 0:
        raise InsufficientDataError(f"only {len(d)} usable samples in window {window}")
    s, icpt, r2, c = _fit_with_offset(d, vals, joint_offset)
    return ExponentFit(float(s), float(math.exp(icpt)), float(r2), (float(rmin), float(rmax)), float(c), len(d))


# ---------------------------------------------------------------------------
# smoothness


@dataclass(frozen=True)
class SmoothnessReport:
    spacings: list[float]
    maxima: list[float]
    smooth: bool

    def to_dict(self) -> dict:
        return {"spacings": self.spacings, "maxima": self.maxima, "smooth": self.smooth}


def box_set_distance(region: DomainBox, A: BoxUnion) -> float:
    gap = np.maximum(np.maximum(A.lo - region.hi_array, 0), np.maximum(region.lo_array - A.hi, 0))
    return float(np.min(np.linalg.norm(gap, axis=1)))


def smoothness_probe(
    u: GridField,
    region: DomainBox,
    refinements: Sequence[float] | None = None,
    *,
    A: BoxUnion | None = None,
    delta: float = 0.0,
) -> SmoothnessReport:
    """Max centered second differences over ``region`` at each spacing.

    Spacings refer to the first axis and must be integer multiples of its grid
    spacing; the same stride is used on every axis, so coarser levels are
    strided differences on the same field.  ``smooth`` holds when
    successive maxima grow by at most a factor 1.2 as the spacing shrinks.
    """
    g = u.grid
    if A is not None and box_set_distance(region, A) < delta:
        raise InputError(f"region lies within {delta} of the singular set", region.to_dict())
    h = g.h
    if refinements is None:
        refinements = [4 * float(h[0]), 2 * float(h[0]), float(h[0])]
    nodes = [g.axis(i) for i in range(g.dim)]
    inside = [(x >= region.lo[i] - 1e-12) & (x <= region.hi[i] + 1e-12) for i, x in enumerate(nodes)]
    maxima = []
    for step in sorted(refinements, reverse=True):
        worst = 0.0
        for ax in range(g.dim):
            s = int(round(step / h[0]))
            if s < 1 or abs(s * h[0] - step) > 1e-9 * step:
                raise DomainError(f"spacing {step} is not a multiple of grid spacing {h[0]}")
            v = u.values
            n = g.counts[ax]
            if n <= 2 * s:
                raise DomainError(f"spacing {step} too coarse for axis {ax}")
            center = [slice(None)] * g.dim
            plus = [slice(None)] * g.dim
            minus = [slice(None)] * g.dim
            center[ax], plus[ax], minus[ax] = slice(s, n - s), slice(2 * s, n), slice(0, n - 2 * s)
            d2 = (v[tuple(plus)] - 2 * v[tuple(center)] + v[tuple(minus)]) / (s * h[ax]) ** 2
            sel = np.ix_(*[ins[s:n - s] if i == ax else ins for i, ins in enumerate(inside)])
            part = d2[sel]
            if part.size:
                worst = max(worst, float(np.max(np.abs(part))))
        maxima.append(worst)
    spacings = sorted((float(r) for r in refinements), reverse=True)
    smooth = all(b <= SMOOTH_RATIO * a + 1e-12 for a, b in zip(maxima, maxima[1:]))
    return SmoothnessReport(spacings, maxima, smooth)
