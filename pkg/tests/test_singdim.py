from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from singlab.distance import DomainBox, distance
from singlab.errors import DomainError
from singlab.fractal_sets import BoxUnion, cantor_for_dimension, cantor_grill, place
from singlab.poisson import Grid, GridField, SolveConfig, solve_poisson
from singlab.rhs import RhsTerm, SingularRhs, stein_dense_function
from singlab.singdim import (
    Ball,
    FlaggedCells,
    PointEstimate,
    SdMap,
    SingularSample,
    countable_stability_check,
    dimension_of_flagged,
    flag_rhs_cells,
    lattice_points,
    sd_at_point,
    sd_map,
    singular_set_estimate,
    usc_check,
)

CELL = 2.0 ** -12


def point_rhs(p, domain):
    term = RhsTerm(BoxUnion.point(p), 2.5, 0.5, (1.0, 1.0), 1.0)
    return SingularRhs.from_terms(domain, [term])


def synthetic_map(values, spacing=0.1, radii=(0.5, 0.3, 0.1)):
    n = len(values)
    pts = lattice_points([0.0, 0.0], [spacing * n, spacing * n], [spacing, spacing])
    entries = tuple(
        PointEstimate(tuple(p), radii, (v,) * len(radii), (v == 0,) * len(radii), 1.0)
        for p, v in zip(pts, np.asarray(values, dtype=float).reshape(-1))
    )
    return SdMap(pts, (spacing, spacing), radii, entries)


def test_flagged_sample_threshold():
    with pytest.raises(DomainError):
        SingularSample((0.0,), True, -0.01, 1.0)


def test_point_singularity_single_cell():
    F = point_rhs([0.3 + 1e-4, 0.6 + 1e-4], DomainBox.unit(2))
    samples = singular_set_estimate(F, 0.1)
    assert len(samples) == 1
    assert np.allclose(samples[0].center, [0.35, 0.65])


def test_stein_field_flags_spikes():
    u = stein_dense_function(DomainBox((0.0,), (1.0,)), 0.5, 10)
    grid = Grid.uniform(DomainBox((0.0,), (1.0,)), 2001)
    field = GridField.from_function(grid, u)
    samples = [s for s in singular_set_estimate(field, 0.04) if s.flagged]
    centers = np.sort([s.center[0] for s in samples])
    assert np.allclose(centers, np.arange(1, 10) / 10)


def test_regular_field_not_flagged():
    grid = Grid.uniform(DomainBox.unit(2), 65)
    u, _ = solve_poisson(np.ones(grid.shape), grid)
    assert not any(s.flagged for s in singular_set_estimate(u, 0.25))


def test_solution_singularity_dominated_by_source():
    # sd u <= sd F: the solution blows up only at the point source
    dom = DomainBox((-1.0,) * 3, (1.0,) * 3)
    grid = Grid.uniform(dom, 33)
    F = lambda x: np.linalg.norm(x, axis=1) ** -2.5  # noqa: E731
    u, _ = solve_poisson(F, grid, SolveConfig(quadrature="cell"))
    flagged = [s for s in singular_set_estimate(u, 0.4) if s.flagged]
    assert len(flagged) == 1 and np.allclose(flagged[0].center, 0)
    cells = FlaggedCells.from_samples(flagged, grid.h[0], dom.lo)
    assert dimension_of_flagged(cells).value <= 0.0 + 0.1


def test_grill_cells_dimension():
    G = place(cantor_grill(cantor_for_dimension(0.5, 12), 2, 1), [0.5, 0.5], 0.4)[0]
    fd = dimension_of_flagged(flag_rhs_cells(G, CELL))
    assert fd.value == pytest.approx(1.5, abs=0.1)


def test_single_and_empty():
    one = FlaggedCells(np.zeros(2), 0.1, np.array([[3, 4]]))
    assert dimension_of_flagged(one).value == 0.0
    none = FlaggedCells(np.zeros(2), 0.1, np.zeros((0, 2), dtype=np.int64))
    fd = dimension_of_flagged(none)
    assert fd.value == 0.0 and fd.empty


def test_union_of_grills_takes_maximum():
    sets = []
    for i, d in enumerate((0.3, 0.5, 0.7, 0.8)):
        C = cantor_for_dimension(d, 12 if d < 0.6 else 16).as_box_union()
        sets.append(place(C, [0.1 + 0.25 * i], 0.1)[0])
    union = sets[0].union(*sets[1:])
    fd = dimension_of_flagged(flag_rhs_cells(union, 2.0 ** -20), max_scale=0.05)
    assert fd.value == pytest.approx(0.8, abs=0.1)


@given(st.floats(0.02, 0.98), st.floats(0.02, 0.98))
def test_detection_sandwich(x, y):
    G = place(cantor_grill(cantor_for_dimension(0.6, 8), 2, 1), [0.5, 0.5], 0.4)[0]
    size = 1 / 64
    cells = flag_rhs_cells(G, size, origin=[0.0, 0.0])
    # every flagged cell meets A; a sampled point of A lies in a flagged cell
    assert np.all(distance(cells.centers, G) <= size * np.sqrt(2) / 2 + 1e-12)
    k = int(x * G.n_boxes) % G.n_boxes
    p = G.lo[k] + y * (G.hi[k] - G.lo[k])
    idx = np.floor(p / size).astype(int)
    at_face = np.isclose(p / size, np.round(p / size))
    if not np.any(at_face):
        assert any(np.array_equal(idx, c) for c in cells.index)


def test_radii_checks():
    cells = flag_rhs_cells(BoxUnion.point([0.5, 0.5]), 0.01, [0.0, 0.0])
    with pytest.raises(DomainError, match="minimum usable radius is 0.04"):
        sd_at_point([0.5, 0.5], cells, [0.2, 0.03])
    with pytest.raises(DomainError):
        sd_at_point([0.5, 0.5], cells, [0.1, 0.2])


def test_no_singular_set_is_zero():
    cells = FlaggedCells(np.zeros(2), 0.01, np.zeros((0, 2), dtype=np.int64))
    est = sd_at_point([0.5, 0.5], cells, [0.3, 0.1])
    assert est.estimates == (0.0, 0.0) and all(est.empty)


def test_monotone_radii():
    # the restricted set shrinks with r; finite-level fits on a lacunary set
    # still wobble at a few percent of points, never by more than 0.2
    G = place(cantor_grill(cantor_for_dimension(0.5, 10), 2, 1), [0.5, 0.5], 0.3)[0]
    cells = flag_rhs_cells(G, 2.0 ** -11, [0.0, 0.0])
    pts = np.random.default_rng(0).uniform(0.05, 0.95, (60, 2))
    m = sd_map(pts, cells, [0.4, 0.2, 0.1, 0.05], [0.1, 0.1])
    assert len(m.monotone_violations(0.1)) <= 0.05 * len(pts)
    assert m.monotone_violations(0.2) == []


def test_constant_map_no_violations():
    assert usc_check(synthetic_map(np.ones((5, 5)))) == []


def test_corrupted_map_one_violation():
    vals = np.ones((5, 5))
    vals[2, 2] = 0.0
    viol = usc_check(synthetic_map(vals))
    assert len(viol) == 1 and viol[0].index == 12
    assert viol[0].magnitude == pytest.approx(1.0)


def test_two_region_map_regular_side_clean():
    half = BoxUnion.cube([0.5], [1.0])
    cells = flag_rhs_cells(half, 2.0 ** -10, [0.0])
    m = sd_map(lattice_points([0.0], [1.0], [0.1]), cells, [0.3, 0.2, 0.12, 0.04], [0.1])
    lim = m.limits
    assert np.all(lim[m.points[:, 0] < 0.5] == 0)
    assert np.all(np.abs(lim[m.points[:, 0] > 0.5] - 1) <= 0.15)
    assert all(v.point[0] > 0.5 for v in usc_check(m))
    assert usc_check(m) == []
    assert m.monotone_violations() == []


def test_stability_identical_copies():
    C = cantor_for_dimension(0.5, 12).as_box_union()
    rep = countable_stability_check([C, C])
    assert rep.difference == 0.0 and rep.passed


def test_stability_two_dimensions():
    a = place(cantor_for_dimension(0.3, 12).as_box_union(), [0.25], 0.2)[0]
    b = place(cantor_for_dimension(0.7, 16).as_box_union(), [0.75], 0.2)[0]
    rep = countable_stability_check([a, b])
    assert rep.union_slope == pytest.approx(0.7, abs=0.1) and rep.passed


def test_stability_point_and_square():
    pt = BoxUnion.point([2.0, 2.0])
    sq = BoxUnion.cube([0.0, 0.0], [1.0, 1.0])
    rep = countable_stability_check([pt, sq])
    assert rep.union_slope == pytest.approx(2.0, abs=0.1)


def test_sdmap_exports():
    m = synthetic_map(np.ones((2, 2)))
    lines = m.csv_text().splitlines()
    assert len(lines) == 5 and lines[0].startswith("x_1,x_2,r_0.5")
    assert len(m.to_dict()["points"]) == 4


def test_ball_contains():
    assert Ball((0.0, 0.0), 1.0).contains(np.array([[0.6, 0.8], [0.8, 0.8]])).tolist() == [True, False]
