from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from singlab.errors import DimensionMismatchError, DomainError, InsufficientScalesError, PrecisionError
from singlab.fractal_sets import (
    AffinePlacement,
    BoxUnion,
    box_counting_dimension,
    cantor_for_dimension,
    cantor_grill,
    count_cells,
    max_safe_generation,
    place,
)

LOG2_LOG3 = math.log(2) / math.log(3)


def test_middle_thirds_generation_one():
    C = cantor_for_dimension(LOG2_LOG3, 1)
    assert np.allclose(C.intervals, [[0, 1 / 3], [2 / 3, 1]])


def test_half_dimension_generation_two_lengths():
    C = cantor_for_dimension(0.5, 2)
    lengths = C.intervals[:, 1] - C.intervals[:, 0]
    assert np.allclose(lengths, 1 / 16)
    assert C.interval_length == pytest.approx(1 / 16)


@pytest.mark.parametrize("d", [0.2, 0.5, 0.9])
def test_generation_one_is_anchored_pair(d):
    C = cantor_for_dimension(d, 1)
    assert len(C.intervals) == 2
    assert C.intervals[0, 0] == 0.0 and C.intervals[1, 1] == pytest.approx(1.0)


@pytest.mark.parametrize("d", [0.0, 1.0, -0.3, 1.5])
def test_dimension_outside_unit_interval_rejected(d):
    with pytest.raises(DomainError):
        cantor_for_dimension(d, 3)


def test_precision_error_names_limit():
    g = max_safe_generation(0.25)
    with pytest.raises(PrecisionError) as info:
        cantor_for_dimension(0.5, g + 1)
    assert info.value.max_safe_generation == g
    assert str(g) in str(info.value)


@given(st.floats(0.3, 0.95), st.integers(1, 9))
def test_intervals_disjoint_and_nested(d, g):
    C = cantor_for_dimension(d, g + 1)
    parent = C.at_generation(g)
    iv = C.intervals
    assert len(iv) == 2 ** (g + 1)
    assert np.all(iv[1:, 0] > iv[:-1, 1])
    lengths = iv[:, 1] - iv[:, 0]
    assert np.allclose(lengths, C.interval_length, rtol=1e-12)
    # two children per parent, sharing the parent's endpoints
    assert np.allclose(iv[0::2, 0], parent.intervals[:, 0])
    assert np.allclose(iv[1::2, 1], parent.intervals[:, 1])


def test_grill_shape_and_target_dimension():
    C = cantor_for_dimension(0.5, 6)
    G = cantor_grill(C, 5, 3)
    assert G.dim == 5 and G.n_boxes == 64
    assert G.target_dim == pytest.approx(3.5)
    assert np.all(G.lo[:, 1:4] == 0) and np.all(G.hi[:, 1:4] == 1)
    assert np.all(G.lo[:, 4] == 0) and np.all(G.hi[:, 4] == 0)


def test_grill_without_thick_axes_embeds_the_set():
    C = cantor_for_dimension(0.5, 4)
    G = cantor_grill(C, 3, 0)
    assert np.allclose(G.lo[:, 0], C.intervals[:, 0])
    assert np.all(G.hi[:, 1:] == 0)


def test_grill_too_many_axes():
    C = cantor_for_dimension(0.5, 4)
    with pytest.raises(DimensionMismatchError):
        cantor_grill(C, 2, 2)


def test_grill_target_window_for_five_dimensions():
    # d + (N - 5) must sit strictly between N - 5 and N - 4
    for d in (0.2, 0.9):
        G = cantor_grill(cantor_for_dimension(d, 8), 6, 1)
        assert 1 < G.target_dim < 2


def test_place_unit_cube_scale_bound():
    for N in (1, 2, 3, 5):
        cube = BoxUnion.cube(np.zeros(N), np.ones(N))
        placed, P = place(cube, np.zeros(N), 1.0)
        # largest admissible scale: the diagonal fits the shrunken diameter
        assert P.scale == pytest.approx(0.95 * 2 / math.sqrt(N), rel=1e-6)
        assert np.max(np.linalg.norm(placed.vertices(), axis=1)) < 0.95 + 1e-9


def test_place_point_translation_only():
    pt = BoxUnion.point([0.3, -0.2])
    placed, P = place(pt, np.array([5.0, 5.0]), 0.01)
    assert P.scale == 1.0
    assert np.allclose(placed.lo, [[5.0, 5.0]])


def test_place_grill_into_small_ball():
    G = cantor_grill(cantor_for_dimension(0.5, 6), 2, 1)
    center = np.array([0.3, 0.7])
    placed, _ = place(G, center, 0.1)
    v = placed.vertices()
    assert np.max(np.linalg.norm(v - center, axis=1)) < 0.095 + 1e-12


@given(st.floats(0.05, 3.0), st.lists(st.floats(-2, 2), min_size=2, max_size=2))
def test_placement_scales_sides(s, t):
    A = cantor_grill(cantor_for_dimension(0.6, 5), 2, 1)
    P = AffinePlacement(s, tuple(t), (1, 0))
    B = P.apply(A)
    sides_a = np.sort((A.hi - A.lo).ravel())
    sides_b = np.sort((B.hi - B.lo).ravel())
    assert np.allclose(sides_b, s * sides_a)


def test_box_count_point_and_square():
    pt = BoxUnion.point([0.5, 0.5])
    est = box_counting_dimension(pt, (1e-3, 0.5))
    assert est.slope == pytest.approx(0.0, abs=1e-12)
    sq = BoxUnion.cube([0.0, 0.0], [1.0, 1.0])
    est = box_counting_dimension(sq, (1e-3, 0.5))
    assert est.slope == pytest.approx(2.0, abs=0.05)


def test_box_count_middle_thirds():
    C = cantor_for_dimension(LOG2_LOG3, 12).as_box_union()
    est = box_counting_dimension(C, (3.0 ** -10, 3.0 ** -2))
    assert est.slope == pytest.approx(LOG2_LOG3, abs=0.05)


@pytest.mark.parametrize("d", [1 / 3, 0.5, LOG2_LOG3])
def test_generation_refinement_counts(d):
    # 1/lambda is an integer, so every generation-j interval is one mesh cell
    g = 10
    gen = cantor_for_dimension(d, g)
    C = gen.as_box_union()
    for j in range(1, g + 1):
        assert count_cells(C, gen.at_generation(j).interval_length, origin=np.zeros(1)) == 2 ** j


@pytest.mark.parametrize("d", [0.3, 0.45])
def test_generation_counts_bracketed(d):
    # gaps exceed the interval length, so a cell meets at most two intervals
    # and an interval at most two cells
    g = 10
    C = cantor_for_dimension(d, g).as_box_union()
    for j in range(1, g + 1):
        n = count_cells(C, 2.0 ** (-j / d), origin=np.zeros(1))
        assert 2 ** (j - 1) <= n <= 2 ** (j + 1)


def test_counts_nonincreasing_in_scale():
    # nested dyadic meshes: every fine cell sits in one coarse cell
    C = cantor_grill(cantor_for_dimension(0.5, 10), 2, 1)
    est = box_counting_dimension(C, scales=[2.0 ** -j for j in range(1, 12)], origin=np.zeros(2))
    order = np.argsort(est.scales_used)
    counts = np.asarray(est.counts)[order]
    assert np.all(np.diff(counts) <= 0)
    assert 0 <= est.slope <= 2 and 0 <= est.r_squared <= 1


def test_saturated_scales_excluded():
    C = cantor_for_dimension(0.5, 6).as_box_union()
    est = box_counting_dimension(C, (1e-6, 0.5))
    assert est.saturated
    assert min(est.scales_used) >= C.resolution


def test_too_few_scales():
    with pytest.raises(InsufficientScalesError):
        box_counting_dimension(BoxUnion.cube([0.0], [1.0]), (0.4, 0.5), scales_per_decade=2)


def test_placement_invariance_of_dimension():
    A = cantor_grill(cantor_for_dimension(0.5, 7), 2, 1)
    ref = box_counting_dimension(A, (1e-3, 0.1))
    s = 0.37
    B = AffinePlacement(s, (0.2, -1.0), (1, 0)).apply(A)
    est = box_counting_dimension(B, (s * 1e-3, s * 0.1))
    assert abs(est.slope - ref.slope) <= 0.05


@given(st.integers(0, 2 ** 10 - 1), st.integers(1, 64))
def test_subset_counts_monotone(start, size):
    C = cantor_for_dimension(0.5, 10).as_box_union()
    sub = BoxUnion(C.lo[start:start + size], C.hi[start:start + size], resolution=C.resolution)
    if sub.n_boxes == 0:
        return
    for eps in (0.3, 0.05, 0.01, 1e-3, 1e-4):
        assert count_cells(sub, eps) <= count_cells(C, eps)


def test_serialization_round_trip(tmp_path):
    A = cantor_grill(cantor_for_dimension(0.4, 5), 3, 1)
    doc = json.loads(json.dumps(A.to_dict()))
    B = BoxUnion.from_dict(doc)
    assert np.array_equal(A.lo, B.lo) and np.array_equal(A.hi, B.hi)
    path = tmp_path / "boxes.csv"
    A.write_csv(path)
    C = BoxUnion.read_csv(path)
    assert np.array_equal(A.lo, C.lo) and np.array_equal(A.hi, C.hi)
    assert len(path.read_text().strip().splitlines()) == A.n_boxes + 1
