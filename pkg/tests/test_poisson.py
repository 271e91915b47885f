from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from singlab.distance import DomainBox, counter_rng
from singlab.errors import DomainError, InputError, InsufficientDataError
from singlab.fractal_sets import BoxUnion
from singlab.poisson import (
    Grid,
    GridField,
    SolveConfig,
    convergence_order,
    discrete_comparison,
    fit_singularity_order,
    radial_fd_residual,
    radial_fv_solve,
    radial_solution,
    solve_poisson,
    smoothness_probe,
)

UNIT1 = DomainBox((0.0,), (1.0,))
UNIT2 = DomainBox.unit(2)


def test_radial_coefficients():
    sol = radial_solution(5, 2.25)
    assert sol.C1 == pytest.approx(1 / (0.25 * 2.75))
    assert sol.C2 == pytest.approx(sol.C1)
    assert sol(1.0) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("gamma,N", [(2.0, 5), (5.0, 5), (1.5, 3)])
def test_radial_window_errors(gamma, N):
    with pytest.raises(DomainError, match="gamma"):
        radial_solution(N, gamma)


def test_radial_fd_residual_second_order():
    sol = radial_solution(5, 2.5)
    hs = [0.002, 0.001, 0.0005, 0.00025]
    order = convergence_order(hs, [radial_fd_residual(sol, h) for h in hs])
    assert order == pytest.approx(2.0, abs=0.2)


@pytest.mark.parametrize("gamma", [2.1, 2.25, 2.5])
def test_exact_samples_recover_order(gamma):
    sol = radial_solution(5, gamma, C=1.0, r=1.0)
    fit = fit_singularity_order(lambda x: sol(np.linalg.norm(x, axis=1)), np.zeros(5), window=(1e-3, 1e-1))
    assert fit.exponent == pytest.approx(-(gamma - 2), abs=1e-3)


def test_bounded_function_nonsingular():
    fit = fit_singularity_order(lambda x: 1.0 + 0.3 * np.sin(5 * x[:, 0]), np.array([0.4, 0.4]), window=(1e-3, 1e-1))
    assert fit.exponent >= -0.05 and not fit.singular


def test_fit_needs_samples():
    grid = Grid.uniform(UNIT2, 9)
    u = GridField.from_function(grid, lambda x: x[:, 0])
    with pytest.raises(InsufficientDataError):
        fit_singularity_order(u, [0.5, 0.5], window=(0.25, 0.26))


def test_fit_window_below_resolution():
    grid = Grid.uniform(UNIT2, 9)
    u = GridField.from_function(grid, lambda x: x[:, 0])
    with pytest.raises(DomainError):
        fit_singularity_order(u, [0.5, 0.5], window=(0.1, 0.4))


def test_fv_radial_solution_matches_closed_form():
    sol = radial_solution(5, 2.25)
    rho, u = radial_fv_solve(5, 2.25, 1.0, 1.0, 4000)
    sel = (rho >= 0.01) & (rho <= 0.5)
    assert np.max(np.abs(u[sel] / sol(rho[sel]) - 1)) <= 0.05


def test_quadratic_exact_in_one_dimension():
    grid = Grid.uniform(UNIT1, 33)
    u, rep = solve_poisson(lambda x: np.full(len(x), 2.0), grid)
    x = grid.axis(0)
    assert np.max(np.abs(u.values - x * (1 - x))) <= 1e-12
    assert rep.residual <= rep.tolerance


def test_zero_source():
    grid = Grid.uniform(UNIT2, 17)
    u, _ = solve_poisson(np.zeros(grid.shape), grid)
    assert np.all(u.values == 0)


def test_direct_and_cg_agree():
    grid = Grid.uniform(UNIT2, 21)
    F = counter_rng(3).random(grid.shape)
    u1, _ = solve_poisson(F, grid)
    u2, _ = solve_poisson(F, grid, SolveConfig(method="direct"))
    assert np.max(np.abs(u1.values - u2.values)) <= 1e-9 * np.max(np.abs(u2.values))


@given(st.integers(0, 2 ** 32), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, a, b):
    grid = Grid.uniform(UNIT2, 17)
    rng = counter_rng(seed)
    F1, F2 = rng.random(grid.shape), rng.normal(size=grid.shape)
    u1, _ = solve_poisson(F1, grid)
    u2, _ = solve_poisson(F2, grid)
    u, _ = solve_poisson(a * F1 + b * F2, grid)
    scale = max(1.0, np.max(np.abs(u.values)))
    assert np.max(np.abs(u.values - a * u1.values - b * u2.values)) <= 10 * 1e-10 * scale


@given(st.integers(0, 2 ** 32))
def test_maximum_principle(seed):
    grid = Grid.uniform(UNIT2, 17)
    F = counter_rng(seed).random(grid.shape) ** 3
    u, _ = solve_poisson(F, grid)
    assert np.min(u.values) >= -1e-10


def test_manufactured_convergence():
    def exact(x):
        return np.prod(np.sin(np.pi * x), axis=1)

    errs, hs = [], []
    for n in (9, 17, 33, 65):
        grid = Grid.uniform(UNIT2, n)
        u, _ = solve_poisson(lambda x: 2 * np.pi ** 2 * exact(x), grid)
        errs.append(np.max(np.abs(u.values.reshape(-1) - exact(grid.nodes()))))
        hs.append(grid.h[0])
    assert convergence_order(hs, errs) >= 1.9


def test_comparison_identical():
    grid = Grid.uniform(UNIT2, 17)
    F = counter_rng(1).random(grid.shape)
    res = discrete_comparison(F, F, grid)
    assert res.max_violation == 0.0 and res.passed


def test_comparison_zero_and_one():
    grid = Grid.uniform(UNIT2, 17)
    res = discrete_comparison(np.zeros(grid.shape), np.ones(grid.shape), grid)
    assert np.all(res.u1.values == 0)
    assert np.all(res.u2.values[1:-1, 1:-1] > 0)


def test_spike_green_function_nonnegative():
    grid = Grid.uniform(UNIT1, 9)
    F1 = np.zeros(9)
    F2 = F1.copy()
    F2[3] = 5.0
    res = discrete_comparison(F1, F2, grid, SolveConfig(method="direct"))
    assert np.all(res.u2.values >= res.u1.values)


def test_comparison_precondition():
    grid = Grid.uniform(UNIT1, 9)
    F2 = np.zeros(9)
    F1 = F2.copy()
    F1[4] = 1.0
    with pytest.raises(InputError) as info:
        discrete_comparison(F1, F2, grid)
    assert info.value.offending == [(4,)]


def test_singular_node_gets_offset_value():
    grid = Grid.uniform(UNIT1, 5)
    F = lambda x: np.abs(x[:, 0] - 0.5) ** -0.5  # noqa: E731
    u, rep = solve_poisson(F, grid)
    assert np.all(np.isfinite(u.values)) and rep.residual <= rep.tolerance


def test_gridfield_binary_round_trip(tmp_path):
    grid = Grid(DomainBox((0.0, -1.0), (2.0, 1.0)), (5, 7))
    vals = counter_rng(0).random(grid.shape)
    vals[2, 3] = np.inf
    f = GridField(grid, vals)
    data = f.to_bytes()
    assert data[:8] == (2).to_bytes(8, "little")
    g = GridField.from_bytes(data)
    assert np.array_equal(g.values, f.values) and g.grid == grid
    f.write(tmp_path / "u.bin")
    assert (tmp_path / "u.bin.json").exists()
    f.write_csv(tmp_path / "u.csv")
    assert len((tmp_path / "u.csv").read_text().splitlines()) == 36


def test_smoothness_of_quadratic():
    grid = Grid.uniform(UNIT1, 65)
    u = GridField.from_function(grid, lambda x: x[:, 0] * (1 - x[:, 0]))
    rep = smoothness_probe(u, DomainBox((0.2,), (0.8,)))
    assert np.allclose(rep.maxima, 2.0) and rep.smooth


def test_smoothness_away_from_singularity():
    grid = Grid.uniform(UNIT2, 65)
    A = BoxUnion.point([0.25, 0.5])
    F = lambda x: np.linalg.norm(x - [0.25, 0.5], axis=1) ** -1.0  # noqa: E731
    u, _ = solve_poisson(F, grid)
    rep = smoothness_probe(u, DomainBox((0.6, 0.3), (0.8, 0.7)), A=A, delta=0.2)
    assert rep.smooth


def test_smoothness_region_touching_set():
    grid = Grid.uniform(UNIT2, 17)
    u = GridField(grid, np.zeros(grid.shape))
    with pytest.raises(InputError):
        smoothness_probe(u, DomainBox((0.2, 0.2), (0.6, 0.6)), A=BoxUnion.point([0.5, 0.5]), delta=0.05)


@pytest.mark.parametrize("mag", [1e-157, 1e150])
def test_extreme_rhs_magnitude_scales_solution(mag):
    grid = Grid.uniform(UNIT2, 17)
    F = counter_rng(7).random(grid.shape)
    u1, _ = solve_poisson(F, grid)
    u2, _ = solve_poisson(mag * F, grid)
    assert np.allclose(u2.values / mag, u1.values, rtol=1e-9, atol=1e-9 * np.max(np.abs(u1.values)))
