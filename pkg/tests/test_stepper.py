import math

import numpy as np
import pytest

from ratingfem import (
    BandedMatrix,
    BoundaryCondition,
    InvalidParameterError,
    ModelParams,
    SolutionField,
    SolverError,
    TimeGrid,
    apply_dirichlet,
    assemble_mass,
    assemble_operator,
    backward_euler_step,
    build_mesh,
    run_solver,
    solve_banded,
    solver_mesh,
    stability_diagnostic,
)


def test_time_grid():
    g = TimeGrid(1.0, 4)
    assert g.dt == 0.25 and np.allclose(g.times, [0, 0.25, 0.5, 0.75, 1.0])
    assert TimeGrid.for_maturity(0.0, 100).n_steps == 0
    with pytest.raises(InvalidParameterError):
        TimeGrid(1.0, 0)
    with pytest.raises(InvalidParameterError):
        TimeGrid(-1.0, 3)


def test_boundary_condition_rejects_nonfinite():
    with pytest.raises(InvalidParameterError):
        BoundaryCondition.constant(math.inf, 0.0).values(0.0)


def test_dirichlet_forces_values():
    mesh = build_mesh(0, 1, 10, 2)
    p = ModelParams(sigma_low_grade=0.3, sigma_high_grade=0.3)
    u = SolutionField(np.ones(mesh.dof_count), mesh)
    B = assemble_mass(mesh) + 0.1 * assemble_operator(mesh, u, 0.0, p)
    rhs = np.random.default_rng(0).normal(size=mesh.dof_count)
    system, b = apply_dirichlet(B, rhs, BoundaryCondition.constant(0.0, 0.0), 0.0)
    x = solve_banded(system, b)
    assert x[0] == 0.0 and x[-1] == 0.0
    again, _ = apply_dirichlet(system, b, BoundaryCondition.constant(0.0, 0.0), 0.0)
    assert np.array_equal(again.data, system.data)
    dense = system.to_dense()
    assert np.array_equal(dense[0], np.eye(mesh.dof_count)[0])
    assert np.all(dense[1:-1, 0] == 0) and np.all(dense[1:-1, -1] == 0)


def test_dirichlet_preserves_interior_solution():
    mesh = build_mesh(0, 1, 8, 2)
    p = ModelParams(sigma_low_grade=0.3, sigma_high_grade=0.3)
    u = SolutionField(np.ones(mesh.dof_count), mesh)
    B = assemble_mass(mesh) + 0.1 * assemble_operator(mesh, u, 0.0, p)
    dense = B.to_dense()
    rhs = np.random.default_rng(1).normal(size=mesh.dof_count)
    left, right = 0.3, -1.2
    # reference: eliminate the two known values by hand
    interior = slice(1, -1)
    b = rhs[interior] - dense[interior, 0] * left - dense[interior, -1] * right
    expected = np.linalg.solve(dense[interior, interior], b)
    system, r = apply_dirichlet(B, rhs, BoundaryCondition.constant(left, right), 0.0)
    x = solve_banded(system, r)
    assert np.allclose(x[interior], expected, atol=1e-13)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_steady_diffusion_linear_profile(order):
    mesh = build_mesh(0, 1, 6, order)
    p = ModelParams(sigma_low_grade=0.4, sigma_high_grade=0.4, convection_sign=0)
    A = assemble_operator(mesh, SolutionField(np.zeros(mesh.dof_count), mesh), 0.0, p)
    system, rhs = apply_dirichlet(A, np.zeros(mesh.dof_count), BoundaryCondition.constant(0.0, 1.0), 0.0)
    assert np.allclose(solve_banded(system, rhs), mesh.node_coords, atol=1e-13)


def test_constant_preserved():
    p = ModelParams()
    mesh = solver_mesh(p.x_min, p.x_max, 64, 2)
    c = 0.55
    hist = run_solver(p, mesh, TimeGrid(1.0, 20), BoundaryCondition.constant(c, c), initial=lambda x: np.full_like(x, c))
    for f in hist.fields:
        assert np.max(np.abs(f.coefficients - c)) <= 1e-12


@pytest.mark.parametrize("order", [1, 2])
def test_sine_mode_decay_one_step(order):
    sigma, dt = 0.3, 0.01
    p = ModelParams(sigma_low_grade=sigma, sigma_high_grade=sigma, convection_sign=0, x_min=0.0, x_max=math.pi)
    results = []
    for ne in (32, 64):
        mesh = build_mesh(0.0, math.pi, ne, order)
        u0 = SolutionField.interpolate(np.sin, mesh)
        A = assemble_operator(mesh, u0, 0.0, p)
        u1 = backward_euler_step(assemble_mass(mesh), A, u0, dt, BoundaryCondition.constant(0, 0), dt)
        factor = 1.0 / (1.0 + dt * sigma**2 / 2)
        results.append(np.max(np.abs(u1.coefficients - factor * np.sin(mesh.node_coords))))
    assert results[0] < 1e-5
    assert results[1] < results[0] / 3.5  # O(h^2) or better


def test_step_rejects_nonpositive_dt():
    mesh = build_mesh(0, 1, 4, 1)
    u = SolutionField(np.ones(5), mesh)
    M = assemble_mass(mesh)
    with pytest.raises(InvalidParameterError):
        backward_euler_step(M, M, u, 0.0, BoundaryCondition.constant(1, 1), 0.0)


def test_small_dt_update_is_linear_in_dt():
    p = ModelParams()
    mesh = solver_mesh(p.x_min, p.x_max, 64, 1)
    u0 = SolutionField.interpolate(lambda x: np.exp(np.minimum(x, 0)), mesh)
    M = assemble_mass(mesh)
    A = assemble_operator(mesh, u0, 0.0, p)
    bc = BoundaryCondition.constant(u0.coefficients[0], 1.0)
    d = [np.max(np.abs(backward_euler_step(M, A, u0, dt, bc, dt).coefficients - u0.coefficients)) for dt in (1e-4, 5e-5)]
    assert d[0] / d[1] == pytest.approx(2.0, rel=1e-2)


def test_degenerate_volatility_matches_fixed_coefficient_solve():
    sigma = 0.25
    p = ModelParams(sigma_low_grade=sigma, sigma_high_grade=sigma, maturity=0.5)
    mesh = solver_mesh(p.x_min, p.x_max, 40, 1)
    hist = run_solver(p, mesh, TimeGrid(0.5, 10))
    # fixed-coefficient reference built densely from closed-form linear element matrices
    h = mesh.widths
    n = mesh.dof_count
    M = np.zeros((n, n))
    K = np.zeros((n, n))
    for e, (i, j) in enumerate(mesh.element_dofs()):
        M[np.ix_([i, j], [i, j])] += h[e] / 6 * np.array([[2, 1], [1, 2]])
        K[np.ix_([i, j], [i, j])] += sigma**2 / (2 * h[e]) * np.array([[1, -1], [-1, 1]])
        K[np.ix_([i, j], [i, j])] += (p.rate + sigma**2 / 2) * np.array([[-0.5, 0.5], [-0.5, 0.5]])
    u = np.exp(np.minimum(mesh.node_coords, 0))
    for _ in range(10):
        B = M + 0.05 * K
        rhs = M @ u
        B[0], B[-1] = np.eye(n)[0], np.eye(n)[-1]
        rhs[0], rhs[-1] = math.exp(p.x_min), 1.0
        u = np.linalg.solve(B, rhs)
    assert np.allclose(hist.final.coefficients, u, atol=1e-12)


def test_lag_is_not_frozen_at_start():
    p = ModelParams(epsilon=0.05)
    mesh = solver_mesh(p.x_min, p.x_max, 128, 1)
    two = run_solver(p, mesh, TimeGrid(0.2, 2)).final.coefficients
    M = assemble_mass(mesh)
    u0 = SolutionField.interpolate(lambda x: np.exp(np.minimum(x, 0)), mesh)
    A0 = assemble_operator(mesh, u0, 0.0, p)
    bc = BoundaryCondition.constant(math.exp(p.x_min), 1.0)
    frozen = backward_euler_step(M, A0, backward_euler_step(M, A0, u0, 0.1, bc, 0.1), 0.1, bc, 0.2)
    one = run_solver(p, mesh, TimeGrid(0.2, 1)).final.coefficients
    assert np.max(np.abs(two - frozen.coefficients)) > 1e-8
    assert np.max(np.abs(two - one)) > 1e-6


def test_zero_maturity():
    p = ModelParams(maturity=0.0)
    mesh = solver_mesh(p.x_min, p.x_max, 16, 1)
    hist = run_solver(p, mesh, TimeGrid.for_maturity(0.0, 10))
    assert len(hist) == 1
    assert np.allclose(hist[0].coefficients, np.exp(np.minimum(mesh.node_coords, 0)))


def test_runs_are_bit_identical(small_history, default_params):
    p = default_params
    mesh = solver_mesh(p.x_min, p.x_max, 128, 1)
    again = run_solver(p, mesh, TimeGrid(p.maturity, 64))
    for a, b in zip(small_history.fields, again.fields):
        assert np.array_equal(a.coefficients, b.coefficients)


def test_history_structure(small_history):
    assert len(small_history) == 65
    assert np.allclose(small_history.times, small_history.grid.times)
    assert len(small_history.diagnostics) == 64
    d = small_history.diagnostics[0]
    assert d.residual < 1e-12
    assert 0.2 - 1e-15 <= d.sigma_min <= d.sigma_max <= 0.3 + 1e-15


def test_solver_error_carries_step():
    p = ModelParams()
    mesh = solver_mesh(p.x_min, p.x_max, 16, 1)

    def blowup(t):
        return math.nan if t > 0.35 else 1.0

    bc = BoundaryCondition(lambda t: math.exp(-4), blowup)
    with pytest.raises(SolverError) as info:
        run_solver(p, mesh, TimeGrid(1.0, 10), bc)
    assert info.value.step == 4


def test_stability_constant_sigma():
    p = ModelParams(sigma_low_grade=0.2, sigma_high_grade=0.2)
    mesh = solver_mesh(p.x_min, p.x_max, 32, 1)
    rep = stability_diagnostic(run_solver(p, mesh, TimeGrid(1.0, 8)), p)
    assert np.allclose(rep.pointwise_min, 0.04 * np.arange(1, 9), rtol=1e-12)
    assert np.allclose(rep.minimized_sum, 0.04 * np.arange(1, 9), rtol=1e-12)
    assert rep.holds_pointwise


def test_stability_report_default_run(small_history):
    rep = stability_diagnostic(small_history)
    d = rep.to_dict()
    assert len(d["times"]) == 64
    assert isinstance(d["holds_pointwise"], bool)
    assert d["min_pointwise_running_sum"] == pytest.approx(float(np.min(rep.pointwise_min)))


def test_norm_bounded_on_small_run(small_history):
    norms = small_history.l2_norms()
    assert norms.max() <= 1.1 * norms[0]
