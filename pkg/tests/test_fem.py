import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from ratingfem import (
    ConfigurationError,
    DomainError,
    InconsistentInputError,
    InvalidParameterError,
    ModelParams,
    SolutionField,
    assemble_mass,
    assemble_operator,
    build_mesh,
    gauss_rule,
    reference_basis,
    solver_mesh,
)
from ratingfem.fem import lagrange_basis, mesh_from_breakpoints

X = sp.Symbol("x")


def sym_basis(order, a, b):
    """Lagrange polynomials on equally spaced nodes of [a, b], built with sympy."""
    nodes = [a + sp.Rational(k, order) * (b - a) for k in range(order + 1)]
    return [sp.interpolate(list(zip(nodes, [int(k == i) for k in range(order + 1)])), X) for i in range(order + 1)]


def sym_element(order, a, b, kind):
    N = sym_basis(order, a, b)
    out = np.zeros((order + 1, order + 1))
    for i in range(order + 1):
        for j in range(order + 1):
            if kind == "mass":
                f = N[i] * N[j]
            elif kind == "stiff":
                f = sp.diff(N[i], X) * sp.diff(N[j], X)
            else:
                f = N[i] * sp.diff(N[j], X)
            out[i, j] = float(sp.integrate(f, (X, a, b)))
    return out


def constant_sigma_params(sigma=0.25, rate=0.5):
    return ModelParams(sigma_low_grade=sigma, sigma_high_grade=sigma, rate=rate)


def assemble_dense_reference(mesh, element):
    n = mesh.dof_count
    out = np.zeros((n, n))
    for dofs in mesh.element_dofs():
        out[np.ix_(dofs, dofs)] += element
    return out


def test_build_mesh_examples():
    m = build_mesh(0, 1, 4, 1)
    assert m.dof_count == 5
    assert np.allclose(m.node_coords, [0, 0.25, 0.5, 0.75, 1])
    assert build_mesh(-4, 4, 1024, 1).h == 0.0078125
    assert build_mesh(0, 1, 2, 3).dof_count == 7


@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_mesh_invariants(order):
    m = build_mesh(-1.0, 2.0, 7, order)
    assert m.dof_count == 7 * order + 1
    assert np.all(np.diff(m.node_coords) > 0)
    assert m.node_coords[0] == -1.0 and m.node_coords[-1] == 2.0
    spans = m.element_spans
    assert spans[0][0] == -1.0 and spans[-1][1] == 2.0
    assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))
    for e, dofs in enumerate(m.element_dofs()):
        local = m.node_coords[dofs]
        assert np.allclose(local, np.linspace(*spans[e], order + 1))


@pytest.mark.parametrize("args", [(1, 1, 4, 1), (0, 1, 0, 1), (0, 1, 4, 0), (0, 1, 4, 5)])
def test_mesh_rejects_bad_input(args):
    with pytest.raises(InvalidParameterError):
        build_mesh(*args)


def test_solver_mesh_has_node_at_kink():
    m = solver_mesh(-4, 4, 1000, 1)
    assert 0.0 in m.node_coords
    assert m.n_elements == 1000


def test_nonuniform_mesh():
    m = mesh_from_breakpoints([0.0, 0.1, 0.5, 1.0], 2)
    assert m.dof_count == 7 and m.h == pytest.approx(0.5)


def test_locate_outside_raises():
    m = build_mesh(0, 1, 4, 1)
    with pytest.raises(DomainError):
        m.locate(1.5)


def test_reference_basis_examples():
    assert reference_basis(1, -1.0)[0] == [1.0, 0.0]
    v, d = reference_basis(1, 0.0)
    assert v == [0.5, 0.5] and d == [-0.5, 0.5]
    assert np.allclose(reference_basis(2, 0.0)[0], [0, 1, 0], atol=1e-15)
    with pytest.raises(DomainError):
        reference_basis(1, 1.5)
    with pytest.raises(InvalidParameterError):
        reference_basis(5, 0.0)


@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_partition_of_unity(order):
    xi = np.linspace(-1, 1, 1001)
    v, d = lagrange_basis(order, xi)
    assert np.max(np.abs(v.sum(axis=-1) - 1)) <= 1e-13
    assert np.max(np.abs(d.sum(axis=-1))) <= 1e-12
    nodes = np.linspace(-1, 1, order + 1)
    assert np.allclose(lagrange_basis(order, nodes)[0], np.eye(order + 1), atol=1e-14)


def test_gauss_rule_examples():
    g1 = gauss_rule(1)
    assert np.allclose(g1.points, [0]) and np.allclose(g1.weights, [2])
    # nodes of the 2-point rule are the roots of P2 = (3x^2 - 1)/2
    roots = sorted(float(r) for r in sp.solve(sp.legendre(2, X), X))
    g2 = gauss_rule(2)
    assert np.allclose(g2.points, roots, atol=1e-15) and np.allclose(g2.weights, [1, 1])
    g3 = gauss_rule(3)
    assert float(np.sum(g3.weights * g3.points**4)) == pytest.approx(0.4, abs=1e-15)
    for bad in (0, 11):
        with pytest.raises(InvalidParameterError):
            gauss_rule(bad)


@pytest.mark.parametrize("n", range(1, 11))
def test_gauss_exactness_degree(n):
    g = gauss_rule(n)
    assert g.weights.sum() == pytest.approx(2.0, abs=1e-14)
    for k in range(2 * n):
        exact = 0.0 if k % 2 else 2.0 / (k + 1)
        assert float(np.sum(g.weights * g.points**k)) == pytest.approx(exact, abs=1e-13)
    k = 2 * n
    assert abs(float(np.sum(g.weights * g.points**k)) - 2.0 / (k + 1)) > 1e-8


def test_linear_element_mass_example():
    m = build_mesh(0, 1, 1, 1)
    assert np.allclose(assemble_mass(m).to_dense(), [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], atol=1e-15)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_mass_matches_symbolic(order):
    mesh = build_mesh(-4, 4, 6, order)
    h = sp.Rational(8, 6)
    element = sym_element(order, 0, h, "mass")
    expected = assemble_dense_reference(mesh, element)
    M = assemble_mass(mesh).to_dense()
    assert np.max(np.abs(M - expected)) <= 1e-12
    assert np.max(np.abs(M - M.T)) <= 1e-15
    assert M.sum() == pytest.approx(8.0, abs=1e-12)
    assert np.all(np.linalg.eigvalsh(M) > 0)


def test_mass_rejects_weak_quadrature():
    with pytest.raises(ConfigurationError):
        assemble_mass(build_mesh(0, 1, 2, 2), gauss_rule(2))


@pytest.mark.parametrize("order", [1, 2, 3])
def test_constant_sigma_operator_matches_symbolic(order):
    sigma, rate = 0.25, 0.5
    p = constant_sigma_params(sigma, rate)
    mesh = build_mesh(-4, 4, 5, order)
    u = SolutionField.interpolate(lambda x: np.exp(np.minimum(x, 0)), mesh)
    A = assemble_operator(mesh, u, 0.0, p).to_dense()
    h = sp.Rational(8, 5)
    element = 0.5 * sigma**2 * sym_element(order, 0, h, "stiff") + (rate + 0.5 * sigma**2) * sym_element(
        order, 0, h, "adv"
    )
    assert np.max(np.abs(A - assemble_dense_reference(mesh, element))) <= 1e-12


def test_linear_operator_blocks():
    sigma, rate, h = 0.25, 0.5, 0.3
    p = constant_sigma_params(sigma, rate)
    mesh = build_mesh(1.0, 1.0 + h, 1, 1)
    A = assemble_operator(mesh, SolutionField(np.ones(2), mesh), 0.0, p).to_dense()
    diffusion = sigma**2 / (2 * h) * np.array([[1, -1], [-1, 1]])
    advection = (rate + sigma**2 / 2) * np.array([[-0.5, 0.5], [-0.5, 0.5]])
    assert np.allclose(A, diffusion + advection, atol=1e-14)


def test_operator_annihilates_constants(default_params):
    mesh = solver_mesh(-4, 4, 64, 2)
    u = SolutionField.interpolate(lambda x: np.exp(np.minimum(x, 0)), mesh)
    A = assemble_operator(mesh, u, 0.1, default_params)
    y = A @ np.ones(mesh.dof_count)
    assert np.max(np.abs(y[1:-1])) <= 1e-13
    assert A.lower <= 2 and A.upper <= 2


def test_operator_translation_invariant_for_constant_sigma():
    p = constant_sigma_params()
    m1, m2 = build_mesh(0, 2, 8, 2), build_mesh(5, 7, 8, 2)
    A1 = assemble_operator(m1, SolutionField(np.ones(m1.dof_count), m1), 0.0, p)
    A2 = assemble_operator(m2, SolutionField(np.ones(m2.dof_count), m2), 0.0, p)
    assert np.allclose(A1.data, A2.data, atol=1e-13)


def test_diffusion_part_symmetric_psd(default_params):
    mesh = solver_mesh(-4, 4, 40, 1)
    u = SolutionField.interpolate(lambda x: np.exp(np.minimum(x, 0)), mesh)
    A = assemble_operator(mesh, u, 0.0, default_params).to_dense()
    no_conv = default_params.replace(convection_sign=0)
    D = assemble_operator(mesh, u, 0.0, no_conv).to_dense()
    assert np.allclose(D, D.T, atol=1e-15)
    assert np.min(np.linalg.eigvalsh(D)) > -1e-12
    assert not np.allclose(A, A.T)


def test_operator_mesh_mismatch():
    p = ModelParams()
    m1, m2 = build_mesh(0, 1, 4, 1), build_mesh(0, 1, 5, 1)
    with pytest.raises(InconsistentInputError):
        assemble_operator(m1, SolutionField(np.ones(m2.dof_count), m2), 0.0, p)


def test_assembly_deterministic(default_params):
    mesh = solver_mesh(-4, 4, 256, 3)
    u = SolutionField.interpolate(lambda x: np.exp(np.minimum(x, 0)), mesh)
    a = assemble_operator(mesh, u, 0.0, default_params).data
    b = assemble_operator(mesh, u, 0.0, default_params).data
    assert np.array_equal(a, b)


@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_field_reproduces_polynomials(order):
    mesh = build_mesh(-1, 2, 5, order)
    coeffs = np.random.default_rng(order).normal(size=order + 1)
    poly = np.polynomial.Polynomial(coeffs)
    f = SolutionField.interpolate(poly, mesh)
    x = np.linspace(-1, 2, 301)
    assert np.max(np.abs(f(x) - poly(x))) <= 1e-12
    assert np.max(np.abs(f(x, 1) - poly.deriv()(x))) <= 1e-10


def test_field_rejects_nonfinite():
    m = build_mesh(0, 1, 2, 1)
    with pytest.raises(InconsistentInputError):
        SolutionField(np.array([0, math.nan, 1.0]), m)
    with pytest.raises(InconsistentInputError):
        SolutionField(np.ones(4), m)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 20), st.floats(-3, 3), st.floats(0.1, 5))
def test_mass_total_is_window_length(order, ne, a, width):
    mesh = build_mesh(a, a + width, ne, order)
    assert assemble_mass(mesh).to_dense().sum() == pytest.approx(width, rel=1e-12)
