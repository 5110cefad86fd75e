"""Lagrange finite elements on 1-D meshes: bases, quadrature, fields and assembly."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .banded import BandedMatrix
from .errors import (
    ConfigurationError,
    DomainError,
    InconsistentInputError,
    InvalidParameterError,
)
from .model import ModelParams, effective_volatility

MAX_ORDER = 4
MAX_GAUSS_POINTS = 10


@dataclass(frozen=True, eq=False)
class Mesh:
    """Partition of ``[vertices[0], vertices[-1]]`` into order-``order`` elements.

    Element ``e`` owns global degrees of freedom ``e*order ... e*order + order``;
    neighbours share their endpoint dof.
    """

    vertices: np.ndarray
    order: int
    node_coords: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float)
        if vertices.ndim != 1 or vertices.size < 2:
            raise InvalidParameterError("a mesh needs at least two vertices")
        if not np.all(np.diff(vertices) > 0.0):
            raise InvalidParameterError("mesh vertices must be strictly increasing")
        if not isinstance(self.order, (int, np.integer)) or not 1 <= self.order <= MAX_ORDER:
            raise InvalidParameterError(
                f"element order must be an integer in [1, {MAX_ORDER}], got {self.order!r}"
            )
        vertices.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "order", int(self.order))
        local = np.arange(self.order) / self.order
        widths = np.diff(vertices)
        nodes = (vertices[:-1, None] + widths[:, None] * local[None, :]).ravel()
        nodes = np.append(nodes, vertices[-1])
        nodes.setflags(write=False)
        object.__setattr__(self, "node_coords", nodes)

    @property
    def n_elements(self) -> int:
        return self.vertices.size - 1

    @property
    def dof_count(self) -> int:
        return self.n_elements * self.order + 1

    @property
    def x_min(self) -> float:
        return float(self.vertices[0])

    @property
    def x_max(self) -> float:
        return float(self.vertices[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.vertices)

    @property
    def h(self) -> float:
        return float(self.widths.max())

    @property
    def element_spans(self) -> list[tuple[float, float]]:
        return list(zip(self.vertices[:-1].tolist(), self.vertices[1:].tolist()))

    def element_dofs(self) -> np.ndarray:
        """(n_elements, order+1) table of global dof indices."""
        e = np.arange(self.n_elements)[:, None] * self.order
        return e + np.arange(self.order + 1)[None, :]

    def locate(self, x):
        """Containing element and parent coordinate for each point in ``x``."""
        x = np.asarray(x, dtype=float)
        span = self.x_max - self.x_min
        slack = 1e-12 * span
        if np.any(x < self.x_min - slack) or np.any(x > self.x_max + slack):
            raise DomainError(f"point outside mesh window [{self.x_min}, {self.x_max}]")
        elem = np.searchsorted(self.vertices, x, side="right") - 1
        elem = np.clip(elem, 0, self.n_elements - 1)
        left = self.vertices[elem]
        width = self.vertices[elem + 1] - left
        xi = np.clip(2.0 * (x - left) / width - 1.0, -1.0, 1.0)
        return elem, xi

    def same_as(self, other: Mesh) -> bool:
        return other is self or (
            other.order == self.order
            and other.vertices.shape == self.vertices.shape
            and np.array_equal(other.vertices, self.vertices)
        )


def build_mesh(x_min: float, x_max: float, n_elements: int, order: int) -> Mesh:
    """Uniform mesh of ``n_elements`` elements of polynomial degree ``order``."""
    if not x_min < x_max:
        raise InvalidParameterError(f"degenerate interval [{x_min}, {x_max}]")
    if int(n_elements) != n_elements or n_elements < 1:
        raise InvalidParameterError(f"n_elements must be a positive integer, got {n_elements!r}")
    return Mesh(np.linspace(x_min, x_max, int(n_elements) + 1), order)


def mesh_from_breakpoints(breakpoints, order: int) -> Mesh:
    return Mesh(np.asarray(breakpoints, dtype=float), order)


def solver_mesh(x_min: float, x_max: float, n_elements: int, order: int, kink: float = 0.0) -> Mesh:
    """Uniform mesh with the vertex nearest ``kink`` moved onto it.

    Keeps the kink of the payoff on an element boundary so nodal interpolation
    of the initial data does not lose order.
    """
    mesh = build_mesh(x_min, x_max, n_elements, order)
    if not x_min < kink < x_max:
        return mesh
    vertices = mesh.vertices.copy()
    nearest = int(np.argmin(np.abs(vertices - kink)))
    if vertices[nearest] == kink:
        return mesh
    vertices[nearest] = kink
    return Mesh(vertices, order)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def degree(self) -> int:
        """Highest polynomial degree integrated exactly (Gauss-Legendre)."""
        return 2 * self.n_points - 1


@lru_cache(maxsize=None)
def gauss_rule(n_points: int) -> QuadratureRule:
    if int(n_points) != n_points or not 1 <= n_points <= MAX_GAUSS_POINTS:
        raise InvalidParameterError(
            f"Gauss rule needs 1..{MAX_GAUSS_POINTS} points, got {n_points!r}"
        )
    points, weights = np.polynomial.legendre.leggauss(int(n_points))
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(points, weights)


def default_quadrature(order: int) -> QuadratureRule:
    return gauss_rule(order + 1)


@lru_cache(maxsize=None)
def _parent_nodes(order: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, order + 1)


def lagrange_basis(order: int, xi):
    """Values and parent-coordinate derivatives of the order-``order`` Lagrange basis.

    Returns two arrays of shape ``xi.shape + (order + 1,)``.
    """
    xi = np.asarray(xi, dtype=float)
    nodes = _parent_nodes(order)
    n = order + 1
    values = np.ones(xi.shape + (n,))
    derivs = np.zeros(xi.shape + (n,))
    for a in range(n):
        others = [b for b in range(n) if b != a]
        denom = np.prod([nodes[a] - nodes[b] for b in others])
        factors = [xi - nodes[b] for b in others]
        values[..., a] = np.prod(factors, axis=0) / denom if factors else 1.0
        for m in range(len(others)):
            rest = factors[:m] + factors[m + 1 :]
            derivs[..., a] += (np.prod(rest, axis=0) if rest else 1.0) / denom
    return values, derivs


def reference_basis(order: int, xi: float):
    """Lagrange basis values and derivatives at one parent coordinate."""
    if not 1 <= order <= MAX_ORDER:
        raise InvalidParameterError(f"order must be in [1, {MAX_ORDER}], got {order}")
    if not -1.0 <= xi <= 1.0:
        raise DomainError(f"parent coordinate {xi} outside [-1, 1]")
    values, derivs = lagrange_basis(order, xi)
    return values.tolist(), derivs.tolist()


@dataclass(eq=False)
class SolutionField:
    """Nodal coefficients of a finite element function at one time level."""

    coefficients: np.ndarray
    mesh: Mesh
    time: float = 0.0

    def __post_init__(self):
        coefficients = np.asarray(self.coefficients, dtype=float)
        if coefficients.shape != (self.mesh.dof_count,):
            raise InconsistentInputError(
                f"expected {self.mesh.dof_count} coefficients, got shape {coefficients.shape}"
            )
        if not np.all(np.isfinite(coefficients)):
            raise InconsistentInputError("solution coefficients must be finite")
        self.coefficients = coefficients

    @classmethod
    def interpolate(cls, func, mesh: Mesh, time: float = 0.0) -> SolutionField:
        return cls(func(mesh.node_coords), mesh, time)

    def __call__(self, x, nu: int = 0):
        """Evaluate the field (``nu=0``) or its x-derivative (``nu=1``) at ``x``."""
        mesh = self.mesh
        elem, xi = mesh.locate(x)
        values, derivs = lagrange_basis(mesh.order, xi)
        coeffs = self.coefficients[elem[..., None] * mesh.order + np.arange(mesh.order + 1)]
        if nu == 0:
            return np.sum(values * coeffs, axis=-1)
        if nu == 1:
            jac = 2.0 / (mesh.vertices[elem + 1] - mesh.vertices[elem])
            return np.sum(derivs * coeffs, axis=-1) * jac
        raise InvalidParameterError("only nu=0 and nu=1 are supported")

    @property
    def domain(self):
        return self.mesh.x_min, self.mesh.x_max


def quadrature_geometry(mesh: Mesh, quadrature: QuadratureRule):
    """Physical quadrature points, scaled weights and physical basis derivatives.

    Returns ``x (E, Q)``, ``w (E, Q)``, ``N (Q, r+1)`` and ``dN (E, Q, r+1)``.
    """
    half = 0.5 * mesh.widths
    mid = 0.5 * (mesh.vertices[:-1] + mesh.vertices[1:])
    x = mid[:, None] + half[:, None] * quadrature.points[None, :]
    w = half[:, None] * quadrature.weights[None, :]
    values, derivs = lagrange_basis(mesh.order, quadrature.points)
    dN = derivs[None, :, :] / half[:, None, None]
    return x, w, values, dN


def _scatter(mesh: Mesh, element_matrices: np.ndarray) -> BandedMatrix:
    # Within one (a, b) pair the target columns are distinct, so plain slice
    # additions give a deterministic reduction.
    r = mesh.order
    out = BandedMatrix.zeros(mesh.dof_count, r, r)
    ne = mesh.n_elements
    for a in range(r + 1):
        for b in range(r + 1):
            out.data[r + a - b, b : b + ne * r : r] += element_matrices[:, a, b]
    return out


def element_mass(mesh: Mesh, quadrature: QuadratureRule) -> np.ndarray:
    _, w, N, _ = quadrature_geometry(mesh, quadrature)
    return np.einsum("eq,qa,qb->eab", w, N, N)


def assemble_mass(mesh: Mesh, quadrature: QuadratureRule | None = None) -> BandedMatrix:
    """Consistent mass matrix ``M[i, j] = integral of N_i N_j``."""
    quadrature = quadrature or default_quadrature(mesh.order)
    if quadrature.degree < 2 * mesh.order:
        raise ConfigurationError(
            f"{quadrature.n_points}-point rule is exact to degree {quadrature.degree}, "
            f"mass matrix of order {mesh.order} needs {2 * mesh.order}",
            key="mesh.quadrature_points",
        )
    return _scatter(mesh, element_mass(mesh, quadrature))


def operator_coefficients(u_quad, t, params: ModelParams):
    """Diffusion ``sigma^2/2`` and signed convection at the given state values."""
    sigma = effective_volatility(u_quad, t, params)
    diffusion = 0.5 * sigma**2
    convection = params.convection_sign * (params.rate + diffusion)
    return diffusion, convection


def element_operator(mesh, u_prev, t, params, quadrature):
    x, w, N, dN = quadrature_geometry(mesh, quadrature)
    coeffs = u_prev.coefficients[mesh.element_dofs()]
    u_quad = coeffs @ N.T
    diffusion, convection = operator_coefficients(u_quad, t, params)
    stiff = np.einsum("eq,eqa,eqb->eab", w * diffusion, dN, dN)
    adv = np.einsum("eq,qa,eqb->eab", w * convection, N, dN)
    out = stiff + adv
    if params.reaction_coefficient:
        out += params.reaction_coefficient * np.einsum("eq,qa,qb->eab", w, N, N)
    return out


def assemble_operator(
    mesh: Mesh,
    u_prev: SolutionField,
    t: float,
    params: ModelParams,
    quadrature: QuadratureRule | None = None,
) -> BandedMatrix:
    """Discrete bilinear form with volatility frozen at ``u_prev``.

    ``A[i, j] = int a N_j' N_i' + int c N_j' N_i (+ rho int N_j N_i)`` where
    ``a = sigma^2/2`` and ``c = convection_sign * (r + a)``, with sigma sampled
    at the quadrature points from the interpolated ``u_prev``.
    """
    if not u_prev.mesh.same_as(mesh):
        raise InconsistentInputError("u_prev lives on a different mesh")
    quadrature = quadrature or default_quadrature(mesh.order)
    return _scatter(mesh, element_operator(mesh, u_prev, t, params, quadrature))
