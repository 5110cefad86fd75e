"""Backward Euler time stepping with lagged volatility."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .banded import BandedMatrix, lu_factor_banded
from .errors import InvalidParameterError, RatingFEMError, SolverError
from .fem import (
    Mesh,
    QuadratureRule,
    SolutionField,
    assemble_mass,
    assemble_operator,
    default_quadrature,
    quadrature_geometry,
)
from .model import (
    ModelParams,
    effective_volatility,
    effective_volatility_du,
    initial_condition,
)


@dataclass(frozen=True)
class TimeGrid:
    maturity: float
    n_steps: int

    def __post_init__(self):
        if self.maturity < 0.0:
            raise InvalidParameterError("maturity must be non-negative")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise InvalidParameterError(f"n_steps must be a non-negative integer, got {self.n_steps!r}")
        if (self.n_steps == 0) != (self.maturity == 0.0):
            raise InvalidParameterError("n_steps must be >= 1 for positive maturity and 0 for zero maturity")

    @classmethod
    def for_maturity(cls, maturity: float, n_steps: int) -> TimeGrid:
        return cls(maturity, 0 if maturity == 0.0 else n_steps)

    @property
    def dt(self) -> float:
        return self.maturity / self.n_steps if self.n_steps else 0.0

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class BoundaryCondition:
    """Dirichlet data at the two ends of the truncated window."""

    left_value: Callable[[float], float]
    right_value: Callable[[float], float]
    kind: str = "dirichlet"

    @classmethod
    def constant(cls, left: float, right: float) -> BoundaryCondition:
        return cls(_Constant(left), _Constant(right))

    def values(self, t: float) -> tuple[float, float]:
        left, right = float(self.left_value(t)), float(self.right_value(t))
        if not (math.isfinite(left) and math.isfinite(right)):
            raise InvalidParameterError(f"non-finite boundary data at t={t}")
        return left, right


@dataclass(frozen=True)
class _Constant:
    value: float

    def __call__(self, t):
        return self.value


def default_boundary(params: ModelParams) -> BoundaryCondition:
    """Payoff values at the window ends, held fixed in time."""
    return BoundaryCondition.constant(
        float(initial_condition(params.x_min)), float(initial_condition(params.x_max))
    )


def apply_dirichlet(matrix: BandedMatrix, rhs, bc: BoundaryCondition, t: float):
    """Impose Dirichlet rows and eliminate the known boundary columns.

    Returns new ``(matrix, rhs)``; the inputs are left untouched.
    """
    out = matrix.copy()
    rhs = np.array(rhs, dtype=float)
    n = out.dimension
    kl, ku = out.lower, out.upper
    left, right = bc.values(t)
    data = out.data
    # column 0 below the diagonal, column n-1 above it
    col0 = data[ku + 1 : ku + kl + 1, 0].copy()
    rhs[1 : 1 + col0.size] -= col0 * left
    data[ku + 1 :, 0] = 0.0
    m = min(ku, n - 1)
    rows = np.arange(n - 1 - m, n - 1)
    colN = data[ku + rows - (n - 1), n - 1]
    rhs[rows] -= colN * right
    data[ku + rows - (n - 1), n - 1] = 0.0
    # boundary rows become identity rows
    for j in range(1, min(ku, n - 1) + 1):
        data[ku - j, j] = 0.0
    for j in range(max(n - 1 - kl, 0), n - 1):
        data[ku + (n - 1) - j, j] = 0.0
    data[ku, 0] = 1.0
    data[ku, n - 1] = 1.0
    rhs[0] = left
    rhs[-1] = right
    return out, rhs


def step_system(mass, operator, u_prev: SolutionField, dt: float, bc: BoundaryCondition, t_next: float):
    """``(M + dt A, M u_prev)`` with boundary rows applied."""
    system = mass + dt * operator
    rhs = mass @ u_prev.coefficients
    return apply_dirichlet(system, rhs, bc, t_next)


def backward_euler_step(
    mass: BandedMatrix,
    operator: BandedMatrix,
    u_prev: SolutionField,
    dt: float,
    bc: BoundaryCondition,
    t_next: float,
) -> SolutionField:
    """One implicit step; ``operator`` must carry sigma frozen at ``u_prev``."""
    if not dt > 0.0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    system, rhs = step_system(mass, operator, u_prev, dt, bc, t_next)
    coeffs = lu_factor_banded(system).solve(rhs)
    return SolutionField(coeffs, u_prev.mesh, t_next)


@dataclass
class StepDiagnostics:
    step: int
    time: float
    residual: float
    sigma_min: float
    sigma_max: float
    stability_summand_min: float


@dataclass
class SolutionHistory:
    """Solution at every time level plus what is needed to rebuild each step."""

    params: ModelParams
    mesh: Mesh
    grid: TimeGrid
    bc: BoundaryCondition
    quadrature: QuadratureRule
    fields: list[SolutionField] = field(default_factory=list)
    diagnostics: list[StepDiagnostics] = field(default_factory=list)

    def __len__(self):
        return len(self.fields)

    def __getitem__(self, n) -> SolutionField:
        return self.fields[n]

    @property
    def times(self) -> np.ndarray:
        return np.array([f.time for f in self.fields])

    @property
    def final(self) -> SolutionField:
        return self.fields[-1]

    def mass(self) -> BandedMatrix:
        return assemble_mass(self.mesh, self.quadrature)

    def l2_norms(self) -> np.ndarray:
        mass = self.mass()
        return np.array([math.sqrt(max(f.coefficients @ (mass @ f.coefficients), 0.0)) for f in self.fields])

    def step_system(self, n: int, mass: BandedMatrix | None = None):
        """Rebuild the linear system solved to go from level ``n-1`` to ``n``."""
        if not 1 <= n < len(self.fields):
            raise IndexError(f"no step leads to level {n}")
        mass = mass if mass is not None else self.mass()
        prev = self.fields[n - 1]
        operator = assemble_operator(self.mesh, prev, prev.time, self.params, self.quadrature)
        return step_system(mass, operator, prev, self.grid.dt, self.bc, self.fields[n].time)


def stability_summand(field_: SolutionField, t: float, params: ModelParams, quadrature: QuadratureRule):
    """``sigma^2 - d(sigma^2)/dx`` at the quadrature points, shape (E, Q)."""
    mesh = field_.mesh
    _, _, N, dN = quadrature_geometry(mesh, quadrature)
    coeffs = field_.coefficients[mesh.element_dofs()]
    u = coeffs @ N.T
    ux = np.einsum("ea,eqa->eq", coeffs, dN)
    sigma = effective_volatility(u, t, params)
    dsigma2_dx = 2.0 * sigma * effective_volatility_du(u, t, params) * ux
    return sigma, sigma**2 - dsigma2_dx


def run_solver(
    params: ModelParams,
    mesh: Mesh,
    grid: TimeGrid,
    bc: BoundaryCondition | None = None,
    quadrature: QuadratureRule | None = None,
    initial: Callable | None = None,
    diagnostics: bool = True,
) -> SolutionHistory:
    """Interpolate the payoff and march it to maturity.

    With ``diagnostics=False`` the per-step residual and stability summaries
    are skipped, which roughly halves the cost per step.
    """
    bc = bc or default_boundary(params)
    quadrature = quadrature or default_quadrature(mesh.order)
    initial = initial or initial_condition
    history = SolutionHistory(params, mesh, grid, bc, quadrature)
    u = SolutionField.interpolate(initial, mesh, 0.0)
    history.fields.append(u)
    if grid.n_steps == 0:
        return history
    mass = assemble_mass(mesh, quadrature)
    dt = grid.dt
    times = grid.times
    for n in range(1, grid.n_steps + 1):
        try:
            operator = assemble_operator(mesh, u, u.time, params, quadrature)
            system, rhs = step_system(mass, operator, u, dt, bc, times[n])
            coeffs = lu_factor_banded(system).solve(rhs)
            nxt = SolutionField(coeffs, mesh, float(times[n]))
            if diagnostics:
                residual = float(np.max(np.abs(system @ coeffs - rhs)))
                sigma, summand = stability_summand(nxt, nxt.time, params, quadrature)
        except RatingFEMError as exc:
            raise SolverError(str(exc), step=n) from exc
        history.fields.append(nxt)
        if diagnostics:
            history.diagnostics.append(
                StepDiagnostics(n, nxt.time, residual, float(sigma.min()), float(sigma.max()), float(summand.min()))
            )
        u = nxt
    return history


@dataclass
class StabilityReport:
    """Running sums of ``sigma^2 - d(sigma^2)/dx`` over time levels 1..n.

    ``pointwise_min[n]`` is the minimum over x of the pointwise running sum;
    ``minimized_sum[n]`` is the running sum of the per-level minimum over x.
    """

    times: np.ndarray
    summand_min: np.ndarray
    pointwise_min: np.ndarray
    minimized_sum: np.ndarray
    holds_pointwise: bool
    worst_location: float | None

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "summand_min": self.summand_min.tolist(),
            "pointwise_running_sum_min": self.pointwise_min.tolist(),
            "minimized_running_sum": self.minimized_sum.tolist(),
            "holds_pointwise": self.holds_pointwise,
            "min_pointwise_running_sum": float(self.pointwise_min.min()) if self.pointwise_min.size else None,
            "worst_location": self.worst_location,
        }


def stability_diagnostic(history: SolutionHistory, params: ModelParams | None = None) -> StabilityReport:
    if len(history) == 0:
        raise InvalidParameterError("empty history")
    params = params or history.params
    x_q, *_ = quadrature_geometry(history.mesh, history.quadrature)
    running = np.zeros(x_q.shape)
    summand_min, pointwise_min, minimized = [], [], []
    acc_min = 0.0
    worst_value, worst_x = math.inf, None
    for f in history.fields[1:]:
        _, summand = stability_summand(f, f.time, params, history.quadrature)
        running += summand
        summand_min.append(summand.min())
        k = int(np.argmin(running))
        pointwise_min.append(running.flat[k])
        if running.flat[k] < worst_value:
            worst_value, worst_x = running.flat[k], float(x_q.flat[k])
        acc_min += summand.min()
        minimized.append(acc_min)
    pointwise_min = np.array(pointwise_min)
    return StabilityReport(
        times=history.times[1:],
        summand_min=np.array(summand_min),
        pointwise_min=pointwise_min,
        minimized_sum=np.array(minimized),
        holds_pointwise=bool(np.all(pointwise_min >= 0.0)),
        worst_location=worst_x,
    )
