"""Explicit finite-difference reference, error norms and convergence studies."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InconsistentInputError, InvalidParameterError, RatingFEMError
from .fem import MAX_ORDER, SolutionField, gauss_rule, quadrature_geometry, solver_mesh
from .model import ModelParams, effective_volatility, initial_condition
from .stepper import BoundaryCondition, TimeGrid, default_boundary, run_solver

NORMS = ("l2", "h1", "linf")


@dataclass
class FDGrid:
    """Explicit finite-difference solution; ``u[:, k]`` lives at ``t[k]``."""

    x: np.ndarray
    t: np.ndarray
    u: np.ndarray
    dt: float

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    def interpolant(self, level: int = -1) -> CubicSpline:
        """Cubic spline through one stored time level; call as ``s(x, nu)``."""
        return CubicSpline(self.x, self.u[:, level])


def fd_max_dt(params: ModelParams, dx: float, upwind: bool = False) -> float:
    """Largest stable explicit step: ``dx^2 / sigma_L^2``.

    The upwind variant also spends ``|c| dt / dx`` of the positivity budget on
    convection, with ``c`` at its largest (sigma = sigma_L).
    """
    inv = params.sigma_low_grade**2 / dx**2
    if upwind:
        c = abs(params.convection_sign) * abs(params.rate + 0.5 * params.sigma_low_grade**2)
        inv += c / dx
    return 1.0 / inv


def fd_min_steps(params: ModelParams, nx: int, upwind: bool = False) -> int:
    """Smallest step count meeting the explicit stability limit."""
    dx = (params.x_max - params.x_min) / (nx - 1)
    return max(1, math.ceil(params.maturity / fd_max_dt(params, dx, upwind) * (1 - 1e-12)))


def explicit_fd_solve(
    params: ModelParams,
    nx: int,
    nt: int,
    bc: BoundaryCondition | None = None,
    upwind: bool = False,
    store_every: int | None = 1,
    initial: Callable | None = None,
) -> FDGrid:
    """Forward Euler on a uniform grid for the same operator the FEM discretizes.

    Diffusion is in flux form with arithmetic-mean face coefficients; the
    convection term uses central differences unless ``upwind``. Sigma is taken
    from the previous time level. ``store_every=None`` keeps only the first and
    last levels.
    """
    if nx < 3:
        raise InvalidParameterError("need at least 3 grid points")
    if nt < 1:
        raise InvalidParameterError("need at least one time step")
    dx = (params.x_max - params.x_min) / (nx - 1)
    dt = params.maturity / nt
    limit = fd_max_dt(params, dx, upwind)
    if dt > limit * (1 + 1e-12):
        raise InvalidParameterError(
            f"CFL violated: dt={dt:.3e} > {limit:.3e}; use nt >= {fd_min_steps(params, nx, upwind)}"
        )
    bc = bc or default_boundary(params)
    initial = initial or initial_condition
    x = np.linspace(params.x_min, params.x_max, nx)
    u = initial(x).astype(float)
    stored_t, stored_u = [0.0], [u.copy()]
    sign = params.convection_sign
    rho = params.reaction_coefficient
    for n in range(nt):
        t = n * dt
        sigma = effective_volatility(u, t, params)
        a = 0.5 * sigma**2
        a_face = 0.5 * (a[1:] + a[:-1])
        flux = a_face * np.diff(u) / dx
        diff = np.diff(flux) / dx
        c = sign * (params.rate + a[1:-1])
        if upwind:
            back = (u[1:-1] - u[:-2]) / dx
            fwd = (u[2:] - u[1:-1]) / dx
            ux = np.where(c > 0.0, back, fwd)
        else:
            ux = (u[2:] - u[:-2]) / (2.0 * dx)
        new = u.copy()
        new[1:-1] = u[1:-1] + dt * (diff - c * ux - rho * u[1:-1])
        new[0], new[-1] = bc.values((n + 1) * dt)
        u = new
        last = n + 1 == nt
        if last or (store_every and (n + 1) % store_every == 0):
            stored_t.append((n + 1) * dt)
            stored_u.append(u.copy())
    return FDGrid(x, np.array(stored_t), np.column_stack(stored_u), dt)


@dataclass
class AnalyticReference:
    """Reference given by closed-form value and derivative callables."""

    value: Callable
    derivative: Callable
    domain: tuple[float, float]

    def __call__(self, x, nu=0):
        return self.value(x) if nu == 0 else self.derivative(x)


@dataclass
class ErrorReport:
    l2: float
    h1: float
    linf: float
    h: float = math.nan
    dt: float = math.nan
    wall_time: float = math.nan
    h1_semi: float = math.nan

    def norm(self, name: str) -> float:
        return getattr(self, name)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _reference_domain(reference):
    if isinstance(reference, SolutionField):
        return reference.domain
    if isinstance(reference, CubicSpline):
        return float(reference.x[0]), float(reference.x[-1])
    return getattr(reference, "domain", None)


def error_norms(field_: SolutionField, reference, quadrature=None, dt: float = math.nan) -> ErrorReport:
    """L2, full H1 and max-norm of ``field_ - reference`` over the field's mesh.

    ``reference`` is called as ``reference(x, nu)`` with ``nu`` in {0, 1}.
    The max-norm is sampled at quadrature points and nodes.
    """
    mesh = field_.mesh
    quadrature = quadrature or gauss_rule(min(mesh.order + 3, 10))
    domain = _reference_domain(reference)
    if domain is not None:
        tol = 1e-9 * (mesh.x_max - mesh.x_min)
        if domain[0] > mesh.x_min + tol or domain[1] < mesh.x_max - tol:
            raise InconsistentInputError(
                f"reference domain {domain} does not cover [{mesh.x_min}, {mesh.x_max}]"
            )
    xq, wq, N, dN = quadrature_geometry(mesh, quadrature)
    coeffs = field_.coefficients[mesh.element_dofs()]
    e = coeffs @ N.T - reference(xq, 0)
    de = np.einsum("ea,eqa->eq", coeffs, dN) - reference(xq, 1)
    l2 = math.sqrt(float(np.sum(wq * e**2)))
    semi = math.sqrt(float(np.sum(wq * de**2)))
    nodal = np.abs(field_.coefficients - reference(mesh.node_coords, 0))
    linf = float(max(np.max(np.abs(e)), np.max(nodal)))
    return ErrorReport(l2, math.sqrt(l2**2 + semi**2), linf, mesh.h, dt, math.nan, semi)


@dataclass
class ConvergenceRow:
    resolution: int
    order: int
    report: ErrorReport | None
    failure: str | None = None
    observed: dict = field(default_factory=dict)


@dataclass
class ConvergenceTable:
    """Rows of a refinement study; ``kind`` is ``"spatial"`` or ``"temporal"``."""

    kind: str
    rows: list[ConvergenceRow]
    reference: dict = field(default_factory=dict)

    def group(self, order: int) -> list[ConvergenceRow]:
        rows = [r for r in self.rows if r.order == order and r.report is not None]
        return sorted(rows, key=lambda r: r.resolution)

    @property
    def orders(self) -> list[int]:
        return sorted({r.order for r in self.rows})

    def _step(self, row: ConvergenceRow) -> float:
        return row.report.h if self.kind == "spatial" else row.report.dt

    def fill_observed(self) -> None:
        for order in self.orders:
            rows = self.group(order)
            for coarse, fine in zip(rows, rows[1:]):
                fine.observed = {
                    norm: _pair_order(coarse.report.norm(norm), fine.report.norm(norm), self._step(coarse), self._step(fine))
                    for norm in NORMS
                }

    def pairwise(self, norm: str, order: int) -> list[float | None]:
        """Observed orders between consecutive refinements, coarse to fine."""
        return [r.observed.get(norm) for r in self.group(order)[1:]]

    def slope(self, norm: str, order: int) -> float | None:
        """Least-squares slope of log(error) against log(step size)."""
        rows = self.group(order)
        pts = [(self._step(r), r.report.norm(norm)) for r in rows if r.report.norm(norm) > 0.0]
        if len(pts) < 2:
            return None
        h, err = np.log(np.array(pts)).T
        return float(np.polyfit(h, err, 1)[0])

    def to_records(self) -> list[dict]:
        out = []
        for r in self.rows:
            rec = {"resolution": r.resolution, "order": r.order}
            if r.report is not None:
                rep = r.report
                rec.update(l2=rep.l2, h1=rep.h1, linf=rep.linf, h=rep.h, dt=rep.dt, time=rep.wall_time)
                for norm in NORMS:
                    rec[f"order_{norm}"] = r.observed.get(norm)
            else:
                rec["failure"] = r.failure
            out.append(rec)
        return out

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "reference": self.reference,
            "orders": {
                str(order): {
                    norm: {"pairwise": self.pairwise(norm, order), "least_squares": self.slope(norm, order)}
                    for norm in NORMS
                }
                for order in self.orders
            },
            "rows": self.to_records(),
        }


def _pair_order(e_coarse, e_fine, step_coarse, step_fine):
    if e_coarse <= 0.0 or e_fine <= 0.0:
        return None
    return math.log(e_coarse / e_fine) / math.log(step_coarse / step_fine)


def _check_doubling(values, name):
    values = sorted(values)
    if not values:
        raise InvalidParameterError(f"{name} must not be empty")
    for a, b in zip(values, values[1:]):
        if b != 2 * a:
            raise InvalidParameterError(f"{name} must be a doubling sequence, got {values}")


def _solve_final(args):
    params, n_elements, order, n_steps, bc, quadrature_points = args
    mesh = solver_mesh(params.x_min, params.x_max, n_elements, order)
    quadrature = gauss_rule(quadrature_points) if quadrature_points else None
    start = time.perf_counter()
    history = run_solver(params, mesh, TimeGrid.for_maturity(params.maturity, n_steps), bc, quadrature, diagnostics=False)
    return history.final, time.perf_counter() - start


def _map(jobs, workers):
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_guarded, job) for job in jobs]
            return [f.result() for f in futures]
    return [_guarded(job) for job in jobs]


def _guarded(job):
    try:
        return _solve_final(job)
    except RatingFEMError as exc:
        return exc


def _rows_from(jobs, results, reference, kind):
    rows = []
    for job, result in zip(jobs, results):
        params, n_elements, order, n_steps = job[:4]
        resolution = n_elements if kind == "spatial" else n_steps
        if isinstance(result, Exception):
            rows.append(ConvergenceRow(resolution, order, None, str(result)))
            continue
        fld, wall = result
        report = error_norms(fld, reference, dt=params.maturity / n_steps if n_steps else math.nan)
        report.wall_time = wall
        rows.append(ConvergenceRow(resolution, order, report))
    return rows


def spatial_convergence_study(
    params: ModelParams,
    orders,
    element_counts,
    nt_fixed: int,
    bc: BoundaryCondition | None = None,
    reference_order: int | None = None,
    reference_refinement: int = 2,
    reference_nt_factor: int = 4,
    quadrature_points: int | None = None,
    workers: int = 1,
) -> ConvergenceTable:
    """Errors at maturity against a finer, higher-order FEM run."""
    _check_doubling(element_counts, "element_counts")
    if not orders:
        raise InvalidParameterError("orders must not be empty")
    ref_order = reference_order or min(max(orders) + 1, MAX_ORDER)
    ref_ne = reference_refinement * max(element_counts)
    ref_nt = reference_nt_factor * nt_fixed
    ref_field, ref_wall = _solve_final((params, ref_ne, ref_order, ref_nt, bc, None))
    jobs = [(params, ne, r, nt_fixed, bc, quadrature_points) for r in orders for ne in element_counts]
    table = ConvergenceTable(
        "spatial",
        _rows_from(jobs, _map(jobs, workers), ref_field, "spatial"),
        {"order": ref_order, "n_elements": ref_ne, "n_steps": ref_nt, "wall_time": ref_wall},
    )
    table.fill_observed()
    return table


def temporal_convergence_study(
    params: ModelParams,
    nt_list,
    ne_fixed: int,
    order_fixed: int,
    bc: BoundaryCondition | None = None,
    reference_nt: int | None = None,
    quadrature_points: int | None = None,
    workers: int = 1,
) -> ConvergenceTable:
    """Errors at maturity against the same mesh with a much finer time grid."""
    _check_doubling(nt_list, "nt_list")
    ref_nt = reference_nt or 8 * max(nt_list)
    ref_field, ref_wall = _solve_final((params, ne_fixed, order_fixed, ref_nt, bc, quadrature_points))
    jobs = [(params, ne_fixed, order_fixed, nt, bc, quadrature_points) for nt in nt_list]
    table = ConvergenceTable(
        "temporal",
        _rows_from(jobs, _map(jobs, workers), ref_field, "temporal"),
        {"order": order_fixed, "n_elements": ne_fixed, "n_steps": ref_nt, "wall_time": ref_wall},
    )
    table.fill_observed()
    return table
