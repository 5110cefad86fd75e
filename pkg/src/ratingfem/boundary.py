"""Locating the rating-migration boundary ``u_h(S_f, t) = gamma * exp(-delta t)``.

Two routes are provided. :func:`detect_crossing` brackets a sign change of
``u_h - threshold`` on the mesh and polishes it with safeguarded Newton.
:func:`boundary_root_green` never touches ``u_h`` directly: it evaluates the
point value through the discrete Green vector ``g(s)`` solving ``B^T g = N(s)``
for the step matrix ``B``, so that ``g(s) . rhs`` is the step solution at ``s``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .banded import BandedLU, BandedMatrix, lu_factor_banded
from .errors import DomainError, InconsistentInputError, RootFailureError
from .fem import Mesh, SolutionField, lagrange_basis
from .model import ModelParams

ROOT_TOLERANCE = 1e-12
MAX_NEWTON_ITERATIONS = 50
MIN_DAMPING = 2.0**-10


def evaluate_solution(field_: SolutionField, x):
    """Point values of a finite element field, exact at nodes."""
    return field_(x)


class Crossing(NamedTuple):
    root: float
    residual: float
    iterations: int
    multiple: bool


def _safeguarded_newton(f, df, lo, hi, f_lo, x0=None, tol=ROOT_TOLERANCE, max_iter=100):
    """Newton inside a sign-change bracket ``[lo, hi]``, bisecting when a step leaves it."""
    x = 0.5 * (lo + hi) if x0 is None or not lo <= x0 <= hi else x0
    fx = f(x)
    iterations = 0
    while abs(fx) > tol and iterations < max_iter:
        iterations += 1
        if (fx < 0.0) == (f_lo < 0.0):
            lo, f_lo = x, fx
        else:
            hi = x
        d = df(x)
        step_ok = d != 0.0
        if step_ok:
            x_new = x - fx / d
            step_ok = lo < x_new < hi
        x = x_new if step_ok else 0.5 * (lo + hi)
        fx = f(x)
        if hi - lo < 4.0 * np.finfo(float).eps * max(1.0, abs(x)):
            break
    return x, fx, iterations


def _sign_changes(field_: SolutionField, level: float, samples_per_element: int):
    """Brackets ``(a, b, f(a))`` where ``u_h - level`` changes sign, left to right."""
    mesh = field_.mesh
    if mesh.order == 1:
        xs = mesh.node_coords
        vals = field_.coefficients - level
    else:
        ts = np.linspace(0.0, 1.0, samples_per_element + 1)[:-1]
        xs = (mesh.vertices[:-1, None] + mesh.widths[:, None] * ts[None, :]).ravel()
        xs = np.append(xs, mesh.x_max)
        vals = field_(xs) - level
    brackets = []
    i = 0
    n = xs.size
    while i < n - 1:
        if vals[i] == 0.0:
            brackets.append((xs[i], xs[i], 0.0))
            # skip the run of exact zeros
            while i < n - 1 and vals[i] == 0.0:
                i += 1
            continue
        if vals[i] * vals[i + 1] < 0.0:
            brackets.append((xs[i], xs[i + 1], vals[i]))
        i += 1
    if vals[-1] == 0.0 and (not brackets or brackets[-1][0] != xs[-1]):
        brackets.append((xs[-1], xs[-1], 0.0))
    return brackets


def detect_crossing(field_: SolutionField, t: float, params: ModelParams, x0: float | None = None) -> Crossing | None:
    """Leftmost root of ``u_h(x) = threshold(t)``; ``None`` when there is no sign change."""
    level = float(params.threshold(t))
    brackets = _sign_changes(field_, level, samples_per_element=4 * field_.mesh.order)
    if not brackets:
        return None
    lo, hi, f_lo = brackets[0]
    if lo == hi:
        return Crossing(float(lo), 0.0, 0, len(brackets) > 1)
    root, res, its = _safeguarded_newton(
        lambda x: float(field_(x)) - level,
        lambda x: float(field_(x, nu=1)),
        lo,
        hi,
        f_lo,
        x0=x0,
    )
    return Crossing(float(root), abs(float(res)), its, len(brackets) > 1)


def delta_load(mesh: Mesh, s: float, nu: int = 0) -> np.ndarray:
    """Consistent load of a point source at ``s`` (entries ``N_i(s)``, or ``N_i'(s)``)."""
    elem, xi = mesh.locate(s)
    elem = int(elem)
    values, derivs = lagrange_basis(mesh.order, float(xi))
    load = np.zeros(mesh.dof_count)
    dofs = slice(elem * mesh.order, elem * mesh.order + mesh.order + 1)
    if nu == 0:
        load[dofs] = values
    else:
        load[dofs] = derivs * 2.0 / (mesh.vertices[elem + 1] - mesh.vertices[elem])
    return load


@dataclass
class GreenVector:
    coefficients: np.ndarray
    source_point: float

    def __matmul__(self, rhs):
        return float(self.coefficients @ np.asarray(rhs, dtype=float))


def _factors(system) -> BandedLU:
    return system if isinstance(system, BandedLU) else lu_factor_banded(system)


def green_vector(system: BandedMatrix | BandedLU, field_or_mesh, s: float) -> GreenVector:
    """Solve ``B^T g = N(s)`` for the step matrix ``B`` (not pre-transposed)."""
    mesh = field_or_mesh.mesh if isinstance(field_or_mesh, SolutionField) else field_or_mesh
    if isinstance(system, BandedMatrix) and system.dimension != mesh.dof_count:
        raise InconsistentInputError("system dimension does not match the mesh")
    if not mesh.x_min < s < mesh.x_max:
        raise DomainError(f"source point {s} must lie inside ({mesh.x_min}, {mesh.x_max})")
    g = _factors(system).solve(delta_load(mesh, s), transpose=True)
    return GreenVector(g, float(s))


@dataclass
class GreenRootDiagnostics:
    iterations: int
    residual: float
    full_steps: int
    damped_steps: int
    bisection_fallback: bool
    history: list[float] = field(default_factory=list)


def boundary_root_green(
    step_system: BandedMatrix | BandedLU,
    rhs,
    t: float,
    params: ModelParams,
    x0: float,
    mesh: Mesh,
    tol: float = ROOT_TOLERANCE,
    max_iterations: int = MAX_NEWTON_ITERATIONS,
):
    """Damped Newton on ``F(s) = g(s) . rhs - threshold(t)``.

    ``F'(s)`` comes from the transpose solve against the differentiated load
    ``N_i'(s)``. The step is halved until ``|F|`` decreases; below
    ``MIN_DAMPING`` the search falls back to bisection on a bracket taken from
    the nodal Green values.
    """
    if not mesh.x_min < x0 < mesh.x_max:
        raise DomainError(f"initial guess {x0} outside ({mesh.x_min}, {mesh.x_max})")
    lu = _factors(step_system)
    rhs = np.asarray(rhs, dtype=float)
    level = float(params.threshold(t))
    lo_edge, hi_edge = mesh.x_min, mesh.x_max
    eps_x = 1e-12 * (hi_edge - lo_edge)

    def F(s):
        return float(lu.solve(delta_load(mesh, s), transpose=True) @ rhs) - level

    def dF(s):
        return float(lu.solve(delta_load(mesh, s, nu=1), transpose=True) @ rhs)

    x = float(x0)
    fx = F(x)
    diag = GreenRootDiagnostics(0, abs(fx), 0, 0, False, [x])
    while abs(fx) > tol:
        if diag.iterations >= max_iterations:
            raise RootFailureError(
                f"damped Newton did not converge in {max_iterations} iterations", x=x, residual=abs(fx)
            )
        diag.iterations += 1
        d = dF(x)
        lam = 1.0
        accepted = False
        if d != 0.0 and math.isfinite(d):
            while lam >= MIN_DAMPING:
                trial = min(max(x - lam * fx / d, lo_edge + eps_x), hi_edge - eps_x)
                f_trial = F(trial)
                if abs(f_trial) < abs(fx):
                    accepted = True
                    break
                lam *= 0.5
        if accepted:
            if lam == 1.0:
                diag.full_steps += 1
            else:
                diag.damped_steps += 1
            x, fx = trial, f_trial
        else:
            x, fx = _green_bisection(lu, rhs, level, mesh, F, tol)
            diag.bisection_fallback = True
        diag.history.append(x)
    diag.residual = abs(fx)
    return x, diag


def _green_bisection(lu, rhs, level, mesh, F, tol):
    # nodal values of g(s) . rhs are the components of B^{-1} rhs
    nodal = lu.solve(rhs) - level
    xs = mesh.node_coords
    change = np.nonzero(nodal[:-1] * nodal[1:] <= 0.0)[0]
    if change.size == 0:
        raise RootFailureError("no sign change of the Green functional on the mesh")
    i = int(change[0])
    lo, hi, f_lo = xs[i], xs[i + 1], nodal[i]
    x, fx = lo, f_lo
    for _ in range(200):
        x = 0.5 * (lo + hi)
        fx = F(x)
        if abs(fx) <= tol or hi - lo < 1e-15:
            break
        if (fx < 0.0) == (f_lo < 0.0):
            lo, f_lo = x, fx
        else:
            hi = x
    return x, fx


@dataclass
class BoundaryEntry:
    t: float
    s_f: float
    method: str
    iterations: int
    residual: float
    converged: bool = True
    multiple: bool = False
    full_steps: int = 0


@dataclass
class FreeBoundaryPath:
    entries: list[BoundaryEntry] = field(default_factory=list)
    gaps: list[tuple[float, str]] = field(default_factory=list)

    def by_method(self, method: str) -> list[BoundaryEntry]:
        return [e for e in self.entries if e.method == method]

    def times(self, method: str) -> np.ndarray:
        return np.array([e.t for e in self.by_method(method)])

    def values(self, method: str) -> np.ndarray:
        return np.array([e.s_f for e in self.by_method(method)])

    def discrepancies(self) -> list[tuple[float, float]]:
        """``|S_f(direct) - S_f(green)|`` at every time level where both converged."""
        green = {e.t: e for e in self.by_method("green") if e.converged}
        out = []
        for e in self.by_method("direct"):
            g = green.get(e.t)
            if g is not None and e.converged:
                out.append((e.t, abs(e.s_f - g.s_f)))
        return out

    def converged_fraction(self, method: str, n_levels: int) -> float:
        done = sum(1 for e in self.by_method(method) if e.converged)
        return done / n_levels if n_levels else 1.0


def track_boundary(
    history,
    params: ModelParams | None = None,
    method: str = "both",
    warm_start: bool = True,
    x0: float | None = None,
) -> FreeBoundaryPath:
    """Free boundary at every time level of ``history``.

    The Green route at level 0 uses the identity system (the interpolated
    payoff is given, not solved for).
    """
    if method not in ("direct", "green", "both"):
        raise ValueError(f"unknown method {method!r}")
    if len(history) == 0:
        raise ValueError("empty history")
    params = params or history.params
    mesh = history.mesh
    start = math.log(params.gamma) if x0 is None else float(x0)
    if not mesh.x_min < start < mesh.x_max:
        raise DomainError(f"initial guess {start} outside the mesh window")
    methods = ("direct", "green") if method == "both" else (method,)
    path = FreeBoundaryPath()
    guesses = {m: start for m in methods}
    mass = history.mass() if "green" in methods and len(history) > 1 else None
    for n, fld in enumerate(history.fields):
        t = fld.time
        for m in methods:
            guess = guesses[m] if warm_start else start
            if m == "direct":
                hit = detect_crossing(fld, t, params, x0=guess)
                if hit is None:
                    path.gaps.append((t, m))
                    continue
                entry = BoundaryEntry(t, hit.root, m, hit.iterations, hit.residual, hit.residual <= ROOT_TOLERANCE, hit.multiple)
            else:
                if n == 0:
                    system = BandedMatrix(np.ones((1, mesh.dof_count)), 0, 0)
                    rhs = fld.coefficients
                else:
                    system, rhs = history.step_system(n, mass)
                try:
                    root, diag = boundary_root_green(system, rhs, t, params, guess, mesh)
                except RootFailureError as exc:
                    path.entries.append(
                        BoundaryEntry(t, exc.x if exc.x is not None else math.nan, m, MAX_NEWTON_ITERATIONS,
                                      exc.residual if exc.residual is not None else math.inf, False)
                    )
                    continue
                entry = BoundaryEntry(t, root, m, diag.iterations, diag.residual, True, False, diag.full_steps)
            path.entries.append(entry)
            if entry.converged:
                guesses[m] = entry.s_f
    return path
