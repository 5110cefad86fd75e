"""CSV and JSON writers for histories, boundary paths and convergence tables."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .banded import BandedMatrix
from .boundary import FreeBoundaryPath
from .stepper import SolutionHistory, StabilityReport
from .verify import ConvergenceTable


def fmt(value) -> str:
    """Round-trippable decimal text (17 significant digits)."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def surface_rows(history: SolutionHistory):
    x = history.mesh.node_coords
    for fld in history.fields:
        for xi, ui in zip(x, fld.coefficients):
            yield (fld.time, xi, ui)


def write_surface_csv(history: SolutionHistory, path) -> Path:
    return write_csv(path, ("t", "x", "u"), surface_rows(history))


def history_summary(history: SolutionHistory) -> dict:
    """Per-level norms plus the per-step solver diagnostics."""
    norms = history.l2_norms()
    diag = {d.step: d for d in history.diagnostics}
    steps = []
    for n, fld in enumerate(history.fields):
        rec = {"step": n, "t": fld.time, "l2": norms[n], "max": float(np.max(np.abs(fld.coefficients)))}
        d = diag.get(n)
        if d is not None:
            rec.update(
                residual=d.residual,
                sigma_min=d.sigma_min,
                sigma_max=d.sigma_max,
                stability_summand_min=d.stability_summand_min,
            )
        steps.append(rec)
    return {
        "params": history.params.to_dict(),
        "n_elements": history.mesh.n_elements,
        "order": history.mesh.order,
        "dof_count": history.mesh.dof_count,
        "n_steps": history.grid.n_steps,
        "dt": history.grid.dt,
        "l2_initial": norms[0],
        "l2_max": float(norms.max()),
        "steps": steps,
    }


DIAGNOSTIC_COLUMNS = ("step", "t", "l2", "max", "residual", "sigma_min", "sigma_max", "stability_summand_min")


def write_diagnostics_csv(history: SolutionHistory, path) -> Path:
    steps = history_summary(history)["steps"]
    return write_csv(path, DIAGNOSTIC_COLUMNS, ([s.get(c) for c in DIAGNOSTIC_COLUMNS] for s in steps))


def write_stability_csv(report: StabilityReport, path) -> Path:
    rows = zip(report.times, report.summand_min, report.pointwise_min, report.minimized_sum)
    return write_csv(path, ("t", "summand_min", "pointwise_running_sum_min", "minimized_running_sum"), rows)


PATH_COLUMNS = ("t", "s_f", "method", "iterations", "residual")


def write_path_csv(path_: FreeBoundaryPath, path) -> Path:
    rows = ((e.t, e.s_f, e.method, e.iterations, e.residual) for e in path_.entries)
    return write_csv(path, PATH_COLUMNS, rows)


def write_matrix_csv(matrix: BandedMatrix, path) -> Path:
    """Nonzero band entries as ``(i, j, value)`` triplets."""
    dense_rows = []
    for k in range(-matrix.upper, matrix.lower + 1):
        d = matrix.diagonal(k)
        start_i = max(k, 0)
        start_j = max(-k, 0)
        for m, v in enumerate(d):
            if v != 0.0:
                dense_rows.append((start_i + m, start_j + m, v))
    dense_rows.sort()
    return write_csv(path, ("i", "j", "value"), dense_rows)


TABLE_COLUMNS = ("resolution", "order", "l2", "h1", "linf", "time", "h", "dt", "order_l2", "order_h1", "order_linf", "failure")


def write_table_csv(table: ConvergenceTable, path) -> Path:
    records = table.to_records()
    return write_csv(path, TABLE_COLUMNS, ([r.get(c) for c in TABLE_COLUMNS] for r in records))
