"""Command-line front end: ``ratingfem solve | converge | boundary``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from .boundary import track_boundary
from .config import RunConfig, describe_keys, parse_config
from .errors import ConfigurationError, RatingFEMError, SolverError
from .fem import assemble_mass, assemble_operator, gauss_rule, SolutionField
from .io import (
    history_summary,
    write_diagnostics_csv,
    write_json,
    write_matrix_csv,
    write_path_csv,
    write_stability_csv,
    write_surface_csv,
    write_table_csv,
)
from .model import initial_condition
from .stepper import run_solver, stability_diagnostic
from .verify import spatial_convergence_study, temporal_convergence_study

log = logging.getLogger("ratingfem")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_PARTIAL_BOUNDARY = 3

BOUNDARY_CONVERGED_FRACTION = 0.95


def _keys_epilog() -> str:
    rows = describe_keys()
    width = max(len(k) for k, _, _ in rows)
    lines = ["configuration keys (JSON file or --set key=value), with defaults:"]
    for key, default, desc in rows:
        lines.append(f"  {key.ljust(width)}  {default:<28} {desc}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON configuration file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                        help="override one dotted config key (repeatable)")
    common.add_argument("--out", metavar="DIR", help="output directory (outputs.directory)")
    common.add_argument("--format", choices=("csv", "json", "both"), help="output formats (outputs.formats)")
    common.add_argument("--threads", type=int, default=1, metavar="N", help="worker processes for study rows")
    common.add_argument("-v", "--verbose", action="store_true")

    epilog = _keys_epilog()
    parser = argparse.ArgumentParser(
        prog="ratingfem",
        description="Galerkin solver for a bond value with a smoothed rating-dependent volatility switch.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("solve", "run the solver and write the solution surface and diagnostics"),
        ("converge", "run spatial and/or temporal convergence studies"),
        ("boundary", "solve and track the free boundary"),
    ):
        sub.add_parser(name, parents=[common], help=help_, epilog=epilog,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def load_config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"outputs.directory={args.out}")
    if args.format is not None:
        formats = '["csv","json"]' if args.format == "both" else f'["{args.format}"]'
        overrides.append(f"outputs.formats={formats}")
    return parse_config(args.config, overrides)


def _outdir(config: RunConfig) -> Path:
    out = Path(config.outputs.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def command_solve(config: RunConfig) -> int:
    out = _outdir(config)
    formats = set(config.outputs.formats)
    fields = set(config.outputs.fields)
    params = config.params()
    mesh = config.build_mesh()
    quad = gauss_rule(config.mesh.quadrature_points) if config.mesh.quadrature_points else None
    bc = config.boundary_condition()
    if "matrices" in fields and "csv" in formats:
        u0 = SolutionField.interpolate(initial_condition, mesh)
        write_matrix_csv(assemble_mass(mesh, quad), out / "mass.csv")
        write_matrix_csv(assemble_operator(mesh, u0, 0.0, params, quad), out / "operator_t0.csv")
    try:
        history = run_solver(params, mesh, config.time_grid(), bc, quad)
    except SolverError as exc:
        write_json(out / "status.json", {"status": "failed", "step": exc.step, "error": str(exc)})
        log.error("solver failed: %s", exc)
        return EXIT_SOLVER
    if "surface" in fields and "csv" in formats:
        write_surface_csv(history, out / "surface.csv")
    if "diagnostics" in fields:
        if "json" in formats:
            write_json(out / "diagnostics.json", history_summary(history))
        if "csv" in formats:
            write_diagnostics_csv(history, out / "diagnostics.csv")
    if "stability" in fields and len(history) > 1:
        report = stability_diagnostic(history)
        if "json" in formats:
            write_json(out / "stability.json", report.to_dict())
        if "csv" in formats:
            write_stability_csv(report, out / "stability.csv")
    log.info("wrote results to %s", out)
    return EXIT_OK


def command_converge(config: RunConfig, workers: int = 1) -> int:
    out = _outdir(config)
    formats = set(config.outputs.formats)
    params = config.params()
    bc = config.boundary_condition()
    conv = config.convergence
    qp = config.mesh.quadrature_points
    summary = {}
    failed = False
    if "spatial" in conv.studies:
        s = conv.spatial
        table = spatial_convergence_study(
            params, s.orders, s.element_counts, s.n_steps, bc,
            reference_order=s.reference_order, reference_refinement=s.reference_refinement,
            reference_nt_factor=s.reference_nt_factor, quadrature_points=qp, workers=workers,
        )
        summary["spatial"] = table.summary()
        failed |= any(r.report is None for r in table.rows)
        if "csv" in formats:
            write_table_csv(table, out / "spatial.csv")
    if "temporal" in conv.studies:
        s = conv.temporal
        table = temporal_convergence_study(
            params, s.n_steps_list, s.n_elements, s.order, bc,
            reference_nt=s.reference_n_steps, quadrature_points=qp, workers=workers,
        )
        summary["temporal"] = table.summary()
        failed |= any(r.report is None for r in table.rows)
        if "csv" in formats:
            write_table_csv(table, out / "temporal.csv")
    if "json" in formats:
        write_json(out / "convergence.json", summary)
    if failed:
        log.warning("some study rows failed; see the failure column")
    return EXIT_OK


def command_boundary(config: RunConfig) -> int:
    out = _outdir(config)
    formats = set(config.outputs.formats)
    params = config.params()
    quad = gauss_rule(config.mesh.quadrature_points) if config.mesh.quadrature_points else None
    b = config.boundary
    x0 = b.x0 if b.x0 is not None else math.log(params.gamma)
    if not params.x_min < x0 < params.x_max:
        raise ConfigurationError(f"initial guess {x0} lies outside the window; set it explicitly", key="boundary.x0")
    try:
        history = run_solver(params, config.build_mesh(), config.time_grid(), config.boundary_condition(),
                             quad, diagnostics=False)
    except SolverError as exc:
        write_json(out / "status.json", {"status": "failed", "step": exc.step, "error": str(exc)})
        log.error("solver failed: %s", exc)
        return EXIT_SOLVER
    path = track_boundary(history, params, b.method, warm_start=b.warm_start, x0=x0)
    methods = ("direct", "green") if b.method == "both" else (b.method,)
    fractions = {m: path.converged_fraction(m, len(history)) for m in methods}
    disc = path.discrepancies()
    summary = {
        "method": b.method,
        "levels": len(history),
        "converged_fraction": fractions,
        "gaps": [{"t": t, "method": m} for t, m in path.gaps],
        "multiple_crossings": sum(1 for e in path.entries if e.multiple),
        "max_discrepancy": max((d for _, d in disc), default=None),
        "discrepancy": [{"t": t, "abs_diff": d} for t, d in disc],
    }
    if "csv" in formats:
        write_path_csv(path, out / "boundary.csv")
    if "json" in formats:
        write_json(out / "boundary_summary.json", summary)
    if min(fractions.values()) < BOUNDARY_CONVERGED_FRACTION:
        log.warning("free boundary converged on only %s of levels", fractions)
        return EXIT_PARTIAL_BOUNDARY
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = load_config(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "solve":
            return command_solve(config)
        if args.command == "converge":
            return command_converge(config, workers=args.threads)
        return command_boundary(config)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RatingFEMError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
