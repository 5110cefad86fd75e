import pytest

from ratingfem import ModelParams, TimeGrid, run_solver, solver_mesh


@pytest.fixture(scope="session")
def default_params():
    return ModelParams()


@pytest.fixture(scope="session")
def default_history(default_params):
    """The reference run: r=1, Ne=1024, Nt=1024 with diagnostics."""
    p = default_params
    mesh = solver_mesh(p.x_min, p.x_max, 1024, 1)
    return run_solver(p, mesh, TimeGrid(p.maturity, 1024))


@pytest.fixture(scope="session")
def small_history(default_params):
    p = default_params
    mesh = solver_mesh(p.x_min, p.x_max, 128, 1)
    return run_solver(p, mesh, TimeGrid(p.maturity, 64))


ACCEPTANCE_LINES: dict[str, str] = {}


def record_acceptance(label: str, passed: bool, detail: str) -> None:
    line = f"{label}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES[label] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[label])
