"""Run configuration: JSON files plus dotted ``key=value`` overrides."""
from __future__ import annotations

import json
import math
import re
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError, InvalidParameterError
from .fem import MAX_GAUSS_POINTS, MAX_ORDER, Mesh, mesh_from_breakpoints, solver_mesh
from .model import ModelParams
from .stepper import BoundaryCondition, TimeGrid, default_boundary

_DEFAULTS = ModelParams()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class ModelSection(_Section):
    rate: float = Field(_DEFAULTS.rate, description="risk-free rate r")
    sigma_low_grade: float = Field(_DEFAULTS.sigma_low_grade, description="volatility in the low-grade region")
    sigma_high_grade: float = Field(_DEFAULTS.sigma_high_grade, description="volatility in the high-grade region")
    gamma: float = Field(_DEFAULTS.gamma, description="migration threshold proportion, in (0, 1)")
    delta: float = Field(_DEFAULTS.delta, description="threshold decay rate")
    epsilon: float = Field(_DEFAULTS.epsilon, description="width of the smoothed Heaviside band")
    maturity: float = Field(_DEFAULTS.maturity, description="time to maturity T")
    x_min: float = Field(_DEFAULTS.x_min, description="left end of the log-moneyness window")
    x_max: float = Field(_DEFAULTS.x_max, description="right end of the log-moneyness window")
    face_value: float = Field(_DEFAULTS.face_value, description="normalized face value K (must be 1)")
    convection_sign: float = Field(_DEFAULTS.convection_sign, description="sign of the (r + sigma^2/2) u_x term")
    reaction_coefficient: float = Field(_DEFAULTS.reaction_coefficient, description="zeroth-order coefficient")

    @model_validator(mode="after")
    def _check(self):
        try:
            self.params()
        except InvalidParameterError as exc:
            raise ValueError(str(exc)) from None
        return self

    def params(self) -> ModelParams:
        return ModelParams(**self.model_dump())


class MeshSection(_Section):
    n_elements: int = Field(1024, ge=1, description="number of elements")
    order: int = Field(1, ge=1, le=MAX_ORDER, description=f"Lagrange degree, 1..{MAX_ORDER}")
    breakpoints: Optional[list[float]] = Field(None, description="explicit element boundaries (overrides n_elements)")
    quadrature_points: Optional[int] = Field(
        None, ge=1, le=MAX_GAUSS_POINTS, description="Gauss points per element (default order+1)"
    )


class TimeSection(_Section):
    n_steps: int = Field(1024, ge=1, description="backward Euler steps")


class BoundarySection(_Section):
    left: Optional[float] = Field(None, description="Dirichlet value at x_min (default exp(x_min))")
    right: Optional[float] = Field(None, description="Dirichlet value at x_max (default 1)")

    @field_validator("left", "right")
    @classmethod
    def _finite(cls, v):
        if v is not None and not math.isfinite(v):
            raise ValueError("boundary values must be finite")
        return v


Format = Literal["csv", "json"]
OutputField = Literal["surface", "diagnostics", "stability", "matrices"]


class OutputSection(_Section):
    directory: str = Field("out", description="output directory")
    formats: list[Format] = Field(["csv", "json"], min_length=1, description="csv and/or json")
    fields: list[OutputField] = Field(
        ["surface", "diagnostics", "stability"], description="artifacts written by 'solve'"
    )


def _doubling(values, name):
    values = sorted(values)
    if any(b != 2 * a for a, b in zip(values, values[1:])):
        raise ValueError(f"{name} must be a doubling sequence")
    return values


class SpatialSection(_Section):
    orders: list[int] = Field([1, 2, 3], min_length=1, description="element orders to study")
    element_counts: list[int] = Field([64, 128, 256, 512, 1024], min_length=1, description="doubling element counts")
    n_steps: int = Field(4096, ge=1, description="time steps for every row")
    reference_order: Optional[int] = Field(None, ge=1, le=MAX_ORDER, description="default max(orders)+1")
    reference_refinement: int = Field(2, ge=1, description="reference elements = this * max(element_counts)")
    reference_nt_factor: int = Field(4, ge=1, description="reference steps = this * n_steps")

    @field_validator("orders")
    @classmethod
    def _orders(cls, v):
        if any(not 1 <= r <= MAX_ORDER for r in v):
            raise ValueError(f"orders must lie in 1..{MAX_ORDER}")
        return v

    @field_validator("element_counts")
    @classmethod
    def _counts(cls, v):
        return _doubling(v, "element_counts")


class TemporalSection(_Section):
    n_steps_list: list[int] = Field([64, 128, 256, 512, 1024], min_length=1, description="doubling step counts")
    n_elements: int = Field(2048, ge=1, description="fixed element count")
    order: int = Field(1, ge=1, le=MAX_ORDER, description="fixed element order")
    reference_n_steps: Optional[int] = Field(None, ge=1, description="default 8 * max(n_steps_list)")

    @field_validator("n_steps_list")
    @classmethod
    def _counts(cls, v):
        return _doubling(v, "n_steps_list")


class ConvergenceSection(_Section):
    studies: list[Literal["spatial", "temporal"]] = Field(
        ["spatial", "temporal"], min_length=1, description="which studies 'converge' runs"
    )
    spatial: SpatialSection = SpatialSection()
    temporal: TemporalSection = TemporalSection()


class FreeBoundarySection(_Section):
    method: Literal["direct", "green", "both"] = Field("both", description="root-finding route")
    x0: Optional[float] = Field(None, description="initial guess (default ln gamma)")
    warm_start: bool = Field(True, description="start each level from the previous root")


class RunConfig(_Section):
    model: ModelSection = ModelSection()
    mesh: MeshSection = MeshSection()
    time: TimeSection = TimeSection()
    bc: BoundarySection = BoundarySection()
    outputs: OutputSection = OutputSection()
    convergence: ConvergenceSection = ConvergenceSection()
    boundary: FreeBoundarySection = FreeBoundarySection()

    @model_validator(mode="after")
    def _cross_checks(self):
        m = self.model
        bp = self.mesh.breakpoints
        if bp is not None:
            if len(bp) < 2 or bp[0] != m.x_min or bp[-1] != m.x_max:
                raise ValueError("mesh.breakpoints must start at model.x_min and end at model.x_max")
            if any(b <= a for a, b in zip(bp, bp[1:])):
                raise ValueError("mesh.breakpoints must be strictly increasing")
        q = self.mesh.quadrature_points
        if q is not None and 2 * q - 1 < 2 * self.mesh.order:
            raise ValueError(f"mesh.quadrature_points={q} cannot integrate the order-{self.mesh.order} mass matrix")
        x0 = self.boundary.x0
        if x0 is not None and not m.x_min < x0 < m.x_max:
            raise ValueError(f"boundary.x0={x0} must lie inside ({m.x_min}, {m.x_max})")
        return self

    # --- builders -------------------------------------------------------
    def params(self) -> ModelParams:
        return self.model.params()

    def build_mesh(self) -> Mesh:
        if self.mesh.breakpoints is not None:
            return mesh_from_breakpoints(self.mesh.breakpoints, self.mesh.order)
        return solver_mesh(self.model.x_min, self.model.x_max, self.mesh.n_elements, self.mesh.order)

    def time_grid(self) -> TimeGrid:
        return TimeGrid.for_maturity(self.model.maturity, self.time.n_steps)

    def boundary_condition(self) -> BoundaryCondition:
        default = default_boundary(self.params())
        left = self.bc.left if self.bc.left is not None else default.left_value(0.0)
        right = self.bc.right if self.bc.right is not None else default.right_value(0.0)
        return BoundaryCondition.constant(left, right)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


def _set_dotted(target: dict, key: str, raw: str):
    parts = key.split(".")
    node = target
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigurationError("cannot descend into a non-object", key=key)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node[parts[-1]] = value


def _error_key(err) -> str:
    key = ".".join(str(p) for p in err["loc"] if not isinstance(p, int))
    if key == "model":
        # cross-field model checks name the offending field in their message
        for word in re.findall(r"[a-z_]+", err["msg"]):
            if word in ModelSection.model_fields:
                return f"model.{word}"
    if not key:
        m = re.match(r"(?:Value error, )?([a-z_]+\.[a-z_0-9]+)", err["msg"])
        if m:
            return m.group(1)
    return key or "<root>"


def config_from_dict(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        msg = first["msg"].removeprefix("Value error, ")
        raise ConfigurationError(msg, key=_error_key(first)) from None


def parse_config(path=None, overrides=()) -> RunConfig:
    """Load a JSON config (optional) and apply ``key=value`` overrides on top.

    Values are parsed as JSON when possible, otherwise kept as strings, so
    ``mesh.order=2`` and ``outputs.formats=["json"]`` both work.
    """
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file {str(p)!r} not found", key="--config")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"malformed JSON: {exc}", key="--config") from None
        if not isinstance(data, dict):
            raise ConfigurationError("top level must be a JSON object", key="--config")
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigurationError(f"override {item!r} is not of the form key=value", key="--set")
        _set_dotted(data, key.strip(), raw.strip())
    return config_from_dict(data)


def describe_keys(model=RunConfig, prefix="") -> list[tuple[str, str, str]]:
    """``(dotted key, default, description)`` for every leaf setting."""
    rows = []
    for name, info in model.model_fields.items():
        ann = info.annotation
        key = f"{prefix}{name}"
        if isinstance(ann, type) and issubclass(ann, BaseModel):
            rows.extend(describe_keys(ann, key + "."))
        else:
            rows.append((key, json.dumps(info.default), info.description or ""))
    return rows
