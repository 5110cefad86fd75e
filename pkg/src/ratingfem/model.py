"""Model constants and the regularized volatility of the rating-migration PDE.

The solved problem, in log-moneyness ``x`` and time-to-maturity ``t``::

    u_t = (1/2 sigma^2 u_x)_x - (r + 1/2 sigma^2) u_x,    u(x, 0) = min(1, e^x)
    sigma = sigma_H + (sigma_L - sigma_H) * H_eps(u - gamma * exp(-delta t))

All functions here broadcast over numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidParameterError

# Extremes of the quintic smoothstep derivatives on [0, 1].
MAX_SMOOTHSTEP_SLOPE = 15.0 / 8.0
MAX_SMOOTHSTEP_CURVATURE = 10.0 / math.sqrt(3.0)


@dataclass(frozen=True)
class ModelParams:
    """Market and regularization constants.

    ``convection_sign`` and ``reaction_coefficient`` select operator variants:
    the assembled operator is ``-(a u_x)_x + convection_sign * (r + a) u_x
    + reaction_coefficient * u`` with ``a = sigma^2 / 2``.
    """

    rate: float = 0.5
    sigma_low_grade: float = 0.3
    sigma_high_grade: float = 0.2
    gamma: float = 0.8
    delta: float = 0.005
    epsilon: float = 1e-2
    maturity: float = 1.0
    x_min: float = -4.0
    x_max: float = 4.0
    face_value: float = 1.0
    convection_sign: float = 1.0
    reaction_coefficient: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise InvalidParameterError(f"{name} must be finite, got {value!r}")
        if not 0.0 < self.sigma_high_grade <= self.sigma_low_grade:
            raise InvalidParameterError(
                "volatilities must satisfy 0 < sigma_high_grade <= sigma_low_grade "
                f"(got sigma_high_grade={self.sigma_high_grade}, sigma_low_grade={self.sigma_low_grade})"
            )
        if not 0.0 < self.gamma < 1.0:
            raise InvalidParameterError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.epsilon <= 0.0:
            raise InvalidParameterError(f"epsilon must be positive, got {self.epsilon}")
        if self.maturity < 0.0:
            raise InvalidParameterError(f"maturity must be non-negative, got {self.maturity}")
        if not self.x_min < self.x_max:
            raise InvalidParameterError(f"x_min ({self.x_min}) must be below x_max ({self.x_max})")
        if self.face_value != 1.0:
            raise InvalidParameterError("only the normalized face value 1.0 is supported")
        if self.convection_sign not in (-1.0, 0.0, 1.0):
            raise InvalidParameterError("convection_sign must be -1, 0 or 1")

    @property
    def threshold(self) -> ThresholdCurve:
        return ThresholdCurve(self.gamma, self.delta)

    def replace(self, **changes) -> ModelParams:
        return ModelParams(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ThresholdCurve:
    """Migration threshold ``gamma * exp(-delta * t)``."""

    gamma: float
    delta: float

    def __call__(self, t):
        return self.gamma * np.exp(-self.delta * np.asarray(t, dtype=float))


def _check_eps(eps):
    if not eps > 0.0:
        raise InvalidParameterError(f"regularization width must be positive, got {eps!r}")


def _band_coordinate(x, eps):
    return np.clip((np.asarray(x, dtype=float) + eps) / eps, 0.0, 1.0)


def smoothed_heaviside(x, eps):
    """C^2 step: 0 for x <= -eps, 1 for x >= 0, quintic smoothstep between."""
    _check_eps(eps)
    s = _band_coordinate(x, eps)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def smoothed_heaviside_deriv(x, eps):
    _check_eps(eps)
    s = _band_coordinate(x, eps)
    return 30.0 * s**2 * (1.0 - s) ** 2 / eps


def smoothed_heaviside_deriv2(x, eps):
    _check_eps(eps)
    s = _band_coordinate(x, eps)
    return 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / eps**2


def effective_volatility(u_val, t, params: ModelParams):
    """State-dependent volatility; always within [sigma_high_grade, sigma_low_grade]."""
    jump = params.sigma_low_grade - params.sigma_high_grade
    return params.sigma_high_grade + jump * smoothed_heaviside(
        np.asarray(u_val, dtype=float) - params.threshold(t), params.epsilon
    )


def effective_volatility_du(u_val, t, params: ModelParams):
    """Derivative of :func:`effective_volatility` with respect to the state."""
    jump = params.sigma_low_grade - params.sigma_high_grade
    return jump * smoothed_heaviside_deriv(
        np.asarray(u_val, dtype=float) - params.threshold(t), params.epsilon
    )


def initial_condition(x):
    """Bond payoff in log-moneyness, ``min(1, e^x)``."""
    x = np.asarray(x, dtype=float)
    return np.exp(np.minimum(x, 0.0))
