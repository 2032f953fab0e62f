"""Physical example systems."""

from dataclasses import dataclass, fields

import numpy as np

from .systems import ContinuousStateSpace


@dataclass(frozen=True)
class DcMotorParams:
    """Armature resistance R (ohm), inductance L (H), EMF constant K (V s),
    rotor inertia J (kg m^2) and damping D (N m s).

    The unit defaults are a documented choice, not measured values.
    """

    R: float = 1.0
    L: float = 1.0
    K: float = 1.0
    J: float = 1.0
    D: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")


def dc_motor(p: DcMotorParams = DcMotorParams()) -> ContinuousStateSpace:
    """State (current i, angular velocity theta), input voltage, both states observed."""
    A = np.array([[-p.R / p.L, p.K / p.L], [-p.K / p.J, -p.D / p.J]])
    B = np.array([[1.0 / p.L], [0.0]])
    return ContinuousStateSpace(A, B, np.eye(2))
