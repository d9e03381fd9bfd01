"""Rotor aerodynamics, blade-pitch actuator and lumped shaft dynamics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy.optimize import minimize_scalar


class SpeedFloorError(ValueError):
    """Rotor speed below the range where the torque model is defined."""


def _cp_family(lam: float, beta: float) -> float:
    # widely used exponential Cp family for variable-speed turbines
    denom = lam - 0.02 * beta
    if denom <= 0.0:
        return 0.0  # stalled blade, outside the curve's domain
    inv_li = 1.0 / denom + 0.003 / (beta**3 + 1.0)
    return 0.73 * (151.0 * inv_li - 0.58 * beta - 0.002 * beta**2.14 - 13.2) * math.exp(-18.4 * inv_li)


@dataclass
class AeroParams:
    rho: float = 1.225
    R_b: float = 37.5
    psi_opt: float = 6.9
    cp_max: float = 0.47
    K_gb: float = 56.9
    omega_beta: float = 1.0
    beta_min: float = 0.0
    beta_max: float = 30.0
    beta_rate: float = 10.0
    J_m: float = 105.0
    # calibration of the family onto (psi_opt, cp_max); filled in post-init
    psi_scale: float = field(default=0.0, init=False)
    cp_scale: float = field(default=0.0, init=False)

    def __post_init__(self) -> None:
        self.validate()
        res = minimize_scalar(lambda x: -_cp_family(x, 0.0), bounds=(3.0, 15.0),
                              method="bounded", options={"xatol": 1e-10})
        self.psi_scale = res.x / self.psi_opt
        self.cp_scale = self.cp_max / -res.fun

    def validate(self) -> None:
        for name in ("rho", "R_b", "psi_opt", "cp_max", "K_gb", "omega_beta", "beta_rate", "J_m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"drivetrain.{name} must be positive")
        if not self.beta_min < self.beta_max:
            raise ValueError("drivetrain.beta_min must be below beta_max")
        if self.cp_max > 0.5:
            raise ValueError("drivetrain.cp_max must not exceed 0.5")

    @property
    def k_a(self) -> float:
        return 0.5 * self.rho * math.pi * self.R_b**2


def cp(psi: float, beta: float, aero: AeroParams) -> float:
    """Coefficient of performance, clamped to ``[0, 0.5]``."""
    if not psi > 0:
        raise ValueError(f"tip-speed ratio must be positive, got {psi}")
    val = aero.cp_scale * _cp_family(psi * aero.psi_scale, beta)
    return min(max(val, 0.0), 0.5)


def tip_speed_ratio(u_w: float, omega_r: float, poles: int, aero: AeroParams) -> float:
    blade_speed = 2.0 * omega_r / (poles * aero.K_gb)
    return blade_speed * aero.R_b / u_w


def aero_power(u_w: float, omega_r: float, beta: float, poles: int, aero: AeroParams) -> float:
    if u_w <= 0.0:
        return 0.0
    psi = tip_speed_ratio(u_w, omega_r, poles, aero)
    return aero.k_a * cp(psi, beta, aero) * u_w**3


def mechanical_torque(u_w: float, omega_r: float, beta: float, poles: int,
                      aero: AeroParams, omega_floor: float) -> float:
    """Shaft torque at the generator side of the (lossless) gearbox, N*m."""
    if omega_r < omega_floor:
        raise SpeedFloorError(f"rotor speed {omega_r:.3f} rad/s below floor {omega_floor:.3f}")
    return aero_power(u_w, omega_r, beta, poles, aero) * poles / (2.0 * omega_r)


def pitch_derivative(beta: float, beta_cmd: float, aero: AeroParams) -> float:
    """First-order actuator with rate limit; holds at the travel stops."""
    rate = aero.omega_beta * (beta_cmd - beta)
    rate = min(max(rate, -aero.beta_rate), aero.beta_rate)
    if (beta <= aero.beta_min and rate < 0.0) or (beta >= aero.beta_max and rate > 0.0):
        return 0.0
    return rate


def speed_derivative(t_e: float, t_m: float, poles: int, aero: AeroParams) -> float:
    return poles / (2.0 * aero.J_m) * (t_e + t_m)
