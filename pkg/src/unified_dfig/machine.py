"""Gamma-model DFIG electrical plant with series converter, diode rectifier and dc link.

All vectors are complex numbers in the synchronous frame (``z = z_Q - j z_D``,
see :mod:`unified_dfig.frames`).  Stator and rotor currents use the motor
convention (positive into the machine), so a generating machine has negative
electromagnetic torque and negative stator input power.

The rectifier current ``i_re`` flows from the rectifier ac terminals toward the
farm, matching the voltage-drop form of its inductor equation; a rectifying
bridge therefore carries ``i_re`` roughly opposite to its ac voltage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .frames import ccross, cdot, unit

TWO_PI = 2.0 * math.pi


class PlantFault(RuntimeError):
    """Non-finite or otherwise invalid plant state."""


@dataclass
class MachineParams:
    """Machine, converter and dc-link constants (SI, stator referred)."""

    L_m: float = 19.5e-3
    L_ls: float = 0.86e-3
    L_lr: float = 0.55e-3
    R_s: float = 6.2e-3
    R_r: float = 6.2e-3
    N_rs: float = 0.733
    poles: int = 8
    omega_e: float = TWO_PI * 60.0
    C_dc: float = 90e-3
    v_f_nom: float = 2000.0
    v_dc_nom: float = 1000.0
    i_rated: float = 673.0
    m_max: float = 0.575
    # rectifier: ac inductance, averaged bridge ratio and pick-up level
    L_re: float = 0.3e-3
    k_rect: float = 2.0 / math.pi
    pgsr_pickup: float = 0.98
    # direction regularisation of the averaged bridge near zero current
    pgsr_i_eps: float = 0.05 * 673.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for name in ("L_m", "L_ls", "L_lr", "C_dc", "L_re", "omega_e", "v_f_nom",
                     "v_dc_nom", "m_max", "k_rect", "N_rs", "i_rated", "pgsr_pickup"):
            if not getattr(self, name) > 0:
                raise ValueError(f"machine.{name} must be positive")
        for name in ("R_s", "R_r", "pgsr_i_eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"machine.{name} must be non-negative")
        if self.poles <= 0 or self.poles % 2:
            raise ValueError("machine.poles must be a positive even pole count")

    @property
    def L_s(self) -> float:
        return self.L_m + self.L_ls

    @property
    def L_r(self) -> float:
        return self.L_m + self.L_lr

    @property
    def gamma(self) -> float:
        return self.L_m / self.L_s

    @property
    def L_L(self) -> float:
        g = self.gamma
        return self.L_lr / g**2 + self.L_ls / g

    @property
    def R_R(self) -> float:
        return self.R_r / self.gamma**2

    @property
    def flux_nom(self) -> float:
        return self.v_f_nom / self.omega_e

    @property
    def pgsr_ratio(self) -> float:
        """Rectifier transformer ratio (farm volts to rectifier ac volts)."""
        return self.k_rect * self.pgsr_pickup * self.v_dc_nom / self.v_f_nom

    @property
    def m_R_max(self) -> float:
        """Gamma-model MSC modulation ceiling.

        The physical rotor-side modulation is ``m_R * gamma * N_rs``; the
        converter ceiling ``m_max`` applies to that quantity.
        """
        return self.m_max / (self.gamma * self.N_rs)

    def mech_speed(self, omega_r: float) -> float:
        return 2.0 * omega_r / self.poles


@dataclass
class ElectricalState:
    lam_s: complex = 0j
    lam_R: complex = 0j
    i_re: complex = 0j
    v_dc: float = 1000.0
    pgsr_conducting: bool = False

    def currents(self, p: MachineParams) -> tuple[complex, complex]:
        return currents(self.lam_s, self.lam_R, p)


@dataclass
class ConverterInputs:
    m_i: complex = 0j
    m_R: complex = 0j
    v_f: complex = 0j
    omega_r: float = 0.0

    def omega_sl(self, p: MachineParams) -> float:
        return p.omega_e - self.omega_r


def currents(lam_s: complex, lam_R: complex, p: MachineParams) -> tuple[complex, complex]:
    """Stator and Gamma-rotor currents from the two flux linkages."""
    i_R = (lam_R - lam_s) / p.L_L
    i_s = lam_s / p.L_s - i_R
    return i_s, i_R


def fluxes(i_s: complex, i_R: complex, p: MachineParams) -> tuple[complex, complex]:
    lam_s = p.L_s * (i_s + i_R)
    return lam_s, lam_s + p.L_L * i_R


def torque(lam_s: complex, i_R: complex, p: MachineParams) -> float:
    """Electromagnetic torque, N*m (negative when generating)."""
    return 0.75 * p.poles * ccross(lam_s, i_R)


def stator_voltage(v_f: complex, m_i: complex, v_dc: float) -> complex:
    return v_f + m_i * v_dc


def pgsr_voltage(v_f: complex, p: MachineParams) -> complex:
    return p.pgsr_ratio * v_f


def pgsr_modulation(i_re: complex, v_c: complex, p: MachineParams) -> complex:
    """Averaged bridge modulation: in phase with the current drawn into the bridge.

    Near zero current the direction blends toward the ac voltage, which is
    the onset direction and keeps the model non-stiff.
    """
    w = -i_re + p.pgsr_i_eps * unit(v_c)
    return p.k_rect * unit(w)


def pgsr_update(s: ElectricalState, v_c: complex, p: MachineParams) -> tuple[complex, bool]:
    """Re-evaluate the rectifier conduction state at a step boundary.

    Mutates ``s.i_re`` to zero when the bridge blocks.  Returns the
    modulation vector and the new conduction flag.
    """
    if s.pgsr_conducting:
        m_re = pgsr_modulation(s.i_re, v_c, p)
        # diodes cannot return power from the dc link
        if cdot(m_re, s.i_re) >= 0.0:
            s.pgsr_conducting = False
            s.i_re = 0j
    elif abs(v_c) > p.k_rect * s.v_dc:
        s.pgsr_conducting = True
    if not s.pgsr_conducting:
        s.i_re = 0j
        return p.k_rect * unit(v_c), False
    return pgsr_modulation(s.i_re, v_c, p), True


def derivatives(lam_s: complex, lam_R: complex, i_re: complex, v_dc: float,
                conducting: bool, m_i: complex, m_R: complex, v_f: complex,
                omega_r: float, p: MachineParams) -> tuple[complex, complex, complex, float]:
    """Raw right-hand side of the electrical model (hot path)."""
    i_R = (lam_R - lam_s) / p.L_L
    i_s = lam_s / p.L_s - i_R
    w = p.omega_e
    d_lam_s = v_f + m_i * v_dc - i_s * p.R_s - 1j * w * lam_s
    d_lam_R = m_R * v_dc - i_R * p.R_R - 1j * (w - omega_r) * lam_R
    if conducting:
        v_c = p.pgsr_ratio * v_f
        m_re = pgsr_modulation(i_re, v_c, p)
        d_i_re = (m_re * v_dc - v_c) / p.L_re - 1j * w * i_re
        p_re = cdot(m_re, i_re)
    else:
        d_i_re = 0j
        p_re = 0.0
    d_v_dc = -1.5 / p.C_dc * (cdot(m_i, i_s) + p_re + cdot(m_R, i_R))
    return d_lam_s, d_lam_R, d_i_re, d_v_dc


def electrical_derivatives(s: ElectricalState, u: ConverterInputs,
                           p: MachineParams) -> tuple[complex, complex, complex, float]:
    """Time derivatives of ``(lam_s, lam_R, i_re, v_dc)``."""
    vals = (s.lam_s, s.lam_R, s.i_re, s.v_dc, u.m_i, u.m_R, u.v_f)
    if not all(math.isfinite(abs(x)) for x in vals) or not math.isfinite(u.omega_r):
        raise PlantFault("non-finite electrical state or input")
    return derivatives(s.lam_s, s.lam_R, s.i_re, s.v_dc, s.pgsr_conducting,
                       u.m_i, u.m_R, u.v_f, u.omega_r, p)


@dataclass
class PowerAudit:
    """Instantaneous powers, W.

    ``p_airgap`` is mechanical power converted to electrical (``-T_e w_m``).
    ``p_stator`` is delivered out of the stator terminals; ``p_sgsc`` and
    ``p_pgsr`` are drawn from the dc link by those converters (positive means
    delivered toward the farm); ``p_msc`` is delivered into the rotor.
    ``residual`` closes the energy balance and should be round-off small.
    """

    p_airgap: float = 0.0
    p_stator: float = 0.0
    p_sgsc: float = 0.0
    p_pgsr: float = 0.0
    p_msc: float = 0.0
    p_loss: float = 0.0
    d_stored: float = 0.0
    p_farm: float = 0.0
    q_farm: float = 0.0
    residual: float = 0.0
    extra: dict = field(default_factory=dict)


def power_audit(lam_s: complex, lam_R: complex, i_re: complex, v_dc: float,
                conducting: bool, m_i: complex, m_R: complex, v_f: complex,
                omega_r: float, p: MachineParams,
                derivs: tuple[complex, complex, complex, float] | None = None) -> PowerAudit:
    if derivs is None:
        derivs = derivatives(lam_s, lam_R, i_re, v_dc, conducting, m_i, m_R, v_f, omega_r, p)
    d_lam_s, d_lam_R, d_i_re, d_v_dc = derivs
    if not conducting:
        i_re = 0j  # a blocked bridge carries no current
    i_s, i_R = currents(lam_s, lam_R, p)
    t_e = torque(lam_s, i_R, p)
    v_s = v_f + m_i * v_dc
    v_c = p.pgsr_ratio * v_f
    m_re = pgsr_modulation(i_re, v_c, p) if conducting else 0j

    p_airgap = -t_e * p.mech_speed(omega_r)
    p_stator = -1.5 * cdot(v_s, i_s)
    p_sgsc = 1.5 * v_dc * cdot(m_i, i_s)
    p_msc = 1.5 * v_dc * cdot(m_R, i_R)
    p_pgsr = 1.5 * v_dc * cdot(m_re, i_re)
    p_loss = 1.5 * (p.R_s * abs(i_s) ** 2 + p.R_R * abs(i_R) ** 2)
    d_i_R = (d_lam_R - d_lam_s) / p.L_L
    d_stored = (1.5 * (cdot(d_lam_s, lam_s) / p.L_s + p.L_L * cdot(d_i_R, i_R)
                       + p.L_re * cdot(d_i_re, i_re))
                + p.C_dc * v_dc * d_v_dc)
    # farm-side power received: stator path plus rectifier path
    p_farm = -1.5 * cdot(v_f, i_s) + 1.5 * cdot(v_c, i_re)
    q_farm = 1.5 * (v_f * i_s.conjugate()).imag
    residual = p_airgap - p_farm - p_loss - d_stored
    return PowerAudit(p_airgap, p_stator, p_sgsc, p_pgsr, p_msc, p_loss, d_stored,
                      p_farm, q_farm, residual)


def electrical_power_audit(s: ElectricalState, u: ConverterInputs, p: MachineParams) -> PowerAudit:
    return power_audit(s.lam_s, s.lam_R, s.i_re, s.v_dc, s.pgsr_conducting,
                       u.m_i, u.m_R, u.v_f, u.omega_r, p)
