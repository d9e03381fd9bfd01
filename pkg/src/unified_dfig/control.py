"""Hierarchical turbine controller: pitch, flux/dc-link, torque/reactive and inner loops.

Command frames: rotor-current commands are built in axes aligned with the
estimated stator flux, the dc-link channel in axes aligned with the stator
current.  Every vector crossing this module is a complex number in the
synchronous frame unless the name says otherwise.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

from .drivetrain import AeroParams
from .frames import clamp_magnitude, unit
from .machine import MachineParams

TWO_PI = 2.0 * math.pi


def k_opt(aero: AeroParams, poles: int) -> float:
    """MPPT coefficient in ``P_m = k_opt * w_r**3`` (w_r electrical, rad/s)."""
    return aero.k_a * aero.cp_max * (2.0 * aero.R_b / (poles * aero.K_gb * aero.psi_opt)) ** 3


def rated_torque(aero: AeroParams, poles: int, omega_max: float) -> float:
    """Torque magnitude at the top of the torque schedule, N*m."""
    return 0.5 * poles * k_opt(aero, poles) * omega_max**2


@dataclass
class ControlGains:
    K_pvdc: float = 20.0
    K_piR_pu: float = 3.0
    K_plam: float = 94.0
    K_pw: float = 0.013          # deg per electrical rad/s
    K_iw: float = 0.013 / 5.0    # deg per electrical rad
    K_aw: float = 1.0            # back-calculation, 1/s
    omega_c: float = 2.0
    i_floor_pu: float = 0.02
    lam_floor_pu: float = 0.05
    v_dc_min_pu: float = 0.5
    v_dc_ref: float = 1000.0
    q_f_ref: float = 0.0
    reactive_sign: float = 1.0
    speed_ref: float = 1.2 * TWO_PI * 60.0
    speed_ref_max: float = TWO_PI * 80.0
    omega_knee: float = 1.2 * TWO_PI * 60.0
    omega_max: float = TWO_PI * 80.0
    # estimate-to-truth ratios for the parameters the controller uses
    est_R_s: float = 1.0
    est_R_R: float = 1.0
    est_L_s: float = 1.0
    est_L_L: float = 1.0
    est_C_dc: float = 1.0
    # dc-link command jumps larger than this (fraction of nominal flux per
    # step) are not differentiated into the flux-regulator feedforward
    ff_jump: float = 0.01
    # low-pass corner on that feedforward, rad/s; keeps current-loop-rate
    # motion of the stator-current direction out of the flux regulator
    ff_bandwidth: float = 500.0
    # rotor-current command ceiling, per unit of rated current
    i_R_limit_pu: float = 1.2
    # fraction of the SGSC voltage ceiling a steady flux command may use
    sgsc_headroom: float = 0.9

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for name in ("K_pvdc", "K_piR_pu", "K_plam", "K_pw", "K_iw", "omega_c", "i_floor_pu",
                     "lam_floor_pu", "v_dc_min_pu", "v_dc_ref", "speed_ref", "speed_ref_max",
                     "omega_knee", "omega_max", "est_R_s", "est_R_R", "est_L_s", "est_L_L",
                     "est_C_dc", "ff_jump", "ff_bandwidth", "i_R_limit_pu",
                     "sgsc_headroom"):
            if not getattr(self, name) > 0:
                raise ValueError(f"control.{name} must be positive")
        if self.K_aw < 0:
            raise ValueError("control.K_aw must be non-negative")
        if self.omega_knee >= self.omega_max:
            raise ValueError("control.omega_knee must be below control.omega_max")
        if self.reactive_sign not in (1.0, -1.0):
            raise ValueError("control.reactive_sign must be +1 or -1")


# --- stateless command laws -------------------------------------------------

def torque_command(omega_r: float, kopt: float, poles: int,
                   omega_knee: float, omega_max: float) -> float:
    """Torque lookup: optimum tip-speed-ratio law, ramp above the knee, rated clamp."""
    if omega_r <= 0.0:
        return 0.0
    half = 0.5 * poles
    if omega_r <= omega_knee:
        mag = half * kopt * omega_r**2
    else:
        t_knee = half * kopt * omega_knee**2
        t_rated = half * kopt * omega_max**2
        frac = min((omega_r - omega_knee) / (omega_max - omega_knee), 1.0)
        mag = t_knee + frac * (t_rated - t_knee)
    return -mag


def flux_magnitude_command(v_f: complex, i_s_hat: complex, R_s_hat: float, omega_e: float) -> float:
    return abs(v_f - i_s_hat * R_s_hat) / omega_e


def dc_link_flux_command(v_dc: float, v_dc_ref: float, i_s: complex, i_R: complex,
                         lam_hat: complex, v_f: complex, omega_sl: float, p_pgsr_dc: float,
                         omega_e: float, C_dc_hat: float, R_s_hat: float, R_R_hat: float,
                         K_pvdc: float) -> float:
    """Stator-flux component orthogonal to the stator current for dc-link control.

    Feedback-linearised power balance of the dc link: with the flux on this
    command, ``dv_dc/dt = K_pvdc (v_dc_ref - v_dc)``.  The returned value is
    the D-axis component in axes aligned with ``i_s``.
    """
    i_mag = abs(i_s)
    u_is = i_s / i_mag
    v_qf = (v_f * u_is.conjugate()).real
    lam_mag = abs(lam_hat)
    # torque-axis rotor current in flux axes
    i_dr = -(i_R * unit(lam_hat).conjugate()).imag
    bracket = (-2.0 * C_dc_hat * v_dc * K_pvdc * (v_dc_ref - v_dc) / 3.0
               + v_qf * i_mag
               - R_s_hat * i_mag**2
               - R_R_hat * abs(i_R) ** 2
               + omega_sl * lam_mag * i_dr
               + 2.0 * p_pgsr_dc / 3.0)
    return bracket / (i_mag * omega_e)


def reachable_flux_window(u_is: complex, v_f: complex, i_s: complex, R_s_hat: float,
                          omega_e: float, v_lim: float) -> tuple[float, float]:
    """Range of ``lam_D`` (flux ``-j lam_D u_is``) the SGSC can hold in steady state.

    Steady state needs ``|omega_e lam_D u_is + R_s i_s - v_f| <= v_lim``.  When
    no value qualifies the single closest one is returned as both bounds.
    """
    c = (R_s_hat * i_s - v_f) * u_is.conjugate()
    disc = v_lim * v_lim - c.imag * c.imag
    mid = -c.real / omega_e
    if disc <= 0.0:
        return mid, mid
    half = math.sqrt(disc) / omega_e
    return mid - half, mid + half


def rotor_current_command(t_e_ref: float, lam_hat_mag: float, lam_torque: float,
                          q_f_ref: float, q_i: float, L_s_hat: float, omega_e: float,
                          poles: int) -> complex:
    """Rotor-current command in stator-flux axes, returned as ``i_Q - j i_D``.

    The torque axis divides by ``lam_torque`` (the scheduled, not the
    measured, flux) so the current command rides through a sag unchanged.
    """
    i_dr = t_e_ref / (0.75 * poles * lam_torque)
    i_qr = -2.0 / (3.0 * lam_hat_mag * omega_e) * (q_f_ref + q_i) + lam_hat_mag / L_s_hat
    return complex(i_qr, -i_dr)


def limit_rotor_current(i_aligned: complex, i_max: float) -> complex:
    """Magnitude limit on a flux-axis current command, torque axis first."""
    i_q, i_d = i_aligned.real, -i_aligned.imag
    i_d = max(-i_max, min(i_max, i_d))
    room = math.sqrt(max(i_max * i_max - i_d * i_d, 0.0))
    i_q = max(-room, min(room, i_q))
    return complex(i_q, -i_d)


def rotor_current_regulator(i_R_ref: complex, i_R: complex, lam_hat: complex,
                            d_lam_hat: complex, omega_sl: float, v_dc: float,
                            K_piR: float, R_R_hat: float, L_L_hat: float, m_lim: float) -> complex:
    lam_R_hat = lam_hat + L_L_hat * i_R
    v_R = K_piR * (i_R_ref - i_R) + R_R_hat * i_R + 1j * omega_sl * lam_R_hat + d_lam_hat
    return clamp_magnitude(v_R / v_dc, m_lim)


def lowpass_step(y: complex, u: complex, bandwidth: float, dt: float) -> complex:
    """One backward-Euler step of ``dy/dt = bandwidth (u - y)``; unconditionally stable."""
    a = bandwidth * dt
    return (y + a * u) / (1.0 + a)


def stator_flux_regulator(lam_ref: complex, lam_hat: complex, lam_ref_rate: complex,
                          i_s: complex, v_f: complex, v_dc: float, omega_e: float,
                          K_plam: float, R_s_hat: float, m_lim: float) -> complex:
    """SGSC modulation giving ``d lam_s/dt = K_plam (lam_ref - lam_s) + lam_ref_rate``.

    When that voltage is out of reach the converter holds the steady voltage
    for ``lam_ref`` and spends the remaining headroom directly against the
    flux error.  Radially clamping the linear law instead would keep the
    large ``j omega_e lam`` term and leave the natural flux mode undamped.
    """
    v_i = K_plam * (lam_ref - lam_hat) + lam_ref_rate + 1j * omega_e * lam_hat + R_s_hat * i_s - v_f
    v_lim = m_lim * v_dc
    if abs(v_i) <= v_lim:
        return v_i / v_dc
    v_ss = clamp_magnitude(1j * omega_e * lam_ref + R_s_hat * i_s - v_f, v_lim)
    room = v_lim - abs(v_ss)
    return (v_ss + room * unit(lam_ref - lam_hat)) / v_dc


def flux_estimator_step(lam_hat_stat: complex, v_s_stat: complex, i_s_stat: complex,
                        dt: float, R_s_hat: float, omega_c: float) -> complex:
    """Leaky stationary-frame integration of the stator voltage equation."""
    return lam_hat_stat + dt * (v_s_stat - R_s_hat * i_s_stat - omega_c * lam_hat_stat)


def estimator_fixed_point(v_s: complex, i_s: complex, dt: float, omega_e: float,
                          R_s_hat: float, omega_c: float) -> complex:
    """Synchronous-frame value the discrete estimator settles to in steady state."""
    drive = v_s - R_s_hat * i_s
    return dt * drive / (cmath.exp(1j * omega_e * dt) - 1.0 + omega_c * dt)


class SpeedRegulator:
    """PI speed loop producing the pitch command, with back-calculation anti-windup."""

    def __init__(self, gains: ControlGains, aero: AeroParams, integ: float = 0.0):
        self.g = gains
        self.aero = aero
        self.integ = integ

    def reference(self) -> float:
        return min(self.g.speed_ref, self.g.speed_ref_max)

    def output(self, omega_r: float) -> tuple[float, float]:
        err = omega_r - self.reference()
        raw = self.g.K_pw * err + self.integ
        return min(max(raw, self.aero.beta_min), self.aero.beta_max), raw

    def step(self, omega_r: float, dt: float) -> float:
        if not dt > 0:
            raise ValueError("dt must be positive")
        err = omega_r - self.reference()
        beta_cmd, raw = self.output(omega_r)
        self.integ += dt * (self.g.K_iw * err + self.g.K_aw * (beta_cmd - raw))
        return beta_cmd


@dataclass
class Measurements:
    v_f: complex
    i_s: complex
    i_R: complex
    v_dc: float
    omega_r: float
    p_pgsr_dc: float = 0.0   # power into the dc link from the rectifier
    m_i_prev: complex = 0j


@dataclass
class ControlOutputs:
    m_i: complex
    m_R: complex
    beta_cmd: float
    t_e_ref: float = 0.0
    i_R_ref: complex = 0j
    lam_ref: complex = 0j
    lam_hat: complex = 0j
    lam_mag_ref: float = 0.0
    q_i: float = 0.0
    dc_clamped: bool = False
    dc_held: bool = False
    dc_fault: bool = False


@dataclass
class ControllerState:
    lam_hat_stat: complex = 0j
    speed_integ: float = 0.0
    i_R_ref: complex | None = None
    lam_ref: complex | None = None
    lam_ref_ff_ok: bool = False
    lam_ref_rate: complex = 0j
    m_i_prev: complex = 0j
    extra: dict = field(default_factory=dict)


class Controller:
    """Single-rate controller stepped once per integration step."""

    def __init__(self, machine: MachineParams, aero: AeroParams, gains: ControlGains,
                 state: ControllerState | None = None):
        self.p = machine
        self.aero = aero
        self.g = gains
        self.state = state or ControllerState()
        self.speed = SpeedRegulator(gains, aero, self.state.speed_integ)
        self.kopt = k_opt(aero, machine.poles)
        z_base = machine.v_f_nom / machine.i_rated
        self.K_piR = gains.K_piR_pu * z_base
        self.R_s_hat = machine.R_s * gains.est_R_s
        self.R_R_hat = machine.R_R * gains.est_R_R
        self.L_s_hat = machine.L_s * gains.est_L_s
        self.L_L_hat = machine.L_L * gains.est_L_L
        self.C_dc_hat = machine.C_dc * gains.est_C_dc
        self.i_floor = gains.i_floor_pu * machine.i_rated
        self.lam_floor = gains.lam_floor_pu * machine.flux_nom
        self.v_dc_min = gains.v_dc_min_pu * machine.v_dc_nom

    def lam_hat_sync(self, t: float) -> complex:
        return self.state.lam_hat_stat * cmath.exp(-1j * self.p.omega_e * t)

    def scheduled_flux(self, omega_r: float) -> float:
        slip = (self.p.omega_e - omega_r) / self.p.omega_e
        return self.p.flux_nom * min(1.0, 1.0 / (1.0 - slip))

    def update(self, t: float, y: Measurements, dt: float) -> ControlOutputs:
        p, g, st = self.p, self.g, self.state
        w = p.omega_e
        omega_sl = w - y.omega_r
        lam_hat = self.lam_hat_sync(t)
        lam_mag = abs(lam_hat)
        fault = y.v_dc < self.v_dc_min
        v_dc = max(y.v_dc, self.v_dc_min)

        beta_cmd = self.speed.step(y.omega_r, dt)
        st.speed_integ = self.speed.integ

        # rotor-current command in flux axes, frozen below the flux floor
        t_ref = torque_command(y.omega_r, self.kopt, p.poles, g.omega_knee, g.omega_max)
        q_i = g.reactive_sign * 1.5 * (y.m_i_prev * v_dc * y.i_s.conjugate()).imag
        if lam_mag > self.lam_floor or st.i_R_ref is None:
            aligned = rotor_current_command(t_ref, max(lam_mag, self.lam_floor),
                                            self.scheduled_flux(y.omega_r), g.q_f_ref, q_i,
                                            self.L_s_hat, w, p.poles)
            aligned = limit_rotor_current(aligned, g.i_R_limit_pu * p.i_rated)
            ref_dir = unit(lam_hat) if lam_mag > 0 else unit(-1j * y.v_f) or 1.0
            st.i_R_ref = aligned * ref_dir
        i_R_ref = st.i_R_ref

        # stator-flux command: magnitude from the farm voltage, direction from
        # the dc-link channel in stator-current axes
        lam_mag_ref = flux_magnitude_command(y.v_f, y.i_s, self.R_s_hat, w)
        clamped = held = False
        i_mag = abs(y.i_s)
        if i_mag > self.i_floor:
            lam_d = dc_link_flux_command(y.v_dc, g.v_dc_ref, y.i_s, y.i_R, lam_hat, y.v_f,
                                         omega_sl, y.p_pgsr_dc, w, self.C_dc_hat,
                                         self.R_s_hat, self.R_R_hat, g.K_pvdc)
            u_is = y.i_s / i_mag
            lo, hi = reachable_flux_window(u_is, y.v_f, y.i_s, self.R_s_hat, w,
                                           g.sgsc_headroom * p.m_max * v_dc)
            # magnitude ceiling from the farm voltage, unless that leaves nothing reachable
            lo_m, hi_m = max(lo, -lam_mag_ref), min(hi, lam_mag_ref)
            if lo_m <= hi_m:
                lo, hi = lo_m, hi_m
            if not lo <= lam_d <= hi:
                lam_d = min(max(lam_d, lo), hi)
                clamped = True
            lam_ref = -1j * lam_d * u_is
        else:
            held = True
            if st.lam_ref is None:
                lam_ref = -1j * y.v_f / w
            else:
                lam_ref = st.lam_ref
            lam_ref = lam_ref * min(1.0, lam_mag_ref / abs(lam_ref)) if abs(lam_ref) > 0 else lam_ref

        raw = 0j
        ff_ok = not (clamped or held)
        if ff_ok and st.lam_ref_ff_ok and st.lam_ref is not None:
            delta = lam_ref - st.lam_ref
            if abs(delta) < g.ff_jump * p.flux_nom:
                raw = delta / dt
        ff = st.lam_ref_rate = lowpass_step(st.lam_ref_rate, raw, g.ff_bandwidth, dt)
        st.lam_ref = lam_ref
        st.lam_ref_ff_ok = ff_ok

        m_i = stator_flux_regulator(lam_ref, lam_hat, ff, y.i_s, y.v_f, v_dc, w,
                                    g.K_plam, self.R_s_hat, p.m_max)
        v_s = y.v_f + m_i * y.v_dc
        d_lam_hat = v_s - self.R_s_hat * y.i_s - 1j * w * lam_hat
        m_R = rotor_current_regulator(i_R_ref, y.i_R, lam_hat, d_lam_hat, omega_sl, v_dc,
                                      self.K_piR, self.R_R_hat, self.L_L_hat, p.m_R_max)

        st.m_i_prev = m_i
        # advance the estimator to the next sample with this step's held inputs
        rot = cmath.exp(1j * w * t)
        st.lam_hat_stat = flux_estimator_step(st.lam_hat_stat, v_s * rot, y.i_s * rot, dt,
                                              self.R_s_hat, g.omega_c)
        return ControlOutputs(m_i, m_R, beta_cmd, t_ref, i_R_ref, lam_ref, lam_hat,
                              lam_mag_ref, q_i, clamped, held, fault)
