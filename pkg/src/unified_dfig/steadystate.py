"""Steady-state power flow, unity-power-factor phasor solutions and equilibria."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, fsolve

from .control import (
    Controller,
    ControllerState,
    ControlGains,
    Measurements,
    estimator_fixed_point,
    k_opt,
    torque_command,
)
from .drivetrain import AeroParams, aero_power
from .machine import MachineParams, currents, derivatives, pgsr_modulation, torque
from .sim import DT_DEFAULT, PlantState


class SingularSlipError(ValueError):
    """Slip of exactly one (stalled rotor) has no finite power split."""


class EquilibriumError(RuntimeError):
    """No equilibrium found in the admissible operating envelope."""


@dataclass
class PowerSplit:
    s: float
    P_m: float
    P_s: float
    P_MSC: float
    P_SGSC_plus_PGSR: float


def power_split(s: float, P_m: float) -> PowerSplit:
    """Lossless split of shaft power between stator and rotor paths."""
    if s == 1.0:
        raise SingularSlipError("slip of 1 has no power split")
    P_s = P_m / (1.0 - s)
    P_msc = s * P_m / (1.0 - s)
    return PowerSplit(s, P_m, P_s, P_msc, 0.0 - P_msc)


def mppt_power(omega_r: float, machine: MachineParams, aero: AeroParams) -> float:
    return k_opt(aero, machine.poles) * omega_r**3


def scheduled_power(omega_r: float, machine: MachineParams, aero: AeroParams,
                    gains: ControlGains) -> float:
    """Mechanical power on the torque schedule (cube law with high-speed cap)."""
    t = torque_command(omega_r, k_opt(aero, machine.poles), machine.poles,
                       gains.omega_knee, gains.omega_max)
    return -t * machine.mech_speed(omega_r)


def uupf_voltages(v_Qf: float, s: float) -> tuple[float, float]:
    """Stator and series-converter Q-axis voltages under unity power factor.

    ``v_Qi`` is the drop across the series converter, ``v_Qf - v_Qs``; the
    voltage it injects toward the stator is ``-v_Qi``.
    """
    if s == 1.0:
        raise SingularSlipError("slip of 1 has no unity-power-factor solution")
    return v_Qf / (1.0 - s), -s * v_Qf / (1.0 - s)


@dataclass
class UupfSolution:
    s: float
    P_m: float
    v_Qf: float
    v_Qs: float
    v_Qi: float
    i_Qf: float
    lam_s: complex
    i_R: complex
    lam_R: complex
    T_e: float
    m_i: complex
    m_R: complex
    v_dc: float
    feasible: bool
    reasons: list = field(default_factory=list)


def _uupf_point(v_Qs: float, i_Qf: float, s: float, v_Qf: float, v_dc: float,
                p: MachineParams):
    w = p.omega_e
    i_s = complex(i_Qf, 0.0)
    v_s = complex(v_Qs, 0.0)
    lam_s = (v_s - p.R_s * i_s) / (1j * w)
    i_R = lam_s / p.L_s - i_s
    lam_R = lam_s + p.L_L * i_R
    v_R = p.R_R * i_R + 1j * s * w * lam_R
    m_i = complex(v_Qs - v_Qf, 0.0) / v_dc
    m_R = v_R / v_dc
    return lam_s, i_R, lam_R, m_i, m_R


def uupf_operating_point(s: float, P_m: float, v_Qf: float, p: MachineParams,
                         v_dc: float | None = None, lossless: bool = False) -> UupfSolution:
    """Series-converter-only unity-power-factor operating point.

    Starts from the lossless closed forms and, unless ``lossless``, corrects
    stator voltage and current so the dc link balances and the airgap power
    equals ``P_m`` with the machine resistances included.
    """
    if s == 1.0:
        raise SingularSlipError("slip of 1 has no unity-power-factor solution")
    if v_Qf == 0.0:
        raise ValueError("farm voltage must be non-zero")
    v_dc = p.v_dc_nom if v_dc is None else v_dc
    w_r = (1.0 - s) * p.omega_e
    v_Qs, v_Qi = uupf_voltages(v_Qf, s)
    # current from the farm power throughput (motor convention: negative when generating)
    i_Qf = -2.0 * P_m / (3.0 * v_Qf)

    if not lossless and P_m != 0.0:
        def resid(x):
            vq, iq = x
            lam_s, i_R, lam_R, m_i, m_R = _uupf_point(vq, iq * 1e3, s, v_Qf, v_dc, p)
            i_s = complex(iq * 1e3, 0.0)
            dc = 1.5 * v_dc * ((m_i * i_s.conjugate()).real + (m_R * i_R.conjugate()).real)
            airgap = -torque(lam_s, i_R, p) * p.mech_speed(w_r)
            return [dc / abs(P_m), (airgap - P_m) / abs(P_m)]

        sol, info, ier, _ = fsolve(resid, [v_Qs, i_Qf / 1e3], full_output=True, xtol=1e-13)
        if ier == 1:
            v_Qs, i_Qf = float(sol[0]), float(sol[1]) * 1e3
            v_Qi = v_Qf - v_Qs

    lam_s, i_R, lam_R, m_i, m_R = _uupf_point(v_Qs, i_Qf, s, v_Qf, v_dc, p)
    reasons = []
    if abs(v_Qi) > p.m_max * v_dc:
        reasons.append(f"series voltage {abs(v_Qi):.0f} V exceeds ceiling {p.m_max * v_dc:.0f} V")
    if abs(m_R) > p.m_R_max:
        reasons.append(f"rotor modulation {abs(m_R):.3f} exceeds ceiling {p.m_R_max:.3f}")
    return UupfSolution(s, P_m, v_Qf, v_Qs, v_Qi, i_Qf, lam_s, i_R, lam_R,
                        torque(lam_s, i_R, p), m_i, m_R, v_dc, not reasons, reasons)


@dataclass
class PowerCurveRow:
    omega_r: float
    slip: float
    P_m: float
    P_s: float
    P_conv: float


def power_curve(omegas, machine: MachineParams, aero: AeroParams,
                gains: ControlGains) -> list[PowerCurveRow]:
    rows = []
    for w in omegas:
        s = (machine.omega_e - w) / machine.omega_e
        split = power_split(s, scheduled_power(w, machine, aero, gains))
        rows.append(PowerCurveRow(w, s, split.P_m, split.P_s, split.P_SGSC_plus_PGSR))
    return rows


# --- full closed-loop equilibrium ------------------------------------------

@dataclass
class Equilibrium:
    plant: PlantState
    ctrl: ControllerState
    u_w: float
    m_i: complex
    m_R: complex
    iterations: int
    residual: float
    pitch_active: bool
    omega_e: float = 2.0 * math.pi * 60.0

    @property
    def slip(self) -> float:
        return 1.0 - self.plant.omega_r / self.omega_e


def _mech_speed_guess(u_w, machine, aero, gains):
    """Rotor speed where aero torque meets the torque schedule at zero pitch."""
    kopt = k_opt(aero, machine.poles)

    def f(w):
        t_m = aero_power(u_w, w, 0.0, machine.poles, aero) * machine.poles / (2.0 * w)
        return t_m + torque_command(w, kopt, machine.poles, gains.omega_knee, gains.omega_max)

    lo = 0.05 * machine.omega_e
    hi = 2.0 * machine.omega_e
    grid = np.linspace(lo, hi, 400)
    vals = [f(w) for w in grid]
    # stable crossing: surplus torque turns to deficit with rising speed
    for a, b, fa, fb in zip(grid, grid[1:], vals, vals[1:]):
        if fa > 0.0 >= fb:
            return brentq(f, a, b, xtol=1e-12)
    return None


class _Evaluator:
    """Closed-loop residuals for a candidate equilibrium vector."""

    def __init__(self, u_w, machine, aero, gains, dt, pitch, conducting, w_fixed, hold=False):
        self.u_w = u_w
        # hold: shaft speed imposed externally, no mechanical unknown or balance
        self.hold = hold
        self.p = machine
        self.a = aero
        self.g = gains
        self.dt = dt
        self.pitch = pitch
        self.cond = conducting
        self.w_fixed = w_fixed
        self.v_f = complex(machine.v_f_nom, 0.0)

    def unpack(self, x):
        p = self.p
        lam_base = p.flux_nom
        lam_s = complex(x[0], x[1]) * lam_base
        lam_R = complex(x[2], x[3]) * lam_base
        v_dc = x[4] * p.v_dc_nom
        lam_hat = complex(x[5], x[6]) * lam_base
        m_i = complex(x[7], x[8])
        k = 10
        if self.hold:
            w_r, beta, k = self.w_fixed, 0.0, 9
        elif self.pitch:
            w_r, beta = self.w_fixed, x[9] * 10.0
        else:
            w_r, beta = x[9] * p.omega_e, 0.0
        i_re = complex(x[k], x[k + 1]) * p.i_rated if self.cond else 0j
        return lam_s, lam_R, v_dc, lam_hat, m_i, w_r, beta, i_re

    def controller(self, lam_hat, w_r, beta):
        g = self.g
        if self.hold:
            integ = self.a.beta_min
        elif self.pitch:
            integ = beta
        else:
            err = w_r - min(g.speed_ref, g.speed_ref_max)
            integ = err * (g.K_iw / g.K_aw - g.K_pw) if g.K_aw > 0 else 0.0
        st = ControllerState(lam_hat_stat=lam_hat, speed_integ=integ)
        return Controller(self.p, self.a, g, st)

    def outputs(self, x):
        p = self.p
        lam_s, lam_R, v_dc, lam_hat, m_i_prev, w_r, beta, i_re = self.unpack(x)
        i_s, i_R = currents(lam_s, lam_R, p)
        p_re = 0.0
        if self.cond:
            m_re = pgsr_modulation(i_re, p.pgsr_ratio * self.v_f, p)
            p_re = -1.5 * v_dc * (m_re * i_re.conjugate()).real
        ctl = self.controller(lam_hat, w_r, beta)
        y = Measurements(self.v_f, i_s, i_R, v_dc, w_r, p_re, m_i_prev)
        out = ctl.update(0.0, y, self.dt)
        return out, (lam_s, lam_R, v_dc, lam_hat, m_i_prev, w_r, beta, i_re, i_s, i_R)

    def residual(self, x):
        p = self.p
        out, (lam_s, lam_R, v_dc, lam_hat, m_i_prev, w_r, beta, i_re, i_s, i_R) = self.outputs(x)
        d = derivatives(lam_s, lam_R, i_re, v_dc, self.cond, out.m_i, out.m_R, self.v_f, w_r, p)
        v_s = self.v_f + out.m_i * v_dc
        lam_fp = estimator_fixed_point(v_s, i_s, self.dt, p.omega_e, p.R_s * self.g.est_R_s,
                                       self.g.omega_c)
        vb = p.v_f_nom
        r = [d[0].real / vb, d[0].imag / vb, d[1].real / vb, d[1].imag / vb,
             d[3] / (p.v_dc_nom * p.omega_e),
             (lam_hat - lam_fp).real / p.flux_nom, (lam_hat - lam_fp).imag / p.flux_nom,
             (out.m_i - m_i_prev).real, (out.m_i - m_i_prev).imag]
        if not self.hold:
            t_m = aero_power(self.u_w, w_r, beta, p.poles, self.a) * p.poles / (2.0 * w_r)
            r.append((torque(lam_s, i_R, p) + t_m) / (p.v_f_nom * p.i_rated))
        if self.cond:
            r += [d[2].real / (p.i_rated * p.omega_e), d[2].imag / (p.i_rated * p.omega_e)]
        return np.array(r)


def damped_newton(fun, x0, tol=1e-10, max_iter=200, fd_step=1e-7):
    """Newton iteration with finite-difference Jacobian and step halving."""
    x = np.asarray(x0, dtype=float).copy()
    r = fun(x)
    norm = np.max(np.abs(r))
    for it in range(1, max_iter + 1):
        if norm < tol:
            return x, norm, it - 1
        n = x.size
        jac = np.empty((r.size, n))
        for k in range(n):
            xp = x.copy()
            hk = fd_step * max(1.0, abs(x[k]))
            xp[k] += hk
            jac[:, k] = (fun(xp) - r) / hk
        try:
            dx = np.linalg.lstsq(jac, -r, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        while lam > 1e-6:
            xn = x + lam * dx
            rn = fun(xn)
            nn = np.max(np.abs(rn))
            if np.isfinite(nn) and nn < norm:
                break
            lam *= 0.5
        else:
            break
        x, r, norm = xn, rn, nn
    return x, norm, max_iter


def _initial_vector(ev: _Evaluator, w_r: float, beta: float):
    p, g = ev.p, ev.g
    s = (p.omega_e - w_r) / p.omega_e
    if ev.hold:
        P_m = scheduled_power(w_r, p, ev.a, g)
    else:
        P_m = aero_power(ev.u_w, w_r, beta, p.poles, ev.a)
    uupf = uupf_operating_point(s, P_m, p.v_f_nom, p, lossless=True)
    lam_s = uupf.lam_s
    if abs(lam_s) > p.flux_nom:
        lam_s *= p.flux_nom / abs(lam_s)
    i_s = complex(uupf.i_Qf, 0.0)
    i_R = lam_s / p.L_s - i_s
    lam_R = lam_s + p.L_L * i_R
    v_dc = g.v_dc_ref if not ev.cond else p.pgsr_pickup * p.v_dc_nom
    v_s = 1j * p.omega_e * lam_s + p.R_s * i_s
    m_i = (v_s - ev.v_f) / v_dc
    lam_hat = estimator_fixed_point(v_s, i_s, ev.dt, p.omega_e, p.R_s, g.omega_c)
    fb = p.flux_nom
    x = [lam_s.real / fb, lam_s.imag / fb, lam_R.real / fb, lam_R.imag / fb, v_dc / p.v_dc_nom,
         lam_hat.real / fb, lam_hat.imag / fb, m_i.real, m_i.imag]
    if not ev.hold:
        x.append(beta / 10.0 if ev.pitch else w_r / p.omega_e)
    if ev.cond:
        # rectifier current for the rotor-path power at the pick-up voltage
        need = max(abs(power_split(s, P_m).P_MSC), 1.0)
        i_mag = need / (1.5 * p.k_rect * v_dc)
        x += [-i_mag / p.i_rated, 0.0]
    return x


def equilibrium_solve(u_w: float, machine: MachineParams, aero: AeroParams,
                      gains: ControlGains, dt: float = DT_DEFAULT, tol: float = 1e-10,
                      max_iter: int = 200) -> Equilibrium:
    """Closed-loop operating point of plant plus controller at constant wind.

    The estimator residual uses the discrete estimator's fixed point for the
    step ``dt``, so the returned state is stationary for the simulator.
    """
    if not 3.0 <= u_w <= 25.0:
        raise EquilibriumError(f"wind speed {u_w} m/s outside [3, 25]")
    w0 = _mech_speed_guess(u_w, machine, aero, gains)
    band_lo = 2.0 * math.pi * 40.0 * 0.999
    if w0 is None or w0 < band_lo:
        raise EquilibriumError(f"no equilibrium in the operating speed band at {u_w} m/s")
    w_ref = min(gains.speed_ref, gains.speed_ref_max)
    pitch = w0 > w_ref
    beta0 = 0.0
    if pitch:
        kopt = k_opt(aero, machine.poles)
        t_ref = torque_command(w_ref, kopt, machine.poles, gains.omega_knee, gains.omega_max)

        def f(b):
            return aero_power(u_w, w_ref, b, machine.poles, aero) * machine.poles / (2 * w_ref) + t_ref
        beta0 = brentq(f, 0.0, aero.beta_max)
        w0 = w_ref

    return _solve_modes(u_w, machine, aero, gains, dt, tol, max_iter, pitch, w_ref, w0, beta0,
                        hold=False)


def equilibrium_at_speed(omega_r: float, machine: MachineParams, aero: AeroParams,
                         gains: ControlGains, dt: float = DT_DEFAULT, tol: float = 1e-10,
                         max_iter: int = 200) -> Equilibrium:
    """Electrical equilibrium with the shaft held at ``omega_r`` (dynamometer mode).

    The prime mover supplies whatever torque the torque schedule asks for, so
    the shaft power follows the scheduled (cube-law) curve.
    """
    if not 0.05 * machine.omega_e <= omega_r <= 2.0 * machine.omega_e:
        raise EquilibriumError(f"rotor speed {omega_r} rad/s outside the modelled range")
    return _solve_modes(0.0, machine, aero, gains, dt, tol, max_iter, False, omega_r, omega_r,
                        0.0, hold=True)


def _conduction_consistent(ev: _Evaluator, x) -> bool:
    p = ev.p
    lam_s, lam_R, v_dc, lam_hat, m_i, w_r, beta, i_re = ev.unpack(x)
    v_c = p.pgsr_ratio * ev.v_f
    if not ev.cond:
        return abs(v_c) <= p.k_rect * v_dc
    return (pgsr_modulation(i_re, v_c, p) * i_re.conjugate()).real < 0.0


def _solve_branch(make, target, anchor, x_init, tol, max_iter, steps=6):
    """Newton at ``target``; on failure walk a straight homotopy from ``anchor``."""
    ev = make(target)
    x, norm, its = damped_newton(ev.residual, x_init(ev), tol=tol, max_iter=max_iter)
    if norm < tol or anchor is None:
        return ev, x, norm, its
    x = None
    total = 0
    for k in range(steps + 1):
        par = anchor + (target - anchor) * k / steps
        ev = make(par)
        x, norm, its = damped_newton(ev.residual, x_init(ev) if x is None else x,
                                     tol=tol, max_iter=max_iter)
        total += its
        if norm >= tol:
            break
    return ev, x, norm, total


def _solve_modes(u_w, machine, aero, gains, dt, tol, max_iter, pitch, w_fixed, w0, beta0, hold):
    best = None
    for cond in (False, True):
        if hold:
            def make(w, cond=cond):
                return _Evaluator(0.0, machine, aero, gains, dt, False, cond, w, hold=True)
            anchor = machine.omega_e + 0.5 * (w_fixed - machine.omega_e)
            ev, x, norm, its = _solve_branch(make, w_fixed, anchor,
                                             lambda e: _initial_vector(e, e.w_fixed, 0.0),
                                             tol, max_iter)
        else:
            def make(u, cond=cond):
                return _Evaluator(u, machine, aero, gains, dt, pitch, cond, w_fixed)
            ev, x, norm, its = _solve_branch(make, u_w, None,
                                             lambda e: _initial_vector(e, w0, beta0),
                                             tol, max_iter)
        ok = norm < tol and _conduction_consistent(ev, x)
        if ok:
            best = (norm, cond, x, its, ev)
            break
    if best is None:
        where = f"{w_fixed:.3f} rad/s" if hold else f"{u_w} m/s"
        raise EquilibriumError(f"no consistent equilibrium found at {where}")
    norm, cond, x, its, ev = best
    out, parts = ev.outputs(x)
    lam_s, lam_R, v_dc, lam_hat, m_i, w_r, beta, i_re = ev.unpack(x)
    plant = PlantState(lam_s, lam_R, i_re, v_dc, w_r, beta, cond)
    ctl = ev.controller(lam_hat, w_r, beta)
    st = ctl.state
    st.lam_ref = None
    st.m_i_prev = out.m_i
    return Equilibrium(plant, st, u_w, out.m_i, out.m_R, its, norm, pitch, machine.omega_e)
