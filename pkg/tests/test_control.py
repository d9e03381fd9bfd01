import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unified_dfig.control import (
    ControlGains,
    Controller,
    ControllerState,
    Measurements,
    SpeedRegulator,
    dc_link_flux_command,
    estimator_fixed_point,
    flux_estimator_step,
    flux_magnitude_command,
    k_opt,
    limit_rotor_current,
    lowpass_step,
    rated_torque,
    reachable_flux_window,
    rotor_current_command,
    rotor_current_regulator,
    stator_flux_regulator,
    torque_command,
)
from unified_dfig.drivetrain import AeroParams
from unified_dfig.machine import MachineParams, currents, derivatives, torque

M, A, G = MachineParams(), AeroParams(), ControlGains()
W = M.omega_e
KOPT = k_opt(A, M.poles)
comp = st.complex_numbers(max_magnitude=3000.0, allow_nan=False, allow_infinity=False)


def test_current_loop_gain_matches_bandwidth():
    k_pir = 3.0 * 2000.0 / 673.0
    assert k_pir == pytest.approx(8.9, rel=0.01)
    assert k_pir / M.L_L == pytest.approx(2 * math.pi * 900, rel=0.2)
    assert Controller(M, A, G).K_piR == pytest.approx(k_pir)


@pytest.mark.parametrize("field,val", [("K_pvdc", 0.0), ("K_plam", -1.0), ("omega_c", 0.0),
                                       ("ff_bandwidth", 0.0)])
def test_gains_validated(field, val):
    with pytest.raises(ValueError, match=field):
        ControlGains(**{field: val})


def test_flux_magnitude_command():
    assert flux_magnitude_command(2000 + 0j, 0j, 6.2e-3, W) == pytest.approx(5.305, abs=1e-3)
    assert flux_magnitude_command(300 + 0j, 0j, 6.2e-3, W) == pytest.approx(0.796, abs=1e-3)
    assert flux_magnitude_command(0j, 0j, 6.2e-3, W) == 0.0


def _dc_cmd(v_dc, i_s=673 + 0j):
    lam = 2000 / (1j * W)
    return dc_link_flux_command(v_dc, 1000.0, i_s, -200 + 300j, lam, 2000 + 0j, -0.2 * W, 0.0,
                                W, 0.09, 6.2e-3, 6.7e-3, 20.0)


def test_dc_link_error_term_by_hand():
    # only the error term depends on v_dc
    delta = _dc_cmd(950.0) - _dc_cmd(1000.0)
    expected = 2 * 0.09 * 950 * 20 * 50 / 3 / (673 * 377)
    assert abs(delta) == pytest.approx(expected, rel=2e-3)
    assert abs(delta) == pytest.approx(0.225, abs=1e-3)


def test_dc_link_zero_error_is_power_balance_feedforward():
    i_s, i_R = 673 + 0j, -200 + 300j
    lam = 2000 / (1j * W)
    w_sl = -0.2 * W
    i_dr = -(i_R * (lam / abs(lam)).conjugate()).imag
    bracket = 2000 * 673 - 6.2e-3 * 673**2 - 6.7e-3 * abs(i_R) ** 2 + w_sl * abs(lam) * i_dr
    assert _dc_cmd(1000.0) == pytest.approx(bracket / (673 * W))


def test_torque_command_schedule():
    t60 = torque_command(2 * math.pi * 60, KOPT, 8, G.omega_knee, G.omega_max)
    assert t60 == pytest.approx(-4 * KOPT * (2 * math.pi * 60) ** 2)
    assert abs(t60) == pytest.approx(9.8e3, rel=0.02)
    t30 = torque_command(2 * math.pi * 30, KOPT, 8, G.omega_knee, G.omega_max)
    assert t30 == pytest.approx(t60 / 4)
    rated = rated_torque(A, 8, G.omega_max)
    for w in (G.omega_max, 1.05 * G.omega_max, 1.5 * G.omega_max):
        assert torque_command(w, KOPT, 8, G.omega_knee, G.omega_max) == pytest.approx(-rated)
    mid = torque_command(0.5 * (G.omega_knee + G.omega_max), KOPT, 8, G.omega_knee, G.omega_max)
    knee = torque_command(G.omega_knee, KOPT, 8, G.omega_knee, G.omega_max)
    assert mid == pytest.approx(0.5 * (knee - rated))
    assert torque_command(0.0, KOPT, 8, G.omega_knee, G.omega_max) == 0.0


def test_rotor_current_command_by_hand():
    c = rotor_current_command(0.0, 5.31, 5.31, 0.0, 0.0, M.L_s, W, 8)
    assert c.real == pytest.approx(5.31 / 0.02036, rel=1e-3)
    assert c.real == pytest.approx(260.0, rel=0.01)
    c = rotor_current_command(-10e3, 5.31, 5.31, 0.0, 0.0, M.L_s, W, 8)
    assert abs(c.imag) == pytest.approx(10e3 / (6 * 5.31))
    assert abs(c.imag) == pytest.approx(314.0, rel=0.01)
    # generating torque results when the command is rotated onto the flux
    lam = 5.31 * cmath.exp(0.7j)
    assert torque(lam, c * lam / abs(lam), M) == pytest.approx(-10e3, rel=1e-9)


def test_sag_leaves_torque_current_and_scales_torque():
    before = rotor_current_command(-10e3, 5.31, 5.31, 0.0, 0.0, M.L_s, W, 8)
    during = rotor_current_command(-10e3, 0.15 * 5.31, 5.31, 0.0, 0.0, M.L_s, W, 8)
    assert during.imag == before.imag
    i_torque = complex(0.0, before.imag)
    assert torque(0.15 * 5.31, i_torque, M) == pytest.approx(0.15 * torque(5.31, i_torque, M))


def test_reactive_power_term():
    base = rotor_current_command(0.0, 5.31, 5.31, 0.0, 0.0, M.L_s, W, 8)
    c = rotor_current_command(0.0, 5.31, 5.31, 1e5, 0.0, M.L_s, W, 8)
    assert c.real - base.real == pytest.approx(-2 * 1e5 / (3 * 5.31 * W))


def test_rotor_current_limit_torque_first():
    lim = limit_rotor_current(complex(700.0, -600.0), 800.0)
    assert -lim.imag == pytest.approx(600.0)
    assert abs(lim) == pytest.approx(800.0)
    lim = limit_rotor_current(complex(100.0, 900.0), 800.0)
    assert lim == complex(0.0, 800.0)
    assert limit_rotor_current(complex(30.0, -40.0), 800.0) == complex(30.0, -40.0)


def test_rotor_regulator_feedforward_and_clamp():
    i_R, lam = 300 - 200j, 2000 / (1j * W)
    w_sl = -0.3 * W
    m = rotor_current_regulator(i_R, i_R, lam, 0j, w_sl, 1000.0, 8.9, M.R_R, M.L_L, 10.0)
    ff = (M.R_R * i_R + 1j * w_sl * (lam + M.L_L * i_R)) / 1000.0
    assert m == pytest.approx(ff)
    m = rotor_current_regulator(i_R + 1e4, i_R, lam, 0j, w_sl, 1000.0, 8.9, M.R_R, M.L_L, 0.8)
    assert abs(m) == pytest.approx(0.8)


def test_rotor_regulator_closes_first_order_loop():
    # with exact feedforward, d i_R/dt = K_piR/L_L (i_R* - i_R)
    lam_s = 2000 / (1j * W)
    i_R = 250 - 100j
    lam_R = lam_s + M.L_L * i_R
    i_s, _ = currents(lam_s, lam_R, M)
    w_r = 1.2 * W
    m_i = (1j * W * lam_s + M.R_s * i_s - 2000) / 1000.0
    d0 = derivatives(lam_s, lam_R, 0j, 1000.0, False, m_i, 0j, 2000 + 0j, w_r, M)
    ref = i_R + (20 - 10j)
    m_R = rotor_current_regulator(ref, i_R, lam_s, d0[0], W - w_r, 1000.0, 8.9, M.R_R, M.L_L, 10.0)
    d = derivatives(lam_s, lam_R, 0j, 1000.0, False, m_i, m_R, 2000 + 0j, w_r, M)
    d_iR = (d[1] - d[0]) / M.L_L
    assert d_iR == pytest.approx(8.9 / M.L_L * (ref - i_R), rel=1e-9)


def test_flux_regulator_closes_first_order_loop():
    lam = 5.0 * cmath.exp(-1.2j)
    ref = 5.2 * cmath.exp(-1.1j)
    lam_R = lam + M.L_L * (100 - 50j)
    i_s, _ = currents(lam, lam_R, M)
    m_i = stator_flux_regulator(ref, lam, 0j, i_s, 2000 + 0j, 1000.0, W, 94.0, M.R_s, 10.0)
    d = derivatives(lam, lam_R, 0j, 1000.0, False, m_i, 0j, 2000 + 0j, W, M)
    assert d[0] == pytest.approx(94.0 * (ref - lam), rel=1e-9)


def test_flux_regulator_equilibrium_is_feedforward_only():
    lam = 2000 / (1j * W)
    m = stator_flux_regulator(lam, lam, 0j, 0j, 2000 + 0j, 1000.0, W, 94.0, M.R_s, 0.575)
    assert abs(m) < 1e-12


@settings(max_examples=200)
@given(comp, comp, comp, st.floats(500.0, 1500.0))
def test_flux_regulator_respects_ceiling(ref, lam, i_s, v_dc):
    m = stator_flux_regulator(ref / 300, lam / 300, 0j, i_s, 2000 + 0j, v_dc, W, 94.0, M.R_s, 0.575)
    assert abs(m) <= 0.575 * (1 + 1e-12)


def test_flux_regulator_saturated_pushes_against_error():
    lam = 6.0 * cmath.exp(-1j * math.pi / 2)
    ref = 0.8 * cmath.exp(-1j * math.pi / 2)
    v_f = 300 + 0j
    m = stator_flux_regulator(ref, lam, 0j, 0j, v_f, 1000.0, W, 94.0, M.R_s, 0.575)
    assert 0.5 < abs(m) <= 0.575
    d = derivatives(lam, lam, 0j, 1000.0, False, m, 0j, v_f, W, M)
    # the flux moves toward the command
    assert (d[0] * (ref - lam).conjugate()).real > 0


@given(st.floats(-1.0, 1.0), comp, st.floats(50.0, 600.0))
def test_reachable_window_endpoints(ang, i_s, v_lim):
    u = cmath.exp(1j * ang)
    v_f = 2000 + 0j
    lo, hi = reachable_flux_window(u, v_f, i_s, M.R_s, W, v_lim)
    c = M.R_s * i_s - v_f
    if lo == hi:
        # nothing reachable: the returned point is the closest one
        assert abs(W * lo * u + c) >= v_lim * (1 - 1e-9)
        return
    for lam_d in (lo, hi):
        assert abs(W * lam_d * u + c) == pytest.approx(v_lim, rel=1e-9)
    assert abs(W * 0.5 * (lo + hi) * u + c) < v_lim


def test_estimator_magnitude_at_line_frequency():
    dt, w_c = 20e-6, 2.0
    v = 1500.0
    fp = estimator_fixed_point(v + 0j, 0j, dt, W, 0.0, w_c)
    assert abs(fp) == pytest.approx(v / math.hypot(W, w_c), rel=1e-3)
    assert abs(fp) == pytest.approx(v / W, rel=1e-4)
    # the discrete integrator holds that value for a full cycle
    lam = fp
    for k in range(int(round(2 * math.pi / W / dt))):
        t = k * dt
        lam = flux_estimator_step(lam, v * cmath.exp(1j * W * t), 0j, dt, 0.0, w_c)
    lam_sync = lam * cmath.exp(-1j * W * (k + 1) * dt)
    assert abs(lam_sync - fp) < 1e-6 * abs(fp)


def test_estimator_leak_bounds_dc_offset():
    dt, w_c = 1e-3, 2.0
    lam = 0j
    for _ in range(20000):
        lam = flux_estimator_step(lam, 10.0 + 0j, 0j, dt, 0.0, w_c)
    assert abs(lam) == pytest.approx(10.0 / w_c, rel=1e-3)


def test_speed_regulator_inactive_below_reference():
    reg = SpeedRegulator(G, A)
    for _ in range(5000):
        beta = reg.step(0.9 * G.speed_ref, 1e-3)
    assert beta == A.beta_min


def test_speed_regulator_rises_monotonically_on_overspeed():
    reg = SpeedRegulator(G, A)
    out = [reg.step(1.05 * G.speed_ref, 1e-3) for _ in range(3000)]
    assert out[-1] > out[0]
    assert np.all(np.diff(out) >= 0)


def test_speed_regulator_anti_windup():
    reg = SpeedRegulator(G, A)
    for _ in range(100_000):
        reg.step(1.3 * G.speed_ref, 1e-3)
    assert reg.step(1.3 * G.speed_ref, 1e-3) == A.beta_max
    # error sign change: pitch must leave the stop within one actuator time constant
    steps = 0
    while reg.step(0.97 * G.speed_ref, 1e-3) >= A.beta_max:
        steps += 1
        assert steps * 1e-3 < 1.0 / A.omega_beta


def test_speed_regulator_rejects_bad_dt():
    with pytest.raises(ValueError):
        SpeedRegulator(G, A).step(400.0, 0.0)


def test_speed_reference_saturated():
    g = ControlGains(speed_ref=2 * math.pi * 90)
    assert SpeedRegulator(g, A).reference() == pytest.approx(2 * math.pi * 80)


@settings(max_examples=150, deadline=None)
@given(comp, comp, st.floats(600.0, 1400.0), st.floats(200.0, 560.0), st.floats(0.0, 1.0),
       st.complex_numbers(max_magnitude=7.0, allow_nan=False, allow_infinity=False))
def test_controller_modulation_ceilings(i_s, i_R, v_dc, w_r, sag, lam):
    ctl = Controller(M, A, G, ControllerState(lam_hat_stat=lam))
    out = ctl.update(0.0, Measurements(complex(2000 * sag, 0), i_s, i_R, v_dc, w_r), 20e-6)
    assert abs(out.m_i) <= M.m_max * (1 + 1e-12)
    assert abs(out.m_R) <= M.m_R_max * (1 + 1e-12)
    assert abs(out.m_R) * M.gamma * M.N_rs <= M.m_max * (1 + 1e-12)
    assert all(math.isfinite(abs(x)) for x in (out.m_i, out.m_R, out.i_R_ref, out.lam_ref))


def test_controller_guards_freeze_commands():
    ctl = Controller(M, A, G, ControllerState(lam_hat_stat=2000 / (1j * W)))
    y = Measurements(2000 + 0j, 500 + 0j, 300 - 200j, 1000.0, 1.2 * W)
    first = ctl.update(0.0, y, 20e-6)
    # flux collapses below the floor: the rotor-current command is held
    ctl.state.lam_hat_stat = 1e-3 + 0j
    second = ctl.update(20e-6, y, 20e-6)
    assert second.i_R_ref == first.i_R_ref
    # stator current below the floor: the dc-link channel holds
    y0 = Measurements(2000 + 0j, 1.0 + 0j, 300 - 200j, 1000.0, 1.2 * W)
    third = ctl.update(40e-6, y0, 20e-6)
    assert third.dc_held
    # dc link below the minimum is flagged
    low = Measurements(2000 + 0j, 500 + 0j, 300 - 200j, 400.0, 1.2 * W)
    assert ctl.update(60e-6, low, 20e-6).dc_fault


def test_feedforward_lowpass_step_response():
    # backward Euler: after n steps of a unit input the output is 1 - (1 + a)^-n
    y, a = 0j, 500.0 * 20e-6
    for n in range(1, 201):
        y = lowpass_step(y, 1.0 + 0j, 500.0, 20e-6)
        assert y.real == pytest.approx(1.0 - (1.0 + a) ** -n, rel=1e-12)
    # 4 ms is two time constants at 500 rad/s
    assert y.real == pytest.approx(1.0 - math.exp(-2.0), abs=0.01)


def test_feedforward_lowpass_holds_dc():
    assert lowpass_step(0.3 - 0.2j, 0.3 - 0.2j, 500.0, 1e-3) == pytest.approx(0.3 - 0.2j)
