import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from unified_dfig.control import ControlGains
from unified_dfig.drivetrain import AeroParams, tip_speed_ratio
from unified_dfig.frames import PerUnitBase
from unified_dfig.machine import MachineParams, currents
from unified_dfig.sim import Scenario, simulate
from unified_dfig.steadystate import (
    EquilibriumError,
    SingularSlipError,
    damped_newton,
    equilibrium_at_speed,
    equilibrium_solve,
    mppt_power,
    power_curve,
    power_split,
    uupf_operating_point,
    uupf_voltages,
)

M, A, G = MachineParams(), AeroParams(), ControlGains()
S_BASE = PerUnitBase().s_base
W_E = M.omega_e


def test_power_split_supersynchronous():
    sp = power_split(-1 / 3, 2.1e6)
    assert sp.P_s == pytest.approx(1.575e6)
    assert sp.P_MSC == pytest.approx(-0.525e6)
    assert sp.P_SGSC_plus_PGSR == pytest.approx(0.525e6)


def test_power_split_synchronous():
    sp = power_split(0.0, 1.0e6)
    assert sp.P_s == 1.0e6 and sp.P_SGSC_plus_PGSR == 0.0


def test_power_split_subsynchronous_cube_law():
    sp = power_split(1 / 3, 2.1 * (40 / 80) ** 3 * 1e6)
    assert sp.P_SGSC_plus_PGSR == pytest.approx(-0.13125e6)
    assert abs(sp.P_SGSC_plus_PGSR) < 0.1 * S_BASE


def test_singular_slip():
    with pytest.raises(SingularSlipError):
        power_split(1.0, 1e6)
    with pytest.raises(SingularSlipError):
        uupf_voltages(2000.0, 1.0)


@given(st.floats(-0.9, 0.9), st.floats(0.0, 3e6))
def test_power_split_identities(s, p_m):
    sp = power_split(s, p_m)
    assert sp.P_s * (1 - s) == pytest.approx(p_m, rel=1e-12, abs=1e-6)
    assert sp.P_MSC * (1 - s) == pytest.approx(s * p_m, rel=1e-12, abs=1e-6)
    assert sp.P_s + sp.P_SGSC_plus_PGSR == pytest.approx(p_m, rel=1e-12, abs=1e-6)


def test_mppt_power():
    assert mppt_power(2 * math.pi * 80, M, A) == pytest.approx(2.20e6, rel=0.01)
    assert mppt_power(2 * math.pi * 40, M, A) == pytest.approx(mppt_power(2 * math.pi * 80, M, A) / 8)
    assert mppt_power(0.0, M, A) == 0.0


@pytest.mark.parametrize("s,vs,vi", [(-1 / 3, 1500.0, 500.0), (0.0, 2000.0, 0.0), (1 / 3, 3000.0, -1000.0)])
def test_uupf_voltages(s, vs, vi):
    v_qs, v_qi = uupf_voltages(2000.0, s)
    assert v_qs == pytest.approx(vs) and v_qi == pytest.approx(vi, abs=1e-9)
    assert v_qs + v_qi == pytest.approx(2000.0)


def test_uupf_supersynchronous_point():
    sol = uupf_operating_point(-1 / 3, 2.1e6, 2000.0, M, lossless=True)
    assert sol.i_Qf == pytest.approx(-700.0)
    assert sol.feasible
    i_s, _ = currents(sol.lam_s, sol.lam_R, M)
    # unity power factor: stator current purely on the Q axis
    assert abs(i_s.imag) < 1e-9 * abs(i_s)
    assert sol.v_Qs + sol.v_Qi == pytest.approx(sol.v_Qf)
    # injected series voltage is the negative of the drop
    assert (sol.m_i * sol.v_dc).real == pytest.approx(-sol.v_Qi)


def test_uupf_loss_corrected_point_keeps_drop_convention():
    sol = uupf_operating_point(-1 / 3, 2.1e6, 2000.0, M)
    assert sol.v_Qs + sol.v_Qi == pytest.approx(sol.v_Qf)
    assert sol.v_Qs / sol.v_Qf == pytest.approx(0.75, rel=0.01)


def test_uupf_no_load():
    sol = uupf_operating_point(0.0, 0.0, 2000.0, M)
    assert sol.i_Qf == 0.0
    assert abs(sol.lam_s) == pytest.approx(2000.0 / W_E)


def test_uupf_subsynchronous_series_only_is_infeasible():
    sol = uupf_operating_point(1 / 3, 0.2625e6, 2000.0, M, lossless=True)
    assert abs(sol.v_Qi) == pytest.approx(1000.0)
    assert not sol.feasible
    assert any("series voltage" in r for r in sol.reasons)


def test_damped_newton_simple_system():
    x, norm, _ = damped_newton(lambda x: np.array([x[0] ** 2 - 2.0, x[1] - x[0]]), [1.0, 0.0])
    assert norm < 1e-10
    assert x == pytest.approx([math.sqrt(2), math.sqrt(2)])


def test_equilibrium_mppt_region():
    eq = equilibrium_solve(9.0, M, A, G)
    assert eq.residual < 1e-8
    assert not eq.pitch_active
    psi = tip_speed_ratio(9.0, eq.plant.omega_r, M.poles, A)
    assert psi == pytest.approx(A.psi_opt, rel=0.02)


def test_equilibrium_rated_wind_pitches():
    eq = equilibrium_solve(12.0, M, A, G)
    assert eq.residual < 1e-8
    assert eq.pitch_active and eq.plant.beta > 0
    assert eq.plant.omega_r == pytest.approx(G.speed_ref)
    assert not eq.plant.pgsr_conducting


def test_equilibrium_subsynchronous_uses_rectifier():
    eq = equilibrium_solve(7.0, M, A, G)
    assert eq.slip > 0.2
    assert eq.plant.pgsr_conducting
    assert eq.plant.v_dc < M.v_dc_nom


@pytest.mark.parametrize("u", [2.0, 4.0])
def test_equilibrium_out_of_envelope(u):
    with pytest.raises(EquilibriumError):
        equilibrium_solve(u, M, A, G)


def test_equilibrium_at_speed_range():
    with pytest.raises(EquilibriumError):
        equilibrium_at_speed(0.01 * W_E, M, A, G)
    eq = equilibrium_at_speed(W_E * 4 / 3, M, A, G)
    assert eq.slip == pytest.approx(-1 / 3)


def test_equilibrium_is_stationary_in_the_simulator():
    eq = equilibrium_solve(10.0, M, A, G)
    scn = Scenario(name="still", duration=1.0, wind=10.0)
    res = simulate(scn, M, A, G, eq.plant, eq.ctrl)
    assert res.fault is None
    x0, x1 = eq.plant.as_vector(), res.final.as_vector()
    scale = np.array([M.flux_nom] * 4 + [M.i_rated] * 2 + [M.v_dc_nom, W_E, 30.0])
    assert np.max(np.abs(x1 - x0) / scale) < 1e-3


def test_power_curve_structure():
    w = np.linspace(2 * math.pi * 40, 2 * math.pi * 80, 41)
    rows = power_curve(w, M, A, G)
    p_m = np.array([r.P_m for r in rows])
    p_conv = np.array([r.P_conv for r in rows])
    slip = np.array([r.slip for r in rows])
    assert np.all(np.diff(p_m) > 0)
    sync = np.isclose(slip, 0.0, atol=1e-12)
    assert sync.sum() == 1
    assert rows[int(np.argmax(sync))].P_s == pytest.approx(rows[int(np.argmax(sync))].P_m)
    assert np.all(p_conv[slip > 1e-12] < 0) and np.all(p_conv[slip < -1e-12] > 0)
    assert np.max(np.abs(p_conv[slip > 0])) < 0.1 * S_BASE


def test_power_curve_continuous_at_knee():
    eps = 1e-6
    lo, hi = power_curve([G.omega_knee - eps, G.omega_knee + eps], M, A, G)
    assert hi.P_m == pytest.approx(lo.P_m, rel=1e-6)
