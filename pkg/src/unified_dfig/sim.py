"""Fixed-step RK4 integration of the plant and controller, events and recording."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .control import Controller, ControllerState, ControlGains, Measurements
from .drivetrain import AeroParams, SpeedFloorError, aero_power, pitch_derivative
from .machine import (
    ElectricalState,
    MachineParams,
    PlantFault,
    derivatives,
    pgsr_modulation,
    pgsr_update,
    power_audit,
    torque,
)

DT_DEFAULT = 20e-6
DT_MAX = 50e-6

TRACE_FIELDS = (
    "t", "u_w", "beta", "beta_cmd", "omega_r", "slip",
    "v_f_q", "v_f_d", "v_f_mag",
    "lam_s_q", "lam_s_d", "lam_s_mag", "lam_hat_mag", "lam_ref_mag",
    "i_s_q", "i_s_d", "i_s_mag", "i_R_q", "i_R_d", "i_R_mag", "i_re_q", "i_re_d", "i_re_mag",
    "v_dc", "T_e", "T_e_ref", "T_m", "P_m", "P_s", "P_sgsc", "P_pgsr", "P_msc", "Q_f",
    "m_i_mag", "m_R_mag", "pgsr_conducting", "energy_residual",
)


class IntegrationFault(RuntimeError):
    def __init__(self, msg: str, t: float):
        super().__init__(f"{msg} at t={t:.6f} s")
        self.t = t


@dataclass
class WindRamp:
    time: float
    target: float
    ramp: float

    kind = "wind_ramp"


@dataclass
class VoltageSag:
    time: float
    depth: float
    duration: float

    kind = "voltage_sag"


@dataclass
class Scenario:
    name: str = "scenario"
    duration: float = 1.0
    wind: float = 12.0
    events: list = field(default_factory=list)
    dt: float = DT_DEFAULT
    record_every: int = 25
    # shaft driven at constant speed by a dynamometer instead of the rotor aerodynamics
    hold_speed: bool = False

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not self.duration > 0:
            raise ValueError("scenario.duration must be positive")
        if not 0 < self.dt <= DT_MAX:
            raise ValueError(f"scenario.dt must lie in (0, {DT_MAX}]")
        if self.record_every < 1:
            raise ValueError("scenario.record_every must be >= 1")
        times = [e.time for e in self.events]
        if times != sorted(times):
            raise ValueError("scenario events must be time-ordered")
        sags = [e for e in self.events if isinstance(e, VoltageSag)]
        for e in sags:
            if not 0.0 <= e.depth <= 1.0:
                raise ValueError(f"sag depth {e.depth} outside [0, 1]")
            if not e.duration > 0:
                raise ValueError("sag duration must be positive")
        for a, b in zip(sags, sags[1:]):
            if b.time < a.time + a.duration:
                raise ValueError("overlapping voltage sags")
        for e in self.events:
            if isinstance(e, WindRamp) and (e.ramp < 0 or e.target <= 0):
                raise ValueError("wind ramp needs target > 0 and ramp >= 0")

    def boundaries(self) -> list[float]:
        pts = set()
        for e in self.events:
            if isinstance(e, VoltageSag):
                pts.update((e.time, e.time + e.duration))
            else:
                pts.update((e.time, e.time + e.ramp))
        return sorted(x for x in pts if 0.0 < x < self.duration)


@dataclass
class Exogenous:
    u_w: float
    v_f: complex


def wind_at(scn: Scenario, t: float) -> float:
    u = scn.wind
    for e in scn.events:
        if not isinstance(e, WindRamp) or t < e.time:
            continue
        if e.ramp == 0 or t >= e.time + e.ramp:
            u = e.target
        else:
            u = u + (e.target - u) * (t - e.time) / e.ramp
    return u


def sag_factor(scn: Scenario, t: float) -> float:
    for e in scn.events:
        if isinstance(e, VoltageSag) and e.time <= t < e.time + e.duration:
            return e.depth
    return 1.0


def apply_event(scn: Scenario, t: float, machine: MachineParams) -> Exogenous:
    """Exogenous inputs at time ``t`` (sag windows are half-open)."""
    return Exogenous(wind_at(scn, t), complex(machine.v_f_nom * sag_factor(scn, t), 0.0))


@dataclass
class PlantState:
    lam_s: complex
    lam_R: complex
    i_re: complex
    v_dc: float
    omega_r: float
    beta: float
    pgsr_conducting: bool = False

    def as_vector(self) -> np.ndarray:
        return np.array([self.lam_s.real, self.lam_s.imag, self.lam_R.real, self.lam_R.imag,
                         self.i_re.real, self.i_re.imag, self.v_dc, self.omega_r, self.beta])

    def copy(self) -> "PlantState":
        return PlantState(self.lam_s, self.lam_R, self.i_re, self.v_dc, self.omega_r,
                          self.beta, self.pgsr_conducting)


class Simulator:
    """Owns one plant, one controller and the recorder for a single run."""

    def __init__(self, machine: MachineParams, aero: AeroParams, gains: ControlGains,
                 plant: PlantState, ctrl_state: ControllerState, omega_floor: float | None = None):
        self.p = machine
        self.aero = aero
        self.g = gains
        self.x = plant.copy()
        # the caller's controller state seeds the run but is never mutated
        self.ctrl = Controller(machine, aero, gains, copy.deepcopy(ctrl_state))
        self.omega_floor = 0.05 * machine.omega_e if omega_floor is None else omega_floor
        self.t = 0.0
        self.m_i = self.ctrl.state.m_i_prev
        self.last_out = None
        self.last_audit = None
        self.max_residual = 0.0
        self.hold = False

    def _rhs(self, lam_s, lam_R, i_re, v_dc, w_r, beta, cond, m_i, m_R, v_f, u_w, beta_cmd):
        p, a = self.p, self.aero
        d = derivatives(lam_s, lam_R, i_re, v_dc, cond, m_i, m_R, v_f, w_r, p)
        i_R = (lam_R - lam_s) / p.L_L
        t_e = torque(lam_s, i_R, p)
        if self.hold:
            dw = 0.0
        else:
            t_m = self.mech_torque(u_w, w_r, beta)
            dw = p.poles / (2.0 * a.J_m) * (t_e + t_m)
        db = pitch_derivative(beta, beta_cmd, a)
        return d[0], d[1], d[2], d[3], dw, db

    def mech_torque(self, u_w: float, w_r: float, beta: float) -> float:
        if w_r < self.omega_floor:
            raise SpeedFloorError(f"rotor speed {w_r:.3f} rad/s below floor")
        return aero_power(u_w, w_r, beta, self.p.poles, self.aero) * self.p.poles / (2.0 * w_r)

    def measure(self, v_f: complex) -> Measurements:
        p, x = self.p, self.x
        i_R = (x.lam_R - x.lam_s) / p.L_L
        i_s = x.lam_s / p.L_s - i_R
        p_re = 0.0
        if x.pgsr_conducting:
            m_re = pgsr_modulation(x.i_re, p.pgsr_ratio * v_f, p)
            p_re = -1.5 * x.v_dc * (m_re.real * x.i_re.real + m_re.imag * x.i_re.imag)
        return Measurements(v_f, i_s, i_R, x.v_dc, x.omega_r, p_re, self.m_i)

    def step(self, scn: Scenario, h: float) -> None:
        """Advance by ``h`` with controller outputs held over the step."""
        p, x, t = self.p, self.x, self.t
        v_f = apply_event(scn, t + 0.5 * h, p).v_f
        # conduction is re-evaluated only at step boundaries
        es = ElectricalState(x.lam_s, x.lam_R, x.i_re, x.v_dc, x.pgsr_conducting)
        pgsr_update(es, p.pgsr_ratio * v_f, p)
        x.i_re, x.pgsr_conducting = es.i_re, es.pgsr_conducting

        out = self.ctrl.update(t, self.measure(v_f), h)
        self.m_i = out.m_i
        m_i, m_R, bc = out.m_i, out.m_R, out.beta_cmd
        cond = x.pgsr_conducting
        u0 = wind_at(scn, t)
        u1 = wind_at(scn, t + 0.5 * h)
        u2 = wind_at(scn, t + h)

        s0 = (x.lam_s, x.lam_R, x.i_re, x.v_dc, x.omega_r, x.beta)
        k1 = self._rhs(*s0, cond, m_i, m_R, v_f, u0, bc)
        s1 = tuple(a + 0.5 * h * b for a, b in zip(s0, k1))
        k2 = self._rhs(*s1, cond, m_i, m_R, v_f, u1, bc)
        s2 = tuple(a + 0.5 * h * b for a, b in zip(s0, k2))
        k3 = self._rhs(*s2, cond, m_i, m_R, v_f, u1, bc)
        s3 = tuple(a + h * b for a, b in zip(s0, k3))
        k4 = self._rhs(*s3, cond, m_i, m_R, v_f, u2, bc)
        new = tuple(a + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                    for a, b1, b2, b3, b4 in zip(s0, k1, k2, k3, k4))

        audit = power_audit(x.lam_s, x.lam_R, x.i_re, x.v_dc, cond, m_i, m_R, v_f,
                            x.omega_r, p, derivs=k1[:4])
        self.max_residual = max(self.max_residual, abs(audit.residual))
        self.last_audit = audit
        self.last_out = out
        self.last_inputs = (v_f, u0)

        lam_s, lam_R, i_re, v_dc, w_r, beta = new
        if not all(math.isfinite(abs(v)) for v in new):
            raise IntegrationFault("integration diverged (non-finite state)", t + h)
        if v_dc <= 0.0:
            raise IntegrationFault("dc-link voltage collapsed", t + h)
        beta = min(max(beta, self.aero.beta_min), self.aero.beta_max)
        x.lam_s, x.lam_R, x.i_re, x.v_dc, x.omega_r, x.beta = lam_s, lam_R, i_re, v_dc, w_r, beta
        self.t = t + h


class Trace:
    """Column store for recorded rows."""

    def __init__(self):
        self.rows: list[tuple] = []

    def append(self, row: tuple) -> None:
        self.rows.append(row)

    def array(self) -> np.ndarray:
        return np.array(self.rows, dtype=float).reshape(-1, len(TRACE_FIELDS))

    def column(self, name: str) -> np.ndarray:
        return self.array()[:, TRACE_FIELDS.index(name)]

    def columns(self) -> dict[str, np.ndarray]:
        arr = self.array()
        return {name: arr[:, k] for k, name in enumerate(TRACE_FIELDS)}

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(TRACE_FIELDS) + "\n")
            for r in self.rows:
                fh.write(",".join(format(v, ".17g") for v in r) + "\n")


def _make_row(sim: Simulator, t: float, x: PlantState) -> tuple:
    p = sim.p
    out, audit = sim.last_out, sim.last_audit
    v_f, u_w = sim.last_inputs
    i_R = (x.lam_R - x.lam_s) / p.L_L
    i_s = x.lam_s / p.L_s - i_R
    t_e = torque(x.lam_s, i_R, p)
    t_m = -t_e if sim.hold else sim.mech_torque(u_w, x.omega_r, x.beta)
    w_m = p.mech_speed(x.omega_r)
    return (
        t, u_w, x.beta, out.beta_cmd, x.omega_r, (p.omega_e - x.omega_r) / p.omega_e,
        v_f.real, -v_f.imag, abs(v_f),
        x.lam_s.real, -x.lam_s.imag, abs(x.lam_s), abs(out.lam_hat), abs(out.lam_ref),
        i_s.real, -i_s.imag, abs(i_s), i_R.real, -i_R.imag, abs(i_R),
        x.i_re.real, -x.i_re.imag, abs(x.i_re),
        x.v_dc, t_e, out.t_e_ref, t_m, t_m * w_m,
        audit.p_stator, audit.p_sgsc, audit.p_pgsr, audit.p_msc, audit.q_farm,
        abs(out.m_i), abs(out.m_R), float(x.pgsr_conducting), audit.residual,
    )


@dataclass
class RunResult:
    scenario: Scenario
    trace: Trace
    final: PlantState
    max_residual: float
    steps: int
    fault: str | None = None

    def summary(self) -> dict:
        cols = self.trace.columns()
        out = {}
        for name in TRACE_FIELDS[1:]:
            c = cols[name]
            if c.size:
                out[name] = (float(c.min()), float(c.max()), float(c[-1]))
        return out


def simulate(scn: Scenario, machine: MachineParams, aero: AeroParams, gains: ControlGains,
             plant: PlantState, ctrl_state: ControllerState, full_rate: bool = False) -> RunResult:
    """Integrate ``scn`` from the given initial plant and controller state.

    Steps are shortened to land exactly on event boundaries.  On an
    integration fault the partial trace is returned with ``fault`` set.
    """
    sim = Simulator(machine, aero, gains, plant, ctrl_state)
    sim.hold = scn.hold_speed
    trace = Trace()
    every = 1 if full_rate else scn.record_every
    bounds = scn.boundaries() + [scn.duration]
    bi = 0
    n = 0
    fault = None
    eps = 1e-12
    try:
        while sim.t < scn.duration - eps:
            while bi < len(bounds) and bounds[bi] <= sim.t + eps:
                bi += 1
            nxt = bounds[bi] if bi < len(bounds) else scn.duration
            h = min(scn.dt, nxt - sim.t)
            if nxt - (sim.t + h) < eps:
                h = nxt - sim.t
            x0 = sim.x.copy()
            t0 = sim.t
            sim.step(scn, h)
            if n % every == 0:
                trace.append(_make_row(sim, t0, x0))
            n += 1
            # snap onto the boundary to keep the event grid exact
            if abs(sim.t - nxt) < eps:
                sim.t = nxt
    except (IntegrationFault, PlantFault, ValueError) as exc:
        fault = str(exc)
    return RunResult(scn, trace, sim.x.copy(), sim.max_residual, n, fault)
