"""Command-line front end: simulate, steady-state, power-curve, validate-config.

Exit codes: 0 success, 2 configuration error, 3 integration fault,
4 invariant failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, emit_config, parse_config
from .control import rated_torque
from .frames import PerUnitBase
from .machine import currents, torque
from .sim import DT_MAX, RunResult, simulate
from .steadystate import (
    EquilibriumError,
    SingularSlipError,
    equilibrium_at_speed,
    equilibrium_solve,
    power_curve,
    power_split,
    scheduled_power,
    uupf_operating_point,
)

EXIT_OK, EXIT_CONFIG, EXIT_FAULT, EXIT_INVARIANT = 0, 2, 3, 4
SETTLE_BAND = 0.02


def bundled_scenarios() -> dict[str, Path]:
    root = resources.files("unified_dfig") / "scenarios"
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".scenario")}


def resolve_scenario(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    found = bundled_scenarios().get(p.stem if p.suffix == ".scenario" else name)
    if found is None:
        raise ConfigError(f"scenario {name!r} is neither a file nor a bundled scenario")
    return found


def per_unit_base(cfg: Config) -> PerUnitBase:
    m = cfg.machine
    return PerUnitBase(m.v_f_nom, m.i_rated, m.omega_e, m.poles)


# --- running ---------------------------------------------------------------

def initial_equilibrium(cfg: Config):
    m, a, g, sc = cfg.machine, cfg.drivetrain, cfg.control, cfg.scenario
    try:
        if sc.hold_slip is not None:
            return equilibrium_at_speed((1.0 - sc.hold_slip) * m.omega_e, m, a, g, dt=sc.dt)
        return equilibrium_solve(sc.wind, m, a, g, dt=sc.dt)
    except (EquilibriumError, SingularSlipError) as exc:
        raise ConfigError(f"no initial operating point: {exc}") from None


def run_config(cfg: Config, full_rate: bool = False) -> RunResult:
    """Start from the closed-loop equilibrium at the scenario's initial condition and run."""
    scn = cfg.build_scenario()
    eq = initial_equilibrium(cfg)
    return simulate(scn, cfg.machine, cfg.drivetrain, cfg.control, eq.plant, eq.ctrl,
                    full_rate=full_rate)


@dataclass
class Check:
    name: str
    ok: bool
    detail: str


def _lo(x: np.ndarray) -> float:
    return float(x.min()) if x.size else float("nan")


def _hi(x: np.ndarray) -> float:
    return float(x.max()) if x.size else float("nan")


def check_invariants(res: RunResult, cfg: Config) -> list[Check]:
    m, a, g = cfg.machine, cfg.drivetrain, cfg.control
    cols = res.trace.columns()
    arr = res.trace.array()
    base = per_unit_base(cfg)
    tol = 1e-9
    mR_phys = cols["m_R_mag"] * m.gamma * m.N_rs
    t = cols["t"]
    checks = [
        Check("no integration fault", res.fault is None, res.fault or "completed"),
        Check("all recorded values finite", bool(np.all(np.isfinite(arr))), f"{arr.shape[0]} rows"),
        Check("time strictly increasing", bool(np.all(np.diff(t) > 0)), ""),
        Check("|m_i| within ceiling", bool(np.all(cols["m_i_mag"] <= m.m_max + tol)),
              f"max {_hi(cols['m_i_mag']):.4f} vs {m.m_max}"),
        Check("rotor-side modulation within ceiling", bool(np.all(mR_phys <= m.m_max + tol)),
              f"max {_hi(mR_phys):.4f} vs {m.m_max}"),
        Check("pitch within stops",
              bool(np.all((cols["beta"] >= a.beta_min - tol) & (cols["beta"] <= a.beta_max + tol))),
              f"range [{_lo(cols['beta']):.3f}, {_hi(cols['beta']):.3f}] deg"),
        Check("energy residual below 0.1% of base power (every step)",
              res.max_residual < 1e-3 * base.s_base,
              f"max {res.max_residual:.3e} W vs {1e-3 * base.s_base:.3e} W"),
        Check("dc link above loss-of-regulation level",
              bool(np.all(cols["v_dc"] > g.v_dc_min_pu * m.v_dc_nom)),
              f"min {_lo(cols['v_dc']):.1f} V"),
    ]
    return checks


def conduction_intervals(cols: dict) -> list[tuple[float, float, float, float]]:
    """(start, end, min slip, max slip) of each rectifier conduction interval."""
    on = cols["pgsr_conducting"] > 0.5
    t, s = cols["t"], cols["slip"]
    out = []
    k = 0
    n = len(t)
    while k < n:
        if on[k]:
            j = k
            while j + 1 < n and on[j + 1]:
                j += 1
            out.append((float(t[k]), float(t[j]), float(s[k:j + 1].min()), float(s[k:j + 1].max())))
            k = j + 1
        else:
            k += 1
    return out


def settling_time(t: np.ndarray, x: np.ndarray, after: float, band: float = SETTLE_BAND) -> float | None:
    """Time after ``after`` at which ``x`` last leaves the band around its final value."""
    if x.size == 0:
        return None
    final = x[-1]
    width = band * max(abs(final), 1e-12)
    outside = np.nonzero(np.abs(x - final) > width)[0]
    if outside.size == 0:
        return 0.0
    last = t[min(outside[-1] + 1, t.size - 1)]
    return max(0.0, float(last - after))


def summary_text(res: RunResult, cfg: Config, checks: list[Check]) -> str:
    m = cfg.machine
    cols = res.trace.columns()
    base = per_unit_base(cfg)
    t_rated = rated_torque(cfg.drivetrain, m.poles, cfg.control.omega_max)
    lines = [f"scenario: {res.scenario.name}",
             f"steps: {res.steps}, recorded rows: {len(cols['t'])}",
             f"status: {'fault: ' + res.fault if res.fault else 'completed'}", ""]
    if cols["t"].size:
        lines.append(f"min |v_f|: {cols['v_f_mag'].min():.1f} V ({cols['v_f_mag'].min() / m.v_f_nom:.3f} pu)")
        lines.append(f"v_dc range: [{cols['v_dc'].min():.1f}, {cols['v_dc'].max():.1f}] V")
        lines.append(f"max |i_R|: {cols['i_R_mag'].max():.1f} A ({cols['i_R_mag'].max() / m.i_rated:.3f} pu)")
        lines.append(f"max |T_e|: {np.abs(cols['T_e']).max():.0f} N*m "
                     f"({np.abs(cols['T_e']).max() / t_rated:.3f} of rated {t_rated:.0f})")
        lines.append(f"|lam_s| range: [{cols['lam_s_mag'].min():.3f}, {cols['lam_s_mag'].max():.3f}] Wb")
        lines.append(f"max |P_SGSC + P_PGSR|: "
                     f"{np.abs(cols['P_sgsc'] + cols['P_pgsr']).max() / base.s_base:.4f} pu")
        intervals = conduction_intervals(cols)
        lines.append("")
        lines.append("rectifier conduction intervals (start, end, slip range):")
        if not intervals:
            lines.append("  none")
        for a_, b_, s0, s1 in intervals:
            lines.append(f"  {a_:.4f} s - {b_:.4f} s, slip [{s0:+.4f}, {s1:+.4f}]")
        last_event = max([0.0] + res.scenario.boundaries())
        lines.append("")
        lines.append(f"settling after t = {last_event:.4f} s (last time outside +-{SETTLE_BAND:.0%} of final):")
        for name in ("v_dc", "lam_s_mag", "omega_r", "i_R_mag"):
            st = settling_time(cols["t"], cols[name], last_event)
            lines.append(f"  {name}: {'n/a' if st is None else f'{st:.4f} s'}")
        lines.append("")
        lines.append("channel extrema (min, max, final):")
        for name, (lo, hi, fin) in res.summary().items():
            lines.append(f"  {name:16s} {lo:+.6e} {hi:+.6e} {fin:+.6e}")
    lines.append("")
    lines.append("invariant checks:")
    for c in checks:
        lines.append(f"  [{'PASS' if c.ok else 'FAIL'}] {c.name}: {c.detail}")
    return "\n".join(lines) + "\n"


def _simulate_one(job) -> tuple[str, int, str]:
    paths, overrides, out_root, full_rate = job
    try:
        cfg = parse_config(*paths, overrides=overrides)
        res = run_config(cfg, full_rate=full_rate)
    except ConfigError as exc:
        return str(paths[-1]), EXIT_CONFIG, f"config error: {exc}"
    out = Path(out_root) / cfg.scenario.name
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective-config.txt").write_text(emit_config(cfg), encoding="utf-8")
    res.trace.to_csv(out / "trace.csv")
    checks = check_invariants(res, cfg)
    (out / "summary.txt").write_text(summary_text(res, cfg, checks), encoding="utf-8")
    if res.fault is not None:
        return str(out), EXIT_FAULT, f"integration fault: {res.fault}"
    failed = [c.name for c in checks if not c.ok]
    if failed:
        return str(out), EXIT_INVARIANT, "invariant failure: " + "; ".join(failed)
    return str(out), EXIT_OK, "ok"


# --- commands ---------------------------------------------------------------

def _overrides(args) -> dict:
    ov = {}
    if getattr(args, "dt", None) is not None:
        if not 0 < args.dt <= DT_MAX:
            raise ConfigError(f"--dt must lie in (0, {DT_MAX}]")
        ov["scenario.dt"] = args.dt
    if getattr(args, "record_every", None) is not None:
        ov["scenario.record_every"] = args.record_every
    return ov


def _config_paths(args) -> list[Path]:
    return [Path(p) for p in (args.config or [])]


def cmd_simulate(args) -> int:
    try:
        base = _config_paths(args)
        jobs = [([*base, resolve_scenario(s)], _overrides(args), args.out, args.full_rate)
                for s in args.scenario]
        for paths, ov, _, _ in jobs:
            parse_config(*paths, overrides=ov)  # fail fast before any work starts
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_simulate_one, jobs))
    else:
        results = [_simulate_one(j) for j in jobs]
    worst = EXIT_OK
    for where, code, msg in results:
        print(f"{where}: {msg}", file=sys.stderr if code else sys.stdout)
        worst = max(worst, code)
    return worst


def _fmt(label: str, val: float, base: float, unit: str) -> str:
    return f"  {label:28s} {val:14.2f} {unit:4s} {val / base:10.4f} pu"


def cmd_steady_state(args) -> int:
    try:
        cfg = parse_config(*_config_paths(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    m, a, g = cfg.machine, cfg.drivetrain, cfg.control
    base = per_unit_base(cfg)
    out = []
    try:
        if args.slip is not None:
            s = args.slip
            if s >= 1.0:
                raise SingularSlipError("slip must be below 1")
            w_r = (1.0 - s) * m.omega_e
            P_m = scheduled_power(w_r, m, a, g)
            eq = None if args.sgsc_only else equilibrium_at_speed(w_r, m, a, g)
        else:
            eq = equilibrium_solve(args.wind, m, a, g)
            w_r = eq.plant.omega_r
            s = 1.0 - w_r / m.omega_e
            P_m = scheduled_power(w_r, m, a, g)
            out.append(f"wind {args.wind} m/s: rotor speed {w_r:.3f} rad/s, "
                       f"pitch {eq.plant.beta:.3f} deg ({'active' if eq.pitch_active else 'inactive'})")
        split = power_split(s, P_m)
    except (SingularSlipError, EquilibriumError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.append(f"slip {s:+.4f} (rotor speed {w_r:.3f} rad/s electrical)")
    out.append("lossless power split:")
    out.append(_fmt("P_m", split.P_m, base.s_base, "W"))
    out.append(_fmt("P_s", split.P_s, base.s_base, "W"))
    out.append(_fmt("P_MSC", split.P_MSC, base.s_base, "W"))
    out.append(_fmt("P_SGSC + P_PGSR", split.P_SGSC_plus_PGSR, base.s_base, "W"))
    u = uupf_operating_point(s, P_m, m.v_f_nom, m)
    out.append("series-converter-only unity power factor solution (farm voltage on the Q axis):")
    out.append(_fmt("v_Qf", u.v_Qf, base.v_base, "V"))
    out.append(_fmt("v_Qs", u.v_Qs, base.v_base, "V"))
    out.append(_fmt("v_Qi", u.v_Qi, base.v_base, "V"))
    out.append(_fmt("i_Qf", u.i_Qf, base.i_base, "A"))
    out.append(_fmt("|lam_s|", abs(u.lam_s), base.flux_base, "Wb"))
    out.append(_fmt("|i_R|", abs(u.i_R), base.i_base, "A"))
    out.append(f"  |m_i| {abs(u.m_i):.4f}, |m_R| {abs(u.m_R):.4f}")
    if u.feasible:
        out.append("  feasible within the modulation ceilings")
    else:
        for r in u.reasons:
            out.append(f"  WARNING infeasible: {r}")
    if eq is not None:
        p = eq.plant
        i_s, i_R = currents(p.lam_s, p.lam_R, m)
        out.append("closed-loop equilibrium (series converter plus rectifier):")
        out.append(_fmt("v_dc", p.v_dc, m.v_dc_nom, "V"))
        out.append(_fmt("|lam_s|", abs(p.lam_s), base.flux_base, "Wb"))
        out.append(_fmt("|i_s|", abs(i_s), base.i_base, "A"))
        out.append(_fmt("|i_R|", abs(i_R), base.i_base, "A"))
        out.append(_fmt("|i_re|", abs(p.i_re), base.i_base, "A"))
        out.append(_fmt("T_e", torque(p.lam_s, i_R, m), base.torque_base, "N*m"))
        out.append(f"  |m_i| {abs(eq.m_i):.4f}, |m_R| {abs(eq.m_R):.4f}, "
                   f"rectifier {'conducting' if p.pgsr_conducting else 'blocked'}")
    print("\n".join(out))
    return EXIT_OK


def cmd_power_curve(args) -> int:
    try:
        cfg = parse_config(*_config_paths(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.points < 2:
        print("config error: --points must be at least 2", file=sys.stderr)
        return EXIT_CONFIG
    m = cfg.machine
    base = per_unit_base(cfg)
    # operating speed band, 2/3 to 4/3 of synchronous speed
    omegas = np.linspace(m.omega_e * 2.0 / 3.0, m.omega_e * 4.0 / 3.0, args.points)
    rows = power_curve(omegas, m, cfg.drivetrain, cfg.control)
    head = "omega_r,slip,P_m,P_s,P_conv,P_m_pu,P_s_pu,P_conv_pu"
    body = [",".join(format(float(v), ".17g") for v in
                     (r.omega_r, r.slip, r.P_m, r.P_s, r.P_conv, r.P_m / base.s_base,
                      r.P_s / base.s_base, r.P_conv / base.s_base))
            for r in rows]
    text = "\n".join([head, *body]) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_validate_config(args) -> int:
    try:
        paths = _config_paths(args) + [resolve_scenario(s) for s in (args.scenario or [])]
        cfg = parse_config(*paths)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(emit_config(cfg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unified-dfig",
                                 description="Unified DFIG wind-turbine simulator and analyzer.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", action="append", metavar="FILE",
                       help="configuration file (repeatable; later files override earlier ones)")

    p = sub.add_parser("simulate", help="run one or more scenarios")
    p.add_argument("scenario", nargs="+", help="scenario file or bundled scenario name")
    add_config(p)
    p.add_argument("--out", default="runs", help="output root; one directory per scenario")
    p.add_argument("--dt", type=float, help="integrator step, s")
    p.add_argument("--record-every", type=int, help="steps per recorded row")
    p.add_argument("--full-rate", action="store_true", help="record every step")
    p.add_argument("--jobs", type=int, default=1, help="scenarios run in parallel")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("steady-state", help="operating-point report at a slip or wind speed")
    add_config(p)
    grp = p.add_mutually_exclusive_group(required=True)
    grp.add_argument("--slip", type=float)
    grp.add_argument("--wind", type=float, help="m/s")
    p.add_argument("--sgsc-only", action="store_true",
                   help="analyse the series converter alone (no rectifier)")
    p.set_defaults(func=cmd_steady_state)

    p = sub.add_parser("power-curve", help="power split across the speed band as CSV")
    add_config(p)
    p.add_argument("--points", type=int, default=41)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_power_curve)

    p = sub.add_parser("validate-config", help="check configuration and print the effective values")
    add_config(p)
    p.add_argument("scenario", nargs="*", help="scenario files layered after the configs")
    p.set_defaults(func=cmd_validate_config)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
