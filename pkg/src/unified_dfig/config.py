"""Run configuration: INI-style text files mapped onto the model dataclasses.

Format: ``[section]`` headers, ``key = value`` lines and ``#`` comments.
Sections are ``[machine]``, ``[drivetrain]``, ``[control]``, ``[scenario]``
and any number of ``[event <label>]`` sections describing scenario events.
Several files may be layered; later files override earlier ones key by key
and every value remembers where it came from.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .control import ControlGains
from .drivetrain import AeroParams
from .machine import MachineParams
from .sim import DT_DEFAULT, Scenario, VoltageSag, WindRamp


class ConfigError(ValueError):
    """Malformed, unknown or out-of-range configuration entry."""


UNITS = {
    "machine": {
        "L_m": "H, magnetizing inductance (T-model, stator referred)",
        "L_ls": "H, stator leakage inductance",
        "L_lr": "H, rotor leakage inductance (stator referred)",
        "R_s": "ohm, stator resistance",
        "R_r": "ohm, rotor resistance (stator referred)",
        "N_rs": "rotor:stator turns ratio",
        "poles": "pole count",
        "omega_e": "rad/s, farm electrical frequency",
        "C_dc": "F, dc-link capacitance",
        "v_f_nom": "V pk, nominal farm voltage",
        "v_dc_nom": "V, nominal dc-link voltage",
        "i_rated": "A pk, rated current",
        "m_max": "converter modulation magnitude ceiling",
        "L_re": "H, rectifier ac-side inductance",
        "k_rect": "rectifier reflected-voltage ratio",
        "pgsr_pickup": "fraction of v_dc_nom at which the rectifier starts conducting",
        "pgsr_i_eps": "A, rectifier direction regularisation current",
    },
    "drivetrain": {
        "rho": "kg/m^3, air density",
        "R_b": "m, blade radius",
        "psi_opt": "optimum tip-speed ratio",
        "cp_max": "peak power coefficient",
        "K_gb": "gearbox ratio",
        "omega_beta": "1/s, pitch actuator bandwidth",
        "beta_min": "deg, pitch lower stop",
        "beta_max": "deg, pitch upper stop",
        "beta_rate": "deg/s, pitch rate limit",
        "J_m": "kg m^2, inertia referred to the generator shaft",
    },
    "control": {
        "K_pvdc": "rad/s, dc-link loop rate",
        "K_piR_pu": "pu of base impedance, rotor-current gain",
        "K_plam": "rad/s, stator-flux loop rate",
        "K_pw": "deg per rad/s, speed-loop proportional gain",
        "K_iw": "deg per rad, speed-loop integral gain",
        "K_aw": "1/s, anti-windup back-calculation gain",
        "omega_c": "rad/s, flux-estimator leak",
        "i_floor_pu": "pu current, dc-link command guard",
        "lam_floor_pu": "pu flux, rotor-current command guard",
        "v_dc_min_pu": "pu, dc-link loss-of-regulation threshold",
        "v_dc_ref": "V, dc-link voltage reference",
        "q_f_ref": "var, farm reactive-power reference",
        "reactive_sign": "+1 or -1, sign applied to the measured SGSC reactive power",
        "speed_ref": "rad/s electrical, rotor-speed reference",
        "speed_ref_max": "rad/s electrical, rotor-speed reference ceiling",
        "omega_knee": "rad/s electrical, end of the cube-law torque region",
        "omega_max": "rad/s electrical, speed at which rated torque is reached",
        "est_R_s": "estimate/true ratio for R_s",
        "est_R_R": "estimate/true ratio for R_R",
        "est_L_s": "estimate/true ratio for L_s",
        "est_L_L": "estimate/true ratio for L_L",
        "est_C_dc": "estimate/true ratio for C_dc",
        "ff_jump": "pu flux, largest command step differentiated into feedforward",
        "ff_bandwidth": "rad/s, low-pass corner of the flux-command feedforward",
        "i_R_limit_pu": "pu current, rotor-current command ceiling",
        "sgsc_headroom": "fraction of the SGSC ceiling usable by a steady flux command",
    },
    "scenario": {
        "name": "run label",
        "duration": "s",
        "wind": "m/s, initial wind speed",
        "dt": "s, integrator step",
        "record_every": "steps per recorded row",
        "hold_slip": "slip at which a dynamometer holds the shaft, or none for free rotor",
    },
}

EVENT_KEYS = {
    "wind_ramp": {"time": "s", "target": "m/s", "ramp": "s"},
    "voltage_sag": {"time": "s", "depth": "pu of nominal farm voltage", "duration": "s"},
}

_SECTION_TYPES = {"machine": MachineParams, "drivetrain": AeroParams, "control": ControlGains}


def _init_fields(cls) -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(cls) if f.init}


@dataclass
class ScenarioSettings:
    name: str = "scenario"
    duration: float = 1.0
    wind: float = 12.0
    dt: float = DT_DEFAULT
    record_every: int = 25
    hold_slip: float | None = None


@dataclass
class EventSpec:
    label: str
    kind: str
    values: dict


@dataclass
class Config:
    machine: MachineParams = field(default_factory=MachineParams)
    drivetrain: AeroParams = field(default_factory=AeroParams)
    control: ControlGains = field(default_factory=ControlGains)
    scenario: ScenarioSettings = field(default_factory=ScenarioSettings)
    events: list[EventSpec] = field(default_factory=list)
    provenance: dict[str, str] = field(default_factory=dict, compare=False)

    def build_scenario(self) -> Scenario:
        evs = []
        for e in self.events:
            v = e.values
            if e.kind == "wind_ramp":
                evs.append(WindRamp(v["time"], v["target"], v["ramp"]))
            else:
                evs.append(VoltageSag(v["time"], v["depth"], v["duration"]))
        evs.sort(key=lambda e: e.time)
        sc = self.scenario
        try:
            return Scenario(sc.name, sc.duration, sc.wind, evs, sc.dt, sc.record_every,
                            hold_speed=sc.hold_slip is not None)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def _parse_value(raw: str, ftype, key: str):
    text = raw.strip()
    ftype = str(ftype)
    try:
        if "None" in ftype:
            if text.lower() == "none":
                return None
            return float(text)
        if ftype in ("int", "<class 'int'>"):
            return int(text)
        if ftype in ("str", "<class 'str'>"):
            return text
        if ftype in ("bool", "<class 'bool'>"):
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        val = float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse value {text!r}") from None
    return val


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _read(path: Path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                   inline_comment_prefixes=("#",), delimiters=("=",),
                                   strict=True, empty_lines_in_values=False)
    cp.optionxform = str  # keys are case sensitive
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        cp.read_string(text, source=str(path))
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: key outside any [section]") from None
    except configparser.ParsingError as exc:
        lines = ", ".join(str(n) for n, _ in exc.errors)
        raise ConfigError(f"{path}:{lines}: syntax error") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cp


def parse_config(*paths, overrides: dict | None = None) -> Config:
    """Layer config files (and ``section.key`` overrides) over the defaults."""
    values: dict[str, dict[str, object]] = {s: {} for s in (*_SECTION_TYPES, "scenario")}
    prov: dict[str, str] = {}
    events: dict[str, tuple[str, dict]] = {}
    types = {s: {k: f.type for k, f in _init_fields(cls).items()} for s, cls in _SECTION_TYPES.items()}
    types["scenario"] = {k: f.type for k, f in _init_fields(ScenarioSettings).items()}

    for path in paths:
        path = Path(path)
        cp = _read(path)
        for sec in cp.sections():
            head = sec.split(None, 1)
            if head[0] == "event":
                if len(head) != 2:
                    raise ConfigError(f"{path}: event section needs a label, e.g. [event sag]")
                label = head[1].strip()
                items = dict(cp.items(sec))
                kind = items.pop("kind", None)
                if kind is None and label in events:
                    kind = events[label][0]
                if kind not in EVENT_KEYS:
                    raise ConfigError(f"[event {label}] kind must be one of {sorted(EVENT_KEYS)}")
                old = events.get(label, (kind, {}))[1] if label in events and events[label][0] == kind else {}
                vals = dict(old)
                for k, raw in items.items():
                    if k not in EVENT_KEYS[kind]:
                        raise ConfigError(f"[event {label}] unknown key {k!r}")
                    vals[k] = _parse_value(raw, float, f"event {label}.{k}")
                    prov[f"event {label}.{k}"] = str(path)
                events[label] = (kind, vals)
                continue
            if sec not in values:
                raise ConfigError(f"{path}: unknown section [{sec}]")
            for k, raw in cp.items(sec):
                if k not in types[sec]:
                    raise ConfigError(f"{path}: unknown key {sec}.{k}")
                values[sec][k] = _parse_value(raw, types[sec][k], f"{sec}.{k}")
                prov[f"{sec}.{k}"] = str(path)

    for dotted, v in (overrides or {}).items():
        sec, _, k = dotted.partition(".")
        if sec not in values or k not in types[sec]:
            raise ConfigError(f"unknown key {dotted}")
        values[sec][k] = v
        prov[dotted] = "command line"

    built = {}
    for sec, cls in _SECTION_TYPES.items():
        try:
            built[sec] = cls(**values[sec])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    sc = ScenarioSettings(**values["scenario"])

    evs = []
    for label, (kind, vals) in events.items():
        missing = [k for k in EVENT_KEYS[kind] if k not in vals]
        if missing:
            raise ConfigError(f"[event {label}] missing keys: {', '.join(missing)}")
        evs.append(EventSpec(label, kind, vals))
    evs.sort(key=lambda e: (e.values["time"], e.label))

    for sec, fields_ in types.items():
        for k in fields_:
            prov.setdefault(f"{sec}.{k}", "default")
    cfg = Config(built["machine"], built["drivetrain"], built["control"], sc, evs, prov)
    _validate_scenario(cfg)
    return cfg


def _validate_scenario(cfg: Config) -> None:
    sc = cfg.scenario
    if sc.hold_slip is not None and not math.isfinite(sc.hold_slip):
        raise ConfigError("scenario.hold_slip must be finite or none")
    if sc.hold_slip is not None and sc.hold_slip >= 1.0:
        raise ConfigError("scenario.hold_slip must be below 1")
    for e in cfg.events:
        if e.kind == "voltage_sag" and not 0.0 <= e.values["depth"] <= 1.0:
            raise ConfigError(f"[event {e.label}] depth {e.values['depth']} outside [0, 1]")
    cfg.build_scenario()


def emit_config(cfg: Config) -> str:
    """Effective configuration as parseable text, with units and provenance."""
    out = ["# effective configuration; values are exact (round-trip) representations", ""]
    objs = {"machine": cfg.machine, "drivetrain": cfg.drivetrain, "control": cfg.control,
            "scenario": cfg.scenario}
    for sec, obj in objs.items():
        out.append(f"[{sec}]")
        names = list(UNITS[sec])
        for k in names:
            v = getattr(obj, k)
            src = cfg.provenance.get(f"{sec}.{k}", "default")
            out.append(f"{k} = {_format_value(v)}  # {UNITS[sec][k]}; from {src}")
        out.append("")
    for e in cfg.events:
        out.append(f"[event {e.label}]")
        out.append(f"kind = {e.kind}")
        for k, unit in EVENT_KEYS[e.kind].items():
            src = cfg.provenance.get(f"event {e.label}.{k}", "default")
            out.append(f"{k} = {_format_value(e.values[k])}  # {unit}; from {src}")
        out.append("")
    return "\n".join(out)


def _check_units_cover_fields() -> None:
    for sec, cls in (*_SECTION_TYPES.items(), ("scenario", ScenarioSettings)):
        names = set(_init_fields(cls))
        if names != set(UNITS[sec]):
            raise RuntimeError(f"UNITS table out of sync for [{sec}]: {names ^ set(UNITS[sec])}")


_check_units_cover_fields()
