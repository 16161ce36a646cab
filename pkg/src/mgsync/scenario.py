"""Scenario schema, YAML parsing/serialisation and ``--set`` overrides."""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .comm_graph import CommGraph, Edge
from .controller import ControllerConfig
from .dg_agent import DGParams
from .network import Line, Load, Network, NetworkError
from .relay import RelayConfig, dwell_time, thresholds_for_rating

EVENT_KINDS = ("set_mode", "load_step", "set_link_delay", "set_inertia", "close_switch_on_relay")


class ScenarioError(ValueError):
    pass


@dataclass
class DGConfig:
    id: int
    bus: int
    params: DGParams
    w_set0: Optional[float] = None  # rad/s
    v_set0: Optional[float] = None  # V
    source_impedance: complex = 0j


@dataclass
class GridConfig:
    f_hz: float = 60.0
    v_pu: float = 1.01
    angle_deg: float = 0.0


@dataclass
class ConsensusConfig:
    pin_freq: float = 1.0
    pin_volt: float = 1.0
    comm_period: Optional[float] = None  # None: publish every step
    ref_delay: float = 0.0  # controller -> leader links


@dataclass
class CalibrationTargets:
    f_hz: float = 59.9
    v_pcc_pu: float = 0.975
    phase_at_enable_deg: Optional[float] = None


@dataclass
class Event:
    time: float
    kind: str
    args: dict = field(default_factory=dict)


@dataclass
class Scenario:
    name: str
    duration: float
    dt: float
    network: Network
    dgs: list[DGConfig]
    graph: CommGraph
    controller: ControllerConfig
    relay: RelayConfig
    grid: GridConfig = field(default_factory=GridConfig)
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)
    calibration: CalibrationTargets = field(default_factory=CalibrationTargets)
    events: list[Event] = field(default_factory=list)
    decimate: int = 10
    overrides: dict = field(default_factory=dict)

    @property
    def enable_time(self) -> Optional[float]:
        for ev in self.events:
            if ev.kind == "set_mode" and ev.args.get("on"):
                return ev.time
        return None

    @property
    def is_calibrated(self) -> bool:
        return all(d.w_set0 is not None and d.v_set0 is not None for d in self.dgs)


# ----------------------------------------------------------------------------
# parsing

_PI_RE = re.compile(r"^\s*([0-9.]+)?\s*\*?\s*pi\s*(?:/\s*([0-9.]+))?\s*$")


def _num(value, path: str) -> float:
    if isinstance(value, bool):
        raise ScenarioError(f"{path}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        out = float(value)
    elif isinstance(value, str):
        m = _PI_RE.match(value)
        if not m:
            try:
                out = float(value)
            except ValueError:
                raise ScenarioError(f"{path}: cannot read {value!r} as a number") from None
        else:
            out = float(m.group(1) or 1.0) * math.pi / float(m.group(2) or 1.0)
    else:
        raise ScenarioError(f"{path}: expected a number, got {value!r}")
    if not math.isfinite(out):
        raise ScenarioError(f"{path}: value must be finite")
    return out


def _int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"{path}: expected an integer, got {value!r}")
    return value


def _flag(value, path: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("on", "off", "true", "false"):
        return value.lower() in ("on", "true")
    raise ScenarioError(f"{path}: expected on/off, got {value!r}")


def _section(raw, path: str, allowed: set, required: set = frozenset()) -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: expected a mapping")
    unknown = set(raw) - allowed
    if unknown:
        raise ScenarioError(f"{path}: unknown key(s) {sorted(unknown)}")
    missing = set(required) - set(raw)
    if missing:
        raise ScenarioError(f"{path}: missing key(s) {sorted(missing)}")
    return raw


def _positive(x: float, path: str) -> float:
    if not x > 0:
        raise ScenarioError(f"{path}: must be positive, got {x}")
    return x


def scenario_from_dict(raw: dict) -> Scenario:
    top = _section(raw, "scenario", {"name", "duration", "dt", "decimate", "network", "dgs", "graph",
                                     "consensus", "controller", "relay", "grid", "calibration",
                                     "events", "overrides"},
                   {"duration", "dt", "network", "dgs", "graph"})
    duration = _positive(_num(top["duration"], "duration"), "duration")
    dt = _positive(_num(top["dt"], "dt"), "dt")
    decimate = _int(top.get("decimate", 10), "decimate")
    if decimate < 1:
        raise ScenarioError("decimate: must be >= 1")

    nraw = _section(top["network"], "network", {"buses", "pcc_bus", "grid_bus", "lines", "loads"},
                    {"buses", "pcc_bus", "grid_bus", "lines"})
    buses = [_int(b, f"network.buses[{k}]") for k, b in enumerate(nraw["buses"])]
    lines = []
    for k, ln in enumerate(nraw["lines"]):
        p = f"network.lines[{k}]"
        ln = _section(ln, p, {"from", "to", "r_per_km", "x_per_km", "length_ft"},
                      {"from", "to", "r_per_km", "x_per_km", "length_ft"})
        try:
            lines.append(Line(_int(ln["from"], p + ".from"), _int(ln["to"], p + ".to"),
                              _num(ln["r_per_km"], p + ".r_per_km"), _num(ln["x_per_km"], p + ".x_per_km"),
                              _num(ln["length_ft"], p + ".length_ft")))
        except NetworkError as exc:
            raise ScenarioError(f"{p}: {exc}") from None
    loads = []
    for k, ld in enumerate(nraw.get("loads") or []):
        p = f"network.loads[{k}]"
        ld = _section(ld, p, {"bus", "p", "q"}, {"bus", "p", "q"})
        bus = _int(ld["bus"], p + ".bus")
        if bus not in buses:
            raise ScenarioError(f"{p}.bus: load on unknown bus {bus}")
        loads.append(Load(bus, _num(ld["p"], p + ".p"), _num(ld["q"], p + ".q")))

    dgs = []
    for k, d in enumerate(top["dgs"]):
        p = f"dgs[{k}]"
        d = _section(d, p, {"id", "bus", "kP", "kQ", "p_max", "q_max", "inertia_tau", "w_set0", "v_set0",
                            "source_impedance"}, {"id", "bus", "kP", "kQ"})
        try:
            params = DGParams(kP=_num(d["kP"], p + ".kP"), kQ=_num(d["kQ"], p + ".kQ"),
                              p_max=_num(d.get("p_max", 0.0), p + ".p_max"),
                              q_max=_num(d.get("q_max", 0.0), p + ".q_max"),
                              inertia_tau=_num(d.get("inertia_tau", 0.0), p + ".inertia_tau"))
        except ValueError as exc:
            raise ScenarioError(f"{p}: {exc}") from None
        zs = d.get("source_impedance", [0.0, 0.0])
        if not isinstance(zs, list) or len(zs) != 2:
            raise ScenarioError(f"{p}.source_impedance: expected [r, x] in ohms")
        dgs.append(DGConfig(
            id=_int(d["id"], p + ".id"), bus=_int(d["bus"], p + ".bus"), params=params,
            w_set0=None if d.get("w_set0") is None else _num(d["w_set0"], p + ".w_set0"),
            v_set0=None if d.get("v_set0") is None else _num(d["v_set0"], p + ".v_set0"),
            source_impedance=complex(_num(zs[0], p + ".source_impedance[0]"),
                                     _num(zs[1], p + ".source_impedance[1]"))))
    ids = [d.id for d in dgs]
    if sorted(ids) != list(range(1, len(dgs) + 1)):
        raise ScenarioError(f"dgs: ids must be 1..{len(dgs)}, got {ids}")
    dgs.sort(key=lambda d: d.id)
    for d in dgs:
        if d.bus not in buses:
            raise ScenarioError(f"dgs[{d.id - 1}].bus: DG {d.id} on unknown bus {d.bus}")
    try:
        network = Network(buses, lines, loads, {d.id: d.bus for d in dgs}, _int(nraw["pcc_bus"], "network.pcc_bus"),
                          _int(nraw["grid_bus"], "network.grid_bus"), False,
                          {d.id: d.source_impedance for d in dgs if d.source_impedance != 0})
    except NetworkError as exc:
        raise ScenarioError(f"network: {exc}") from None

    graw = _section(top["graph"], "graph", {"edges", "leaders"}, {"edges", "leaders"})
    edges, delays = [], {}
    for k, e in enumerate(graw["edges"]):
        p = f"graph.edges[{k}]"
        if isinstance(e, list):
            if len(e) != 2:
                raise ScenarioError(f"{p}: expected [from, to]")
            e = {"from": e[0], "to": e[1]}
        e = _section(e, p, {"from", "to", "weight", "delay"}, {"from", "to"})
        s, t = _int(e["from"], p + ".from"), _int(e["to"], p + ".to")
        edges.append(Edge(s, t, _num(e.get("weight", 1.0), p + ".weight")))
        if e.get("delay", 0.0):
            delays[(s, t)] = _num(e["delay"], p + ".delay")
    leaders = [_int(x, "graph.leaders") for x in graw["leaders"]]
    try:
        graph = CommGraph(len(dgs), tuple(edges), frozenset(leaders), delays)
    except ValueError as exc:
        raise ScenarioError(f"graph: {exc}") from None

    craw = _section(top.get("consensus"), "consensus", {"pin_freq", "pin_volt", "comm_period", "ref_delay"})
    consensus = ConsensusConfig(
        pin_freq=_num(craw.get("pin_freq", 1.0), "consensus.pin_freq"),
        pin_volt=_num(craw.get("pin_volt", 1.0), "consensus.pin_volt"),
        comm_period=None if craw.get("comm_period") is None else
        _positive(_num(craw["comm_period"], "consensus.comm_period"), "consensus.comm_period"),
        ref_delay=_num(craw.get("ref_delay", 0.0), "consensus.ref_delay"))
    if consensus.pin_freq < 0 or consensus.pin_volt < 0 or consensus.ref_delay < 0:
        raise ScenarioError("consensus: gains and delays must be >= 0")

    ctl = _section(top.get("controller"), "controller", {"sample_rate", "kp_phase", "ki_phase", "kp_volt",
                                                          "ki_volt", "w_ref_band_hz", "v_ref_band"})
    defaults = ControllerConfig()
    try:
        controller = ControllerConfig(
            mode=False,
            sample_rate=_num(ctl.get("sample_rate", defaults.sample_rate), "controller.sample_rate"),
            kp_phase=_num(ctl.get("kp_phase", defaults.kp_phase), "controller.kp_phase"),
            ki_phase=_num(ctl.get("ki_phase", defaults.ki_phase), "controller.ki_phase"),
            kp_volt=_num(ctl.get("kp_volt", defaults.kp_volt), "controller.kp_volt"),
            ki_volt=_num(ctl.get("ki_volt", defaults.ki_volt), "controller.ki_volt"),
            w_ref_band=2 * math.pi * _num(ctl.get("w_ref_band_hz", 0.5), "controller.w_ref_band_hz"),
            v_ref_band=_num(ctl.get("v_ref_band", defaults.v_ref_band), "controller.v_ref_band"))
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None

    rraw = _section(top.get("relay"), "relay", {"rating_kva", "df_max", "dv_max", "dphi_max", "dwell"})
    try:
        if "rating_kva" in rraw:
            if set(rraw) - {"rating_kva"}:
                raise ScenarioError("relay: give either rating_kva or explicit thresholds, not both")
            relay = thresholds_for_rating(_num(rraw["rating_kva"], "relay.rating_kva"))
        elif rraw:
            df = _num(rraw["df_max"], "relay.df_max")
            dphi = _num(rraw["dphi_max"], "relay.dphi_max")
            relay = RelayConfig(df, _num(rraw["dv_max"], "relay.dv_max"), dphi,
                                _num(rraw.get("dwell", dwell_time(df, dphi)), "relay.dwell"))
        else:
            relay = thresholds_for_rating(5000.0)
    except KeyError as exc:
        raise ScenarioError(f"relay: missing key {exc}") from None
    except ValueError as exc:
        raise ScenarioError(f"relay: {exc}") from None

    gr = _section(top.get("grid"), "grid", {"f_hz", "v_pu", "angle_deg"})
    grid = GridConfig(_positive(_num(gr.get("f_hz", 60.0), "grid.f_hz"), "grid.f_hz"),
                      _positive(_num(gr.get("v_pu", 1.01), "grid.v_pu"), "grid.v_pu"),
                      _num(gr.get("angle_deg", 0.0), "grid.angle_deg"))

    cal = _section(top.get("calibration"), "calibration", {"f_hz", "v_pcc_pu", "phase_at_enable_deg"})
    calibration = CalibrationTargets(
        _num(cal.get("f_hz", 59.9), "calibration.f_hz"),
        _num(cal.get("v_pcc_pu", 0.975), "calibration.v_pcc_pu"),
        None if cal.get("phase_at_enable_deg") is None else
        _num(cal["phase_at_enable_deg"], "calibration.phase_at_enable_deg"))

    events = []
    for k, ev in enumerate(top.get("events") or []):
        p = f"events[{k}]"
        if not isinstance(ev, dict) or "t" not in ev:
            raise ScenarioError(f"{p}: expected a mapping with 't' and one event key")
        kinds = [key for key in ev if key != "t"]
        if len(kinds) != 1 or kinds[0] not in EVENT_KINDS:
            raise ScenarioError(f"{p}: expected exactly one of {list(EVENT_KINDS)}, got {kinds}")
        kind = kinds[0]
        t = _num(ev["t"], p + ".t")
        if t < 0:
            raise ScenarioError(f"{p}.t: event time must be >= 0")
        body = ev[kind]
        q = f"{p}.{kind}"
        if kind == "set_mode":
            args = {"on": _flag(body, q)}
        elif kind == "close_switch_on_relay":
            args = {"enabled": _flag(body, q)}
        elif kind == "load_step":
            body = _section(body, q, {"bus", "p", "q"}, {"bus", "p", "q"})
            bus = _int(body["bus"], q + ".bus")
            if bus not in buses:
                raise ScenarioError(f"{q}.bus: load step on unknown bus {bus}")
            args = {"bus": bus, "p": _num(body["p"], q + ".p"), "q": _num(body["q"], q + ".q")}
        elif kind == "set_link_delay":
            body = _section(body, q, {"from", "to", "delay"}, {"from", "to", "delay"})
            s, d = _int(body["from"], q + ".from"), _int(body["to"], q + ".to")
            if not any(e.src == s and e.dst == d for e in graph.edges):
                raise ScenarioError(f"{q}: no graph edge {s}->{d}")
            delay = _num(body["delay"], q + ".delay")
            if delay < 0:
                raise ScenarioError(f"{q}.delay: must be >= 0")
            args = {"from": s, "to": d, "delay": delay}
        else:  # set_inertia
            body = _section(body, q, {"dg", "tau"}, {"dg", "tau"})
            dg = _int(body["dg"], q + ".dg")
            if dg not in ids:
                raise ScenarioError(f"{q}.dg: unknown DG {dg}")
            tau = _num(body["tau"], q + ".tau")
            if tau < 0:
                raise ScenarioError(f"{q}.tau: must be >= 0")
            args = {"dg": dg, "tau": tau}
        events.append(Event(t, kind, args))
    if any(a.time > b.time for a, b in zip(events, events[1:])):
        raise ScenarioError("events: must be sorted by time")

    return Scenario(name=str(top.get("name", "scenario")), duration=duration, dt=dt, network=network,
                    dgs=dgs, graph=graph, controller=controller, relay=relay, grid=grid,
                    consensus=consensus, calibration=calibration, events=events, decimate=decimate,
                    overrides=dict(top.get("overrides") or {}))


def scenario_to_dict(s: Scenario) -> dict:
    net = s.network
    out: dict[str, Any] = {
        "name": s.name,
        "duration": s.duration,
        "dt": s.dt,
        "decimate": s.decimate,
        "network": {
            "buses": list(net.buses), "pcc_bus": net.pcc_bus, "grid_bus": net.grid_bus,
            "lines": [{"from": ln.from_bus, "to": ln.to_bus, "r_per_km": ln.r_per_km,
                       "x_per_km": ln.x_per_km, "length_ft": ln.length_ft} for ln in net.lines],
            "loads": [{"bus": ld.bus, "p": ld.p, "q": ld.q} for ld in net.loads],
        },
        "dgs": [],
        "graph": {
            "leaders": sorted(s.graph.leaders),
            "edges": [{"from": e.src, "to": e.dst, "weight": e.weight,
                       **({"delay": s.graph.link_delay[(e.src, e.dst)]}
                          if s.graph.link_delay.get((e.src, e.dst)) else {})}
                      for e in s.graph.edges],
        },
        "consensus": {"pin_freq": s.consensus.pin_freq, "pin_volt": s.consensus.pin_volt,
                      "comm_period": s.consensus.comm_period, "ref_delay": s.consensus.ref_delay},
        "controller": {"sample_rate": s.controller.sample_rate, "kp_phase": s.controller.kp_phase,
                       "ki_phase": s.controller.ki_phase, "kp_volt": s.controller.kp_volt,
                       "ki_volt": s.controller.ki_volt,
                       "w_ref_band_hz": s.controller.w_ref_band / (2 * math.pi),
                       "v_ref_band": s.controller.v_ref_band},
        "relay": {"df_max": s.relay.df_max, "dv_max": s.relay.dv_max, "dphi_max": s.relay.dphi_max,
                  "dwell": s.relay.dwell},
        "grid": {"f_hz": s.grid.f_hz, "v_pu": s.grid.v_pu, "angle_deg": s.grid.angle_deg},
        "calibration": {"f_hz": s.calibration.f_hz, "v_pcc_pu": s.calibration.v_pcc_pu,
                        "phase_at_enable_deg": s.calibration.phase_at_enable_deg},
        "events": [],
    }
    for d in s.dgs:
        item = {"id": d.id, "bus": d.bus, "kP": d.params.kP, "kQ": d.params.kQ, "p_max": d.params.p_max,
                "q_max": d.params.q_max, "inertia_tau": d.params.inertia_tau,
                "w_set0": d.w_set0, "v_set0": d.v_set0}
        if d.source_impedance != 0:
            item["source_impedance"] = [d.source_impedance.real, d.source_impedance.imag]
        out["dgs"].append(item)
    for ev in s.events:
        if ev.kind == "set_mode":
            body: Any = "on" if ev.args["on"] else "off"
        elif ev.kind == "close_switch_on_relay":
            body = bool(ev.args["enabled"])
        else:
            body = dict(ev.args)
        out["events"].append({"t": ev.time, ev.kind: body})
    if s.overrides:
        out["overrides"] = dict(s.overrides)
    return out


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False, default_flow_style=None, width=100)


def apply_overrides(raw: dict, overrides: dict[str, str]) -> dict:
    """Apply dotted ``key=value`` overrides to a raw scenario mapping.

    List elements are addressed by 0-based index (``dgs.0.inertia_tau``);
    values are read as YAML scalars or flow collections.
    """
    raw = copy.deepcopy(raw)
    for key, text in overrides.items():
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"override {key}: cannot parse value {text!r}: {exc}") from None
        parts = key.split(".")
        node = raw
        for k, part in enumerate(parts):
            last = k == len(parts) - 1
            if isinstance(node, list):
                try:
                    idx = int(part)
                    node[idx]
                except (ValueError, IndexError):
                    raise ScenarioError(f"override {key}: bad list index {part!r}") from None
                if last:
                    node[idx] = value
                else:
                    node = node[idx]
            elif isinstance(node, dict):
                if last:
                    node[part] = value
                else:
                    if node.get(part) is None:
                        node[part] = {}
                    node = node[part]
            else:
                raise ScenarioError(f"override {key}: {'.'.join(parts[:k])} is not a section")
    return raw


def load_raw(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ScenarioError(f"{path}:{where}: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")
    return raw


def parse_scenario(path: str | Path, overrides: Optional[dict[str, str]] = None) -> Scenario:
    raw = load_raw(path)
    if overrides:
        raw = apply_overrides(raw, overrides)
    try:
        s = scenario_from_dict(raw)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    if overrides:
        s.overrides = {**s.overrides, **overrides}
    return s


def parse_scenario_text(text: str) -> Scenario:
    return scenario_from_dict(yaml.safe_load(text))


def bundled_dir() -> Path:
    return Path(__file__).parent / "scenarios"


def bundled_scenarios() -> list[Path]:
    return sorted(bundled_dir().glob("*.cfg"))


def bundled(name: str) -> Path:
    p = bundled_dir() / (name if name.endswith(".cfg") else name + ".cfg")
    if not p.exists():
        raise ScenarioError(f"no bundled scenario {name!r}")
    return p
