"""Fixed-step closed-loop simulation of the islanded microgrid and its sync controller."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import optimize

from .comm_graph import spanning_tree_roots
from .controller import ControllerState, F_NOMINAL, freq_track, set_mode, volt_track, wrap_angle
from .dg_agent import W_NOMINAL, freq_consensus_input, lag_weight, volt_consensus_input
from .message_bus import MessageBus
from .network import V_BASE, NetworkSolver, SolverError, phasor, switch_voltage
from .relay import RelayState, relay_step
from .scenario import Scenario

log = logging.getLogger(__name__)

CTRL = 0  # message-bus node id of the PCC controller
SYNC_BAND_DEG = 2.0
_EPS = 1e-9


class SimulationError(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# islanded steady states

def _dg_flows(solver: NetworkSolver, theta_rest, vm):
    """Solve the network with DG 1 at angle 0; returns (solution, P kW, Q kVar)."""
    th = np.concatenate([[0.0], theta_rest])
    src = {dg: vm[k] * np.exp(1j * th[k]) for k, dg in enumerate(solver.dg_order)}
    tol, solver.tol = solver.tol, 1e-12
    try:
        sol = solver.solve(src)
    finally:
        solver.tol = tol
    p = np.array([sol.dg_injection[d][0] for d in solver.dg_order])
    q = np.array([sol.dg_injection[d][1] for d in solver.dg_order])
    return sol, p, q


def islanded_equilibrium(solver: NetworkSolver, kP, kQ, w_set, v_set):
    """Steady state of the islanded droop network for given set points.

    Unknowns are the common frequency, the DG angles relative to DG 1 and the
    DG voltage magnitudes. Returns ``(w, theta_rad, v_mag, solution)``.
    """
    kP, kQ = np.asarray(kP, float), np.asarray(kQ, float)
    w_set, v_set = np.asarray(w_set, float), np.asarray(v_set, float)
    n = len(kP)

    def fun(x):
        w, vm = x[0] * W_NOMINAL, x[n:] * V_BASE
        sol, p, q = _dg_flows(solver, x[1:n], vm)
        if not sol.converged:
            return np.full(2 * n, 1e3)
        return np.concatenate([(w_set - kP * p - w) / W_NOMINAL, (v_set - kQ * q - vm) / V_BASE])

    p_load = solver.s_load.real.sum() / 1e3
    w0 = float(np.mean(w_set) - p_load / np.sum(1.0 / kP))
    x0 = np.concatenate([[w0 / W_NOMINAL], np.zeros(n - 1), v_set / V_BASE])
    res = optimize.root(fun, x0, method="hybr", options={"xtol": 1e-14})
    resid = float(np.max(np.abs(fun(res.x))))
    if resid > 1e-10:
        raise SimulationError(f"islanded steady state not found (residual {resid:.3g})")
    sol, _, _ = _dg_flows(solver, res.x[1:n], res.x[n:] * V_BASE)
    return res.x[0] * W_NOMINAL, np.concatenate([[0.0], res.x[1:n]]), res.x[n:] * V_BASE, sol


def common_setpoints(solver: NetworkSolver, kP, kQ, f_hz: float, v_pcc_pu: float):
    """Common ``(w_set, v_set)`` putting the islanded system at ``f_hz`` with ``|V_pcc| = v_pcc_pu``."""
    kP, kQ = np.asarray(kP, float), np.asarray(kQ, float)
    n = len(kP)
    w_t = 2 * math.pi * f_hz

    def fun(x):
        ws, vs = x[0] * W_NOMINAL, x[1] * V_BASE
        vm = x[n + 1:] * V_BASE
        sol, p, q = _dg_flows(solver, x[2:n + 1], vm)
        if not sol.converged:
            return np.full(2 * n + 1, 1e3)
        vpcc = abs(sol.bus_voltage[solver.net.pcc_bus]) / V_BASE
        return np.concatenate([(ws - kP * p - w_t) / W_NOMINAL, (vs - kQ * q - vm) / V_BASE,
                               [vpcc - v_pcc_pu]])

    p_load = solver.s_load.real.sum() / 1e3
    x0 = np.concatenate([[(w_t + p_load / np.sum(1.0 / kP)) / W_NOMINAL, v_pcc_pu], np.zeros(n - 1),
                         np.full(n, v_pcc_pu)])
    res = optimize.root(fun, x0, method="hybr", options={"xtol": 1e-14})
    resid = float(np.max(np.abs(fun(res.x))))
    return res.x[0] * W_NOMINAL, res.x[1] * V_BASE, resid


# ----------------------------------------------------------------------------
# time series

@dataclass
class TimeSeries:
    """Column-oriented record of a run; ``header`` carries run metadata."""

    columns: dict[str, np.ndarray]
    header: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def __len__(self) -> int:
        return len(self.columns["t"])

    @property
    def t(self) -> np.ndarray:
        return self.columns["t"]

    @property
    def n_dg(self) -> int:
        return int(self.header.get("n_dg", 0))

    def per_dg(self, name: str) -> np.ndarray:
        """Stack ``name_1 .. name_n`` into shape (samples, n_dg)."""
        return np.column_stack([self.columns[f"{name}_{k}"] for k in range(1, self.n_dg + 1)])

    def at(self, t: float) -> int:
        return int(np.argmin(np.abs(self.t - t)))

    def to_csv(self, path: str | Path) -> None:
        names = list(self.columns)
        with open(path, "w", newline="") as fh:
            for key, value in self.header.items():
                fh.write(f"# {key}: {value}\n")
            w = csv.writer(fh)
            w.writerow(names)
            cols = [self.columns[n] for n in names]
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])


def read_csv(path: str | Path) -> TimeSeries:
    header = {}
    with open(path) as fh:
        lines = fh.readlines()
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        key, _, value = lines[k][1:].strip().partition(": ")
        header[key] = value
        k += 1
    rows = list(csv.reader(lines[k:]))
    names = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(names))
    return TimeSeries({n: data[:, i] for i, n in enumerate(names)}, header)


# ----------------------------------------------------------------------------
# engine

class Engine:
    """Holds the mutable state of one run. Use :func:`run` for the usual case."""

    def __init__(self, s: Scenario, rotate_deg: float = 0.0):
        if not s.is_calibrated:
            raise SimulationError("scenario has no DG set points; run `calibrate` first")
        if not set(spanning_tree_roots(s.graph)) & set(s.graph.leaders):
            log.warning("no leader can reach every DG over the communication graph; "
                        "consensus may not converge")
        self.s = s
        self.n = len(s.dgs)
        self.dt = s.dt
        self.rotate = math.radians(rotate_deg)
        self.net = s.network
        self.solver = NetworkSolver(self.net)
        self.kP = np.array([d.params.kP for d in s.dgs])
        self.kQ = np.array([d.params.kQ for d in s.dgs])
        self.tau = np.array([d.params.inertia_tau for d in s.dgs])
        self.w_set = np.array([d.w_set0 for d in s.dgs], float)
        self.v_set = np.array([d.v_set0 for d in s.dgs], float)
        w, theta, vm, sol = islanded_equilibrium(self.solver, self.kP, self.kQ, self.w_set, self.v_set)
        self.theta = theta + self.rotate
        self.w_out = np.full(self.n, w)
        self.v_out = vm.copy()
        # re-solve in the rotated frame so the warm start and bus angles agree
        self.sol = self.solver.solve(self._sources(), warm=False)
        self._read_flows()

        self.bus = MessageBus(dict(s.graph.link_delay))
        for ld in s.graph.leaders:
            self.bus.set_delay(CTRL, ld, s.consensus.ref_delay)
        self.in_nbrs = {i: s.graph.in_neighbors(i) for i in range(1, self.n + 1)}
        self.out_nbrs = {i: s.graph.out_neighbors(i) for i in range(1, self.n + 1)}
        self.cst = ControllerState()
        self.rst = RelayState()
        self.close_on_relay = False
        self.switch_closed = False
        self.f_b = None
        self._last_sample = None  # (t, phi_b deg)
        self._next_sample = 0.0
        self._next_publish = 0.0

    # -- helpers --------------------------------------------------------
    def _sources(self):
        return {dg: self.v_out[k] * np.exp(1j * self.theta[k]) for k, dg in enumerate(self.solver.dg_order)}

    def _read_flows(self):
        order = self.solver.dg_order
        self.p = np.array([self.sol.dg_injection[d][0] for d in order])
        self.q = np.array([self.sol.dg_injection[d][1] for d in order])

    def grid_angle(self, t: float) -> float:
        """Grid phase in the nominal rotating frame, radians."""
        g = self.s.grid
        return math.radians(g.angle_deg) + self.rotate + (2 * math.pi * g.f_hz - W_NOMINAL) * t

    def grid_phasor(self, t: float) -> complex:
        return self.s.grid.v_pu * V_BASE * complex(math.cos(self.grid_angle(t)), math.sin(self.grid_angle(t)))

    # -- events ---------------------------------------------------------
    def _apply(self, ev, k: int, t: float):
        a = ev.args
        if ev.kind == "set_mode":
            set_mode(self.cst, a["on"])
        elif ev.kind == "load_step":
            self.net = self.net.with_load_step(a["bus"], a["p"], a["q"])
            self.solver.set_network(self.net)
            return True
        elif ev.kind == "set_link_delay":
            self.bus.set_delay(a["from"], a["to"], a["delay"])
        elif ev.kind == "set_inertia":
            self.tau[a["dg"] - 1] = a["tau"]
        elif ev.kind == "close_switch_on_relay":
            self.close_on_relay = a["enabled"]
            return self._maybe_close(t)
        return False

    def _maybe_close(self, t: float) -> bool:
        if self.close_on_relay and self.rst.closed and not self.switch_closed:
            self.switch_closed = True
            self.net = replace(self.net, switch_closed=True)
            self.solver.set_network(self.net)
            return True
        return False

    def _resolve(self, k: int, t: float):
        grid = self.grid_phasor(t) if self.switch_closed else None
        sol = self.solver.solve(self._sources(), grid)
        if not sol.converged:
            raise SimulationError(f"network solve failed at step {k} (t={t:.6f} s): {sol.message}, "
                                  f"mismatch {sol.mismatch:.3g}")
        self.sol = sol
        self._read_flows()

    # -- main loop ------------------------------------------------------
    def run(self) -> TimeSeries:
        s = self.s
        dt, n = self.dt, self.n
        steps = int(round(s.duration / dt))
        dec = s.decimate
        nrec = steps // dec + 1
        names = ["t", "f_a", "f_b", "v_a", "v_b", "dphi", "v_ss", "mode", "relay_in_band",
                 "relay_closed", "switch_closed"]
        for k in range(1, n + 1):
            names += [f"{c}_{k}" for c in ("w_set", "v_set", "w_out", "v_out", "p", "q", "kpp", "kqq")]
        rec = {c: np.empty(nrec) for c in names}
        events = list(s.events)
        ev_i = 0
        ctl = s.controller
        period = ctl.period
        comm = s.consensus.comm_period or dt
        pcc = s.network.pcc_bus
        f_a = s.grid.f_hz
        v_a = s.grid.v_pu
        leaders = s.graph.leaders
        w_ref = v_ref = None
        r = 0

        for k in range(steps + 1):
            t = k * dt
            changed = False
            while ev_i < len(events) and events[ev_i].time <= t + _EPS:
                changed |= bool(self._apply(events[ev_i], k, t))
                ev_i += 1
            if changed:
                self._resolve(k, t)

            vb = self.sol.bus_voltage[pcc]
            phi_b = math.degrees(math.atan2(vb.imag, vb.real))
            phi_a = math.degrees(self.grid_angle(t))
            v_b = abs(vb) / V_BASE
            dphi = wrap_angle(phi_a - phi_b)

            if t >= self._next_sample - _EPS:
                if self._last_sample is None:
                    self.f_b = float(np.mean(self.w_out)) / (2 * math.pi)
                    ts = period
                else:
                    ts = t - self._last_sample[0]
                    self.f_b = F_NOMINAL + wrap_angle(phi_b - self._last_sample[1]) / (360.0 * ts)
                self._last_sample = (t, phi_b)
                w_ref = freq_track(ctl, self.cst, phi_a, phi_b, f_a, ts)
                v_ref = volt_track(ctl, self.cst, v_a, v_b, ts)
                if self.cst.on:
                    self.bus.publish(CTRL, {ld: (w_ref, v_ref) for ld in leaders}, t)
                self.rst = relay_step(s.relay, self.rst, f_a - self.f_b, v_a - v_b, dphi, t)
                if self._maybe_close(t):
                    self._resolve(k, t)
                    vb = self.sol.bus_voltage[pcc]
                    v_b = abs(vb) / V_BASE
                    dphi = wrap_angle(phi_a - math.degrees(math.atan2(vb.imag, vb.real)))
                while self._next_sample <= t + _EPS:
                    self._next_sample += period

            if k % dec == 0:
                row = rec
                row["t"][r] = t
                row["f_a"][r] = f_a
                row["f_b"][r] = self.f_b
                row["v_a"][r] = v_a
                row["v_b"][r] = v_b
                row["dphi"][r] = dphi
                row["v_ss"][r] = switch_voltage(phasor(v_a, phi_a), vb / V_BASE)
                row["mode"][r] = float(self.cst.on)
                row["relay_in_band"][r] = float(self.rst.in_band)
                row["relay_closed"][r] = float(self.rst.closed)
                row["switch_closed"][r] = float(self.switch_closed)
                for i in range(n):
                    j = i + 1
                    row[f"w_set_{j}"][r] = self.w_set[i]
                    row[f"v_set_{j}"][r] = self.v_set[i]
                    row[f"w_out_{j}"][r] = self.w_out[i]
                    row[f"v_out_{j}"][r] = self.v_out[i]
                    row[f"p_{j}"][r] = self.p[i]
                    row[f"q_{j}"][r] = self.q[i]
                    row[f"kpp_{j}"][r] = self.kP[i] * self.p[i]
                    row[f"kqq_{j}"][r] = self.kQ[i] * self.q[i]
                r += 1
            if k == steps:
                break

            kpp = self.kP * self.p
            kqq = self.kQ * self.q
            if t >= self._next_publish - _EPS:
                for i in range(n):
                    j = i + 1
                    msg = (self.w_out[i], kpp[i], self.v_out[i], kqq[i])
                    self.bus.publish(j, {dst: msg for dst in self.out_nbrs[j]}, t)
                while self._next_publish <= t + _EPS:
                    self._next_publish += comm

            u_w = np.zeros(n)
            u_v = np.zeros(n)
            for i in range(n):
                j = i + 1
                nf, nv = {}, {}
                for src, _ in self.in_nbrs[j]:
                    m = self.bus.latest(j, src, t)
                    if m is not None:
                        nf[src] = (m[0], m[1])
                        nv[src] = (m[2], m[3])
                ref = self.bus.latest(j, CTRL, t) if (self.cst.on and j in leaders) else None
                u_w[i] = freq_consensus_input(j, s.graph, nf, self.w_out[i], kpp[i],
                                              None if ref is None else ref[0], s.consensus.pin_freq)
                u_v[i] = volt_consensus_input(j, s.graph, nv, self.v_out[i], kqq[i],
                                              None if ref is None else ref[1], s.consensus.pin_volt)
            self.w_set = self.w_set + u_w * dt
            self.v_set = self.v_set + u_v * dt
            gamma = np.array([lag_weight(tau, dt) for tau in self.tau])
            grid = self.grid_phasor(t + dt) if self.switch_closed else None
            try:
                self.sol, self.theta, self.w_out, self.v_out = self.solver.droop_step(
                    self.theta, self.w_out, self.v_out, self.w_set, self.v_set, self.kP, self.kQ,
                    gamma, dt, W_NOMINAL, grid)
            except SolverError as exc:
                raise SimulationError(f"network solve failed at step {k + 1} (t={t + dt:.6f} s): {exc}, "
                                      f"mismatch {exc.solution.mismatch:.3g}") from None
            self._read_flows()

        header = {"scenario": s.name, "dt": dt, "duration": s.duration, "decimate": dec, "n_dg": n,
                  "enable_time": s.enable_time, "relay_close_time": self.rst.close_time}
        if s.overrides:
            header["overrides"] = " ".join(f"{k}={v}" for k, v in s.overrides.items())
        return TimeSeries(rec, header)


def run(s: Scenario, rotate_deg: float = 0.0) -> TimeSeries:
    """Simulate ``s`` from its islanded steady state; see :class:`Engine`."""
    return Engine(s, rotate_deg).run()


# ----------------------------------------------------------------------------
# summary

@dataclass
class Report:
    enable_time: Optional[float]
    sync_time: Optional[float]  # absolute
    time_to_sync: Optional[float]  # after enable
    max_vss_after_sync: Optional[float]
    p_share_error: float
    q_share_error: float
    relay_close_time: Optional[float]
    overshoot_deg: Optional[float]

    def lines(self) -> list[str]:
        def f(x, unit="", fmt=".4f"):
            return "none" if x is None else f"{x:{fmt}}{unit}"
        return [
            f"enable time          : {f(self.enable_time, ' s', '.3f')}",
            f"time to sync         : {f(self.time_to_sync, ' s', '.3f')}",
            f"max |V_SS| after sync: {f(self.max_vss_after_sync, ' p.u.')}",
            f"P sharing error      : {100 * self.p_share_error:.3f} %",
            f"Q sharing error      : {100 * self.q_share_error:.3f} %",
            f"relay close time     : {f(self.relay_close_time, ' s', '.3f')}",
            f"phase overshoot      : {f(self.overshoot_deg, ' deg', '.3f')}",
        ]

    def __str__(self) -> str:
        return "\n".join(self.lines())


def share_error(values) -> float:
    """Largest pairwise gap in ``k_i x_i`` relative to DG 1's value."""
    v = np.asarray(values, float)
    ref = abs(v[0])
    return float((v.max() - v.min()) / ref) if ref > 0 else float(v.max() - v.min())


def sync_index(ts: TimeSeries, band: float = SYNC_BAND_DEG) -> Optional[int]:
    """Index of the first sample after enable from which |dphi| stays below ``band``."""
    on = np.flatnonzero(ts["mode"] > 0.5)
    if len(on) == 0:
        return None
    outside = np.flatnonzero(np.abs(ts["dphi"]) >= band)
    outside = outside[outside >= on[0]]
    k = on[0] if len(outside) == 0 else outside[-1] + 1
    return None if k >= len(ts) else int(k)


def phase_overshoot(ts: TimeSeries) -> Optional[float]:
    """Largest |dphi| on the far side of zero after the first zero crossing post-enable."""
    on = np.flatnonzero(ts["mode"] > 0.5)
    if len(on) == 0:
        return None
    d = ts["dphi"][on[0]:]
    sign = np.sign(d[0])
    cross = np.flatnonzero(np.sign(d) == -sign)
    if sign == 0 or len(cross) == 0:
        return 0.0
    return float(np.max(np.abs(d[cross[0]:][np.sign(d[cross[0]:]) == -sign])))


def _close_time(ts: TimeSeries, closed) -> Optional[float]:
    exact = ts.header.get("relay_close_time")
    if exact not in (None, "None"):
        return float(exact)
    return float(ts.t[closed[0]]) if len(closed) else None


def summarize(ts: TimeSeries, at: Optional[float] = None) -> Report:
    """Headline numbers of a run; sharing errors are taken at ``at`` (default: last sample)."""
    if len(ts) == 0:
        raise ValueError("empty time series")
    on = np.flatnonzero(ts["mode"] > 0.5)
    enable = float(ts.t[on[0]]) if len(on) else None
    k = sync_index(ts)
    sync_t = None if k is None else float(ts.t[k])
    idx = len(ts) - 1 if at is None else ts.at(at)
    closed = np.flatnonzero(ts["relay_closed"] > 0.5)
    return Report(
        enable_time=enable,
        sync_time=sync_t,
        time_to_sync=None if k is None else sync_t - enable,
        max_vss_after_sync=None if k is None else float(np.max(ts["v_ss"][k:])),
        p_share_error=share_error(ts.per_dg("kpp")[idx]),
        q_share_error=share_error(ts.per_dg("kqq")[idx]),
        relay_close_time=_close_time(ts, closed),
        overshoot_deg=phase_overshoot(ts),
    )
