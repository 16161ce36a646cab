"""Quasi-static phasor model of the microgrid feeder.

Single-phase-equivalent positive sequence model. Voltages are line-to-line
volts and powers are three-phase, which lets ``S = V conj(Y V)`` be used
directly with per-phase impedances. DG sources are voltage-controlled nodes,
loads are constant PQ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

FT_TO_KM = 3.048e-4
V_BASE = 208.0  # V, line-to-line
S_BASE = 10e3  # VA


class NetworkError(ValueError):
    pass


class SolverError(RuntimeError):
    """Newton iteration failed; carries the partial solution for diagnostics."""

    def __init__(self, message: str, solution: "NetworkSolution"):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r_per_km: float
    x_per_km: float
    length_ft: float

    def __post_init__(self):
        if self.r_per_km < 0 or self.x_per_km < 0:
            raise NetworkError(f"line {self.from_bus}-{self.to_bus}: negative impedance")
        if not self.length_ft > 0:
            raise NetworkError(f"line {self.from_bus}-{self.to_bus}: length must be positive")
        if self.r_per_km == 0 and self.x_per_km == 0:
            raise NetworkError(f"line {self.from_bus}-{self.to_bus}: zero impedance")


@dataclass(frozen=True)
class Load:
    bus: int
    p: float  # kW
    q: float  # kVar

    def __post_init__(self):
        if not (math.isfinite(self.p) and math.isfinite(self.q)):
            raise NetworkError(f"load at bus {self.bus} is not finite")


def line_impedance(line: Line) -> complex:
    """Series impedance in ohms."""
    return complex(line.r_per_km, line.x_per_km) * line.length_ft * FT_TO_KM


def switch_voltage(va: complex, vb: complex) -> float:
    """Magnitude of the voltage across the static switch.

    Inputs are phasors in p.u. Works on magnitudes and the angle difference
    (law of cosines), written as ``(Va - Vb)^2 + 4 Va Vb sin^2(d/2)`` to avoid
    cancellation when the two sides nearly agree.
    """
    ma, mb = abs(va), abs(vb)
    d = math.atan2(va.imag, va.real) - math.atan2(vb.imag, vb.real)
    s = math.sin(0.5 * d)
    return math.sqrt((ma - mb) ** 2 + 4.0 * ma * mb * s * s)


def phasor(mag: float, angle_deg: float) -> complex:
    return mag * complex(math.cos(math.radians(angle_deg)), math.sin(math.radians(angle_deg)))


@dataclass
class Network:
    buses: list[int]
    lines: list[Line]
    loads: list[Load]
    source_buses: dict[int, int]
    pcc_bus: int
    grid_bus: int
    switch_closed: bool = False
    source_impedance: dict[int, complex] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        buses = set(self.buses)
        if len(buses) != len(self.buses):
            raise NetworkError("duplicate bus ids")
        if self.pcc_bus not in buses:
            raise NetworkError(f"pcc bus {self.pcc_bus} is not a microgrid bus")
        if self.grid_bus in buses:
            raise NetworkError("grid bus must be outside the microgrid bus list")
        for ln in self.lines:
            for b in (ln.from_bus, ln.to_bus):
                if b not in buses:
                    raise NetworkError(f"line {ln.from_bus}-{ln.to_bus} references unknown bus {b}")
        for ld in self.loads:
            if ld.bus not in buses:
                raise NetworkError(f"load on unknown bus {ld.bus}")
        if not self.source_buses:
            raise NetworkError("network has no sources")
        stiff = {}
        for dg, b in self.source_buses.items():
            if b not in buses:
                raise NetworkError(f"DG {dg} placed on unknown bus {b}")
            if self.source_impedance.get(dg, 0) == 0:
                if b in stiff:
                    raise NetworkError(f"DGs {stiff[b]} and {dg} both stiff at bus {b}")
                stiff[b] = dg
        for dg in self.source_impedance:
            if dg not in self.source_buses:
                raise NetworkError(f"source impedance given for unknown DG {dg}")
        # connectivity of the microgrid part
        adj = {b: set() for b in buses}
        for ln in self.lines:
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
        start = self.buses[0]
        seen, stack = {start}, [start]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if seen != buses:
            raise NetworkError(f"microgrid is not connected; unreachable buses {sorted(buses - seen)}")

    def load_at(self, bus: int) -> complex:
        """Total load at ``bus`` in kVA."""
        return sum((complex(ld.p, ld.q) for ld in self.loads if ld.bus == bus), 0j)

    def with_load_step(self, bus: int, dp: float, dq: float) -> "Network":
        if bus not in self.buses:
            raise NetworkError(f"load step on unknown bus {bus}")
        return replace(self, loads=list(self.loads) + [Load(bus, dp, dq)])

    @property
    def dg_ids(self) -> list[int]:
        return sorted(self.source_buses)


@dataclass
class NetworkSolution:
    bus_voltage: dict[int, complex]
    dg_injection: dict[int, tuple[float, float]]
    converged: bool
    iterations: int
    mismatch: float = 0.0
    grid_injection: tuple[float, float] = (0.0, 0.0)
    losses_kw: float = 0.0
    message: str = ""


class NetworkSolver:
    """Newton solver with warm-start state for one simulation run.

    Two problems share the machinery: :meth:`solve` with DG phasors fixed,
    and :meth:`droop_step`, one backward-Euler step where the DG angles and
    magnitudes are unknown and tied to their droop laws.
    """

    def __init__(self, net: Network, tol: float = 1e-8, max_iter: int = 50):
        self.tol = tol
        self.max_iter = max_iter
        self._warm: Optional[np.ndarray] = None
        self.set_network(net)

    def set_network(self, net: Network):
        net.validate()
        self.net = net
        nodes = list(net.buses)
        self.bus_index = {b: k for k, b in enumerate(nodes)}
        self.dg_node = {}
        for dg in net.dg_ids:
            if net.source_impedance.get(dg, 0) == 0:
                self.dg_node[dg] = self.bus_index[net.source_buses[dg]]
            else:
                self.dg_node[dg] = len(nodes)
                nodes.append(("dg", dg))
        n = len(nodes)
        self.n = n
        Y = np.zeros((n, n), dtype=complex)
        branches = []
        for ln in net.lines:
            i, j = self.bus_index[ln.from_bus], self.bus_index[ln.to_bus]
            branches.append((i, j, line_impedance(ln)))
        for dg, z in net.source_impedance.items():
            if z != 0:
                branches.append((self.dg_node[dg], self.bus_index[net.source_buses[dg]], complex(z)))
        for i, j, z in branches:
            y = 1.0 / z
            Y[i, i] += y
            Y[j, j] += y
            Y[i, j] -= y
            Y[j, i] -= y
        self.Y = Y
        self.branches = branches
        s_load = np.zeros(n, dtype=complex)
        for ld in net.loads:
            s_load[self.bus_index[ld.bus]] += complex(ld.p, ld.q) * 1e3
        self.s_load = s_load  # VA
        self.dg_order = net.dg_ids
        self.dg_nodes = np.array([self.dg_node[d] for d in self.dg_order], dtype=int)
        fixed = set(self.dg_nodes.tolist())
        self.pcc = self.bus_index[net.pcc_bus]
        if net.switch_closed:
            if self.pcc in fixed:
                raise NetworkError("a stiff DG sits on the PCC bus; cannot close the switch")
            fixed.add(self.pcc)
        self.pq_nodes = np.array([k for k in range(n) if k not in fixed], dtype=int)
        if self._warm is not None and len(self._warm) != n:
            self._warm = None

    # ------------------------------------------------------------------
    def _dS(self, V):
        Ibus = self.Y @ V
        Vn = V / np.abs(V)
        dS_dVm = V[:, None] * np.conj(self.Y * Vn[None, :]) + np.diag(np.conj(Ibus) * Vn)
        dS_dVa = 1j * V[:, None] * np.conj(np.diag(Ibus) - self.Y * V[None, :])
        return V * np.conj(Ibus), dS_dVa, dS_dVm

    def _initial(self, fixed_v: dict[int, complex], warm: bool) -> np.ndarray:
        if warm and self._warm is not None:
            V = self._warm.copy()
        else:
            V = np.full(self.n, np.mean(list(fixed_v.values())) if fixed_v else V_BASE, dtype=complex)
        for k, v in fixed_v.items():
            V[k] = v
        return V

    def _package(self, V, converged, it, mismatch, message="") -> NetworkSolution:
        S = V * np.conj(self.Y @ V)  # injection into the network, VA
        inj = {}
        for dg, k in zip(self.dg_order, self.dg_nodes):
            s = (S[k] + self.s_load[k]) / 1e3
            inj[dg] = (s.real, s.imag)
        grid = (0.0, 0.0)
        if self.net.switch_closed:
            s = (S[self.pcc] + self.s_load[self.pcc]) / 1e3
            grid = (s.real, s.imag)
        losses = 0.0
        for i, j, z in self.branches:
            cur = (V[i] - V[j]) / z
            losses += abs(cur) ** 2 * z.real
        buses = {b: complex(V[k]) for b, k in self.bus_index.items()}
        return NetworkSolution(buses, inj, converged, it, mismatch, grid, losses / 1e3, message)

    def solve(self, sources: Mapping[int, complex], grid: Optional[complex] = None,
              warm: bool = True) -> NetworkSolution:
        """Solve with every DG held at its commanded phasor (volts L-L)."""
        missing = set(self.dg_order) - set(sources)
        if missing:
            raise NetworkError(f"no phasor given for DGs {sorted(missing)}")
        fixed_v = {self.dg_node[dg]: complex(sources[dg]) for dg in self.dg_order}
        if self.net.switch_closed:
            if grid is None:
                raise NetworkError("switch closed but no grid phasor given")
            fixed_v[self.pcc] = complex(grid)
        V = self._initial(fixed_v, warm)
        pq = self.pq_nodes
        npq = len(pq)
        it = 0
        mis = 0.0
        for it in range(self.max_iter + 1):
            S, dVa, dVm = self._dS(V)
            F = (S[pq] + self.s_load[pq]) / S_BASE
            r = np.concatenate([F.real, F.imag])
            mis = float(np.max(np.abs(r))) if npq else 0.0
            if mis < self.tol:
                self._warm = V.copy()
                return self._package(V, True, it, mis)
            if it == self.max_iter:
                break
            J = np.block([[dVa[np.ix_(pq, pq)].real, dVm[np.ix_(pq, pq)].real],
                          [dVa[np.ix_(pq, pq)].imag, dVm[np.ix_(pq, pq)].imag]]) / S_BASE
            try:
                dx = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError:
                return self._package(V, False, it, mis, "singular Jacobian")
            ang = np.angle(V[pq]) + dx[:npq]
            mag = np.abs(V[pq]) + dx[npq:]
            V[pq] = mag * np.exp(1j * ang)
        return self._package(V, False, it, mis, f"no convergence in {self.max_iter} iterations")

    def droop_step(self, theta_prev, w_prev, v_prev, w_set, v_set, kP, kQ, gamma, dt, w_nom,
                   grid: Optional[complex] = None):
        """Backward-Euler step of the droop-controlled sources coupled through the network.

        All per-DG arrays follow ``self.dg_order``; angles in radians, frequencies
        in rad/s, voltages in volts, kP in rad/s per kW, kQ in V per kVar.
        ``gamma`` is the per-DG inertia-lag weight (1 means no lag).

        Returns ``(solution, theta_new, w_new, v_new)``.
        """
        theta_prev = np.asarray(theta_prev, float)
        w_prev = np.asarray(w_prev, float)
        v_prev = np.asarray(v_prev, float)
        w_set = np.asarray(w_set, float)
        v_set = np.asarray(v_set, float)
        kP = np.asarray(kP, float)
        kQ = np.asarray(kQ, float)
        gamma = np.asarray(gamma, float)
        dgn = self.dg_nodes
        nd = len(dgn)
        fixed_v = {}
        if self.net.switch_closed:
            if grid is None:
                raise NetworkError("switch closed but no grid phasor given")
            fixed_v[self.pcc] = complex(grid)
        V = self._initial(fixed_v, True)
        if self._warm is None:
            V[dgn] = v_prev * np.exp(1j * theta_prev)
            V[self.pq_nodes] = np.mean(V[dgn])
        pq = self.pq_nodes
        npq = len(pq)
        unk = np.concatenate([dgn, pq])  # angle and magnitude unknowns, same node order
        nu = len(unk)
        sl_dg = self.s_load[dgn] / 1e3
        w_base = (1 - gamma) * w_prev
        v_base = (1 - gamma) * v_prev
        mis = np.inf
        for it in range(self.max_iter + 1):
            S, dVa, dVm = self._dS(V)
            s_dg = S[dgn] / 1e3 + sl_dg  # kVA delivered by each DG
            w_new = w_base + gamma * (w_set - kP * s_dg.real)
            v_new = v_base + gamma * (v_set - kQ * s_dg.imag)
            ang = np.angle(V[dgn])
            # keep the DG angle continuous with theta_prev
            ang = theta_prev + np.angle(np.exp(1j * (ang - theta_prev)))
            r_th = ang - theta_prev - dt * (w_new - w_nom)
            r_v = (np.abs(V[dgn]) - v_new) / V_BASE
            F = (S[pq] + self.s_load[pq]) / S_BASE
            r = np.concatenate([r_th, F.real, r_v, F.imag])
            prev, mis = mis, float(np.max(np.abs(r)))
            # tight target, but accept a stalled iterate once it is inside tol (round-off floor)
            if mis < self.tol * 1e-2 or (it > 0 and mis < self.tol and mis > 0.5 * prev):
                break
            if it == self.max_iter:
                sol = self._package(V, False, it, mis, f"droop step: no convergence in {self.max_iter} iterations")
                raise SolverError(sol.message, sol)
            Ja = dVa[np.ix_(unk, unk)]
            Jm = dVm[np.ix_(unk, unk)]
            # rows: DG angle eqs, PQ P eqs, DG magnitude eqs, PQ Q eqs
            J = np.zeros((2 * nu, 2 * nu))
            J[:nd, :nu] = (dt * gamma * kP / 1e3)[:, None] * Ja[:nd].real
            J[:nd, nu:] = (dt * gamma * kP / 1e3)[:, None] * Jm[:nd].real
            J[np.arange(nd), np.arange(nd)] += 1.0
            J[nd:nu, :nu] = Ja[nd:].real / S_BASE
            J[nd:nu, nu:] = Jm[nd:].real / S_BASE
            J[nu:nu + nd, :nu] = (gamma * kQ / 1e3 / V_BASE)[:, None] * Ja[:nd].imag
            J[nu:nu + nd, nu:] = (gamma * kQ / 1e3 / V_BASE)[:, None] * Jm[:nd].imag
            J[nu + np.arange(nd), nu + np.arange(nd)] += 1.0 / V_BASE
            J[nu + nd:, :nu] = Ja[nd:].imag / S_BASE
            J[nu + nd:, nu:] = Jm[nd:].imag / S_BASE
            try:
                dx = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError:
                sol = self._package(V, False, it, mis, "droop step: singular Jacobian")
                raise SolverError(sol.message, sol)
            a = np.concatenate([ang, np.angle(V[pq])]) + dx[:nu]
            m = np.abs(V[unk]) + dx[nu:]
            V[unk] = m * np.exp(1j * a)
        self._warm = V.copy()
        sol = self._package(V, True, it, mis)
        return sol, ang, w_new, v_new


def solve(net: Network, sources: Mapping[int, complex], grid: Optional[complex] = None,
          warm_start: Optional[NetworkSolver] = None) -> NetworkSolution:
    """One-shot solve; pass a solver to reuse its warm-start state."""
    solver = warm_start if warm_start is not None else NetworkSolver(net)
    if solver.net is not net:
        solver.set_network(net)
    return solver.solve(sources, grid)
