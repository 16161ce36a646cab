"""Back-compute DG set points (and grid phase) for a target pre-control steady state."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .controller import wrap_angle
from .dg_agent import W_NOMINAL
from .engine import common_setpoints, islanded_equilibrium
from .network import V_BASE, NetworkSolver
from .scenario import Scenario

# plausible operating window for an islanded 60 Hz / 208 V microgrid
F_RANGE = (57.0, 63.0)
V_RANGE = (0.8, 1.2)


class CalibrationError(ValueError):
    pass


def calibrate(s: Scenario, tol: float = 1e-6) -> Scenario:
    """Return a copy of ``s`` whose islanded steady state meets ``s.calibration``.

    All DGs get the same set points. When a phase target is given, the grid
    angle is chosen so that the phase difference at the enable event equals it.
    """
    tgt = s.calibration
    if not F_RANGE[0] <= tgt.f_hz <= F_RANGE[1]:
        raise CalibrationError(f"target frequency {tgt.f_hz} Hz outside {F_RANGE[0]}-{F_RANGE[1]} Hz")
    if not V_RANGE[0] <= tgt.v_pcc_pu <= V_RANGE[1]:
        raise CalibrationError(f"target PCC voltage {tgt.v_pcc_pu} p.u. outside {V_RANGE[0]}-{V_RANGE[1]} p.u.")
    solver = NetworkSolver(s.network)
    kP = np.array([d.params.kP for d in s.dgs])
    kQ = np.array([d.params.kQ for d in s.dgs])
    ws, vs, resid = common_setpoints(solver, kP, kQ, tgt.f_hz, tgt.v_pcc_pu)
    if not resid < tol or not vs > 0:
        raise CalibrationError(f"targets {tgt.f_hz} Hz / {tgt.v_pcc_pu} p.u. unreachable "
                               f"with the given droops (residual {resid:.3g})")

    # check against an independent forward solve
    w_set = np.full(len(s.dgs), ws)
    v_set = np.full(len(s.dgs), vs)
    w, theta, vm, sol = islanded_equilibrium(solver, kP, kQ, w_set, v_set)
    f_err = abs(w / (2 * math.pi) - tgt.f_hz)
    v_err = abs(abs(sol.bus_voltage[s.network.pcc_bus]) / V_BASE - tgt.v_pcc_pu)
    if f_err > 1e-4 or v_err > 1e-4:
        raise CalibrationError(f"calibrated state misses targets by {f_err:.2g} Hz / {v_err:.2g} p.u.")

    grid = s.grid
    if tgt.phase_at_enable_deg is not None:
        t_en = s.enable_time
        if t_en is None:
            raise CalibrationError("phase target given but the scenario never enables control")
        vb = sol.bus_voltage[s.network.pcc_bus]
        phi_b0 = math.degrees(math.atan2(vb.imag, vb.real))
        slip_b = math.degrees(w - W_NOMINAL) * t_en
        slip_a = math.degrees(2 * math.pi * grid.f_hz - W_NOMINAL) * t_en
        grid = replace(grid, angle_deg=wrap_angle(tgt.phase_at_enable_deg + phi_b0 + slip_b - slip_a))

    dgs = [replace(d, w_set0=float(ws), v_set0=float(vs)) for d in s.dgs]
    return replace(s, dgs=dgs, grid=grid)
