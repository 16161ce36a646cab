"""Droop-controlled DG agent with distributed set-point consensus."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional

from .comm_graph import CommGraph

W_NOMINAL = 2 * math.pi * 60.0


@dataclass(frozen=True)
class DGParams:
    kP: float  # rad/s per kW
    kQ: float  # V per kVar
    p_max: float = 0.0  # kW, ratio checks only
    q_max: float = 0.0  # kVar
    is_leader: bool = False
    inertia_tau: float = 0.0  # s, 0 disables the lag

    def __post_init__(self):
        if not self.kP > 0 or not self.kQ > 0:
            raise ValueError(f"droop coefficients must be positive (kP={self.kP}, kQ={self.kQ})")
        if not self.inertia_tau >= 0:
            raise ValueError(f"inertia_tau must be >= 0, got {self.inertia_tau}")


@dataclass(frozen=True)
class DGState:
    w_set: float  # rad/s
    v_set: float  # V
    w_out: float  # rad/s
    v_out: float  # V
    theta: float  # deg, wrapped to (-180, 180]
    p: float = 0.0  # kW
    q: float = 0.0  # kVar

    def phasor(self) -> complex:
        a = math.radians(self.theta)
        return self.v_out * complex(math.cos(a), math.sin(a))


def wrap_deg(x: float) -> float:
    """Map to (-180, 180]."""
    r = math.fmod(x, 360.0)
    if r > 180.0:
        r -= 360.0
    elif r <= -180.0:
        r += 360.0
    return r


def droop_frequency(w_set: float, kP: float, p: float) -> float:
    return w_set - kP * p


def droop_voltage(v_set: float, kQ: float, q: float) -> float:
    return v_set - kQ * q


def lag_weight(tau: float, dt: float) -> float:
    """Backward-Euler weight of the new target in a first-order lag.

    ``x_new = (1 - g) x_old + g target``; ``g = 1`` when ``tau == 0``.
    """
    if tau <= 0:
        return 1.0
    a = dt / tau
    return a / (1.0 + a)


def _tracking_input(me: int, g: CommGraph, nbr: Mapping[int, tuple[float, float]],
                    my_x: float, my_kx: float, ref: Optional[float], pin: float) -> float:
    u = 0.0
    for j, a in g.in_neighbors(me):
        if j not in nbr:
            continue
        xj, kxj = nbr[j]
        u += a * (xj - my_x) + a * (kxj - my_kx)
    if ref is not None and me in g.leaders:
        u += pin * (ref - my_x)
    return u


def freq_consensus_input(me: int, g: CommGraph, nbr: Mapping[int, tuple[float, float]],
                         my_w: float, my_kpp: float, w_ref: Optional[float] = None,
                         pin: float = 1.0) -> float:
    """Frequency set-point rate for DG ``me`` (rad/s^2).

    ``nbr`` maps each in-neighbour to its delivered ``(w_j, kP_j P_j)``;
    neighbours with nothing delivered yet are simply absent. ``pin`` scales
    the leader term and is 1 in the plain protocol.
    """
    return _tracking_input(me, g, nbr, my_w, my_kpp, w_ref, pin)


def volt_consensus_input(me: int, g: CommGraph, nbr: Mapping[int, tuple[float, float]],
                         my_v: float, my_kqq: float, v_ref: Optional[float] = None,
                         pin: float = 1.0) -> float:
    """Voltage set-point rate for DG ``me`` (V/s); mirror of the frequency law."""
    return _tracking_input(me, g, nbr, my_v, my_kqq, v_ref, pin)


def step(state: DGState, params: DGParams, u_w: float, u_v: float, dt: float,
         w_nominal: float = W_NOMINAL) -> DGState:
    """Advance one agent by ``dt`` with its injections held at ``state.p``, ``state.q``.

    Set points integrate the consensus inputs (explicit Euler). The outputs
    follow the droop laws, through a backward-Euler lag when
    ``params.inertia_tau > 0``. The closed-loop engine uses the same update
    but solves it jointly with the network.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    w_set = state.w_set + u_w * dt
    v_set = state.v_set + u_v * dt
    gam = lag_weight(params.inertia_tau, dt)
    w_out = (1 - gam) * state.w_out + gam * droop_frequency(w_set, params.kP, state.p)
    v_out = (1 - gam) * state.v_out + gam * droop_voltage(v_set, params.kQ, state.q)
    theta = wrap_deg(state.theta + math.degrees((w_out - w_nominal) * dt))
    return replace(state, w_set=w_set, v_set=v_set, w_out=w_out, v_out=v_out, theta=theta)
