"""PCC synchronisation controller: phase/frequency and voltage tracking."""

from __future__ import annotations

import math
from dataclasses import dataclass

F_NOMINAL = 60.0
V_NOMINAL = 208.0


@dataclass(frozen=True)
class ControllerConfig:
    mode: bool = False
    sample_rate: float = 60.0  # Hz
    kp_phase: float = 0.05  # rad/s per degree
    ki_phase: float = 0.08  # rad/s^2 per degree
    kp_volt: float = 0.5  # V per V (applied to the p.u. error times V_NOMINAL)
    ki_volt: float = 1.0  # V per p.u.-second
    w_ref_band: float = 2 * math.pi * 0.5  # rad/s either side of nominal
    v_ref_band: float = 0.10  # fraction of V_NOMINAL

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError("controller sample_rate must be positive")
        for name in ("kp_phase", "ki_phase", "kp_volt", "ki_volt", "w_ref_band", "v_ref_band"):
            if getattr(self, name) < 0:
                raise ValueError(f"controller {name} must be >= 0")

    @property
    def period(self) -> float:
        return 1.0 / self.sample_rate


@dataclass
class ControllerState:
    integ_phase: float = 0.0  # rad/s
    integ_volt: float = 0.0  # V
    last_w_ref: float | None = None
    last_v_ref: float | None = None
    on: bool = False


def wrap_angle(deg: float) -> float:
    r = math.fmod(deg, 360.0)
    if r > 180.0:
        r -= 360.0
    elif r <= -180.0:
        r += 360.0
    return r


def set_mode(st: ControllerState, on: bool) -> None:
    if on and not st.on:
        st.integ_phase = 0.0
        st.integ_volt = 0.0
    st.on = on


def _clamp(x, lo, hi):
    return min(max(x, lo), hi)


def freq_track(cfg: ControllerConfig, st: ControllerState, phi_a: float, phi_b: float,
               f_a: float, dt: float) -> float | None:
    """One controller sample of the phase loop; returns w*_ref in rad/s.

    Grid-frequency feedforward plus PI on the wrapped phase error. The
    integrator is frozen while the output is saturated in the direction the
    error pushes.
    """
    if not st.on:
        return st.last_w_ref
    e = wrap_angle(phi_a - phi_b)
    w_ff = 2 * math.pi * f_a
    w_nom = 2 * math.pi * F_NOMINAL
    lo, hi = w_nom - cfg.w_ref_band, w_nom + cfg.w_ref_band
    trial = st.integ_phase + cfg.ki_phase * e * dt
    raw = w_ff + cfg.kp_phase * e + trial
    if (raw > hi and e > 0) or (raw < lo and e < 0):
        raw = w_ff + cfg.kp_phase * e + st.integ_phase
    else:
        st.integ_phase = trial
    st.last_w_ref = _clamp(raw, lo, hi)
    return st.last_w_ref


def volt_track(cfg: ControllerConfig, st: ControllerState, v_a: float, v_b: float,
               dt: float) -> float | None:
    """One controller sample of the voltage loop; magnitudes in p.u., returns volts."""
    if not st.on:
        return st.last_v_ref
    e = v_a - v_b
    lo, hi = V_NOMINAL * (1 - cfg.v_ref_band), V_NOMINAL * (1 + cfg.v_ref_band)
    trial = st.integ_volt + cfg.ki_volt * e * dt
    raw = V_NOMINAL * v_a + cfg.kp_volt * e * V_NOMINAL + trial
    if (raw > hi and e > 0) or (raw < lo and e < 0):
        raw = V_NOMINAL * v_a + cfg.kp_volt * e * V_NOMINAL + st.integ_volt
    else:
        st.integ_volt = trial
    st.last_v_ref = _clamp(raw, lo, hi)
    return st.last_v_ref
