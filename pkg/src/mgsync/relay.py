"""Synchronism-check relay with the 1547-style reconnection thresholds."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from .controller import wrap_angle

# (upper kVA bound, df Hz, dv fraction, dphi deg); lower bound of each row is exclusive
RATING_TABLE = (
    (500.0, 0.3, 0.10, 20.0),
    (1500.0, 0.2, 0.05, 15.0),
    (10000.0, 0.1, 0.03, 10.0),
)

_EPS = 1e-9


@dataclass(frozen=True)
class RelayConfig:
    df_max: float  # Hz
    dv_max: float  # fraction of nominal
    dphi_max: float  # deg
    dwell: float  # s

    def __post_init__(self):
        for name in ("df_max", "dv_max", "dphi_max", "dwell"):
            if not getattr(self, name) > 0:
                raise ValueError(f"relay {name} must be positive")


@dataclass(frozen=True)
class RelayState:
    in_band_since: Optional[float] = None
    closed: bool = False
    close_time: Optional[float] = None
    in_band: bool = False
    last_t: Optional[float] = None


def dwell_time(df_max: float, dphi_max: float) -> float:
    """Time for a slip of ``df_max`` to sweep ``dphi_max`` degrees."""
    return dphi_max / (360.0 * df_max)


def thresholds_for_rating(avg_kva: float) -> RelayConfig:
    if not 0 < avg_kva <= RATING_TABLE[-1][0]:
        raise ValueError(f"average DR rating {avg_kva} kVA outside 0-10000 kVA")
    for upper, df, dv, dphi in RATING_TABLE:
        if avg_kva <= upper:
            return RelayConfig(df, dv, dphi, dwell_time(df, dphi))
    raise AssertionError("unreachable")


def in_band(cfg: RelayConfig, df: float, dv: float, dphi: float) -> bool:
    return abs(df) <= cfg.df_max and abs(dv) <= cfg.dv_max and abs(wrap_angle(dphi)) <= cfg.dphi_max


def relay_step(cfg: RelayConfig, st: RelayState, df: float, dv: float, dphi: float,
               t: float) -> RelayState:
    if st.last_t is not None and t <= st.last_t:
        raise ValueError(f"relay time must increase ({t} <= {st.last_t})")
    ok = in_band(cfg, df, dv, dphi)
    if st.closed:
        # latched; the in-band flag keeps tracking for monitoring
        return replace(st, in_band=ok, last_t=t)
    if not ok:
        return RelayState(None, False, None, False, t)
    since = st.in_band_since if st.in_band_since is not None else t
    if t - since >= cfg.dwell - _EPS:
        return RelayState(since, True, t, True, t)
    return RelayState(since, False, None, True, t)
