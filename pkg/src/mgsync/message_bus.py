"""Delayed, zero-order-hold delivery of samples over communication links."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Any, Hashable, Mapping, Optional

# tolerance on delivery instants; sim times are k*dt and delays are sums of floats
_EPS = 1e-9


@dataclass(frozen=True)
class Sample:
    src: Hashable
    dst: Hashable
    payload: Any
    sent_at: float
    deliver_at: float


class MessageBus:
    """Per-link FIFO queues with constant delay.

    ``latest(dst, src, t)`` returns the most recent payload delivered by ``t``
    and keeps returning it until a newer one arrives.
    """

    def __init__(self, delays: Optional[Mapping[tuple, float]] = None, default_delay: float = 0.0,
                 loss_probability: float = 0.0):
        if loss_probability != 0.0:
            raise NotImplementedError("packet loss is not modelled")
        self.delays = dict(delays or {})
        self.default_delay = default_delay
        self._queues: dict[tuple, deque] = {}
        self._held: dict[tuple, Sample] = {}
        self._last_t = float("-inf")

    def delay(self, src, dst) -> float:
        return self.delays.get((src, dst), self.default_delay)

    def set_delay(self, src, dst, seconds: float):
        if seconds < 0:
            raise ValueError("link delay must be non-negative")
        self.delays[(src, dst)] = seconds

    def publish(self, src, payloads: Mapping[Hashable, Any], t: float):
        if t < self._last_t:
            raise ValueError(f"publish time went backwards ({t} < {self._last_t})")
        self._last_t = t
        for dst, payload in payloads.items():
            s = Sample(src, dst, payload, t, t + self.delay(src, dst))
            q = self._queues.setdefault((src, dst), deque())
            if q and s.deliver_at < q[-1].deliver_at:
                # only possible when a link delay is shortened mid-run
                raise RuntimeError(f"link {src}->{dst} would reorder samples")
            q.append(s)

    def latest(self, dst, src, t: float) -> Any:
        key = (src, dst)
        q = self._queues.get(key)
        if q:
            while q and q[0].deliver_at <= t + _EPS:
                self._held[key] = q.popleft()
        s = self._held.get(key)
        return None if s is None else s.payload

    def pending(self, src, dst) -> int:
        return len(self._queues.get((src, dst), ()))
