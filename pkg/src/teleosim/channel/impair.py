"""Deterministic network impairment: delay, jitter, loss and reordering.

Every packet consumes the same number of RNG draws regardless of which
impairments are enabled, so a given seed and send schedule always produce
the same delivery log no matter how the configuration is later varied.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChannelConfig:
    """One direction of the channel: one-way delay plus stochastic impairments."""

    delay_ms: float = 0.0
    jitter_ms: float = 0.0
    loss_prob: float = 0.0
    reorder_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.delay_ms < 0.0 or self.jitter_ms < 0.0:
            raise ValueError("delay_ms and jitter_ms must be non-negative")
        for name in ("loss_prob", "reorder_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if int(self.seed) < 0:
            raise ValueError("seed must be non-negative")

    @property
    def ideal(self) -> bool:
        """True when the direction neither delays nor perturbs packets."""
        return (self.delay_ms == 0.0 and self.jitter_ms == 0.0
                and self.loss_prob == 0.0 and self.reorder_prob == 0.0)


class ImpairedQueue:
    """Single-direction packet queue with seeded delay/loss/reorder schedule.

    Packets are enqueued with their send timestamp and become deliverable at
    send + delay + jitter draw. A loss draw drops the packet outright; a
    reorder draw swaps delivery times with the most recent still-pending
    packet. poll() drains everything deliverable at the given time in
    (delivery time, enqueue order) order.
    """

    def __init__(self, cfg: ChannelConfig):
        self.cfg = cfg
        self._rng = np.random.default_rng(cfg.seed)
        self._heap: list[tuple[int, int, bytes]] = []
        self._count = 0
        self.sent = 0
        self.dropped = 0

    def send(self, payload: bytes, t_send_us: int) -> None:
        u_loss = self._rng.random()
        u_jitter = self._rng.random()
        u_reorder = self._rng.random()
        self.sent += 1
        if u_loss < self.cfg.loss_prob:
            self.dropped += 1
            return
        delay_us = self.cfg.delay_ms * 1e3 + u_jitter * self.cfg.jitter_ms * 1e3
        t_deliver = int(t_send_us) + int(round(delay_us))
        if u_reorder < self.cfg.reorder_prob and self._heap:
            idx = max(range(len(self._heap)), key=lambda i: self._heap[i][1])
            prev_t, prev_count, prev_payload = self._heap[idx]
            self._heap[idx] = (t_deliver, prev_count, prev_payload)
            heapq.heapify(self._heap)
            t_deliver = prev_t
        heapq.heappush(self._heap, (t_deliver, self._count, payload))
        self._count += 1

    def poll(self, now_us: int) -> list[bytes]:
        """Packets whose delivery time has arrived, in delivery order."""
        out = []
        while self._heap and self._heap[0][0] <= now_us:
            out.append(heapq.heappop(self._heap)[2])
        return out

    @property
    def pending(self) -> int:
        return len(self._heap)
