"""Packet transport: deterministic in-process loopback and UDP sockets.

The loopback transport owns one impaired queue per direction and is the
default for experiments — everything runs lockstep on one thread and a seed
fixes the delivery schedule. The UDP transport carries the same datagrams
between processes for live sessions; one packet per datagram.

Default ports: 47001 for leader-to-follower commands and 47002 for the
reverse feedback direction, overridable through the TELEOSIM_CMD_PORT and
TELEOSIM_FB_PORT environment variables.
"""

from __future__ import annotations

import os
import socket

import numpy as np

from .impair import ChannelConfig, ImpairedQueue

DEFAULT_CMD_PORT = 47001
DEFAULT_FB_PORT = 47002

CMD_PORT_ENV = "TELEOSIM_CMD_PORT"
FB_PORT_ENV = "TELEOSIM_FB_PORT"

STALE_TIMEOUT_S = 0.1


def command_port() -> int:
    return int(os.environ.get(CMD_PORT_ENV, DEFAULT_CMD_PORT))


def feedback_port() -> int:
    return int(os.environ.get(FB_PORT_ENV, DEFAULT_FB_PORT))


class LoopbackTransport:
    """Both channel directions in one process, impaired deterministically.

    Seeds for the two directions are derived from the config seed so the
    command and feedback schedules are independent streams.
    """

    def __init__(self, cfg: ChannelConfig):
        self.cfg = cfg
        self.command_queue = ImpairedQueue(cfg)
        fb_cfg = ChannelConfig(delay_ms=cfg.delay_ms, jitter_ms=cfg.jitter_ms,
                               loss_prob=cfg.loss_prob,
                               reorder_prob=cfg.reorder_prob,
                               seed=cfg.seed + 0x9E3779B9)
        self.feedback_queue = ImpairedQueue(fb_cfg)

    def send_command(self, payload: bytes, t_send_us: int) -> None:
        self.command_queue.send(payload, t_send_us)

    def recv_commands(self, now_us: int) -> list[bytes]:
        return self.command_queue.poll(now_us)

    def send_feedback(self, payload: bytes, t_send_us: int) -> None:
        self.feedback_queue.send(payload, t_send_us)

    def recv_feedback(self, now_us: int) -> list[bytes]:
        return self.feedback_queue.poll(now_us)


class UdpEndpoint:
    """One side of a live session; sends to the peer, drains its own port.

    role "leader" transmits commands and listens for feedback; "follower"
    the reverse.
    """

    def __init__(self, role: str, peer_host: str = "127.0.0.1",
                 bind_host: str = "0.0.0.0"):
        if role not in ("leader", "follower"):
            raise ValueError(f"role must be 'leader' or 'follower', got {role!r}")
        self.role = role
        cmd, fb = command_port(), feedback_port()
        send_port, recv_port = (cmd, fb) if role == "leader" else (fb, cmd)
        self._peer = (peer_host, send_port)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((bind_host, recv_port))
        self._sock.setblocking(False)

    def send(self, payload: bytes) -> None:
        self._sock.sendto(payload, self._peer)

    def poll(self) -> list[bytes]:
        out = []
        while True:
            try:
                data, _ = self._sock.recvfrom(65535)
            except BlockingIOError:
                return out
            out.append(data)

    def close(self) -> None:
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class StaleHold:
    """Zero-order hold over lossy reception with a safety decay to zero.

    Holds the last received vector. With decay enabled (velocities, torques)
    the sample drops to zeros after timeout seconds of silence so a dead link
    cannot keep commanding motion; with decay disabled (position commands)
    the last value holds indefinitely — freezing in place is the safe
    behavior there.
    """

    def __init__(self, n: int, timeout: float = STALE_TIMEOUT_S,
                 decay: bool = True):
        if timeout <= 0.0:
            raise ValueError("timeout must be positive")
        self.timeout = timeout
        self.decay = decay
        self._value = np.zeros(n)
        self._last_update: float | None = None

    def update(self, value, now: float) -> None:
        self._value = np.asarray(value, dtype=np.float64).reshape(self._value.shape)
        self._last_update = now

    def sample(self, now: float) -> np.ndarray:
        stale = self._last_update is None or now - self._last_update > self.timeout
        if stale and self.decay:
            return np.zeros_like(self._value)
        return self._value

    @property
    def fresh_until(self) -> float:
        return -np.inf if self._last_update is None else self._last_update + self.timeout
