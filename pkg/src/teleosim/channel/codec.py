"""Binary wire format for the leader/follower packet pair.

Layout is little-endian and fixed per packet type: a 4-byte magic, protocol
version, sequence number, send timestamp in microseconds, the joint count,
then the payload floats. One packet per datagram; the encoded length is a
constant function of the joint count.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

PROTOCOL_VERSION = 1

COMMAND_MAGIC = b"TSA1"
FEEDBACK_MAGIC = b"TSF1"

_PREFIX = struct.Struct("<4sBIQB")   # magic, version, seq, t_send_us, n

_U32_MAX = 2**32 - 1
_U64_MAX = 2**64 - 1


class CodecError(ValueError):
    """Base class for wire-format violations."""


class BadMagicError(CodecError):
    """Buffer does not start with the expected packet magic."""


class VersionMismatchError(CodecError):
    """Packet encoded with an unsupported protocol version."""


class TruncationError(CodecError):
    """Buffer length does not match the declared packet layout."""


class NonFiniteValueError(CodecError):
    """Decoded payload contains NaN or infinity."""


def command_packet_size(n: int) -> int:
    """Encoded byte length of a command packet for an n-joint arm."""
    return _PREFIX.size + 8 * n + 8 * n + 8


def feedback_packet_size(n: int) -> int:
    """Encoded byte length of a feedback packet for an n-joint arm."""
    return _PREFIX.size + 8 * n + 48 + 1 + 1 + 8


def _as_float_array(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64).reshape(n)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError(f"{name} must be finite")
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


def _check_uint(value: int, limit: int, name: str) -> int:
    value = int(value)
    if not 0 <= value <= limit:
        raise ValueError(f"{name} out of range: {value}")
    return value


@dataclass(frozen=True)
class LeaderCommand:
    """Motion command streamed from the leader arm each control tick.

    e_in_l is the cumulative energy the channel has absorbed at the leader
    port, transmitted in-band so the far side can enforce passivity.
    """

    seq: int
    t_send_us: int
    q_d: np.ndarray
    dq_d: np.ndarray
    e_in_l: float

    def __post_init__(self):
        q_d = np.asarray(self.q_d, dtype=np.float64).reshape(-1)
        n = q_d.shape[0]
        if not 1 <= n <= 255:
            raise ValueError(f"joint count must be in [1, 255], got {n}")
        object.__setattr__(self, "seq", _check_uint(self.seq, _U32_MAX, "seq"))
        object.__setattr__(self, "t_send_us",
                           _check_uint(self.t_send_us, _U64_MAX, "t_send_us"))
        object.__setattr__(self, "q_d", _as_float_array(q_d, n, "q_d"))
        object.__setattr__(self, "dq_d", _as_float_array(self.dq_d, n, "dq_d"))
        e = float(self.e_in_l)
        if not np.isfinite(e):
            raise NonFiniteValueError("e_in_l must be finite")
        object.__setattr__(self, "e_in_l", e)

    @property
    def n(self) -> int:
        return self.q_d.shape[0]


@dataclass(frozen=True)
class FollowerFeedback:
    """Interaction feedback streamed from the follower arm each control tick.

    tau_d_f is the joint-space feedback torque for the leader, f_ext_f the
    measured end-effector wrench (diagnostic), eta the autonomy level and
    stage the task stage. e_in_f mirrors e_in_l for the reverse direction.
    """

    seq: int
    t_send_us: int
    tau_d_f: np.ndarray
    f_ext_f: np.ndarray
    eta: int
    stage: int
    e_in_f: float

    def __post_init__(self):
        tau = np.asarray(self.tau_d_f, dtype=np.float64).reshape(-1)
        n = tau.shape[0]
        if not 1 <= n <= 255:
            raise ValueError(f"joint count must be in [1, 255], got {n}")
        object.__setattr__(self, "seq", _check_uint(self.seq, _U32_MAX, "seq"))
        object.__setattr__(self, "t_send_us",
                           _check_uint(self.t_send_us, _U64_MAX, "t_send_us"))
        object.__setattr__(self, "tau_d_f", _as_float_array(tau, n, "tau_d_f"))
        object.__setattr__(self, "f_ext_f",
                           _as_float_array(self.f_ext_f, 6, "f_ext_f"))
        if self.eta not in (0, 1):
            raise ValueError(f"eta must be 0 or 1, got {self.eta}")
        if self.stage not in (0, 1, 2):
            raise ValueError(f"stage must be 0, 1 or 2, got {self.stage}")
        object.__setattr__(self, "eta", int(self.eta))
        object.__setattr__(self, "stage", int(self.stage))
        e = float(self.e_in_f)
        if not np.isfinite(e):
            raise NonFiniteValueError("e_in_f must be finite")
        object.__setattr__(self, "e_in_f", e)

    @property
    def n(self) -> int:
        return self.tau_d_f.shape[0]


def encode_leader_cmd(pkt: LeaderCommand) -> bytes:
    n = pkt.n
    head = _PREFIX.pack(COMMAND_MAGIC, PROTOCOL_VERSION, pkt.seq, pkt.t_send_us, n)
    body = struct.pack(f"<{n}d{n}dd", *pkt.q_d, *pkt.dq_d, pkt.e_in_l)
    return head + body


def encode_follower_fb(pkt: FollowerFeedback) -> bytes:
    n = pkt.n
    head = _PREFIX.pack(FEEDBACK_MAGIC, PROTOCOL_VERSION, pkt.seq, pkt.t_send_us, n)
    body = struct.pack(f"<{n}d6dBBd", *pkt.tau_d_f, *pkt.f_ext_f,
                       pkt.eta, pkt.stage, pkt.e_in_f)
    return head + body


def _decode_prefix(buf: bytes, magic: bytes):
    if len(buf) < 4:
        raise TruncationError(f"buffer of {len(buf)} bytes is shorter than the magic")
    if buf[:4] != magic:
        raise BadMagicError(f"expected magic {magic!r}, got {buf[:4]!r}")
    if len(buf) < _PREFIX.size:
        raise TruncationError(
            f"buffer of {len(buf)} bytes is shorter than the {_PREFIX.size}-byte header")
    _, version, seq, t_send_us, n = _PREFIX.unpack_from(buf)
    if version != PROTOCOL_VERSION:
        raise VersionMismatchError(
            f"protocol version {version} unsupported (expected {PROTOCOL_VERSION})")
    if n < 1:
        raise TruncationError("declared joint count must be at least 1")
    return seq, t_send_us, n


def decode_leader_cmd(buf: bytes) -> LeaderCommand:
    seq, t_send_us, n = _decode_prefix(buf, COMMAND_MAGIC)
    expected = command_packet_size(n)
    if len(buf) != expected:
        raise TruncationError(
            f"command packet for n={n} must be {expected} bytes, got {len(buf)}")
    values = struct.unpack_from(f"<{n}d{n}dd", buf, _PREFIX.size)
    q_d = np.array(values[:n])
    dq_d = np.array(values[n:2 * n])
    e_in_l = values[2 * n]
    if not (np.all(np.isfinite(q_d)) and np.all(np.isfinite(dq_d))
            and np.isfinite(e_in_l)):
        raise NonFiniteValueError("command payload contains non-finite values")
    return LeaderCommand(seq=seq, t_send_us=t_send_us, q_d=q_d, dq_d=dq_d,
                         e_in_l=e_in_l)


def decode_follower_fb(buf: bytes) -> FollowerFeedback:
    seq, t_send_us, n = _decode_prefix(buf, FEEDBACK_MAGIC)
    expected = feedback_packet_size(n)
    if len(buf) != expected:
        raise TruncationError(
            f"feedback packet for n={n} must be {expected} bytes, got {len(buf)}")
    values = struct.unpack_from(f"<{n}d6dBBd", buf, _PREFIX.size)
    tau = np.array(values[:n])
    f_ext = np.array(values[n:n + 6])
    eta, stage = values[n + 6], values[n + 7]
    e_in_f = values[n + 8]
    if not (np.all(np.isfinite(tau)) and np.all(np.isfinite(f_ext))
            and np.isfinite(e_in_f)):
        raise NonFiniteValueError("feedback payload contains non-finite values")
    if eta not in (0, 1):
        raise CodecError(f"eta byte must be 0 or 1, got {eta}")
    if stage not in (0, 1, 2):
        raise CodecError(f"stage byte must be 0, 1 or 2, got {stage}")
    return FollowerFeedback(seq=seq, t_send_us=t_send_us, tau_d_f=tau,
                            f_ext_f=f_ext, eta=eta, stage=stage, e_in_f=e_in_f)
