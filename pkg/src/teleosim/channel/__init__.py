"""Leader/follower communication: codec, impairment, passivity, transport."""

from .codec import (
    BadMagicError,
    CodecError,
    COMMAND_MAGIC,
    FEEDBACK_MAGIC,
    FollowerFeedback,
    LeaderCommand,
    NonFiniteValueError,
    PROTOCOL_VERSION,
    TruncationError,
    VersionMismatchError,
    command_packet_size,
    decode_follower_fb,
    decode_leader_cmd,
    encode_follower_fb,
    encode_leader_cmd,
    feedback_packet_size,
)
from .impair import ChannelConfig, ImpairedQueue
from .tdpa import (
    ROLE_EFFORT,
    ROLE_FLOW,
    EnergyLedger,
    PortRole,
    damp_effort_kernel,
    damp_flow_kernel,
    observe_kernel,
    tdpa_damp_effort,
    tdpa_damp_flow,
    tdpa_observe,
)
from .transport import (
    CMD_PORT_ENV,
    DEFAULT_CMD_PORT,
    DEFAULT_FB_PORT,
    FB_PORT_ENV,
    LoopbackTransport,
    StaleHold,
    UdpEndpoint,
    command_port,
    feedback_port,
)

__all__ = [
    "BadMagicError",
    "ChannelConfig",
    "CodecError",
    "COMMAND_MAGIC",
    "CMD_PORT_ENV",
    "DEFAULT_CMD_PORT",
    "DEFAULT_FB_PORT",
    "EnergyLedger",
    "FB_PORT_ENV",
    "FEEDBACK_MAGIC",
    "FollowerFeedback",
    "ImpairedQueue",
    "LeaderCommand",
    "LoopbackTransport",
    "NonFiniteValueError",
    "PortRole",
    "PROTOCOL_VERSION",
    "ROLE_EFFORT",
    "ROLE_FLOW",
    "StaleHold",
    "TruncationError",
    "UdpEndpoint",
    "VersionMismatchError",
    "command_packet_size",
    "command_port",
    "damp_effort_kernel",
    "damp_flow_kernel",
    "decode_follower_fb",
    "decode_leader_cmd",
    "encode_follower_fb",
    "encode_leader_cmd",
    "feedback_packet_size",
    "feedback_port",
    "observe_kernel",
    "tdpa_damp_effort",
    "tdpa_damp_flow",
    "tdpa_observe",
]
