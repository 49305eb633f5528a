"""Time-domain passivity layer: discrete energy observer plus variable damper.

Each direction of the channel is watched by a pair of conjugate ledgers. A
port observes the signed power of its (flow, effort) sample pair, splits it
by sign into cumulative input energy (absorbed from the local side into the
channel) and output energy (released by the channel to the local side), and
transmits its input tally in-band. The far port may then never release more
energy than it has been told went in: before a release would overdraw the
account, a variable damper sized to the exact deficit dissipates the excess.

Sign conventions: at the effort port (the side that applies received torque)
flow @ effort > 0 means the local device is working against the received
effort — absorption; flow @ effort < 0 means the channel is driving the
device — release. At the flow port (the side that consumes received motion
commands) the roles mirror: flow @ effort > 0 is the delivered command doing
work against the environment — release; flow @ effort < 0 is the environment
pushing back — absorption.

Both ports observe the same conjugate products, so with an ideal channel the
release tally at one port equals the absorption tally reported by the other
at every step and the damper stays identically zero. A released quantum is
covered by the peer's report within one control period; under delay,
overdrafts persist at the flow port for up to the round-trip time and are
dissipated as soon as conjugate effort is available to damp against.

The scalar update rules live in numba kernels so the batch harness can run
the identical arithmetic inside its compiled trial loop; the ledger object
API below is a thin veneer over those kernels.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit

_DEFICIT_TOL = 1e-12

ROLE_EFFORT = 0
ROLE_FLOW = 1


class PortRole(Enum):
    """Which half of the conjugate pair the channel delivers at this port."""

    EFFORT = "effort"   # receives torque (leader side)
    FLOW = "flow"       # receives motion commands (follower side)

    @property
    def code(self) -> int:
        return ROLE_EFFORT if self is PortRole.EFFORT else ROLE_FLOW


@dataclass
class EnergyLedger:
    """Cumulative energy account of one channel port.

    e_in and e_out are monotone non-decreasing; e_received tracks the largest
    peer-reported input energy seen so far. p_obs is the last observed power
    into the channel, alpha the last damper coefficient, dissipated the total
    energy the damper has removed, damped_steps the number of steps on which
    it acted.
    """

    role: PortRole
    e_in: float = 0.0
    e_out: float = 0.0
    e_received: float = 0.0
    p_obs: float = 0.0
    alpha: float = 0.0
    dissipated: float = 0.0
    damped_steps: int = 0

    def update_received(self, e_in_remote: float) -> None:
        """Fold in a peer energy report; stale (reordered) reports are ignored."""
        if e_in_remote > self.e_received:
            self.e_received = e_in_remote

    @property
    def deficit(self) -> float:
        """Energy released beyond what the peer has reported absorbing."""
        return self.e_out - self.e_received


@njit(cache=True)
def observe_kernel(role_code, s, dt, e_in, e_out):
    """Fold conjugate product s into the tallies; returns (p, e_in', e_out')."""
    p = s if role_code == ROLE_EFFORT else -s
    if p >= 0.0:
        e_in += p * dt
    else:
        e_out += -p * dt
    return p, e_in, e_out


@njit(cache=True)
def damp_effort_kernel(s, flow_sq, dt, e_out, e_received):
    """Damper gain for an effort-port application with conjugate product s.

    The release this application would add is max(-s, 0)*dt; if that would
    overdraw the peer-reported input, the gain dissipates exactly the
    deficit (bounded by the quantum itself).
    """
    quantum = -s * dt if s < 0.0 else 0.0
    deficit = e_out + quantum - e_received
    if deficit <= _DEFICIT_TOL or quantum <= 0.0 or flow_sq <= 0.0:
        return 0.0
    return min(deficit, quantum) / (flow_sq * dt)


@njit(cache=True)
def damp_flow_kernel(effort_sq, dt, e_out, e_received):
    """Damper gain for a flow-port command, sized to the standing deficit."""
    deficit = e_out - e_received
    if deficit <= _DEFICIT_TOL or effort_sq <= 0.0:
        return 0.0
    return deficit / (effort_sq * dt)


def tdpa_observe(ledger: EnergyLedger, flow, effort, dt: float) -> float:
    """Accumulate one conjugate sample; returns the signed power into the channel."""
    flow = np.asarray(flow, dtype=np.float64)
    effort = np.asarray(effort, dtype=np.float64)
    p, ledger.e_in, ledger.e_out = observe_kernel(
        ledger.role.code, float(flow @ effort), dt, ledger.e_in, ledger.e_out)
    ledger.p_obs = p
    return p


def tdpa_damp_effort(ledger: EnergyLedger, effort, flow, dt: float) -> np.ndarray:
    """Damp a received effort before it is applied (effort-port enforcement).

    Computes the energy this application would release; if the cumulative
    release would exceed the peer-reported input, adds a viscous term
    alpha * flow — a damper opposing the device motion — sized to dissipate
    exactly the deficit. Passing effort back unchanged (the same object) when
    no damping is needed keeps the ideal channel bit-transparent.
    """
    if ledger.role is not PortRole.EFFORT:
        raise ValueError("effort damping applies to the effort port")
    effort_arr = np.asarray(effort, dtype=np.float64)
    flow_arr = np.asarray(flow, dtype=np.float64)
    s = float(flow_arr @ effort_arr)
    flow_sq = float(flow_arr @ flow_arr)
    alpha = damp_effort_kernel(s, flow_sq, dt, ledger.e_out, ledger.e_received)
    ledger.alpha = alpha
    if alpha == 0.0:
        return effort
    ledger.dissipated += alpha * flow_sq * dt
    ledger.damped_steps += 1
    return effort_arr + alpha * flow_arr


def tdpa_damp_flow(ledger: EnergyLedger, flow, effort, dt: float) -> np.ndarray:
    """Damp a received flow command (flow-port enforcement).

    The flow port's release is only tallied once the conjugate effort of the
    step is known, so enforcement acts on the standing deficit: the command
    is bent against the current effort direction until the overdraft has
    been re-absorbed. With no standing deficit the command passes through as
    the same object.
    """
    if ledger.role is not PortRole.FLOW:
        raise ValueError("flow damping applies to the flow port")
    flow_arr = np.asarray(flow, dtype=np.float64)
    effort_arr = np.asarray(effort, dtype=np.float64)
    effort_sq = float(effort_arr @ effort_arr)
    alpha = damp_flow_kernel(effort_sq, dt, ledger.e_out, ledger.e_received)
    ledger.alpha = alpha
    if alpha == 0.0:
        return flow
    ledger.dissipated += alpha * effort_sq * dt
    ledger.damped_steps += 1
    return flow_arr - alpha * effort_arr
