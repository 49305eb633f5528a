"""Wire codec, impairment scheduling, and passivity-layer tests."""

import numpy as np
import pytest

from teleosim.channel import (
    BadMagicError,
    ChannelConfig,
    EnergyLedger,
    FollowerFeedback,
    ImpairedQueue,
    LeaderCommand,
    LoopbackTransport,
    NonFiniteValueError,
    PortRole,
    StaleHold,
    TruncationError,
    UdpEndpoint,
    VersionMismatchError,
    command_packet_size,
    decode_follower_fb,
    decode_leader_cmd,
    encode_follower_fb,
    encode_leader_cmd,
    feedback_packet_size,
    tdpa_damp_effort,
    tdpa_damp_flow,
    tdpa_observe,
)


def random_command(rng, n=None):
    n = n or int(rng.integers(1, 13))
    return LeaderCommand(
        seq=int(rng.integers(0, 2**32)),
        t_send_us=int(rng.integers(0, 2**63)),
        q_d=rng.normal(size=n) * 10.0,
        dq_d=rng.normal(size=n),
        e_in_l=float(rng.normal() * 100.0),
    )


def random_feedback(rng, n=None):
    n = n or int(rng.integers(1, 13))
    return FollowerFeedback(
        seq=int(rng.integers(0, 2**32)),
        t_send_us=int(rng.integers(0, 2**63)),
        tau_d_f=rng.normal(size=n) * 50.0,
        f_ext_f=rng.normal(size=6) * 20.0,
        eta=int(rng.integers(0, 2)),
        stage=int(rng.integers(0, 3)),
        e_in_f=float(rng.normal() * 100.0),
    )


# -- codec -------------------------------------------------------------------

def test_command_round_trip_property():
    rng = np.random.default_rng(101)
    for _ in range(500):
        pkt = random_command(rng)
        out = decode_leader_cmd(encode_leader_cmd(pkt))
        assert out.seq == pkt.seq and out.t_send_us == pkt.t_send_us
        np.testing.assert_array_equal(out.q_d, pkt.q_d)
        np.testing.assert_array_equal(out.dq_d, pkt.dq_d)
        assert out.e_in_l == pkt.e_in_l


def test_feedback_round_trip_property():
    rng = np.random.default_rng(103)
    for _ in range(500):
        pkt = random_feedback(rng)
        out = decode_follower_fb(encode_follower_fb(pkt))
        assert (out.seq, out.t_send_us, out.eta, out.stage) == \
            (pkt.seq, pkt.t_send_us, pkt.eta, pkt.stage)
        np.testing.assert_array_equal(out.tau_d_f, pkt.tau_d_f)
        np.testing.assert_array_equal(out.f_ext_f, pkt.f_ext_f)
        assert out.e_in_f == pkt.e_in_f


def test_packet_sizes_are_constant_in_n():
    assert command_packet_size(7) == 138
    assert feedback_packet_size(7) == 132
    rng = np.random.default_rng(2)
    for n in (1, 3, 7, 12):
        assert len(encode_leader_cmd(random_command(rng, n))) == command_packet_size(n)
        assert len(encode_follower_fb(random_feedback(rng, n))) == feedback_packet_size(n)


def test_truncated_buffer_raises():
    rng = np.random.default_rng(3)
    buf = encode_leader_cmd(random_command(rng, 7))
    with pytest.raises(TruncationError):
        decode_leader_cmd(buf[:-1])
    with pytest.raises(TruncationError):
        decode_leader_cmd(buf[:3])
    fb = encode_follower_fb(random_feedback(rng, 7))
    with pytest.raises(TruncationError):
        decode_follower_fb(fb[:-1])
    with pytest.raises(TruncationError):
        decode_follower_fb(fb + b"\x00")


def test_bad_magic_raises():
    rng = np.random.default_rng(4)
    buf = encode_leader_cmd(random_command(rng, 7))
    with pytest.raises(BadMagicError):
        decode_leader_cmd(b"XXXX" + buf[4:])
    fb = encode_follower_fb(random_feedback(rng, 7))
    with pytest.raises(BadMagicError):
        decode_leader_cmd(fb)   # feedback bytes fed to the command decoder


def test_version_mismatch_raises():
    rng = np.random.default_rng(5)
    buf = bytearray(encode_leader_cmd(random_command(rng, 7)))
    buf[4] = 99
    with pytest.raises(VersionMismatchError):
        decode_leader_cmd(bytes(buf))


def test_non_finite_payload_raises():
    rng = np.random.default_rng(6)
    buf = bytearray(encode_leader_cmd(random_command(rng, 7)))
    import struct
    struct.pack_into("<d", buf, 18, float("nan"))
    with pytest.raises(NonFiniteValueError):
        decode_leader_cmd(bytes(buf))
    with pytest.raises(NonFiniteValueError):
        LeaderCommand(seq=0, t_send_us=0, q_d=[np.inf], dq_d=[0.0], e_in_l=0.0)


def test_packet_field_validation():
    with pytest.raises(ValueError):
        LeaderCommand(seq=-1, t_send_us=0, q_d=[0.0], dq_d=[0.0], e_in_l=0.0)
    with pytest.raises(ValueError):
        FollowerFeedback(seq=0, t_send_us=0, tau_d_f=[0.0], f_ext_f=np.zeros(6),
                         eta=2, stage=0, e_in_f=0.0)
    with pytest.raises(ValueError):
        FollowerFeedback(seq=0, t_send_us=0, tau_d_f=[0.0], f_ext_f=np.zeros(6),
                         eta=0, stage=3, e_in_f=0.0)


# -- impairment --------------------------------------------------------------

def test_zero_config_is_fifo_immediate():
    q = ImpairedQueue(ChannelConfig())
    payloads = [bytes([i]) for i in range(5)]
    for i, p in enumerate(payloads):
        q.send(p, 1000 * i)
    assert q.poll(4000) == payloads
    assert q.poll(4000) == []


def test_pure_delay_is_exact():
    q = ImpairedQueue(ChannelConfig(delay_ms=50.0))
    q.send(b"a", 1_000_000)
    assert q.poll(1_049_999) == []
    assert q.poll(1_050_000) == [b"a"]


def test_total_loss_delivers_nothing():
    q = ImpairedQueue(ChannelConfig(loss_prob=1.0, seed=7))
    for i in range(100):
        q.send(bytes([i % 256]), i)
    assert q.poll(10**9) == []
    assert q.dropped == 100


def test_impairment_schedule_is_deterministic():
    cfg = ChannelConfig(delay_ms=5.0, jitter_ms=3.0, loss_prob=0.2,
                        reorder_prob=0.1, seed=42)

    def run():
        q = ImpairedQueue(cfg)
        log = []
        for i in range(200):
            q.send(i.to_bytes(2, "little"), i * 1000)
            log.append((i, tuple(q.poll(i * 1000))))
        log.append(("end", tuple(q.poll(10**9))))
        return log

    assert run() == run()
    other = ImpairedQueue(ChannelConfig(delay_ms=5.0, jitter_ms=3.0,
                                        loss_prob=0.2, reorder_prob=0.1, seed=43))
    for i in range(200):
        other.send(i.to_bytes(2, "little"), i * 1000)
    assert tuple(other.poll(10**9)) != run()[-1][1]


def test_reorder_swaps_adjacent_packets():
    q = ImpairedQueue(ChannelConfig(delay_ms=10.0, reorder_prob=1.0, seed=1))
    q.send(b"first", 0)
    q.send(b"second", 1000)
    out = q.poll(10**9)
    assert out == [b"second", b"first"]


def test_channel_config_validation():
    with pytest.raises(ValueError):
        ChannelConfig(delay_ms=-1.0)
    with pytest.raises(ValueError):
        ChannelConfig(loss_prob=1.5)
    with pytest.raises(ValueError):
        ChannelConfig(reorder_prob=-0.1)
    assert ChannelConfig().ideal
    assert not ChannelConfig(delay_ms=1.0).ideal


# -- passivity layer ---------------------------------------------------------

def test_observe_zero_flow_leaves_energy_unchanged():
    led = EnergyLedger(role=PortRole.FLOW)
    p = tdpa_observe(led, np.zeros(3), np.array([5.0, -2.0, 1.0]), 1e-3)
    assert p == 0.0
    assert led.e_in == 0.0 and led.e_out == 0.0


def test_observe_integrates_constant_power():
    led = EnergyLedger(role=PortRole.EFFORT)
    for _ in range(1000):
        tdpa_observe(led, np.array([1.0]), np.array([1.0]), 1e-3)
    assert led.e_in == pytest.approx(1.0, abs=1e-12)
    assert led.e_out == 0.0


def test_observe_splits_sign_flip():
    led = EnergyLedger(role=PortRole.EFFORT)
    for k in range(1000):
        effort = np.array([1.0 if k < 500 else -1.0])
        tdpa_observe(led, np.array([1.0]), effort, 1e-3)
    assert led.e_in == pytest.approx(0.5, abs=1e-12)
    assert led.e_out == pytest.approx(0.5, abs=1e-12)
    assert led.e_in + led.e_out == pytest.approx(1.0, abs=1e-12)


def test_port_release_conventions():
    # effort port: channel drives the device when flow and effort anti-align
    led = EnergyLedger(role=PortRole.EFFORT)
    tdpa_observe(led, np.array([2.0]), np.array([-3.0]), 1e-3)
    assert led.e_out == pytest.approx(6e-3)
    assert led.e_in == 0.0
    # flow port: delivered command working against the environment is release
    led = EnergyLedger(role=PortRole.FLOW)
    tdpa_observe(led, np.array([2.0]), np.array([3.0]), 1e-3)
    assert led.e_out == pytest.approx(6e-3)
    assert led.e_in == 0.0


def test_damp_effort_passthrough_when_covered():
    led = EnergyLedger(role=PortRole.EFFORT)
    led.update_received(10.0)
    effort = np.array([-4.0, 0.0])   # releases 4 mW against a 10 J budget
    out = tdpa_damp_effort(led, effort, np.array([1.0, 0.0]), 1e-3)
    assert out is effort
    assert led.alpha == 0.0
    absorbing = EnergyLedger(role=PortRole.EFFORT)
    aligned = np.array([4.0, 0.0])   # absorption releases nothing
    assert tdpa_damp_effort(absorbing, aligned, np.array([1.0, 0.0]), 1e-3) is aligned


def test_damp_effort_dissipates_uncovered_release():
    dt = 1e-3
    led = EnergyLedger(role=PortRole.EFFORT)
    flow = np.array([1.0])
    effort = np.array([-2.0])   # would release 2 mW*s with zero budget
    damped = tdpa_damp_effort(led, effort, flow, dt)
    assert led.alpha > 0.0
    tdpa_observe(led, flow, damped, dt)
    assert led.e_out <= led.e_received + 1e-12
    assert led.dissipated == pytest.approx(2.0 * dt)


def test_damp_effort_proportionality():
    dt = 1e-3
    dissipated = []
    for scale in (1.0, 2.0):
        led = EnergyLedger(role=PortRole.EFFORT)
        tdpa_damp_effort(led, np.array([-2.0 * scale]), np.array([1.0]), dt)
        dissipated.append(led.dissipated)
    assert dissipated[1] == pytest.approx(2.0 * dissipated[0])


def test_damp_effort_lands_exactly_on_budget():
    dt = 1e-3
    led = EnergyLedger(role=PortRole.EFFORT)
    led.update_received(1.0 * dt)
    flow, effort = np.array([1.0]), np.array([-2.0])
    damped = tdpa_damp_effort(led, effort, flow, dt)
    tdpa_observe(led, flow, damped, dt)
    assert led.e_out == pytest.approx(led.e_received, abs=1e-15)


def test_damp_flow_acts_on_standing_deficit():
    dt = 1e-3
    led = EnergyLedger(role=PortRole.FLOW)
    led.e_out = 5e-3   # released more than reported in
    led.update_received(2e-3)
    flow = np.array([0.5])
    effort = np.array([2.0])
    damped = tdpa_damp_flow(led, flow, effort, dt)
    assert led.alpha > 0.0
    assert led.dissipated == pytest.approx(3e-3)
    np.testing.assert_allclose(damped, flow - led.alpha * effort)
    covered = EnergyLedger(role=PortRole.FLOW)
    covered.update_received(1.0)
    same = tdpa_damp_flow(covered, flow, effort, dt)
    assert same is flow


def test_damp_role_checks():
    with pytest.raises(ValueError):
        tdpa_damp_effort(EnergyLedger(role=PortRole.FLOW),
                         np.zeros(1), np.zeros(1), 1e-3)
    with pytest.raises(ValueError):
        tdpa_damp_flow(EnergyLedger(role=PortRole.EFFORT),
                       np.zeros(1), np.zeros(1), 1e-3)


def test_update_received_is_monotone():
    led = EnergyLedger(role=PortRole.EFFORT)
    led.update_received(3.0)
    led.update_received(1.0)   # stale, reordered report
    assert led.e_received == 3.0


# -- closed-loop mini-teleoperation ------------------------------------------

def scalar_teleop(steps, delay_ms, tdpa_enabled, active_gain=0.0, seed=11):
    """1-DoF leader/follower exchange through the real packet path.

    The leader is a damped mass driven by a sinusoid; the follower presses a
    spring and returns the spring force. active_gain > 0 adds a disturbance
    torque to the feedback stream after energy accounting, i.e. unreported
    energy injected into the channel.
    """
    dt = 1e-3
    transport = LoopbackTransport(ChannelConfig(delay_ms=delay_ms, seed=seed))
    led_l = EnergyLedger(role=PortRole.EFFORT)
    led_f = EnergyLedger(role=PortRole.FLOW)

    m, b = 1.0, 2.0
    x_l, v_l = 0.0, 0.0
    x_f = 0.0
    k_env = 400.0
    tau_hold = StaleHold(1)
    cmd_hold_q = StaleHold(1, decay=False)
    cmd_hold_dq = StaleHold(1)
    v_sent_prev = np.zeros(1)
    tau_gen_prev = np.zeros(1)

    xs, deficits_l, deficits_f, alphas = [], [], [], []
    for k in range(steps):
        now_us = int(k * dt * 1e6)
        t = k * dt

        # leader half-tick: apply freshest feedback, damped if enabled
        for payload in transport.recv_feedback(now_us):
            pkt = decode_follower_fb(payload)
            led_l.update_received(pkt.e_in_f)
            tau_hold.update(pkt.tau_d_f, t)
        tau_fb = tau_hold.sample(t)
        if tdpa_enabled:
            tau_fb = tdpa_damp_effort(led_l, tau_fb, v_sent_prev, dt)
        tdpa_observe(led_l, v_sent_prev, tau_fb, dt)
        force = 3.0 * np.sin(2.0 * np.pi * 0.8 * t)
        a = (force - float(tau_fb[0]) - b * v_l) / m
        v_l += a * dt
        x_l += v_l * dt
        cmd = LeaderCommand(seq=k, t_send_us=now_us, q_d=[x_l], dq_d=[v_l],
                            e_in_l=led_l.e_in)
        transport.send_command(encode_leader_cmd(cmd), now_us)
        v_sent_prev = np.array([v_l])

        # follower half-tick: consume freshest command, generate spring force
        for payload in transport.recv_commands(now_us):
            pkt = decode_leader_cmd(payload)
            led_f.update_received(pkt.e_in_l)
            cmd_hold_q.update(pkt.q_d, t)
            cmd_hold_dq.update(pkt.dq_d, t)
        dq_d = cmd_hold_dq.sample(t)
        if tdpa_enabled:
            dq_d = tdpa_damp_flow(led_f, dq_d, tau_gen_prev, dt)
        deficits_f.append(led_f.deficit)   # standing deficit is what is enforced
        x_f += float(dq_d[0]) * dt
        tau_gen = np.array([k_env * max(x_f, 0.0)])
        tdpa_observe(led_f, dq_d, tau_gen, dt)
        tau_out = tau_gen - active_gain * np.sign(v_sent_prev)
        fb = FollowerFeedback(seq=k, t_send_us=now_us, tau_d_f=tau_out,
                              f_ext_f=np.zeros(6), eta=0, stage=1,
                              e_in_f=led_f.e_in)
        transport.send_feedback(encode_follower_fb(fb), now_us)
        tau_gen_prev = tau_gen

        xs.append(x_l)
        deficits_l.append(led_l.deficit)
        alphas.append(led_l.alpha)
    return (np.array(xs), np.array(deficits_l), np.array(deficits_f),
            np.array(alphas), led_l, led_f)


def test_zero_delay_never_damps_and_ledgers_balance():
    xs, d_l, d_f, alphas, led_l, led_f = scalar_teleop(3000, 0.0, True)
    assert np.all(alphas == 0.0)
    assert led_l.damped_steps == 0 and led_f.damped_steps == 0
    assert np.max(d_l) <= 1e-12
    assert np.max(d_f) <= 1e-12


def test_zero_delay_tdpa_is_transparent():
    on, *_ = scalar_teleop(3000, 0.0, True)
    off, *_ = scalar_teleop(3000, 0.0, False)
    assert np.max(np.abs(on - off)) <= 1e-9


def test_active_disturbance_under_delay_is_damped():
    for delay in (50.0, 200.0):
        xs, d_l, d_f, alphas, led_l, led_f = scalar_teleop(
            4000, delay, True, active_gain=2.0)
        assert led_l.damped_steps > 0
        assert np.max(d_l) <= 1e-12
        assert np.all(np.isfinite(xs)) and np.max(np.abs(xs)) < 10.0


def test_undamped_active_disturbance_releases_excess_energy():
    _, d_l, _, _, led_l, _ = scalar_teleop(4000, 200.0, False, active_gain=2.0)
    assert np.max(d_l) > 1e-6


# -- transport ---------------------------------------------------------------

def test_udp_round_trip(monkeypatch):
    monkeypatch.setenv("TELEOSIM_CMD_PORT", "50471")
    monkeypatch.setenv("TELEOSIM_FB_PORT", "50472")
    rng = np.random.default_rng(8)
    pkt = random_command(rng, 7)
    with UdpEndpoint("leader", peer_host="127.0.0.1") as leader, \
            UdpEndpoint("follower", peer_host="127.0.0.1") as follower:
        leader.send(encode_leader_cmd(pkt))
        import time
        deadline = time.monotonic() + 2.0
        got = []
        while not got and time.monotonic() < deadline:
            got = follower.poll()
        assert len(got) == 1
        out = decode_leader_cmd(got[0])
        np.testing.assert_array_equal(out.q_d, pkt.q_d)


def test_udp_rejects_unknown_role():
    with pytest.raises(ValueError):
        UdpEndpoint("observer")


def test_stale_hold_decay():
    hold = StaleHold(2, timeout=0.1)
    np.testing.assert_array_equal(hold.sample(0.0), np.zeros(2))
    hold.update([1.0, -2.0], 1.0)
    np.testing.assert_array_equal(hold.sample(1.05), [1.0, -2.0])
    np.testing.assert_array_equal(hold.sample(1.2), np.zeros(2))
    keeper = StaleHold(1, timeout=0.1, decay=False)
    keeper.update([0.7], 0.0)
    np.testing.assert_array_equal(keeper.sample(5.0), [0.7])
