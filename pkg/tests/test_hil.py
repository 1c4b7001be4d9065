import socket
import struct
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aqflow.hil import (
    Frame, FrameType, GeneratorDynamicParams, GridSimulator, MeasurementFrame, Profile, ProfileRow,
    ProtocolError, RetryPolicy, SetpointFrame, compute_setpoints, connect, constant_profile, decode, encode,
    parse_endpoint, res_ramp_profile, serve, terminal_voltage,
)
from aqflow.hil.protocol import HEADER, MAGIC, ConnectionClosed, read_frame, write_frame
from aqflow.hil.setpoints import active_power, power_reference, voltage_reference
from aqflow.hil.simulator import apply_measurement, measurement_of
from aqflow.reference import nr_power_flow

DYN = GeneratorDynamicParams()

frames = st.builds(
    Frame,
    st.sampled_from(list(FrameType)),
    st.integers(0, 2**32 - 1),
    st.lists(st.floats(width=32, allow_nan=False), max_size=40).map(lambda v: np.array(v, dtype=np.float32)),
)


@settings(max_examples=300, deadline=None)
@given(frames)
def test_codec_round_trip(frame):
    data = encode(frame)
    assert len(data) == HEADER.size + 4 * frame.payload.size
    assert decode(data) == frame
    assert encode(decode(data)) == data


def test_header_layout():
    data = encode(Frame(FrameType.SETPOINT, 7, np.array([1.5], dtype=np.float32)))
    assert data == struct.pack(">HBIHf", 0x5148, 2, 7, 1, 1.5)


@pytest.mark.parametrize("data", [
    struct.pack(">HBIH", 0x1234, 1, 0, 0),
    struct.pack(">HBIH", MAGIC, 0x07, 0, 0),
    struct.pack(">HBIH", MAGIC, 1, 0, 2) + b"\0" * 4,
    struct.pack(">HBIH", MAGIC, 1, 0, 0) + b"\0",
    b"\x51",
])
def test_malformed_rejected(data):
    with pytest.raises(ProtocolError):
        decode(data)


def test_tick_out_of_range():
    with pytest.raises(ProtocolError):
        Frame(FrameType.MEASUREMENT, 2**32, np.zeros(0))


def test_measurement_round_trip(net13):
    m = measurement_of(net13, 4)
    back = MeasurementFrame.from_frame(decode(encode(m.to_frame())))
    assert back.tick == 4 and back.p_d == (90.0, 100.0, 125.0) and back.p_pvf == pytest.approx(19.8, rel=1e-7)
    again = apply_measurement(net13, back)
    assert again.generator_at(13).p_min == pytest.approx(19.8, rel=1e-7)


def test_setpoint_examples():
    assert voltage_reference(100.0, 0.0, 1 + 0j, DYN) == pytest.approx(1.0070710678, abs=1e-10)
    assert power_reference(163.0, DYN) == pytest.approx(0.0815, abs=1e-12)
    assert active_power(0.0815, DYN) == pytest.approx(163.0, abs=1e-9)


def test_terminal_voltage_inverts_reference():
    v = 1.03 * np.exp(0.2j)
    vr = voltage_reference(120.0, 30.0, v, DYN)
    assert terminal_voltage(vr, 120.0, 30.0, DYN) == pytest.approx(1.03, abs=1e-13)


def test_setpoint_sanity_band():
    SetpointFrame(0, (1.0,), (0.1,), ()).check()
    with pytest.raises(ValueError):
        SetpointFrame(0, (1.3,), (0.1,), ()).check()


def test_profile_scales_bus7_load(net9):
    prof = Profile([ProfileRow(1, 7, 1.0, 1.0, 1.0), ProfileRow(3, 7, 1.1, 1.0, 1.0)])
    sim = GridSimulator(net9, prof)
    assert sim.measure(2).p_d[1] == 100.0
    assert sim.measure(3).p_d[1] == pytest.approx(110.0)
    assert Profile.parse(prof.to_csv()) == prof


def test_profile_bad_header():
    with pytest.raises(ValueError):
        Profile.parse("tick,bus\n1,2\n")


def test_ramp_profile_halves_res(net13):
    prof = res_ramp_profile(net13, 6)
    assert prof.scales(1)[11].res_scale == 1.0
    assert prof.scales(5)[11].res_scale == pytest.approx(0.5)
    assert prof.scales(6)[13].res_scale == pytest.approx(0.5)


def test_plant_reproduces_operating_point(net13):
    """Set points computed from an NR solution drive the plant back to that solution."""
    sol = nr_power_flow(net13)
    dispatch = [sol.p_slack if g.bus == 1 else g.p_g_spec for g in net13.generators]
    sp = compute_setpoints(net13, dispatch, sol.q_gen, sol.voltage.complex)
    sp = SetpointFrame.from_frame(decode(encode(sp.to_frame())), len(sp.v_ref))
    sim = GridSimulator(net13, constant_profile(net13, 2))
    state = sim.step(1, sp)
    assert np.max(np.abs(state.pf.v_mag - sol.v_mag)) < 1e-6
    assert abs(state.balance_mw) < 1e-6
    assert state.dispatch[1] == pytest.approx(dispatch[1], rel=1e-6)


def test_plant_holds_last_setpoints(net9):
    sim = GridSimulator(net9, constant_profile(net9, 3))
    a = sim.step(1, None)
    b = sim.step(2, None)
    assert b.held and np.allclose(a.pf.v_mag, b.pf.v_mag)


def _serve_in_thread(sim, ticks):
    ev, port = threading.Event(), []
    th = threading.Thread(target=serve, args=(sim,),
                          kwargs=dict(port=0, ticks=ticks, ready=lambda p: (port.append(p), ev.set())))
    th.start()
    ev.wait(5)
    return th, port[0]


def _recv_or_closed(sock):
    try:
        return read_frame(sock)
    except ConnectionClosed:
        return None


@pytest.mark.parametrize("bad", [
    Frame(FrameType.MEASUREMENT, 1, np.zeros(2)),
    Frame(FrameType.SETPOINT, 9, np.zeros(8)),
    Frame(FrameType.SETPOINT, 1, np.zeros(3)),
    b"\x51\x48\x09\x00\x00\x00\x01\x00\x00",
])
def test_malformed_frame_gets_error_and_close(net13, bad):
    th, port = _serve_in_thread(GridSimulator(net13, constant_profile(net13, 3)), 3)
    with socket.create_connection(("127.0.0.1", port), timeout=5) as s:
        m = read_frame(s)
        assert m.kind is FrameType.MEASUREMENT and m.tick == 1
        s.sendall(bad if isinstance(bad, bytes) else encode(bad))
        err = read_frame(s)
        assert err.kind is FrameType.ERROR and err.payload.size == 0
        assert _recv_or_closed(s) is None
    th.join(5)
    assert not th.is_alive()


def test_unreachable_endpoint_raises():
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    with pytest.raises(ConnectionError):
        connect(f"127.0.0.1:{port}", RetryPolicy(attempts=2, backoff=0.01))


def test_parse_endpoint():
    assert parse_endpoint("localhost:7350") == ("localhost", 7350)
    with pytest.raises(ValueError):
        parse_endpoint("localhost")


def test_loopback_with_fixed_setpoints(net9):
    """A client that echoes NR set points keeps the plant at the NR point."""
    sol = nr_power_flow(net9)
    dispatch = [sol.p_slack if g.bus == 1 else g.p_g_spec for g in net9.generators]
    base = compute_setpoints(net9, dispatch, sol.q_gen, sol.voltage.complex)
    sim = GridSimulator(net9, constant_profile(net9, 3))
    th, port = _serve_in_thread(sim, 3)
    with socket.create_connection(("127.0.0.1", port), timeout=5) as s:
        for _ in range(3):
            m = read_frame(s)
            write_frame(s, SetpointFrame(m.tick, base.v_ref, base.p_ref, ()).to_frame())
    th.join(10)
    assert [st.tick for st in sim.history] == [1, 2, 3]
    assert np.max(np.abs(sim.history[-1].pf.v_mag - sol.v_mag)) < 1e-6
