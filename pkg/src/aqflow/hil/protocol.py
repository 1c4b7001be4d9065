"""Binary frames exchanged between the grid simulator and the OPF middleware.

Layout (big-endian): magic ``0x5148``, one type byte, a ``u32`` tick, a
``u16`` float count, then that many ``float32`` values.
"""

from __future__ import annotations

import enum
import socket
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = 0x5148
HEADER = struct.Struct(">HBIH")
MAX_COUNT = 0xFFFF
MAX_TICK = 0xFFFFFFFF


class FrameType(enum.IntEnum):
    MEASUREMENT = 0x01
    SETPOINT = 0x02
    ERROR = 0xFF


class ProtocolError(Exception):
    """A frame that violates the wire format."""


class ConnectionClosed(ConnectionError):
    """The peer closed the socket, possibly mid-frame."""


@dataclass(frozen=True)
class Frame:
    kind: FrameType
    tick: int
    payload: np.ndarray  # float32

    def __post_init__(self):
        payload = np.ascontiguousarray(self.payload).astype(np.float32)
        object.__setattr__(self, "payload", payload)
        object.__setattr__(self, "kind", FrameType(self.kind))
        if not 0 <= self.tick <= MAX_TICK:
            raise ProtocolError(f"tick {self.tick} does not fit in 32 bits")
        if payload.ndim != 1 or payload.size > MAX_COUNT:
            raise ProtocolError("payload must be a flat array of at most 65535 floats")

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (self.kind == other.kind and self.tick == other.tick
                and self.payload.tobytes() == other.payload.tobytes())

    def __hash__(self):
        return hash((self.kind, self.tick, self.payload.tobytes()))


def encode(frame: Frame) -> bytes:
    head = HEADER.pack(MAGIC, int(frame.kind), frame.tick, frame.payload.size)
    return head + frame.payload.astype(">f4").tobytes()


def decode_header(head: bytes) -> tuple[FrameType, int, int]:
    if len(head) != HEADER.size:
        raise ProtocolError(f"header needs {HEADER.size} bytes, got {len(head)}")
    magic, kind, tick, count = HEADER.unpack(head)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic 0x{magic:04x}")
    try:
        kind = FrameType(kind)
    except ValueError:
        raise ProtocolError(f"unknown frame type 0x{kind:02x}") from None
    return kind, tick, count


def decode(data: bytes) -> Frame:
    """Parse exactly one frame; trailing or missing bytes are an error."""
    kind, tick, count = decode_header(data[:HEADER.size])
    body = data[HEADER.size:]
    if len(body) != 4 * count:
        raise ProtocolError(f"payload of {len(body)} bytes for {count} floats")
    return Frame(kind, tick, np.frombuffer(body, dtype=">f4").astype(np.float32))


def error_frame(tick: int = 0) -> Frame:
    return Frame(FrameType.ERROR, tick, np.empty(0, dtype=np.float32))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionClosed(f"connection closed after {len(buf)} of {n} bytes")
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock: socket.socket) -> Frame:
    kind, tick, count = decode_header(_recv_exact(sock, HEADER.size))
    body = _recv_exact(sock, 4 * count)
    return Frame(kind, tick, np.frombuffer(body, dtype=">f4").astype(np.float32))


def write_frame(sock: socket.socket, frame: Frame) -> None:
    sock.sendall(encode(frame))


# -- typed payloads ---------------------------------------------------------


@dataclass(frozen=True)
class MeasurementFrame:
    """Loads (MW, MVAR) in ascending bus order and the two RES outputs (MW)."""

    tick: int
    p_d: tuple[float, ...]
    q_d: tuple[float, ...]
    p_pvf: float
    p_wf: float

    def __post_init__(self):
        if len(self.p_d) != len(self.q_d):
            raise ValueError("p_d and q_d differ in length")
        if self.p_pvf < 0 or self.p_wf < 0:
            raise ValueError("RES output must be nonnegative")

    def to_frame(self) -> Frame:
        pairs = np.column_stack([self.p_d, self.q_d]).ravel() if self.p_d else np.empty(0)
        return Frame(FrameType.MEASUREMENT, self.tick, np.r_[pairs, self.p_pvf, self.p_wf])

    @classmethod
    def from_frame(cls, frame: Frame) -> "MeasurementFrame":
        if frame.kind is not FrameType.MEASUREMENT:
            raise ProtocolError(f"expected a measurement frame, got {frame.kind.name}")
        vals = frame.payload.astype(float)
        if vals.size < 2 or vals.size % 2:
            raise ProtocolError(f"measurement payload of {vals.size} floats")
        loads = vals[:-2].reshape(-1, 2)
        return cls(frame.tick, tuple(loads[:, 0].tolist()), tuple(loads[:, 1].tolist()), float(vals[-2]), float(vals[-1]))


@dataclass(frozen=True)
class SetpointFrame:
    """Per conventional generator ``(v_ref, p_ref)`` in p.u., then RES ``v_ref``."""

    tick: int
    v_ref: tuple[float, ...]
    p_ref: tuple[float, ...]
    res_v_ref: tuple[float, ...]

    def __post_init__(self):
        if len(self.v_ref) != len(self.p_ref):
            raise ValueError("v_ref and p_ref differ in length")

    def check(self) -> None:
        """Sanity band on the references."""
        for v in (*self.v_ref, *self.res_v_ref):
            if not 0.8 <= v <= 1.2:
                raise ValueError(f"voltage reference {v} outside [0.8, 1.2]")
        if any(p < 0 for p in self.p_ref):
            raise ValueError("negative active-power reference")

    def to_frame(self) -> Frame:
        pairs = np.column_stack([self.v_ref, self.p_ref]).ravel() if self.v_ref else np.empty(0)
        return Frame(FrameType.SETPOINT, self.tick, np.r_[pairs, self.res_v_ref])

    @classmethod
    def from_frame(cls, frame: Frame, n_conventional: int) -> "SetpointFrame":
        if frame.kind is not FrameType.SETPOINT:
            raise ProtocolError(f"expected a setpoint frame, got {frame.kind.name}")
        vals = frame.payload.astype(float)
        if vals.size < 2 * n_conventional:
            raise ProtocolError(f"setpoint payload of {vals.size} floats for {n_conventional} generators")
        pairs = vals[:2 * n_conventional].reshape(-1, 2)
        return cls(frame.tick, tuple(pairs[:, 0].tolist()), tuple(pairs[:, 1].tolist()),
                   tuple(vals[2 * n_conventional:].tolist()))
