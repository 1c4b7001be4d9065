"""Closed-loop emulation: TCP frames, set points, a mock grid simulator and the OPF middleware."""

from .middleware import Middleware, RetryPolicy, TickLog, connect, middleware_run, parse_endpoint
from .protocol import Frame, FrameType, MeasurementFrame, ProtocolError, SetpointFrame, decode, encode
from .setpoints import GeneratorDynamicParams, compute_setpoints, setpoints_from_trace, terminal_voltage
from .simulator import GridSimulator, Profile, ProfileRow, constant_profile, res_ramp_profile, serve

__all__ = [
    "Frame", "FrameType", "GeneratorDynamicParams", "GridSimulator", "MeasurementFrame", "Middleware",
    "Profile", "ProfileRow", "ProtocolError", "RetryPolicy", "SetpointFrame", "TickLog",
    "compute_setpoints", "connect", "constant_profile", "decode", "encode", "middleware_run",
    "parse_endpoint", "res_ramp_profile", "serve", "setpoints_from_trace", "terminal_voltage",
]
