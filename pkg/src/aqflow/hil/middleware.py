"""OPF middleware: measurements in, AQOPF, set points out."""

from __future__ import annotations

import csv
import io
import logging
import socket
import time
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from ..grid import Network
from ..hamiltonian.builder import Mode
from ..loop import LoopConfig, SolveTrace, run_aqopf
from .protocol import (
    ConnectionClosed,
    FrameType,
    MeasurementFrame,
    ProtocolError,
    SetpointFrame,
    read_frame,
    write_frame,
)
from .setpoints import GeneratorDynamicParams, compute_setpoints, setpoints_from_trace
from .simulator import apply_measurement

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 5
    backoff: float = 0.2
    factor: float = 2.0

    def delays(self):
        d = self.backoff
        for _ in range(self.attempts - 1):
            yield d
            d *= self.factor


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


def connect(endpoint: str, retry: RetryPolicy = RetryPolicy()) -> socket.socket:
    """Open the simulator connection, backing off between failed attempts.

    Raises:
        ConnectionError: after the last attempt fails.
    """
    host, port = parse_endpoint(endpoint)
    delays = retry.delays()
    last: Exception | None = None
    for attempt in range(1, retry.attempts + 1):
        try:
            sock = socket.create_connection((host, port), timeout=10.0)
            sock.settimeout(None)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError as exc:
            last = exc
            log.warning("connect to %s failed (attempt %d/%d): %s", endpoint, attempt, retry.attempts, exc)
            wait = next(delays, None)
            if wait is not None:
                time.sleep(wait)
    raise ConnectionError(f"simulator at {endpoint} unreachable after {retry.attempts} attempts") from last


@dataclass
class TickLog:
    tick: int
    solve_seconds: float
    iterations: int
    converged: bool
    feasible: bool
    cost: float
    dispatch: np.ndarray  # MW per generator, network order
    flagged: bool  # previous set points re-sent


def log_csv(net: Network, logs: list[TickLog]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tick", "solve_s", "iterations", "converged", "feasible", "flagged", "cost"]
               + [f"p_g{g.bus}" for g in net.generators])
    for t in logs:
        w.writerow([t.tick, f"{t.solve_seconds:.3f}", t.iterations, int(t.converged), int(t.feasible),
                    int(t.flagged), repr(t.cost)] + [repr(float(p)) for p in t.dispatch])
    return buf.getvalue()


class Middleware:
    """Per-tick OPF with warm restarts from the previous tick's result."""

    def __init__(self, base: Network, cfg: LoopConfig,
                 dyn: GeneratorDynamicParams | Mapping[int, GeneratorDynamicParams] | None = None):
        self.base = base
        self.cfg = replace(cfg, mode=Mode.AQOPF)
        self.dyn = dyn
        self.previous: SolveTrace | None = None
        self.last_sent: SetpointFrame | None = None
        self.logs: list[TickLog] = []

    def handle(self, m: MeasurementFrame) -> SetpointFrame:
        net = apply_measurement(self.base, m)
        trace = run_aqopf(net, self.cfg, warm=self.previous)
        ok = trace.converged and trace.feasible
        flagged = not ok
        if ok:
            sp = setpoints_from_trace(net, trace, m.tick, self.dyn)
        elif self.last_sent is not None:
            sp = replace(self.last_sent, tick=m.tick)
        else:
            # nothing better to send on the very first tick
            sp = compute_setpoints(net, trace.dispatch, trace.pf.q_gen, trace.pf.voltage.complex, m.tick, self.dyn)
        if flagged:
            log.warning("tick %d: AQOPF %s; set points flagged", m.tick,
                        "infeasible" if trace.converged else "did not converge")
        if ok:
            self.previous = trace
        self.last_sent = sp
        self.logs.append(TickLog(m.tick, trace.elapsed, trace.iterations, trace.converged, trace.feasible,
                                 trace.total_cost, trace.dispatch.copy(), flagged))
        log.info("tick %d: %d iterations in %.1f s, cost %.2f, feasible=%s%s", m.tick, trace.iterations,
                 trace.elapsed, trace.total_cost, trace.feasible, "  FLAGGED" if flagged else "")
        return sp


def middleware_run(endpoint: str, base: Network, cfg: LoopConfig, ticks: int,
                   dyn: GeneratorDynamicParams | Mapping[int, GeneratorDynamicParams] | None = None,
                   retry: RetryPolicy = RetryPolicy()) -> list[TickLog]:
    """Answer up to ``ticks`` measurement frames, then hang up."""
    mw = Middleware(base, cfg, dyn)
    sock = connect(endpoint, retry)
    with sock:
        for _ in range(ticks):
            try:
                frame = read_frame(sock)
            except ConnectionClosed:
                log.info("simulator closed the connection")
                break
            if frame.kind is FrameType.ERROR:
                raise ProtocolError(f"simulator sent an error frame at tick {frame.tick}")
            m = MeasurementFrame.from_frame(frame)
            write_frame(sock, mw.handle(m).to_frame())
    return mw.logs
