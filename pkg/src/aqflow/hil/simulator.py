"""Quasi-steady-state grid simulator speaking the set-point protocol over TCP.

Each tick the simulator scales loads and renewable output by a profile,
sends the measurements, waits for set points, turns them back into
terminal voltages and active powers and re-solves the power flow.
"""

from __future__ import annotations

import csv
import io
import logging
import select
import socket
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..grid import Generator, Load, Network
from ..reference import PfSolution, PowerFlowError, nr_power_flow, total_losses
from .protocol import (
    ConnectionClosed,
    FrameType,
    MeasurementFrame,
    ProtocolError,
    SetpointFrame,
    error_frame,
    read_frame,
    write_frame,
)
from .setpoints import (
    DEFAULT_DYN,
    GeneratorDynamicParams,
    active_power,
    conventional_generators,
    res_generators,
    terminal_voltage,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProfileRow:
    tick: int
    bus: int
    p_scale: float
    q_scale: float
    res_scale: float


@dataclass
class Profile:
    """Piecewise-constant scale factors: a row holds from its tick until the bus's next row."""

    rows: list[ProfileRow] = field(default_factory=list)

    @classmethod
    def parse(cls, text: str) -> "Profile":
        reader = csv.DictReader(io.StringIO(text))
        need = {"tick", "bus", "p_scale", "q_scale", "res_scale"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"profile header must contain {', '.join(sorted(need))}")
        rows = []
        for n, rec in enumerate(reader, start=2):
            try:
                rows.append(ProfileRow(int(rec["tick"]), int(rec["bus"]), float(rec["p_scale"]),
                                       float(rec["q_scale"]), float(rec["res_scale"])))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"profile line {n}: {exc}") from None
        rows.sort(key=lambda r: (r.tick, r.bus))
        return cls(rows)

    @classmethod
    def load(cls, path) -> "Profile":
        with open(path, newline="") as fh:
            return cls.parse(fh.read())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tick", "bus", "p_scale", "q_scale", "res_scale"])
        for r in self.rows:
            w.writerow([r.tick, r.bus, r.p_scale, r.q_scale, r.res_scale])
        return buf.getvalue()

    @property
    def last_tick(self) -> int:
        return max((r.tick for r in self.rows), default=0)

    def scales(self, tick: int) -> dict[int, ProfileRow]:
        out: dict[int, ProfileRow] = {}
        for r in self.rows:
            if r.tick <= tick:
                out[r.bus] = r
        return out


def scaled_network(net: Network, profile: Profile, tick: int) -> Network:
    """Loads and RES output at ``tick``; RES units stay must-run at the scaled value."""
    sc = profile.scales(tick)
    loads = tuple(
        Load(ld.bus, ld.p_d * sc[ld.bus].p_scale, ld.q_d * sc[ld.bus].q_scale) if ld.bus in sc else ld
        for ld in net.loads
    )
    gens = []
    for g in net.generators:
        if g.is_fixed and g.bus in sc:
            p = g.p_min * sc[g.bus].res_scale
            g = Generator(g.bus, p, p, g.q_min, g.q_max, g.cost, p)
        gens.append(g)
    return Network(net.s_base, net.v_base, net.buses, net.lines, tuple(gens), loads, net.name)


def measurement_of(net: Network, tick: int) -> MeasurementFrame:
    loads = sorted(net.loads, key=lambda ld: ld.bus)
    res = [g.p_min for g in res_generators(net)] + [0.0, 0.0]
    return MeasurementFrame(tick, tuple(ld.p_d for ld in loads), tuple(ld.q_d for ld in loads),
                            float(res[0]), float(res[1]))


def apply_measurement(base: Network, m: MeasurementFrame) -> Network:
    """Inverse of :func:`measurement_of` on top of a base network."""
    loads = sorted(base.loads, key=lambda ld: ld.bus)
    if len(loads) != len(m.p_d):
        raise ProtocolError(f"measurement carries {len(m.p_d)} loads, network has {len(loads)}")
    new_loads = tuple(Load(ld.bus, p, q) for ld, p, q in zip(loads, m.p_d, m.q_d))
    res_p = dict(zip((g.bus for g in res_generators(base)), (m.p_pvf, m.p_wf)))
    gens = tuple(
        Generator(g.bus, res_p[g.bus], res_p[g.bus], g.q_min, g.q_max, g.cost, res_p[g.bus])
        if g.bus in res_p else g
        for g in base.generators
    )
    return Network(base.s_base, base.v_base, base.buses, base.lines, gens, new_loads, base.name)


@dataclass
class PlantState:
    tick: int
    pf: PfSolution
    dispatch: np.ndarray  # MW per generator, network order
    losses_mw: float
    balance_mw: float  # generation - load - losses
    held: bool = False


class GridSimulator:
    """Transport-free plant model; :func:`serve` wires it to a socket."""

    def __init__(self, net: Network, profile: Profile | None = None,
                 dyn: GeneratorDynamicParams | Mapping[int, GeneratorDynamicParams] | None = None,
                 fixed_point_tol: float = 1e-13, max_fixed_point: int = 100):
        self.base = net
        self.profile = profile or Profile()
        self.dyn = dyn
        self.tol = fixed_point_tol
        self.max_fixed_point = max_fixed_point
        self.last_setpoints: SetpointFrame | None = None
        self.state: PlantState | None = None
        self.history: list[PlantState] = []

    def _dyn(self, bus: int) -> GeneratorDynamicParams:
        if self.dyn is None:
            return DEFAULT_DYN
        if isinstance(self.dyn, GeneratorDynamicParams):
            return self.dyn
        return self.dyn.get(bus, DEFAULT_DYN)

    def network_at(self, tick: int) -> Network:
        return scaled_network(self.base, self.profile, tick)

    def measure(self, tick: int) -> MeasurementFrame:
        return measurement_of(self.network_at(tick), tick)

    def _solve(self, net: Network, sp: SetpointFrame | None) -> tuple[PfSolution, np.ndarray]:
        """Power flow with generator terminal voltages implied by the set points.

        The exciter reference fixes ``|V|`` only together with the unit's
        reactive output, so the flow is re-solved until the two agree.
        """
        conv = conventional_generators(net)
        res = res_generators(net)
        slack_bus = net.buses[net.slack].index
        if sp is None:
            sol = nr_power_flow(net)
            return sol, self._dispatch(net, sol)
        if len(sp.v_ref) != len(conv) or len(sp.res_v_ref) != len(res):
            raise ProtocolError("set points do not match the generator layout")
        p_mw = {g.bus: active_power(pr, self._dyn(g.bus), net.s_base) for g, pr in zip(conv, sp.p_ref)}
        p_mw.pop(slack_bus, None)
        work = net.with_dispatch(p_mw)
        order = {g.bus: k for k, g in enumerate(net.generators)}
        q = np.zeros(len(net.generators)) if self.state is None else self.state.pf.q_gen.copy()
        targets = {g.bus: v for g, v in zip(res, sp.res_v_ref)}
        v_prev = None
        sol = None
        for _ in range(self.max_fixed_point):
            for g, vr in zip(conv, sp.v_ref):
                k = order[g.bus]
                p = sol.p_slack if (g.bus == slack_bus and sol is not None) else \
                    p_mw.get(g.bus, self.state.dispatch[k] if self.state is not None else 0.0)
                targets[g.bus] = terminal_voltage(vr, p, q[k], self._dyn(g.bus), net.s_base)
            sol = nr_power_flow(work.with_bus_voltages(targets), v0=sol.voltage if sol is not None else None)
            if not sol.converged:
                raise PowerFlowError("power flow diverged at the applied set points")
            q = sol.q_gen
            v_now = np.array([targets[b] for b in sorted(targets)])
            if v_prev is not None and np.max(np.abs(v_now - v_prev)) <= self.tol:
                break
            v_prev = v_now
        final = work.with_bus_voltages(targets)
        return sol, self._dispatch(final, sol)

    @staticmethod
    def _dispatch(net: Network, sol: PfSolution) -> np.ndarray:
        slack_bus = net.buses[net.slack].index
        return np.array([sol.p_slack if g.bus == slack_bus else g.p_g_spec for g in net.generators])

    def step(self, tick: int, sp: SetpointFrame | None) -> PlantState:
        """Advance one tick with new set points (``None`` keeps the last ones)."""
        net = self.network_at(tick)
        held = sp is None
        if sp is not None:
            self.last_setpoints = sp
        try:
            sol, dispatch = self._solve(net, self.last_setpoints)
        except PowerFlowError as exc:
            if self.state is None:
                raise
            log.error("tick %d: %s; holding the previous state", tick, exc)
            st = PlantState(tick, self.state.pf, self.state.dispatch, self.state.losses_mw,
                            self.state.balance_mw, held=True)
            self.history.append(st)
            return st
        loss = float(total_losses(net, sol) * net.s_base)
        load = sum(ld.p_d for ld in net.loads)
        st = PlantState(tick, sol, dispatch, loss, float(dispatch.sum() - load - loss), held)
        self.state = st
        self.history.append(st)
        log.info("tick %d: |V| %s  P_G %s  balance %.2e MW%s", tick, np.round(sol.v_mag, 6),
                 np.round(dispatch, 3), st.balance_mw, "  (held)" if held else "")
        return st

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.base.n
        w.writerow(["tick", "held", "losses_mw", "balance_mw"]
                   + [f"p_g{g.bus}" for g in self.base.generators]
                   + [f"v{k + 1}" for k in range(n)] + [f"delta{k + 1}" for k in range(n)])
        for st in self.history:
            w.writerow([st.tick, int(st.held), repr(float(st.losses_mw)), repr(float(st.balance_mw))]
                       + [repr(float(p)) for p in st.dispatch]
                       + [repr(float(v)) for v in st.pf.v_mag] + [repr(float(d)) for d in st.pf.delta])
        return buf.getvalue()


def _wait_readable(sock: socket.socket, timeout: float | None) -> bool:
    ready, _, _ = select.select([sock], [], [], timeout)
    return bool(ready)


def run_session(sim: GridSimulator, conn: socket.socket, ticks: int,
                tick_timeout: float | None = None, period: float = 0.0) -> None:
    """Drive one middleware connection for up to ``ticks`` ticks.

    Protocol violations are answered with an error frame and end the
    session; a silent client within ``tick_timeout`` leaves the previous
    set points in force.  ``period`` paces ticks in wall-clock seconds.
    """
    conv = len(conventional_generators(sim.base))
    for tick in range(1, ticks + 1):
        started = time.monotonic()
        try:
            write_frame(conn, sim.measure(tick).to_frame())
        except OSError:
            log.warning("middleware went away before tick %d", tick)
            return
        sp = None
        deadline = None if tick_timeout is None else started + tick_timeout
        while sp is None:
            remaining = None if deadline is None else max(0.0, deadline - time.monotonic())
            if not _wait_readable(conn, remaining):
                log.warning("tick %d: no set points within %.1f s; keeping the previous ones", tick, tick_timeout)
                break
            try:
                frame = read_frame(conn)
                if frame.kind is FrameType.ERROR:
                    log.warning("middleware reported an error at tick %d", frame.tick)
                    return
                if frame.kind is not FrameType.SETPOINT:
                    raise ProtocolError(f"unexpected {frame.kind.name} frame")
                if frame.tick < tick:
                    log.info("dropping late set points for tick %d", frame.tick)
                    continue
                if frame.tick != tick:
                    raise ProtocolError(f"set points answer tick {frame.tick}, expected {tick}")
                sp = SetpointFrame.from_frame(frame, conv)
                if len(sp.res_v_ref) != len(res_generators(sim.base)):
                    raise ProtocolError("set-point payload has the wrong length")
            except ConnectionClosed:
                log.info("middleware closed the connection at tick %d", tick)
                return
            except ProtocolError as exc:
                log.error("protocol violation: %s", exc)
                try:
                    write_frame(conn, error_frame(tick))
                except OSError:
                    pass
                return
        sim.step(tick, sp)
        if period:
            time.sleep(max(0.0, period - (time.monotonic() - started)))


def serve(sim: GridSimulator, host: str = "127.0.0.1", port: int = 7350, ticks: int | None = None,
          tick_timeout: float | None = None, period: float = 0.0, ready=None,
          listener: socket.socket | None = None) -> GridSimulator:
    """Accept one middleware connection and run the tick loop until done.

    ``ticks`` defaults to the profile's last tick (at least one).  ``ready``
    is called with the bound port once the server listens.
    """
    ticks = ticks if ticks is not None else max(1, sim.profile.last_tick)
    srv = listener or socket.create_server((host, port))
    with srv:
        if ready is not None:
            ready(srv.getsockname()[1])
        conn, addr = srv.accept()
        log.info("middleware connected from %s:%d", *addr[:2])
        with conn:
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            run_session(sim, conn, ticks, tick_timeout, period)
    return sim


def constant_profile(net: Network, ticks: int) -> Profile:
    buses = sorted({ld.bus for ld in net.loads} | {g.bus for g in net.generators if g.is_fixed})
    return Profile([ProfileRow(1, b, 1.0, 1.0, 1.0) for b in buses] + [ProfileRow(ticks, buses[0], 1.0, 1.0, 1.0)])


def res_ramp_profile(net: Network, ticks: int, ramp_ticks: int = 5, final_scale: float = 0.5) -> Profile:
    """RES output ramps linearly from full to ``final_scale`` over ``ramp_ticks`` ticks, then holds."""
    rows = [ProfileRow(1, ld.bus, 1.0, 1.0, 1.0) for ld in net.loads]
    res = [g.bus for g in net.generators if g.is_fixed]
    for t in range(1, ticks + 1):
        frac = min(1.0, (t - 1) / max(1, ramp_ticks - 1))
        for b in res:
            rows.append(ProfileRow(t, b, 1.0, 1.0, 1.0 + (final_scale - 1.0) * frac))
    return Profile(sorted(rows, key=lambda r: (r.tick, r.bus)))
