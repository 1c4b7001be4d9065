"""Network data model, case ingestion and admittance assembly.

All electrical quantities are stored as they appear in case files (MW, MVAR,
per-unit impedances, degrees).  Numerical routines work in per-unit on the
network's MVA base; :meth:`Network.scheduled_injection` and friends do the
conversion.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class CaseError(ValueError):
    """Raised when a case document violates the schema or a network invariant.

    Attributes:
        path: JSON-style path of the offending field, e.g. ``buses[3].kind``.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message


class BusKind(str, enum.Enum):
    SLACK = "Slack"
    PV = "PV"
    PQ = "PQ"


@dataclass(frozen=True)
class Bus:
    index: int
    kind: BusKind
    v_min: float = 0.9
    v_max: float = 1.1
    delta_min: float = -60.0
    delta_max: float = 60.0
    v_spec: float | None = None
    delta_spec: float | None = None


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0


@dataclass(frozen=True)
class CostPoly:
    """Fuel cost ``c0 + c1 * P + c2 * P**2`` with ``P`` in MW."""

    c0: float
    c1: float
    c2: float

    def __call__(self, p_mw):
        return self.c0 + self.c1 * p_mw + self.c2 * p_mw * p_mw

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.c0, self.c1, self.c2)


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    cost: CostPoly
    p_g_spec: float | None = None

    @property
    def is_fixed(self) -> bool:
        """Must-run unit whose output cannot be dispatched."""
        return self.p_min == self.p_max


@dataclass(frozen=True)
class Load:
    bus: int
    p_d: float
    q_d: float


@dataclass(frozen=True)
class AdmittanceMatrix:
    g: np.ndarray
    b: np.ndarray

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def complex(self) -> np.ndarray:
        return self.g + 1j * self.b


@dataclass(frozen=True)
class VoltageState:
    """Rectangular bus voltages: ``V = mu + j*omega`` (per-unit)."""

    mu: np.ndarray
    omega: np.ndarray

    @classmethod
    def flat(cls, n: int) -> "VoltageState":
        return cls(np.ones(n), np.zeros(n))

    @classmethod
    def from_polar(cls, v_mag, delta_deg) -> "VoltageState":
        v = np.asarray(v_mag, dtype=float) * np.exp(1j * np.deg2rad(np.asarray(delta_deg, dtype=float)))
        return cls(v.real.copy(), v.imag.copy())

    @property
    def complex(self) -> np.ndarray:
        return self.mu + 1j * self.omega

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.mu, self.omega)

    @property
    def angle_deg(self) -> np.ndarray:
        return np.rad2deg(np.arctan2(self.omega, self.mu))


@dataclass(frozen=True)
class Network:
    s_base: float
    v_base: float
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    name: str = field(default="", compare=False)

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def slack(self) -> int:
        """0-based position of the slack bus."""
        return next(k for k, bus in enumerate(self.buses) if bus.kind is BusKind.SLACK)

    def positions(self, kind: BusKind) -> list[int]:
        return [k for k, bus in enumerate(self.buses) if bus.kind is kind]

    def generator_at(self, bus: int) -> Generator | None:
        for gen in self.generators:
            if gen.bus == bus:
                return gen
        return None

    def load_at(self, bus: int) -> Load | None:
        for load in self.loads:
            if load.bus == bus:
                return load
        return None

    def slack_generator(self) -> Generator | None:
        return self.generator_at(self.buses[self.slack].index)

    def demand_pu(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-bus active and reactive demand in per-unit."""
        pd = np.zeros(self.n)
        qd = np.zeros(self.n)
        for load in self.loads:
            pd[load.bus - 1] += load.p_d / self.s_base
            qd[load.bus - 1] += load.q_d / self.s_base
        return pd, qd

    def v_spec(self) -> np.ndarray:
        """Voltage magnitude targets; 1.0 where a bus has none."""
        return np.array([bus.v_spec if bus.v_spec is not None else 1.0 for bus in self.buses])

    def with_dispatch(self, dispatch: dict[int, float]) -> "Network":
        """Copy of the network with ``p_g_spec`` replaced for the given buses (MW)."""
        gens = tuple(
            Generator(g.bus, g.p_min, g.p_max, g.q_min, g.q_max, g.cost,
                      dispatch.get(g.bus, g.p_g_spec))
            for g in self.generators
        )
        return Network(self.s_base, self.v_base, self.buses, self.lines, gens, self.loads, self.name)

    def with_loads(self, loads) -> "Network":
        return Network(self.s_base, self.v_base, self.buses, self.lines, self.generators,
                       tuple(loads), self.name)

    def with_bus_voltages(self, v_spec: dict[int, float]) -> "Network":
        """Copy with new voltage targets on Slack/PV buses (keyed by bus index)."""
        buses = []
        for bus in self.buses:
            if bus.index in v_spec and bus.kind is not BusKind.PQ:
                bus = Bus(bus.index, bus.kind, bus.v_min, bus.v_max, bus.delta_min,
                          bus.delta_max, v_spec[bus.index], bus.delta_spec)
            buses.append(bus)
        return Network(self.s_base, self.v_base, tuple(buses), self.lines, self.generators,
                       self.loads, self.name)

    def to_document(self) -> dict[str, Any]:
        """Inverse of :func:`load_case` (as a JSON-ready dict)."""
        buses = []
        for bus in self.buses:
            entry: dict[str, Any] = {"index": bus.index, "kind": bus.kind.value}
            if bus.v_spec is not None:
                entry["v_spec"] = bus.v_spec
            if bus.delta_spec is not None:
                entry["delta_spec"] = bus.delta_spec
            entry.update(v_min=bus.v_min, v_max=bus.v_max,
                         delta_min=bus.delta_min, delta_max=bus.delta_max)
            buses.append(entry)
        gens = []
        for g in self.generators:
            entry = {"bus": g.bus}
            if g.p_g_spec is not None:
                entry["p_mw"] = g.p_g_spec
            entry.update(p_min=g.p_min, p_max=g.p_max, q_min=g.q_min, q_max=g.q_max,
                         cost=list(g.cost.as_tuple()))
            gens.append(entry)
        return {
            "name": self.name,
            "s_base_mva": self.s_base,
            "v_base_kv": self.v_base,
            "buses": buses,
            "lines": [{"from": ln.from_bus, "to": ln.to_bus, "r": ln.r, "x": ln.x, "b": ln.b}
                      for ln in self.lines],
            "generators": gens,
            "loads": [{"bus": ld.bus, "p_mw": ld.p_d, "q_mvar": ld.q_d} for ld in self.loads],
        }


# --------------------------------------------------------------------------
# case ingestion


def _number(obj: dict, key: str, path: str, *, required: bool = True, default=None) -> float | None:
    if key not in obj:
        if required:
            raise CaseError(f"{path}.{key}", "missing required field")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseError(f"{path}.{key}", f"expected a number, got {value!r}")
    if not np.isfinite(value):
        raise CaseError(f"{path}.{key}", "must be finite")
    return float(value)


def _integer(obj: dict, key: str, path: str) -> int:
    if key not in obj:
        raise CaseError(f"{path}.{key}", "missing required field")
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise CaseError(f"{path}.{key}", f"expected an integer, got {value!r}")
    return value


def _array(doc: dict, key: str) -> list:
    if key not in doc:
        raise CaseError(key, "missing required field")
    if not isinstance(doc[key], list):
        raise CaseError(key, "expected an array")
    return doc[key]


def _parse_bus(entry: Any, path: str) -> Bus:
    if not isinstance(entry, dict):
        raise CaseError(path, "expected an object")
    index = _integer(entry, "index", path)
    try:
        kind = BusKind(entry.get("kind"))
    except ValueError:
        raise CaseError(f"{path}.kind", f"expected one of Slack, PV, PQ, got {entry.get('kind')!r}") from None
    v_min = _number(entry, "v_min", path)
    v_max = _number(entry, "v_max", path)
    delta_min = _number(entry, "delta_min", path)
    delta_max = _number(entry, "delta_max", path)
    v_spec = _number(entry, "v_spec", path, required=False)
    delta_spec = _number(entry, "delta_spec", path, required=False)
    if not v_min < v_max:
        raise CaseError(f"{path}.v_min", "v_min must be below v_max")
    if not delta_min < delta_max:
        raise CaseError(f"{path}.delta_min", "delta_min must be below delta_max")
    if kind is BusKind.PQ:
        if v_spec is not None:
            raise CaseError(f"{path}.v_spec", "PQ buses do not take a voltage set point")
    elif v_spec is None:
        raise CaseError(f"{path}.v_spec", f"{kind.value} bus requires v_spec")
    if kind is BusKind.SLACK and delta_spec is None:
        delta_spec = 0.0
    if kind is not BusKind.SLACK and delta_spec is not None:
        raise CaseError(f"{path}.delta_spec", "only the slack bus takes an angle set point")
    return Bus(index, kind, v_min, v_max, delta_min, delta_max, v_spec, delta_spec)


def _parse_line(entry: Any, path: str, n: int) -> Line:
    if not isinstance(entry, dict):
        raise CaseError(path, "expected an object")
    f = _integer(entry, "from", path)
    t = _integer(entry, "to", path)
    r = _number(entry, "r", path)
    x = _number(entry, "x", path)
    b = _number(entry, "b", path, required=False, default=0.0)
    for key, bus in (("from", f), ("to", t)):
        if not 1 <= bus <= n:
            raise CaseError(f"{path}.{key}", f"unknown bus {bus}")
    if f == t:
        raise CaseError(f"{path}.to", "line endpoints must differ")
    if r < 0:
        raise CaseError(f"{path}.r", "resistance must be nonnegative")
    if x == 0:
        raise CaseError(f"{path}.x", "reactance must be nonzero")
    if b < 0:
        raise CaseError(f"{path}.b", "charging susceptance must be nonnegative")
    return Line(f, t, r, x, b)


def _parse_generator(entry: Any, path: str, n: int) -> Generator:
    if not isinstance(entry, dict):
        raise CaseError(path, "expected an object")
    bus = _integer(entry, "bus", path)
    if not 1 <= bus <= n:
        raise CaseError(f"{path}.bus", f"unknown bus {bus}")
    p_min = _number(entry, "p_min", path)
    p_max = _number(entry, "p_max", path)
    q_min = _number(entry, "q_min", path)
    q_max = _number(entry, "q_max", path)
    p_mw = _number(entry, "p_mw", path, required=False)
    if p_min > p_max:
        raise CaseError(f"{path}.p_min", "p_min exceeds p_max")
    if q_min > q_max:
        raise CaseError(f"{path}.q_min", "q_min exceeds q_max")
    cost = entry.get("cost")
    if (not isinstance(cost, list) or len(cost) != 3
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in cost)):
        raise CaseError(f"{path}.cost", "expected [c0, c1, c2]")
    if cost[2] < 0:
        raise CaseError(f"{path}.cost[2]", "quadratic cost coefficient must be nonnegative")
    return Generator(bus, p_min, p_max, q_min, q_max, CostPoly(*map(float, cost)), p_mw)


def _check_connected(n: int, lines: tuple[Line, ...]) -> None:
    adjacency: list[list[int]] = [[] for _ in range(n)]
    for ln in lines:
        adjacency[ln.from_bus - 1].append(ln.to_bus - 1)
        adjacency[ln.to_bus - 1].append(ln.from_bus - 1)
    seen = {0}
    queue = deque([0])
    while queue:
        k = queue.popleft()
        for j in adjacency[k]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
    if len(seen) != n:
        missing = sorted(k + 1 for k in set(range(n)) - seen)
        raise CaseError("lines", f"network is disconnected; unreachable buses {missing}")


def parse_case(doc: Any) -> Network:
    """Validate a decoded case document and build a :class:`Network`."""
    if not isinstance(doc, dict):
        raise CaseError("", "case document must be a JSON object")
    s_base = _number(doc, "s_base_mva", "$")
    v_base = _number(doc, "v_base_kv", "$")
    if s_base <= 0:
        raise CaseError("$.s_base_mva", "must be positive")

    raw_buses = _array(doc, "buses")
    buses = [_parse_bus(entry, f"buses[{k}]") for k, entry in enumerate(raw_buses)]
    if not buses:
        raise CaseError("buses", "at least one bus is required")
    seen: dict[int, int] = {}
    for k, bus in enumerate(buses):
        if bus.index in seen:
            raise CaseError(f"buses[{k}].index", f"duplicate bus index {bus.index}")
        seen[bus.index] = k
    buses.sort(key=lambda bus: bus.index)
    n = len(buses)
    if [bus.index for bus in buses] != list(range(1, n + 1)):
        raise CaseError("buses", "bus indices must be contiguous 1..N")
    slacks = [bus.index for bus in buses if bus.kind is BusKind.SLACK]
    if not slacks:
        raise CaseError("buses", "missing slack bus")
    if len(slacks) > 1:
        raise CaseError("buses", f"multiple slack buses: {slacks}")

    lines = tuple(_parse_line(e, f"lines[{k}]", n) for k, e in enumerate(_array(doc, "lines")))
    generators = tuple(
        _parse_generator(e, f"generators[{k}]", n) for k, e in enumerate(_array(doc, "generators"))
    )
    gen_buses = [g.bus for g in generators]
    if len(set(gen_buses)) != len(gen_buses):
        raise CaseError("generators", "at most one generator per bus")
    for k, g in enumerate(generators):
        if buses[g.bus - 1].kind is BusKind.PQ:
            raise CaseError(f"generators[{k}].bus", f"generator on PQ bus {g.bus}")
    for bus in buses:
        if bus.kind is not BusKind.PQ and bus.index not in gen_buses:
            raise CaseError("generators", f"{bus.kind.value} bus {bus.index} has no generator")

    # aggregate multiple load records per bus
    demand: dict[int, list[float]] = {}
    for k, entry in enumerate(_array(doc, "loads")):
        path = f"loads[{k}]"
        if not isinstance(entry, dict):
            raise CaseError(path, "expected an object")
        bus = _integer(entry, "bus", path)
        if not 1 <= bus <= n:
            raise CaseError(f"{path}.bus", f"unknown bus {bus}")
        p = _number(entry, "p_mw", path)
        q = _number(entry, "q_mvar", path)
        acc = demand.setdefault(bus, [0.0, 0.0])
        acc[0] += p
        acc[1] += q
    loads = tuple(Load(bus, p, q) for bus, (p, q) in sorted(demand.items()))

    _check_connected(n, lines)
    return Network(s_base, v_base, tuple(buses), lines, generators, loads, str(doc.get("name", "")))


def load_case(document: str) -> Network:
    """Parse case-file text (JSON) into a validated :class:`Network`."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise CaseError("", f"invalid JSON: {exc}") from None
    return parse_case(doc)


def dump_case(net: Network) -> str:
    return json.dumps(net.to_document(), indent=2)


# --------------------------------------------------------------------------
# admittance and injections


def build_admittance(net: Network) -> AdmittanceMatrix:
    """Assemble the bus admittance matrix with the pi line model."""
    n = net.n
    y = np.zeros((n, n), dtype=complex)
    for ln in net.lines:
        if ln.r == 0 and ln.x == 0:
            raise CaseError(f"line {ln.from_bus}-{ln.to_bus}", "zero-impedance line")
        ys = 1.0 / complex(ln.r, ln.x)
        f, t = ln.from_bus - 1, ln.to_bus - 1
        y[f, f] += ys + 0.5j * ln.b
        y[t, t] += ys + 0.5j * ln.b
        y[f, t] -= ys
        y[t, f] -= ys
    return AdmittanceMatrix(y.real.copy(), y.imag.copy())


def injected_power(y: AdmittanceMatrix, v: VoltageState) -> tuple[np.ndarray, np.ndarray]:
    """Net active and reactive injections (per-unit) from rectangular voltages.

    Evaluates the rectangular power equations term by term rather than via
    complex arithmetic; :func:`injected_power_complex` is the cross-check.
    """
    mu, om = np.asarray(v.mu, dtype=float), np.asarray(v.omega, dtype=float)
    if mu.shape != (y.n,) or om.shape != (y.n,):
        raise ValueError(f"voltage state of length {mu.shape} does not match {y.n} buses")
    g, b = y.g, y.b
    gm, go = g @ mu, g @ om
    bm, bo = b @ mu, b @ om
    p = mu * gm + om * go + om * bm - mu * bo
    q = om * gm - mu * go - mu * bm - om * bo
    return p, q


def injected_power_complex(y: AdmittanceMatrix, v: VoltageState) -> tuple[np.ndarray, np.ndarray]:
    vc = v.complex
    s = vc * np.conj(y.complex @ vc)
    return s.real, s.imag
