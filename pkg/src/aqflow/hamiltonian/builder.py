"""Problem Hamiltonians for the annealing power-flow and OPF iterations.

Every iteration linearises nothing: bus voltages are written as
``mu_i = mu0_i + (x_up - x_down) * d_mu`` (same for ``omega``), so the power
injections are quadratic in the bits and the squared mismatch is quartic.
A :class:`ProblemEncoding` fixes the variable registry for one iteration;
the ``build_*`` functions turn it into polynomials over that registry.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ..grid import AdmittanceMatrix, BusKind, Network, VoltageState, build_admittance, injected_power
from .factored import SquaredSum
from .polynomial import BinaryPolynomial, combine
from .variables import (
    Registry,
    VarKind,
    mu_down,
    mu_up,
    omega_down,
    omega_up,
    pg_bit,
    qg_bit,
    slack_bit,
)


class Mode(str, enum.Enum):
    AQPF = "aqpf"
    AQOPF = "aqopf"


class SlackEncodingError(ValueError):
    """A constraint's range needs more slack bits than configured."""

    def __init__(self, constraint: str, required: int, available: int):
        super().__init__(f"constraint {constraint} needs {required} slack bits, only {available} configured")
        self.constraint = constraint
        self.required = required


@dataclass(frozen=True)
class DiscretizationConfig:
    """Step sizes and bit budgets.

    Generator outputs use unsigned binary codes spanning exactly
    ``[p_min, p_max]``: the bit count comes from ``pg_bits`` or, when unset,
    from the smallest count whose step does not exceed ``pg_step``.
    """

    delta_mu: float = 1e-2
    delta_omega: float = 1e-3
    pg_step: float = 1.0
    qg_step: float = 5.0
    pg_bits: int | None = None
    qg_bits: int | None = None
    slack_bits_per_constraint: int = 10
    slack_resolution: float | None = None

    def __post_init__(self):
        for name in ("delta_mu", "delta_omega", "pg_step", "qg_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("pg_bits", "qg_bits"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.slack_bits_per_constraint < 1:
            raise ValueError("slack_bits_per_constraint must be at least 1")
        if self.slack_resolution is not None and not self.slack_resolution > 0:
            raise ValueError("slack_resolution must be positive")


@dataclass(frozen=True)
class PenaltyWeights:
    """Penalty multipliers.

    ``lambda_0..lambda_7`` weight the generator P/Q, voltage and angle bound
    penalties in that order, ``lambda_8`` the squared fuel cost, and
    ``lambda_4`` doubles as the PV voltage-hold weight of the power-flow
    mode.  ``lambda_quad=None`` means twice the largest coefficient among
    the cubic and quartic terms being reduced.
    """

    lambda_0: float = 1e2
    lambda_1: float = 1e2
    lambda_2: float = 1e2
    lambda_3: float = 1e2
    lambda_4: float = 1e2
    lambda_5: float = 1e2
    lambda_6: float = 1e2
    lambda_7: float = 1e2
    lambda_8: float = 1e-6
    lambda_quad: float | None = None

    def __post_init__(self):
        for k in range(9):
            if getattr(self, f"lambda_{k}") < 0:
                raise ValueError(f"lambda_{k} must be nonnegative")
        if self.lambda_quad is not None and not self.lambda_quad > 0:
            raise ValueError("lambda_quad must be positive")

    def __getitem__(self, k: int) -> float:
        return getattr(self, f"lambda_{k}")


@dataclass
class Constraint:
    """One inequality ``g(x) <= 0`` with its binary-expanded slack."""

    name: str
    g: BinaryPolynomial
    weight: float
    lower: float
    upper: float
    slack_bits: list[int] = field(default_factory=list)
    resolution: float = 0.0

    def slack(self) -> BinaryPolynomial:
        terms = {(v,): self.resolution * (1 << k) for k, v in enumerate(self.slack_bits)}
        return BinaryPolynomial.from_terms(self.g.registry, terms)


@dataclass
class GeneratorCode:
    """Binary code of a generator's output: ``lo + step * sum_k 2^k b_k`` (MW or MVAR)."""

    lo: float
    step: float
    bits: list[int]

    def value(self, x: np.ndarray) -> float:
        code = sum(int(x[v]) << k for k, v in enumerate(self.bits))
        return self.lo + self.step * code


def _code(lo: float, hi: float, step: float, bits: int | None) -> tuple[int, float]:
    span = hi - lo
    if span <= 0:
        return 0, 0.0
    if bits is None:
        bits = max(1, math.ceil(math.log2(span / step + 1) - 1e-12))
    return bits, span / ((1 << bits) - 1)


def substitute_voltage(v0: VoltageState, cfg: DiscretizationConfig, bits: np.ndarray,
                       registry: Registry, buses) -> VoltageState:
    """Apply the increment rule numerically: up bit adds a step, down bit subtracts one.

    ``buses`` are the 1-based indices that carry voltage bits; every other
    bus keeps its base value.  Auxiliary and non-voltage bits are ignored.
    """
    mu = np.array(v0.mu, dtype=float)
    om = np.array(v0.omega, dtype=float)
    for bus in buses:
        k = bus - 1
        mu[k] += (int(bits[registry.index(mu_up(bus))]) - int(bits[registry.index(mu_down(bus))])) * cfg.delta_mu
        om[k] += (int(bits[registry.index(omega_up(bus))]) - int(bits[registry.index(omega_down(bus))])) * cfg.delta_omega
    return VoltageState(mu, om)


class ProblemEncoding:
    """Variables and symbolic quantities of one iteration.

    In power-flow mode generator outputs are fixed numbers: scheduled P at
    PV buses and, because PV buses have no reactive schedule, the reactive
    output implied by the base point.  In OPF mode every non-slack
    generator's P (unless must-run) and Q are binary codes, and the slack
    unit's P follows the balance with losses frozen at the base point.
    """

    def __init__(self, net: Network, v0: VoltageState, cfg: DiscretizationConfig,
                 mode: Mode | str = Mode.AQPF, weights: PenaltyWeights | None = None,
                 y: AdmittanceMatrix | None = None, prune_constraints: bool = True):
        self.net = net
        self.v0 = VoltageState(np.array(v0.mu, dtype=float), np.array(v0.omega, dtype=float))
        if not (np.all(np.isfinite(self.v0.mu)) and np.all(np.isfinite(self.v0.omega))):
            raise ValueError("base voltage state must be finite")
        self.cfg = cfg
        self.mode = Mode(mode)
        self.weights = weights or PenaltyWeights()
        self.y = y if y is not None else build_admittance(net)
        self.registry = reg = Registry()
        self.slack_pos = net.slack
        self.pd, self.qd = net.demand_pu()
        s = net.s_base

        self.var_buses = [b.index for b in net.buses if b.kind is not BusKind.SLACK]
        self.mu: list[BinaryPolynomial] = []
        self.omega: list[BinaryPolynomial] = []
        voltage_idx = {}
        for bus in self.var_buses:
            voltage_idx[bus] = tuple(reg.add(f(bus)) for f in (mu_up, mu_down, omega_up, omega_down))

        self.p_codes: dict[int, GeneratorCode] = {}
        self.q_codes: dict[int, GeneratorCode] = {}
        slack_bus = net.buses[self.slack_pos].index
        if self.mode is Mode.AQOPF:
            for g in net.generators:
                if g.bus == slack_bus or g.is_fixed:
                    continue
                nbits, step = _code(g.p_min, g.p_max, cfg.pg_step, cfg.pg_bits)
                self.p_codes[g.bus] = GeneratorCode(g.p_min, step, [reg.add(pg_bit(g.bus, k)) for k in range(nbits)])
            for g in net.generators:
                if g.bus == slack_bus:
                    continue
                nbits, step = _code(g.q_min, g.q_max, cfg.qg_step, cfg.qg_bits)
                self.q_codes[g.bus] = GeneratorCode(g.q_min, step, [reg.add(qg_bit(g.bus, k)) for k in range(nbits)])

        # symbolic voltages
        for k, bus in enumerate(net.buses):
            if bus.index in voltage_idx:
                a, b, c, d = voltage_idx[bus.index]
                self.mu.append(BinaryPolynomial.linear(reg, self.v0.mu[k], {a: cfg.delta_mu, b: -cfg.delta_mu}))
                self.omega.append(BinaryPolynomial.linear(reg, self.v0.omega[k], {c: cfg.delta_omega, d: -cfg.delta_omega}))
            else:
                self.mu.append(BinaryPolynomial.constant(reg, self.v0.mu[k]))
                self.omega.append(BinaryPolynomial.constant(reg, self.v0.omega[k]))

        self.p_inj, self.q_inj = self._injections()
        p_base, q_base = injected_power(self.y, self.v0)

        # generator outputs in per-unit, keyed by 0-based bus position
        self.p_gen: dict[int, BinaryPolynomial] = {}
        self.q_gen: dict[int, BinaryPolynomial] = {}
        for g in net.generators:
            k = g.bus - 1
            if k == self.slack_pos:
                continue
            if g.bus in self.p_codes:
                self.p_gen[k] = self._code_poly(self.p_codes[g.bus], 1.0 / s)
            else:
                if g.p_g_spec is None and not g.is_fixed:
                    raise ValueError(f"generator at bus {g.bus} has no scheduled output")
                p = g.p_min if g.is_fixed else g.p_g_spec
                self.p_gen[k] = BinaryPolynomial.constant(reg, p / s)
            if g.bus in self.q_codes:
                self.q_gen[k] = self._code_poly(self.q_codes[g.bus], 1.0 / s)
            else:
                self.q_gen[k] = BinaryPolynomial.constant(reg, q_base[k] + self.qd[k])

        # slack unit output in MW with losses frozen at the base point
        self.base_losses = float(p_base.sum())
        total = (self.pd.sum() + self.base_losses) * s
        slack_p = BinaryPolynomial.constant(reg, total)
        for k, poly in self.p_gen.items():
            slack_p = slack_p - poly * s
        self.p_slack_mw = slack_p

        self.constraints: list[Constraint] = []
        self.pruned: list[str] = []
        if self.mode is Mode.AQOPF:
            self._build_constraints(prune_constraints)

    # -- helpers ------------------------------------------------------------

    def _code_poly(self, code: GeneratorCode, scale: float) -> BinaryPolynomial:
        coefs = {v: code.step * (1 << k) * scale for k, v in enumerate(code.bits)}
        return BinaryPolynomial.linear(self.registry, code.lo * scale, coefs)

    def _injections(self):
        g, b = self.y.g, self.y.b
        reg = self.registry
        p_out, q_out = [], []
        for i in range(self.net.n):
            a = BinaryPolynomial(reg)
            c = BinaryPolynomial(reg)
            for j in np.flatnonzero((g[i] != 0) | (b[i] != 0)):
                if g[i, j]:
                    a = a + self.mu[j] * g[i, j]
                    c = c + self.omega[j] * g[i, j]
                if b[i, j]:
                    a = a - self.omega[j] * b[i, j]
                    c = c + self.mu[j] * b[i, j]
            p_out.append(self.mu[i] * a + self.omega[i] * c)
            q_out.append(self.omega[i] * a - self.mu[i] * c)
        return p_out, q_out

    @property
    def residual_positions(self) -> list[int]:
        return [bus - 1 for bus in self.var_buses]

    @property
    def num_vars(self) -> int:
        return len(self.registry)

    def voltage_bits(self) -> list[int]:
        return [i for i, v in enumerate(self.registry)
                if v.kind in (VarKind.MU_UP, VarKind.MU_DOWN, VarKind.OMEGA_UP, VarKind.OMEGA_DOWN)]

    def _build_constraints(self, prune: bool) -> None:
        net, w, reg, s = self.net, self.weights, self.registry, self.net.s_base
        candidates: list[tuple[str, BinaryPolynomial, float]] = []
        for g in net.generators:
            k = g.bus - 1
            if k == self.slack_pos:
                p = self.p_slack_mw * (1.0 / s)
                q = self.q_inj[k] + self.qd[k]
            else:
                p, q = self.p_gen[k], self.q_gen[k]
            candidates += [
                (f"pmax@{g.bus}", p - g.p_max / s, w[0]),
                (f"pmin@{g.bus}", g.p_min / s - p, w[1]),
                (f"qmax@{g.bus}", q - g.q_max / s, w[2]),
                (f"qmin@{g.bus}", g.q_min / s - q, w[3]),
            ]
        for k, bus in enumerate(net.buses):
            if k == self.slack_pos:
                continue
            vsq = self.mu[k] * self.mu[k] + self.omega[k] * self.omega[k]
            candidates += [
                (f"vmax@{bus.index}", vsq - bus.v_max ** 2, w[4]),
                (f"vmin@{bus.index}", bus.v_min ** 2 - vsq, w[5]),
            ]
            # omega <= mu tan(delta_max) is exact for mu > 0
            if -90.0 < bus.delta_max < 90.0:
                candidates.append((f"dmax@{bus.index}",
                                   self.omega[k] - self.mu[k] * math.tan(math.radians(bus.delta_max)), w[6]))
            if -90.0 < bus.delta_min < 90.0:
                candidates.append((f"dmin@{bus.index}",
                                   self.mu[k] * math.tan(math.radians(bus.delta_min)) - self.omega[k], w[7]))

        cfg = self.cfg
        for name, g_poly, weight in candidates:
            if weight == 0:
                self.pruned.append(name)
                continue
            lo, hi = g_poly.bounds()
            if prune and hi <= 1e-9:
                self.pruned.append(name)
                continue
            con = Constraint(name, g_poly, weight, lo, hi)
            span = max(0.0, -lo)
            if span > 0:
                if cfg.slack_resolution is not None:
                    need = max(1, math.ceil(math.log2(span / cfg.slack_resolution + 1) - 1e-12))
                    if need > cfg.slack_bits_per_constraint:
                        raise SlackEncodingError(name, need, cfg.slack_bits_per_constraint)
                    nbits, res = need, cfg.slack_resolution
                else:
                    nbits = cfg.slack_bits_per_constraint
                    res = span / ((1 << nbits) - 1)
                con.slack_bits = [reg.add(slack_bit(name, b)) for b in range(nbits)]
                con.resolution = res
            self.constraints.append(con)
        # rebind constraint polynomials now that the registry is complete
        for con in self.constraints:
            con.g = con.g.with_registry(reg)

    # -- numeric counterparts ----------------------------------------------

    def apply_bits(self, bits) -> VoltageState:
        return substitute_voltage(self.v0, self.cfg, np.asarray(bits), self.registry, self.var_buses)

    def generation(self, bits) -> tuple[dict[int, float], dict[int, float]]:
        """Generator P and Q (MW, MVAR) keyed by bus index, decoded numerically.

        The slack unit is omitted; its output follows from the network.
        """
        bits = np.asarray(bits)
        p, q = {}, {}
        s = self.net.s_base
        _, q_base = injected_power(self.y, self.v0)
        slack_bus = self.net.buses[self.slack_pos].index
        for g in self.net.generators:
            if g.bus == slack_bus:
                continue
            if g.bus in self.p_codes:
                p[g.bus] = self.p_codes[g.bus].value(bits)
            else:
                p[g.bus] = g.p_min if g.is_fixed else g.p_g_spec
            if g.bus in self.q_codes:
                q[g.bus] = self.q_codes[g.bus].value(bits)
            else:
                q[g.bus] = (q_base[g.bus - 1] + self.qd[g.bus - 1]) * s
        return p, q

    def h_obj_value(self, bits) -> float:
        """Objective evaluated numerically: voltages first, then squared mismatches."""
        v = self.apply_bits(bits)
        return self.h_obj_at(v, *self.generation(bits))

    def h_obj_at(self, v: VoltageState, p_gen: dict[int, float], q_gen: dict[int, float]) -> float:
        s = self.net.s_base
        p, q = injected_power(self.y, v)
        total = 0.0
        for k in self.residual_positions:
            bus = k + 1
            pg = p_gen.get(bus, 0.0) / s
            qg = q_gen.get(bus, 0.0) / s
            total += (p[k] - pg + self.pd[k]) ** 2 + (q[k] - qg + self.qd[k]) ** 2
        if self.mode is Mode.AQPF:
            vs = self.net.v_spec()
            for k in self.net.positions(BusKind.PV):
                total += self.weights.lambda_4 * (v.mu[k] ** 2 + v.omega[k] ** 2 - vs[k] ** 2) ** 2
        return float(total)


# --------------------------------------------------------------------------
# Hamiltonian parts


def obj_residuals(enc: ProblemEncoding) -> SquaredSum:
    """Active and reactive mismatch of every non-slack bus, plus PV holds in power-flow mode."""
    reg = enc.registry
    out = SquaredSum(reg)
    zero = BinaryPolynomial(reg)
    for k in enc.residual_positions:
        out.add(1.0, enc.p_inj[k] - enc.p_gen.get(k, zero) + enc.pd[k])
        out.add(1.0, enc.q_inj[k] - enc.q_gen.get(k, zero) + enc.qd[k])
    if enc.mode is Mode.AQPF and enc.weights.lambda_4:
        vs = enc.net.v_spec()
        for k in enc.net.positions(BusKind.PV):
            out.add(enc.weights.lambda_4, enc.mu[k] * enc.mu[k] + enc.omega[k] * enc.omega[k] - vs[k] ** 2)
    return out


def const_residuals(enc: ProblemEncoding) -> SquaredSum:
    out = SquaredSum(enc.registry)
    for con in enc.constraints:
        out.add(con.weight, con.g + con.slack())
    return out


def cost_residuals(enc: ProblemEncoding) -> SquaredSum:
    """Fuel cost of every unit (P in MW); the slack unit uses the frozen-loss balance."""
    out = SquaredSum(enc.registry)
    lam = enc.weights.lambda_8
    if lam == 0:
        return out
    s = enc.net.s_base
    for g in enc.net.generators:
        k = g.bus - 1
        p = enc.p_slack_mw if k == enc.slack_pos else enc.p_gen[k] * s
        out.add(lam, p * p * g.cost.c2 + p * g.cost.c1 + g.cost.c0)
    return out


def build_h_obj(enc: ProblemEncoding) -> BinaryPolynomial:
    """Sum of squared active and reactive mismatches at every non-slack bus.

    In power-flow mode PV buses add ``lambda_4 (mu^2 + omega^2 - v_spec^2)^2``
    so that their magnitude set point is honoured.
    """
    return obj_residuals(enc).expand()


def inequality_penalty(con: Constraint) -> BinaryPolynomial:
    """``weight * (g + s)^2`` with ``s`` the constraint's nonnegative binary slack."""
    return (con.g + con.slack()).square() * con.weight


def build_h_const(enc: ProblemEncoding) -> BinaryPolynomial:
    return const_residuals(enc).expand()


def build_h_cost(enc: ProblemEncoding) -> BinaryPolynomial:
    """``lambda_8 * sum_k f_k(P_k)^2``."""
    return cost_residuals(enc).expand()


def build_hamiltonian(enc: ProblemEncoding) -> tuple[BinaryPolynomial, BinaryPolynomial]:
    """Return ``(H, H_obj)``: the full problem Hamiltonian and its mismatch part.

    ``H.factored`` holds the same function as a :class:`SquaredSum`, which
    the annealers use for cheap flip energies.
    """
    parts = obj_residuals(enc)
    h_obj = parts.expand()
    if enc.mode is Mode.AQPF:
        h = combine(h_obj)
    else:
        const, cost = const_residuals(enc), cost_residuals(enc)
        h = combine(h_obj, const.expand(), cost.expand())
        parts.extend(const)
        parts.extend(cost)
    h.factored = parts
    return h, h_obj
