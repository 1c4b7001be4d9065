"""Iterative annealing solvers for power flow (AQPF) and optimal power flow (AQOPF).

Each iteration builds the Hamiltonian around the current base point,
anneals it, moves the base point to the best readout and adapts the
voltage step sizes.  The loop stops once the power mismatch of the current
state drops to ``epsilon``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .annealing import AnnealParams, best_sample, run_backend
from .grid import AdmittanceMatrix, BusKind, Network, VoltageState, build_admittance, injected_power
from .hamiltonian.builder import (
    DiscretizationConfig,
    Mode,
    PenaltyWeights,
    ProblemEncoding,
    build_hamiltonian,
)
from .hamiltonian.qubo import quadratize
from .reference import FEAS_TOL, PfSolution, check_limits, evaluate_cost

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepPolicy:
    """Halve both steps when the mismatch has not dropped by ``min_improvement`` over ``window`` iterations."""

    shrink: float = 0.5
    window: int = 5
    min_improvement: float = 0.01
    floor_mu: float = 1e-5
    floor_omega: float = 1e-6

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if not (self.floor_mu > 0 and self.floor_omega > 0):
            raise ValueError("step floors must be positive")


@dataclass(frozen=True)
class LoopConfig:
    epsilon: float = 1e-2
    it_max: int = 500
    delta_mu: float = 1e-2
    delta_omega: float = 1e-3
    step: StepPolicy = StepPolicy()
    mode: Mode = Mode.AQPF
    backend: str = "sa-hobo"
    anneal: AnnealParams = AnnealParams(readouts=5000, sweeps_per_readout=2)
    weights: PenaltyWeights = PenaltyWeights()
    discretization: DiscretizationConfig = DiscretizationConfig()
    # share of readouts started from the current point; None: 0 for AQPF, 0.5 for AQOPF
    warm_start: float | None = None
    warm_temperature: float = 1e-5
    # slack on operating limits when judging the final AQOPF state (MW, MVAR, p.u., deg)
    feasibility_tol: float = FEAS_TOL

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.it_max < 1:
            raise ValueError("it_max must be at least 1")
        if not (self.delta_mu > 0 and self.delta_omega > 0):
            raise ValueError("initial steps must be positive")
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.warm_start is not None and not 0 <= self.warm_start <= 1:
            raise ValueError("warm_start must lie in [0, 1]")
        if not self.warm_temperature > 0:
            raise ValueError("warm_temperature must be positive")

    @property
    def warm_share(self) -> float:
        if self.warm_start is not None:
            return self.warm_start
        return 0.5 if self.mode is Mode.AQOPF else 0.0


@dataclass
class IterationRecord:
    iteration: int
    h_obj: float
    delta_mu: float
    delta_omega: float
    v_state: VoltageState
    applied_bits_digest: str
    energy: float
    kept: bool = False


@dataclass
class SolveTrace:
    mode: Mode
    records: list[IterationRecord]
    converged: bool
    final_state: VoltageState
    pf: PfSolution
    dispatch: np.ndarray  # MW per generator, network order
    total_cost: float
    feasible: bool
    violations: list[str] = field(default_factory=list)
    elapsed: float = 0.0
    mismatch: float = math.nan
    # non-slack generation (MW, MVAR) behind the final state, keyed by bus
    p_set: dict[int, float] = field(default_factory=dict)
    q_set: dict[int, float] = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def h_obj(self) -> float:
        return self.mismatch

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "h_obj", "delta_mu", "delta_omega"])
        for r in self.records:
            w.writerow([r.iteration, repr(r.h_obj), repr(r.delta_mu), repr(r.delta_omega)])
        return buf.getvalue()

    def dispatch_csv(self, net: Network) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bus", "p_mw", "q_mvar", "cost"])
        for k, g in enumerate(net.generators):
            w.writerow([g.bus, f"{self.dispatch[k]:.9g}", f"{self.pf.q_gen[k]:.9g}", f"{g.cost(self.dispatch[k]):.9g}"])
        return buf.getvalue()


@dataclass(frozen=True)
class DeviationReport:
    mean_v: float
    std_v: float
    mean_delta: float
    std_delta: float
    mean_p: float
    std_p: float
    mean_q: float
    std_q: float

    HEADER = ("system", "algorithm", "annealer", "v_mean", "v_std", "delta_mean", "delta_std",
              "p_mean", "p_std", "q_mean", "q_std")

    def row(self) -> list[float]:
        return [self.mean_v, self.std_v, self.mean_delta, self.std_delta,
                self.mean_p, self.std_p, self.mean_q, self.std_q]

    def to_csv(self, system: str = "", algorithm: str = "", annealer: str = "") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        w.writerow([system, algorithm, annealer, *(f"{x:.6e}" for x in self.row())])
        return buf.getvalue()


def compare(result: SolveTrace | PfSolution, reference: PfSolution, s_base: float = 100.0) -> DeviationReport:
    """Mean and population standard deviation of absolute per-bus deviations."""
    pf = result.pf if isinstance(result, SolveTrace) else result
    if len(pf.v_mag) != len(reference.v_mag):
        raise ValueError(f"bus count mismatch: {len(pf.v_mag)} vs {len(reference.v_mag)}")
    dv = np.abs(pf.v_mag - reference.v_mag)
    dd = np.abs(pf.delta - reference.delta)
    dp = np.abs(pf.p_inj - reference.p_inj) * s_base
    dq = np.abs(pf.q_inj - reference.q_inj) * s_base
    return DeviationReport(float(dv.mean()), float(dv.std()), float(dd.mean()), float(dd.std()),
                           float(dp.mean()), float(dp.std()), float(dq.mean()), float(dq.std()))


# --------------------------------------------------------------------------


def flat_start(net: Network) -> VoltageState:
    """``mu = 1, omega = 0`` everywhere except the slack bus, which sits at its set point."""
    mu = np.ones(net.n)
    om = np.zeros(net.n)
    s = net.buses[net.slack]
    v, d = s.v_spec, math.radians(s.delta_spec or 0.0)
    mu[net.slack], om[net.slack] = v * math.cos(d), v * math.sin(d)
    return VoltageState(mu, om)


def mismatch_objective(net: Network, y: AdmittanceMatrix, v: VoltageState,
                       p_gen: dict[int, float] | None = None,
                       q_gen: dict[int, float] | None = None, hold_weight: float = 1.0) -> float:
    """Sum of squared bus mismatches (per-unit) of a voltage state.

    ``p_gen``/``q_gen`` map bus index to MW/MVAR.  Generator buses missing
    from ``q_gen`` absorb any reactive mismatch (their output is whatever
    the network needs); in that case a PV bus instead contributes
    ``hold_weight`` times the squared error of ``|V|^2`` against its set
    point.  The slack bus is excluded.
    """
    p_gen = p_gen if p_gen is not None else {g.bus: g.p_g_spec if not g.is_fixed else g.p_min
                                              for g in net.generators}
    q_gen = q_gen or {}
    pd, qd = net.demand_pu()
    p, q = injected_power(y, v)
    s = net.s_base
    gen_buses = {g.bus for g in net.generators}
    total = 0.0
    for k, bus in enumerate(net.buses):
        if bus.kind is BusKind.SLACK:
            continue
        total += (p[k] - p_gen.get(bus.index, 0.0) / s + pd[k]) ** 2
        if bus.index in q_gen:
            total += (q[k] - q_gen[bus.index] / s + qd[k]) ** 2
        elif bus.index not in gen_buses:
            total += (q[k] + qd[k]) ** 2
        elif bus.kind is BusKind.PV:
            total += hold_weight * (v.mu[k] ** 2 + v.omega[k] ** 2 - bus.v_spec ** 2) ** 2
    return float(total)


def _digest(bits: np.ndarray) -> str:
    return hashlib.sha256(np.packbits(bits.astype(np.uint8)).tobytes()).hexdigest()[:12]


def _final_pf(net: Network, y: AdmittanceMatrix, v: VoltageState, converged: bool, iterations: int,
              h: float) -> PfSolution:
    p, q = injected_power(y, v)
    pd, qd = net.demand_pu()
    s = net.s_base
    q_gen = np.array([(q[g.bus - 1] + qd[g.bus - 1]) * s for g in net.generators])
    return PfSolution(
        v_mag=v.magnitude, delta=v.angle_deg, p_inj=p, q_inj=q,
        p_slack=float((p[net.slack] + pd[net.slack]) * s), q_gen=q_gen,
        converged=converged, iterations=iterations, mismatch=h,
    )


class _StepSchedule:
    def __init__(self, cfg: LoopConfig):
        self.policy = cfg.step
        self.mu = cfg.delta_mu
        self.omega = cfg.delta_omega
        self.history: list[float] = []
        self.last_change = 0

    def update(self, h: float) -> None:
        self.history.append(h)
        it = len(self.history)
        w = self.policy.window
        if it - self.last_change < w or it <= w:
            return
        if h > (1.0 - self.policy.min_improvement) * self.history[it - 1 - w]:
            self.mu = max(self.policy.floor_mu, self.mu * self.policy.shrink)
            self.omega = max(self.policy.floor_omega, self.omega * self.policy.shrink)
            self.last_change = it


def _extend(bits: np.ndarray, problem) -> np.ndarray:
    """Append auxiliary values ``z = x_i x_j`` so a state fits a quadratized problem."""
    reg = problem.registry
    out = np.zeros(len(reg), dtype=np.uint8)
    out[:len(bits)] = bits
    for k in range(len(bits), len(reg)):
        i, j = reg[k].pair
        out[k] = out[i] & out[j]
    return out


def _anneal(cfg: LoopConfig, h, it: int, current: np.ndarray | None):
    """Best bitstring of one annealing call, restricted to the Hamiltonian's own variables.

    A share of the chains (``cfg.warm_share``) starts from ``current`` at a
    low temperature so the search also explores the neighbourhood of the
    present operating point.
    """
    readouts = cfg.anneal.readouts
    base_seed = cfg.anneal.seed + (it - 1) * readouts
    problem = quadratize(h, cfg.weights.lambda_quad) if cfg.backend == "sa-qubo" else h
    n_warm = 0
    if current is not None and cfg.backend != "exhaustive":
        n_warm = min(readouts, int(round(cfg.warm_share * readouts)))
    n_cold = readouts - n_warm
    rs = None
    if n_cold:
        rs = run_backend(cfg.backend, problem, replace(cfg.anneal, readouts=n_cold, seed=base_seed))
    if n_warm:
        t0 = cfg.warm_temperature * max(problem.max_abs_coefficient(), 1e-300)
        warm = replace(cfg.anneal, readouts=n_warm, seed=base_seed + n_cold, t_start=t0, t_end=1e-3 * t0)
        rw = run_backend(cfg.backend, problem, warm, initial=_extend(current, problem))
        rs = rw if rs is None else rs.merge(rw)
    bits, energy = best_sample(rs)
    return bits[:h.num_vars], energy


def _keep_bits(enc: ProblemEncoding, p_prev: dict[int, float], q_prev: dict[int, float]) -> np.ndarray:
    """Bitstring that leaves voltages in place and re-encodes the previous dispatch."""
    x = np.zeros(enc.num_vars, dtype=np.uint8)
    for codes, prev in ((enc.p_codes, p_prev), (enc.q_codes, q_prev)):
        for bus, code in codes.items():
            if bus not in prev or code.step == 0:
                continue
            level = int(np.clip(round((prev[bus] - code.lo) / code.step), 0, (1 << len(code.bits)) - 1))
            for k, v in enumerate(code.bits):
                x[v] = (level >> k) & 1
    for con in enc.constraints:
        if not con.slack_bits:
            continue
        g = con.g.evaluate(x)
        level = int(np.clip(round(-g / con.resolution), 0, (1 << len(con.slack_bits)) - 1))
        for k, v in enumerate(con.slack_bits):
            x[v] = (level >> k) & 1
    return x


def _initial_dispatch(net: Network) -> tuple[dict[int, float], dict[int, float]]:
    p, q = {}, {}
    for g in net.generators:
        p[g.bus] = g.p_min if g.is_fixed else (g.p_g_spec if g.p_g_spec is not None else 0.5 * (g.p_min + g.p_max))
        q[g.bus] = float(np.clip(0.0, g.q_min, g.q_max))
    return p, q


def _run(net: Network, cfg: LoopConfig, v0: VoltageState | None,
         start: tuple[dict[int, float], dict[int, float]] | None = None) -> SolveTrace:
    t0 = time.perf_counter()
    y = build_admittance(net)
    mode = cfg.mode
    v = v0 if v0 is not None else flat_start(net)
    steps = _StepSchedule(cfg)
    if mode is Mode.AQPF:
        p_cur, q_cur = {g.bus: (g.p_min if g.is_fixed else g.p_g_spec) for g in net.generators}, {}
    else:
        p_cur, q_cur = _initial_dispatch(net)
        if start is not None:
            fixed = {g.bus for g in net.generators if g.is_fixed}
            p_cur.update({b: p for b, p in start[0].items() if b in p_cur and b not in fixed})
            q_cur.update({b: q for b, q in start[1].items() if b in q_cur})
    slack_bus = net.buses[net.slack].index
    p_cur.pop(slack_bus, None)
    q_cur.pop(slack_bus, None)

    hold = cfg.weights.lambda_4
    h = mismatch_objective(net, y, v, p_cur, q_cur if mode is Mode.AQOPF else None, hold)
    records: list[IterationRecord] = []
    it = 0
    while h > cfg.epsilon and it < cfg.it_max:
        it += 1
        disc = replace(cfg.discretization, delta_mu=steps.mu, delta_omega=steps.omega)
        enc = ProblemEncoding(net, v, disc, mode, cfg.weights, y=y)
        ham, _ = build_hamiltonian(enc)
        keep = _keep_bits(enc, p_cur, q_cur) if mode is Mode.AQOPF else np.zeros(ham.num_vars, dtype=np.uint8)
        bits, energy = _anneal(cfg, ham, it, keep)
        kept = False
        if mode is Mode.AQOPF:
            e_keep = ham.evaluate(keep)
            if e_keep < energy:
                bits, energy, kept = keep, e_keep, True
        v_new = enc.apply_bits(bits)
        if mode is Mode.AQPF:
            h_new = mismatch_objective(net, y, v_new, p_cur, None, hold)
            if h_new > h:
                # the annealer missed the stay-put bitstring; keep the current point
                bits = np.zeros_like(bits)
                energy = ham.evaluate(bits)
                v_new, h_new, kept = v, h, True
        else:
            p_cur, q_cur = enc.generation(bits)
            h_new = mismatch_objective(net, y, v_new, p_cur, q_cur)
        records.append(IterationRecord(it, h_new, steps.mu, steps.omega, v_new, _digest(bits), float(energy), kept))
        log.debug("iteration %d  h_obj=%.3e  steps=(%.1e, %.1e)%s", it, h_new, steps.mu, steps.omega,
                  "  kept" if kept else "")
        v, h = v_new, h_new
        steps.update(h)

    converged = h <= cfg.epsilon
    pf = _final_pf(net, y, v, converged, it, h)
    dispatch = np.array([pf.p_slack if g.bus == slack_bus else p_cur[g.bus] for g in net.generators])
    cost = evaluate_cost(dispatch, [g.cost for g in net.generators])
    violations = check_limits(net, pf, dispatch, tol=cfg.feasibility_tol) if mode is Mode.AQOPF else []
    if not converged:
        log.warning("%s stopped after %d iterations with mismatch %.3e", mode.value, it, h)
    return SolveTrace(mode, records, converged, v, pf, dispatch, cost, not violations, violations,
                      time.perf_counter() - t0, h, dict(p_cur), dict(q_cur))


def run_aqpf(net: Network, cfg: LoopConfig = LoopConfig(), v0: VoltageState | None = None) -> SolveTrace:
    """Power flow by repeated annealing from a flat start (or ``v0``)."""
    return _run(net, replace(cfg, mode=Mode.AQPF), v0)


def run_aqopf(net: Network, cfg: LoopConfig = LoopConfig(mode=Mode.AQOPF), v0: VoltageState | None = None,
              warm: SolveTrace | None = None) -> SolveTrace:
    """Optimal power flow on the combined mismatch, constraint and cost Hamiltonian.

    Convergence is judged on the mismatch alone; operating limits are
    checked on the final state and reported in ``violations``.  ``warm``
    restarts from an earlier result (its voltages and generation) unless
    ``v0`` overrides the voltages.
    """
    start = None
    if warm is not None:
        v0 = v0 if v0 is not None else warm.final_state
        start = (warm.p_set, warm.q_set)
    return _run(net, replace(cfg, mode=Mode.AQOPF), v0, start)
