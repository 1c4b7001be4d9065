"""Classical reference solvers: Newton-Raphson power flow and a brute-force OPF.

The NR core is written against a leading batch axis so the OPF oracle can
solve thousands of dispatch candidates at once; :func:`nr_power_flow` is the
batch-of-one special case.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import (
    AdmittanceMatrix,
    BusKind,
    CostPoly,
    Network,
    VoltageState,
    build_admittance,
)

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9


class PowerFlowError(RuntimeError):
    pass


class InfeasibleError(RuntimeError):
    pass


@dataclass
class PfSolution:
    v_mag: np.ndarray
    delta: np.ndarray  # degrees
    p_inj: np.ndarray  # per-unit
    q_inj: np.ndarray
    p_slack: float  # MW
    q_gen: np.ndarray  # MVAR, one entry per generator in network order
    converged: bool
    iterations: int
    mismatch: float = 0.0

    @property
    def voltage(self) -> VoltageState:
        return VoltageState.from_polar(self.v_mag, self.delta)


@dataclass
class OpfSolution:
    dispatch: np.ndarray  # MW, one entry per generator in network order
    pf: PfSolution
    total_cost: float
    feasible: bool
    candidates: int = 0
    violations: list[str] = field(default_factory=list)


def evaluate_cost(dispatch: Sequence[float], costs: Sequence[CostPoly]) -> float:
    """Total fuel cost of a dispatch (MW) under quadratic cost curves."""
    if len(dispatch) != len(costs):
        raise ValueError(f"{len(dispatch)} dispatch values for {len(costs)} cost curves")
    return float(sum(c(float(p)) for p, c in zip(dispatch, costs)))


# --------------------------------------------------------------------------
# Newton-Raphson


def _bus_sets(net: Network) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ref = np.array([net.slack])
    pv = np.array(net.positions(BusKind.PV), dtype=int)
    pq = np.array(net.positions(BusKind.PQ), dtype=int)
    return ref, pv, pq


def scheduled_injections(net: Network, dispatch: np.ndarray | None = None) -> np.ndarray:
    """Complex scheduled injection ``S^G - S^D`` per bus (per-unit).

    ``dispatch`` overrides generator active power (MW, network generator
    order, batch axis allowed).  Reactive generation is left at zero because
    it is free at every generator bus.
    """
    pd, qd = net.demand_pu()
    if dispatch is None:
        dispatch = np.array([g.p_g_spec if g.p_g_spec is not None else 0.0 for g in net.generators])
    dispatch = np.atleast_2d(np.asarray(dispatch, dtype=float))
    pg = np.zeros((dispatch.shape[0], net.n))
    for k, g in enumerate(net.generators):
        pg[:, g.bus - 1] += dispatch[:, k] / net.s_base
    return (pg - pd) - 1j * qd


def _nr_batch(y: np.ndarray, v0: np.ndarray, sbus: np.ndarray, pv, pq, tol: float, max_iter: int):
    """Polar NR on a batch of cases sharing one admittance matrix.

    Returns (V, converged, iterations, final mismatch) with batch leading axis.
    """
    v = v0.astype(complex).copy()
    nb = v.shape[0]
    pvpq = np.r_[pv, pq]
    npvpq, npq = len(pvpq), len(pq)
    iters = np.zeros(nb, dtype=int)
    active = np.ones(nb, dtype=bool)
    converged = np.zeros(nb, dtype=bool)
    norm = np.full(nb, np.inf)

    def mismatch(vv, ss):
        s = vv * np.conj(vv @ y.T)
        d = s - ss
        return np.concatenate([d.real[:, pvpq], d.imag[:, pq]], axis=1)

    for it in range(max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        va = v[idx]
        f = mismatch(va, sbus[idx])
        finite = np.all(np.isfinite(f), axis=1)
        nrm = np.where(finite, np.abs(f).max(axis=1, initial=0.0), np.inf)
        norm[idx] = nrm
        done = nrm < tol
        converged[idx[done]] = True
        active[idx[done]] = False
        active[idx[~finite]] = False
        if it == max_iter:
            break
        keep = ~done & finite
        idx, va, f = idx[keep], va[keep], f[keep]
        if idx.size == 0:
            break
        ibus = va @ y.T
        vm = np.abs(va)
        vnorm = va / vm
        # dS/dVm and dS/dVa, batched
        diag_v = va[:, :, None] * np.eye(len(y))[None]
        ds_dvm = diag_v @ np.conj(y[None] * vnorm[:, None, :]) + np.eye(len(y))[None] * (np.conj(ibus) * vnorm)[:, :, None]
        ds_dva = 1j * diag_v @ np.conj(np.eye(len(y))[None] * ibus[:, :, None] - y[None] * va[:, None, :])
        j11 = ds_dva.real[:, pvpq][:, :, pvpq]
        j12 = ds_dvm.real[:, pvpq][:, :, pq]
        j21 = ds_dva.imag[:, pq][:, :, pvpq]
        j22 = ds_dvm.imag[:, pq][:, :, pq]
        jac = np.concatenate([np.concatenate([j11, j12], axis=2),
                              np.concatenate([j21, j22], axis=2)], axis=1)
        try:
            dx = np.linalg.solve(jac, -f[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            dx = np.full_like(f, np.nan)
            for k in range(len(idx)):
                try:
                    dx[k] = np.linalg.solve(jac[k], -f[k])
                except np.linalg.LinAlgError:
                    if nb == 1:
                        raise PowerFlowError("singular Jacobian") from None
        ang = np.angle(va)
        vm = vm.copy()
        ang[:, pvpq] += dx[:, :npvpq]
        vm[:, pq] += dx[:, npvpq:npvpq + npq]
        v[idx] = vm * np.exp(1j * ang)
        iters[idx] += 1
    return v, converged, iters, norm


def _solution(net: Network, y: AdmittanceMatrix, v: np.ndarray, converged: bool,
              iterations: int, norm: float) -> PfSolution:
    s = v * np.conj(y.complex @ v)
    pd, qd = net.demand_pu()
    slack = net.slack
    q_gen = np.array([(s.imag[g.bus - 1] + qd[g.bus - 1]) * net.s_base for g in net.generators])
    return PfSolution(
        v_mag=np.abs(v),
        delta=np.rad2deg(np.angle(v)),
        p_inj=s.real.copy(),
        q_inj=s.imag.copy(),
        p_slack=float((s.real[slack] + pd[slack]) * net.s_base),
        q_gen=q_gen,
        converged=bool(converged),
        iterations=int(iterations),
        mismatch=float(norm),
    )


def initial_voltage(net: Network) -> np.ndarray:
    v = np.ones(net.n, dtype=complex)
    for k, bus in enumerate(net.buses):
        if bus.v_spec is not None:
            v[k] = bus.v_spec
        if bus.delta_spec is not None:
            v[k] *= np.exp(1j * np.deg2rad(bus.delta_spec))
    return v


def nr_power_flow(net: Network, tol: float = 1e-8, max_iter: int = 20,
                  v0: VoltageState | None = None) -> PfSolution:
    """Solve the power flow with polar Newton-Raphson.

    PV buses hold ``v_spec`` with unlimited reactive output; generator
    reactive limits are only checked by the OPF routines.

    Raises:
        PowerFlowError: if the Jacobian is singular.
    """
    y = build_admittance(net)
    ref, pv, pq = _bus_sets(net)
    v = initial_voltage(net)
    if v0 is not None:
        # warm start: guess angles everywhere, guess magnitudes on PQ buses only
        guess = v0.complex
        mag = np.abs(v)
        mag[pq] = np.abs(guess[pq])
        v_new = mag * np.exp(1j * np.angle(guess))
        v_new[ref] = v[ref]
        v = v_new
    sbus = scheduled_injections(net)
    vv, conv, iters, norm = _nr_batch(y.complex, v[None], sbus, pv, pq, tol, max_iter)
    if not np.all(np.isfinite(vv)):
        raise PowerFlowError("Newton-Raphson diverged to non-finite voltages")
    sol = _solution(net, y, vv[0], conv[0], iters[0], norm[0])
    if not sol.converged:
        log.warning("NR did not converge in %d iterations (mismatch %.3e)", max_iter, norm[0])
    return sol


def power_flow_batch(net: Network, dispatch: np.ndarray, tol: float = 1e-8, max_iter: int = 20,
                     chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Solve NR for many dispatches (MW, shape ``(B, n_gen)``).

    Returns complex voltages ``(B, N)`` and a converged mask.
    """
    y = build_admittance(net).complex
    _, pv, pq = _bus_sets(net)
    dispatch = np.atleast_2d(dispatch)
    v_all = np.empty((dispatch.shape[0], net.n), dtype=complex)
    ok = np.zeros(dispatch.shape[0], dtype=bool)
    v_init = initial_voltage(net)
    for start in range(0, dispatch.shape[0], chunk):
        part = dispatch[start:start + chunk]
        sbus = scheduled_injections(net, part)
        v0 = np.broadcast_to(v_init, (len(part), net.n))
        v, conv, _, _ = _nr_batch(y, v0, sbus, pv, pq, tol, max_iter)
        v_all[start:start + len(part)] = v
        ok[start:start + len(part)] = conv
    return v_all, ok


def total_losses(net: Network, sol: PfSolution) -> float:
    """Active losses from series branch currents, sum of I^2 R (per-unit)."""
    v = sol.voltage.complex
    loss = 0.0
    for ln in net.lines:
        i = (v[ln.from_bus - 1] - v[ln.to_bus - 1]) / complex(ln.r, ln.x)
        loss += abs(i) ** 2 * ln.r
    return loss


# --------------------------------------------------------------------------
# OPF feasibility and the brute-force oracle


def check_limits(net: Network, sol: PfSolution, dispatch: np.ndarray, tol: float = FEAS_TOL) -> list[str]:
    """Names of violated operating limits (empty when the point is feasible)."""
    bad = []
    for k, g in enumerate(net.generators):
        p = dispatch[k]
        if p > g.p_max + tol or p < g.p_min - tol:
            bad.append(f"P_G bus {g.bus} = {p:.4f} MW outside [{g.p_min}, {g.p_max}]")
        q = sol.q_gen[k]
        if q > g.q_max + tol or q < g.q_min - tol:
            bad.append(f"Q_G bus {g.bus} = {q:.4f} MVAR outside [{g.q_min}, {g.q_max}]")
    for k, bus in enumerate(net.buses):
        if not bus.v_min - tol <= sol.v_mag[k] <= bus.v_max + tol:
            bad.append(f"V bus {bus.index} = {sol.v_mag[k]:.6f} outside [{bus.v_min}, {bus.v_max}]")
        if not bus.delta_min - tol <= sol.delta[k] <= bus.delta_max + tol:
            bad.append(f"delta bus {bus.index} = {sol.delta[k]:.4f} outside [{bus.delta_min}, {bus.delta_max}]")
    return bad


def dispatch_grid(net: Network, step: float) -> tuple[list[int], list[np.ndarray]]:
    """Generator positions that are enumerated and their candidate outputs (MW)."""
    slack_bus = net.buses[net.slack].index
    free, grids = [], []
    for k, g in enumerate(net.generators):
        if g.bus == slack_bus or g.is_fixed:
            continue
        free.append(k)
        grids.append(np.arange(g.p_min, g.p_max + 1e-9, step))
    return free, grids


def brute_force_opf(net: Network, step: float = 1.0, tol: float = 1e-8) -> OpfSolution:
    """Enumerate non-slack dispatch on a grid and keep the cheapest feasible point.

    Must-run units sit at their fixed output and the slack covers the
    balance.  Equal costs go to the lexicographically smallest dispatch.

    Raises:
        InfeasibleError: when no candidate satisfies every limit.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    free, grids = dispatch_grid(net, step)
    if len(free) > 3:
        raise ValueError(f"{len(free)} free dispatch variables; the oracle handles at most 3")
    base = np.array([g.p_min if g.is_fixed else (g.p_g_spec or 0.0) for g in net.generators])
    combos = np.array(list(itertools.product(*grids))) if grids else np.zeros((1, 0))
    dispatch = np.tile(base, (len(combos), 1))
    if free:
        dispatch[:, free] = combos
    slack_pos = next(k for k, g in enumerate(net.generators) if g.bus == net.buses[net.slack].index)

    volts, ok = power_flow_batch(net, dispatch, tol=tol)
    y = build_admittance(net).complex
    s = volts * np.conj(volts @ y.T)
    pd, qd = net.demand_pu()
    gen_bus = np.array([g.bus - 1 for g in net.generators])
    p_gen = (s.real[:, gen_bus] + pd[gen_bus]) * net.s_base
    q_gen = (s.imag[:, gen_bus] + qd[gen_bus]) * net.s_base
    dispatch[:, slack_pos] = p_gen[:, slack_pos]

    vm = np.abs(volts)
    ang = np.rad2deg(np.angle(volts))
    lo = lambda attr: np.array([getattr(b, attr) for b in net.buses])
    pmin = np.array([g.p_min for g in net.generators])
    pmax = np.array([g.p_max for g in net.generators])
    qmin = np.array([g.q_min for g in net.generators])
    qmax = np.array([g.q_max for g in net.generators])
    feas = ok.copy()
    feas &= np.all((dispatch >= pmin - FEAS_TOL) & (dispatch <= pmax + FEAS_TOL), axis=1)
    feas &= np.all((q_gen >= qmin - FEAS_TOL) & (q_gen <= qmax + FEAS_TOL), axis=1)
    feas &= np.all((vm >= lo("v_min") - FEAS_TOL) & (vm <= lo("v_max") + FEAS_TOL), axis=1)
    feas &= np.all((ang >= lo("delta_min") - FEAS_TOL) & (ang <= lo("delta_max") + FEAS_TOL), axis=1)
    if not feas.any():
        raise InfeasibleError(f"no feasible dispatch among {len(dispatch)} candidates")

    cost = np.zeros(len(dispatch))
    for k, g in enumerate(net.generators):
        cost += g.cost(dispatch[:, k])
    cost = np.where(feas, cost, np.inf)
    best = int(np.argmin(cost))  # first minimum = lexicographically smallest dispatch
    sol = _solution(net, build_admittance(net), volts[best], True, 0, 0.0)
    log.info("brute-force OPF: %d candidates, %d feasible, best cost %.4f",
             len(dispatch), int(feas.sum()), cost[best])
    return OpfSolution(dispatch=dispatch[best].copy(), pf=sol, total_cost=float(cost[best]),
                       feasible=True, candidates=len(dispatch))


# --------------------------------------------------------------------------
# golden files

GOLDEN_HEADER = ["bus", "v_pu", "delta_deg", "p_mw", "q_mvar"]


def write_golden(net: Network, sol: PfSolution) -> str:
    """Serialise a PF solution as CSV with 9 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(GOLDEN_HEADER)
    for k, bus in enumerate(net.buses):
        writer.writerow([
            bus.index,
            f"{sol.v_mag[k]:.9g}",
            f"{sol.delta[k]:.9g}",
            f"{sol.p_inj[k] * net.s_base:.9g}",
            f"{sol.q_inj[k] * net.s_base:.9g}",
        ])
    return buf.getvalue()


def read_golden(text: str) -> dict[str, np.ndarray]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return {key: np.array([float(r[key]) for r in rows]) for key in GOLDEN_HEADER}
