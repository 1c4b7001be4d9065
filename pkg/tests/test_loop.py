import itertools

import numpy as np
import pytest

from aqflow.annealing import AnnealParams
from aqflow.grid import build_admittance, parse_case
from aqflow.hamiltonian import Mode
from aqflow.loop import LoopConfig, StepPolicy, compare, flat_start, mismatch_objective, run_aqopf, run_aqpf
from aqflow.reference import nr_power_flow

from conftest import two_bus_document


def scalar_loop(doc, eps, d_mu, d_om, it_max, window=5, min_improvement=0.01):
    """Two-bus power flow stepped by hand with complex arithmetic and a 3x3 move search."""
    ln = doc["lines"][0]
    y = 1 / complex(ln["r"], ln["x"])
    y22, y21 = y + 0.5j * ln["b"], -y
    s_load = complex(doc["loads"][0]["p_mw"], doc["loads"][0]["q_mvar"]) / 100.0
    v1 = 1.0

    def h_of(v2):
        s = v2 * np.conj(y21 * v1 + y22 * v2)
        return (s.real + s_load.real) ** 2 + (s.imag + s_load.imag) ** 2

    v, h = 1.0 + 0j, h_of(1.0 + 0j)
    hist, last = [], 0
    out = []
    while h > eps and len(out) < it_max:
        moves = [v + a * d_mu + 1j * b * d_om for a, b in itertools.product((-1, 0, 1), repeat=2)]
        cand = min(moves, key=h_of)
        if h_of(cand) <= h:
            v, h = cand, h_of(cand)
        out.append(h)
        hist.append(h)
        it = len(hist)
        if it - last >= window and it > window and h > (1 - min_improvement) * hist[it - 1 - window]:
            d_mu, d_om, last = max(1e-5, d_mu / 2), max(1e-6, d_om / 2), it
    return v, out


def test_two_bus_matches_hand_loop():
    doc = two_bus_document()
    net = parse_case(doc)
    cfg = LoopConfig(backend="exhaustive", epsilon=1e-8, delta_mu=1e-2, delta_omega=1e-2)
    trace = run_aqpf(net, cfg)
    v, hs = scalar_loop(doc, 1e-8, 1e-2, 1e-2, cfg.it_max)
    assert trace.converged
    assert [r.h_obj for r in trace.records] == pytest.approx(hs, rel=1e-9, abs=1e-15)
    assert complex(trace.final_state.mu[1], trace.final_state.omega[1]) == pytest.approx(v, abs=1e-12)
    dev = compare(trace, nr_power_flow(net))
    assert dev.mean_v < 1e-4 and dev.mean_p < 0.05


def test_nr_start_needs_no_iterations(net9):
    ref = nr_power_flow(net9)
    trace = run_aqpf(net9, LoopConfig(), v0=ref.voltage)
    assert trace.iterations == 0 and trace.converged


def test_guard_never_raises_mismatch(net9):
    cfg = LoopConfig(it_max=15, anneal=AnnealParams(readouts=20, sweeps_per_readout=2))
    trace = run_aqpf(net9, cfg)
    h0 = mismatch_objective(net9, build_admittance(net9), flat_start(net9), hold_weight=100.0)
    hs = [h0] + [r.h_obj for r in trace.records]
    assert all(b <= a for a, b in zip(hs, hs[1:]))
    assert all(r.delta_mu <= cfg.delta_mu for r in trace.records)


def test_step_policy_halves_on_stall():
    net = parse_case(two_bus_document())
    cfg = LoopConfig(backend="exhaustive", epsilon=1e-12, it_max=40,
                     step=StepPolicy(window=3, min_improvement=0.5))
    trace = run_aqpf(net, cfg)
    steps = [r.delta_mu for r in trace.records]
    assert steps[0] == 1e-2 and min(steps) < 1e-2
    assert all(b <= a for a, b in zip(steps, steps[1:]))


def test_it_max_stops_unconverged(net9):
    cfg = LoopConfig(it_max=2, epsilon=1e-12, anneal=AnnealParams(readouts=10, sweeps_per_readout=1))
    trace = run_aqpf(net9, cfg)
    assert not trace.converged and trace.iterations == 2


def test_aqopf_two_bus_exhaustive():
    """A single slack unit: the OPF reduces to a power flow plus limit checks."""
    net = parse_case(two_bus_document())
    cfg = LoopConfig(mode=Mode.AQOPF, backend="exhaustive", epsilon=1e-6, delta_mu=1e-2, delta_omega=1e-2)
    trace = run_aqopf(net, cfg)
    assert trace.converged and trace.feasible
    ref = nr_power_flow(net)
    assert trace.dispatch[0] == pytest.approx(ref.p_slack, abs=0.5)


def test_csv_outputs(net9):
    trace = run_aqpf(net9, LoopConfig(), v0=nr_power_flow(net9).voltage)
    assert trace.trace_csv().splitlines()[0] == "iteration,h_obj,delta_mu,delta_omega"
    rows = trace.dispatch_csv(net9).splitlines()
    assert rows[0] == "bus,p_mw,q_mvar,cost" and len(rows) == 4
    assert compare(trace, nr_power_flow(net9)).mean_v < 1e-12
