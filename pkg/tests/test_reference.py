import time

import numpy as np
import pytest

from aqflow.cases import get_case
from aqflow.grid import parse_case
from aqflow.reference import (
    InfeasibleError, brute_force_opf, check_limits, dispatch_grid, evaluate_cost, nr_power_flow,
    read_golden, total_losses, write_golden,
)

from conftest import two_bus_document


def test_no_load_two_bus():
    net = parse_case(two_bus_document(p_load=0.0, q_load=0.0))
    sol = nr_power_flow(net)
    assert sol.converged
    assert sol.v_mag[1] == pytest.approx(1.0, abs=1e-12)
    assert sol.delta[1] == pytest.approx(0.0, abs=1e-10)


def test_two_bus_analytic(toy2):
    """Receiving-end voltage from the closed-form two-bus solution."""
    sol = nr_power_flow(toy2, tol=1e-12)
    v = sol.voltage.complex
    s_load = complex(0.5, 0.2)
    i = np.conj(s_load / v[1])
    assert v[0] - v[1] == pytest.approx(i * complex(0.02, 0.1), abs=1e-10)


def test_case9_nr(net9):
    t = time.perf_counter()
    sol = nr_power_flow(net9)
    assert time.perf_counter() - t < 1.0
    assert sol.converged and sol.iterations <= 6
    gen = sol.p_slack + 163 + 85
    loss = total_losses(net9, sol) * 100
    assert gen - 315 == pytest.approx(loss, abs=1e-4)
    assert loss > 0
    assert 10 <= sol.p_slack <= 250
    assert sol.v_mag[0] == 1.0 and sol.delta[0] == 0.0


def test_golden_round_trip(net9):
    sol = nr_power_flow(net9)
    back = read_golden(write_golden(net9, sol))
    assert np.allclose(back["v_pu"], sol.v_mag, rtol=1e-8)
    assert list(back["bus"]) == list(range(1, 10))


@pytest.mark.parametrize("p,expected", [(163.0, 3053.965)])
def test_cost_example(p, expected):
    net = get_case("case9")
    assert net.generator_at(2).cost(p) == pytest.approx(expected, abs=1e-9)


def test_cost_constant_terms(net9, net13):
    assert evaluate_cost([0, 0, 0], [g.cost for g in net9.generators]) == 150 + 600 + 335
    assert evaluate_cost([0] * 5, [g.cost for g in net13.generators]) == 150 + 600 + 335 + 8 + 10
    assert net13.generator_at(11).cost(19.8) == pytest.approx(14.13602, abs=1e-12)


def test_cost_length_mismatch(net9):
    with pytest.raises(ValueError):
        evaluate_cost([1.0], [g.cost for g in net9.generators])


def test_brute_force_dominates_fixed_dispatch(net9):
    sol = brute_force_opf(net9, step=5.0)
    base = nr_power_flow(net9)
    fixed = evaluate_cost([base.p_slack, 163, 85], [g.cost for g in net9.generators])
    assert sol.feasible and sol.total_cost <= fixed
    assert check_limits(net9, sol.pf, sol.dispatch) == []


def test_brute_force_res_grid(net13):
    free, grids = dispatch_grid(net13, 2.0)
    assert [net13.generators[k].bus for k in free] == [2, 3]
    sol = brute_force_opf(net13, step=10.0)
    assert sol.dispatch[3] == 19.8 and sol.dispatch[4] == 19.8


def test_brute_force_single_candidate():
    doc = two_bus_document()
    doc["generators"][0].update(p_min=0.0, p_max=200.0)
    net = parse_case(doc)
    sol = brute_force_opf(net)
    assert sol.candidates == 1


def test_brute_force_infeasible():
    doc = two_bus_document(p_load=150.0)
    doc["generators"][0]["p_max"] = 100.0
    with pytest.raises(InfeasibleError):
        brute_force_opf(parse_case(doc))
