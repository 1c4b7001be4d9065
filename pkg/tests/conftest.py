import copy

import pytest

from aqflow.cases import case9, case9_res
from aqflow.grid import parse_case

_BAND = {"v_min": 0.9, "v_max": 1.1, "delta_min": -60.0, "delta_max": 60.0}


def two_bus_document(p_load=50.0, q_load=20.0, r=0.02, x=0.1, b=0.0):
    return {
        "name": "toy2",
        "s_base_mva": 100.0,
        "v_base_kv": 100.0,
        "buses": [
            {"index": 1, "kind": "Slack", "v_spec": 1.0, "delta_spec": 0.0, **_BAND},
            {"index": 2, "kind": "PQ", **_BAND},
        ],
        "lines": [{"from": 1, "to": 2, "r": r, "x": x, "b": b}],
        "generators": [{"bus": 1, "p_min": 0.0, "p_max": 200.0, "q_min": -100.0, "q_max": 100.0,
                        "cost": [10.0, 2.0, 0.01]}],
        "loads": [{"bus": 2, "p_mw": p_load, "q_mvar": q_load}],
    }


@pytest.fixture
def toy2():
    return parse_case(copy.deepcopy(two_bus_document()))


@pytest.fixture(scope="session")
def net9():
    return case9()


@pytest.fixture(scope="session")
def net13():
    return case9_res()


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
