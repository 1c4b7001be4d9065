"""Built-in test systems: the IEEE 9-bus network and its RES-augmented 13-bus variant.

Base values are 345 kV / 100 MVA.  Generator rows 4-5 model the solar and
wind farms behind their step-up transformers and RL branches; they are
must-run units (``p_min == p_max``).  Bus voltage and angle limits are not
part of the published tables, so the usual 0.9-1.1 p.u. band and a +/-60
degree angle band are used.
"""

from __future__ import annotations

import copy
import json

from .grid import Network, parse_case

_V_BAND = {"v_min": 0.9, "v_max": 1.1, "delta_min": -60.0, "delta_max": 60.0}

_LINES_9 = [
    (1, 4, 0.0, 0.0576, 0.0),
    (4, 5, 0.017, 0.092, 0.158),
    (5, 6, 0.039, 0.17, 0.358),
    (3, 6, 0.0, 0.0586, 0.0),
    (6, 7, 0.0119, 0.1008, 0.209),
    (7, 8, 0.0085, 0.072, 0.149),
    (8, 2, 0.0, 0.0625, 0.0),
    (8, 9, 0.032, 0.161, 0.306),
    (9, 4, 0.01, 0.085, 0.176),
]
_LINES_RES = [
    (7, 10, 0.2379, 1.6189, 0.0),
    (10, 11, 0.01, 1.0, 0.0),
    (7, 12, 0.2583, 1.6552, 0.0),
    (12, 13, 0.01, 1.0, 0.0),
]

# bus, P (MW, None for slack), V, p_max, p_min, q_max, q_min, cost
_GENS_9 = [
    (1, None, 1.0, 250.0, 10.0, 300.0, -300.0, [150.0, 5.0, 0.11]),
    (2, 163.0, 1.0, 300.0, 10.0, 300.0, -300.0, [600.0, 1.2, 0.085]),
    (3, 85.0, 1.0, 270.0, 10.0, 300.0, -300.0, [335.0, 1.0, 0.1225]),
]
_GENS_RES = [
    (11, 19.8, 1.0, 19.8, 19.8, 20.0, -20.0, [8.0, 0.3, 0.0005]),
    (13, 19.8, 1.0, 19.8, 19.8, 20.0, -20.0, [10.0, 0.5, 0.001]),
]

_LOADS = [(5, 90.0, 30.0), (7, 100.0, 35.0), (9, 125.0, 50.0)]


def _document(name: str, n: int, gens, lines) -> dict:
    gen_v = {bus: v for bus, _, v, *_ in gens}
    buses = []
    for k in range(1, n + 1):
        entry = {"index": k}
        if k == 1:
            entry.update(kind="Slack", v_spec=gen_v[k], delta_spec=0.0)
        elif k in gen_v:
            entry.update(kind="PV", v_spec=gen_v[k])
        else:
            entry["kind"] = "PQ"
        entry.update(_V_BAND)
        buses.append(entry)
    generators = []
    for bus, p, _, p_max, p_min, q_max, q_min, cost in gens:
        entry = {"bus": bus}
        if p is not None:
            entry["p_mw"] = p
        entry.update(p_min=p_min, p_max=p_max, q_min=q_min, q_max=q_max, cost=list(cost))
        generators.append(entry)
    return {
        "name": name,
        "s_base_mva": 100.0,
        "v_base_kv": 345.0,
        "buses": buses,
        "lines": [{"from": f, "to": t, "r": r, "x": x, "b": b} for f, t, r, x, b in lines],
        "generators": generators,
        "loads": [{"bus": bus, "p_mw": p, "q_mvar": q} for bus, p, q in _LOADS],
    }


CASES = {
    "case9": _document("case9", 9, _GENS_9, _LINES_9),
    "case9_res": _document("case9_res", 13, _GENS_9 + _GENS_RES, _LINES_9 + _LINES_RES),
}


def case_document(name: str) -> str:
    """JSON text of a built-in case, in the case-file schema."""
    try:
        return json.dumps(CASES[name], indent=2)
    except KeyError:
        raise KeyError(f"unknown case {name!r}; available: {sorted(CASES)}") from None


def case9() -> Network:
    return parse_case(copy.deepcopy(CASES["case9"]))


def case9_res() -> Network:
    return parse_case(copy.deepcopy(CASES["case9_res"]))


def get_case(name: str) -> Network:
    if name not in CASES:
        raise KeyError(f"unknown case {name!r}; available: {sorted(CASES)}")
    return parse_case(copy.deepcopy(CASES[name]))
