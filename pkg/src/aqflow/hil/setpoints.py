"""Generator set points from an OPF operating point, and their inverse.

The exciter reference is ``|E_f| / K_a + |V|`` where ``E_f = V + j x_d I``
is the internal EMF behind the d-axis reactance and ``I = conj(S / V)``.
The governor reference is the droop-scaled active power ``R P / S_base``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..grid import Network
from .protocol import SetpointFrame


@dataclass(frozen=True)
class GeneratorDynamicParams:
    k_a: float = 200.0
    x_d: float = 1.0
    r_droop: float = 0.05

    def __post_init__(self):
        if not (self.k_a > 0 and self.x_d > 0 and self.r_droop > 0):
            raise ValueError("k_a, x_d and r_droop must be positive")


DEFAULT_DYN = GeneratorDynamicParams()


def conventional_generators(net: Network):
    """Dispatchable units (slack included) in ascending bus order."""
    return sorted((g for g in net.generators if not g.is_fixed), key=lambda g: g.bus)


def res_generators(net: Network):
    return sorted((g for g in net.generators if g.is_fixed), key=lambda g: g.bus)


def internal_emf(p_mw: float, q_mvar: float, v: complex, dyn: GeneratorDynamicParams,
                 s_base: float = 100.0) -> complex:
    if v == 0:
        raise ZeroDivisionError("terminal voltage is zero")
    s = complex(p_mw, q_mvar) / s_base
    current = np.conj(s / v)
    return complex(v + 1j * dyn.x_d * current)


def voltage_reference(p_mw: float, q_mvar: float, v: complex, dyn: GeneratorDynamicParams,
                      s_base: float = 100.0) -> float:
    return abs(internal_emf(p_mw, q_mvar, v, dyn, s_base)) / dyn.k_a + abs(v)


def power_reference(p_mw: float, dyn: GeneratorDynamicParams, s_base: float = 100.0) -> float:
    return dyn.r_droop * p_mw / s_base


def terminal_voltage(v_ref: float, p_mw: float, q_mvar: float, dyn: GeneratorDynamicParams,
                     s_base: float = 100.0, tol: float = 1e-15, max_iter: int = 200) -> float:
    """Terminal magnitude ``|V|`` that reproduces ``v_ref`` at the given output.

    ``|E_f|`` depends on the terminal voltage only through its magnitude,
    ``|E_f|^2 = (|V| + x_d Q/|V|)^2 + (x_d P/|V|)^2`` in per-unit, so the
    reference equation is a scalar fixed point ``|V| = v_ref - |E_f(|V|)| / K_a``.
    Its slope is of order ``1/K_a``, which makes plain iteration contract fast.
    """
    p, q = p_mw / s_base, q_mvar / s_base
    x = dyn.x_d
    v = v_ref
    for _ in range(max_iter):
        ef = np.hypot(v + x * q / v, x * p / v)
        v_next = v_ref - ef / dyn.k_a
        if not v_next > 0:
            raise ValueError(f"no positive terminal voltage for v_ref={v_ref}")
        if abs(v_next - v) <= tol * max(1.0, v):
            return float(v_next)
        v = v_next
    raise ValueError("terminal-voltage iteration did not settle")


def active_power(p_ref: float, dyn: GeneratorDynamicParams, s_base: float = 100.0) -> float:
    return p_ref * s_base / dyn.r_droop


def _dyn_for(dyn: GeneratorDynamicParams | Mapping[int, GeneratorDynamicParams] | None, bus: int):
    if dyn is None:
        return DEFAULT_DYN
    if isinstance(dyn, GeneratorDynamicParams):
        return dyn
    return dyn.get(bus, DEFAULT_DYN)


def compute_setpoints(net: Network, dispatch_mw, q_mvar, voltage, tick: int = 0,
                      dyn: GeneratorDynamicParams | Mapping[int, GeneratorDynamicParams] | None = None,
                      ) -> SetpointFrame:
    """Set points for an operating point given per generator in network order.

    ``voltage`` is the complex bus voltage vector.  RES units only receive
    their bus voltage magnitude as reference.
    """
    dispatch_mw = np.asarray(dispatch_mw, dtype=float)
    q_mvar = np.asarray(q_mvar, dtype=float)
    voltage = np.asarray(voltage, dtype=complex)
    order = {g.bus: k for k, g in enumerate(net.generators)}
    v_ref, p_ref = [], []
    for g in conventional_generators(net):
        k = order[g.bus]
        d = _dyn_for(dyn, g.bus)
        v = voltage[g.bus - 1]
        v_ref.append(voltage_reference(dispatch_mw[k], q_mvar[k], v, d, net.s_base))
        p_ref.append(power_reference(dispatch_mw[k], d, net.s_base))
    res = [float(abs(voltage[g.bus - 1])) for g in res_generators(net)]
    return SetpointFrame(tick, tuple(v_ref), tuple(p_ref), tuple(res))


def setpoints_from_trace(net: Network, trace, tick: int = 0, dyn=None) -> SetpointFrame:
    """Set points of a finished AQOPF run.

    Raises:
        ValueError: if the run did not converge.
    """
    if not trace.converged:
        raise ValueError("set points need a converged OPF result")
    return compute_setpoints(net, trace.dispatch, trace.pf.q_gen, trace.pf.voltage.complex, tick, dyn)
