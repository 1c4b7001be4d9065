"""Compiled inner loops: term evaluation, simulated annealing, enumeration.

Polynomials reach these kernels as a padded index table ``idx`` of shape
``(T, 4)`` (unused slots are -1) and a coefficient vector ``coef``.  Each
annealing chain reseeds numba's generator with its own entry of ``seeds``
before touching it, so results do not depend on how chains are scheduled.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def evaluate_terms(idx, coef, offset, states):
    """Energy of each row of ``states`` (uint8) summed term by term in order."""
    out = np.empty(states.shape[0])
    for r in range(states.shape[0]):
        acc = offset
        for t in range(idx.shape[0]):
            prod = coef[t]
            for s in range(4):
                v = idx[t, s]
                if v < 0:
                    break
                if states[r, v] == 0:
                    prod = 0.0
                    break
            acc += prod
        out[r] = acc
    return out


@njit(cache=True)
def _term_others(idx, t, v, x):
    """Product of the bits of term ``t`` other than ``v``."""
    for s in range(4):
        u = idx[t, s]
        if u < 0:
            break
        if u != v and x[u] == 0:
            return 0.0
    return 1.0


@njit(cache=True)
def _fields(idx, coef, ptr, inc, x, field):
    n = x.shape[0]
    for v in range(n):
        acc = 0.0
        for p in range(ptr[v], ptr[v + 1]):
            t = inc[p]
            acc += coef[t] * _term_others(idx, t, v, x)
        field[v] = acc


@njit(cache=True)
def _flip(idx, coef, ptr, inc, x, field, v):
    dx = 1.0 - 2.0 * x[v]
    x[v] = 1 - x[v]
    for p in range(ptr[v], ptr[v + 1]):
        t = inc[p]
        # the field of u changes only if every bit other than u and v is set
        zeros = 0
        last = -1
        for s in range(4):
            u = idx[t, s]
            if u < 0:
                break
            if u != v and x[u] == 0:
                zeros += 1
                last = u
        if zeros > 1:
            continue
        c = coef[t] * dx
        if zeros == 1:
            field[last] += c
        else:
            for s in range(4):
                u = idx[t, s]
                if u < 0:
                    break
                if u != v:
                    field[u] += c


@njit(cache=True)
def _start(x, init):
    if init.shape[0] == x.shape[0]:
        x[:] = init
    else:
        for v in range(x.shape[0]):
            x[v] = 1 if np.random.random() < 0.5 else 0


@njit(cache=True)
def anneal(idx, coef, ptr, inc, n, betas, seeds, polish_limit, init):
    """Metropolis single-flip annealing, one independent chain per readout.

    Chains start from uniformly random bits, or from ``init`` when it has
    ``n`` entries (an empty ``init`` means random).

    ``betas`` is the inverse-temperature schedule, one entry per sweep.
    After the schedule each chain is quenched with zero-temperature sweeps
    until no single flip lowers the energy (at most ``polish_limit`` sweeps).
    """
    readouts = seeds.shape[0]
    states = np.empty((readouts, n), dtype=np.uint8)
    x = np.empty(n, dtype=np.uint8)
    field = np.empty(n)
    for c in range(readouts):
        np.random.seed(seeds[c])
        _start(x, init)
        _fields(idx, coef, ptr, inc, x, field)
        for s in range(betas.shape[0]):
            beta = betas[s]
            for v in range(n):
                de = field[v] if x[v] == 0 else -field[v]
                if de <= 0.0 or np.random.random() < np.exp(-beta * de):
                    _flip(idx, coef, ptr, inc, x, field, v)
        for _ in range(polish_limit):
            changed = False
            for v in range(n):
                de = field[v] if x[v] == 0 else -field[v]
                if de < -1e-15 * (1.0 + abs(field[v])):
                    _flip(idx, coef, ptr, inc, x, field, v)
                    changed = True
            if not changed:
                break
        states[c, :] = x
    return states


@njit(cache=True)
def gray_energies(idx, coef, ptr, inc, n, offset, start, stop):
    """Energies of the Gray-code states ``g(i) = i ^ (i >> 1)`` for i in [start, stop)."""
    out = np.empty(stop - start)
    x = np.zeros(n, dtype=np.uint8)
    g = start ^ (start >> 1)
    for v in range(n):
        x[v] = (g >> v) & 1
    field = np.empty(n)
    _fields(idx, coef, ptr, inc, x, field)
    one = np.empty((1, n), dtype=np.uint8)
    one[0, :] = x
    e = evaluate_terms(idx, coef, offset, one)[0]
    out[0] = e
    for i in range(start + 1, stop):
        # bit that changes between g(i-1) and g(i) is the lowest set bit of i
        v = 0
        while ((i >> v) & 1) == 0:
            v += 1
        de = field[v] if x[v] == 0 else -field[v]
        e += de
        _flip(idx, coef, ptr, inc, x, field, v)
        out[i - start] = e
    return out


# --------------------------------------------------------------------------
# Sums of weighted squared quadratic residuals


@njit(cache=True)
def _residuals(const, terms, tcoef, x, r):
    r[:] = const
    for t in range(terms.shape[0]):
        i = terms[t, 1]
        j = terms[t, 2]
        if x[i] != 0 and (j < 0 or x[j] != 0):
            r[terms[t, 0]] += tcoef[t]


@njit(cache=True)
def _sos_delta(v, x, r, weight, vptr, slot_k, slot_b, slot_ptr, pair_u, pair_c, dr):
    """Energy change of flipping ``v``; per-slot residual changes land in ``dr``."""
    dx = 1.0 - 2.0 * x[v]
    de = 0.0
    for s in range(vptr[v], vptr[v + 1]):
        acc = slot_b[s]
        for p in range(slot_ptr[s], slot_ptr[s + 1]):
            if x[pair_u[p]] != 0:
                acc += pair_c[p]
        d = dx * acc
        dr[s - vptr[v]] = d
        k = slot_k[s]
        de += weight[k] * d * (2.0 * r[k] + d)
    return de


@njit(cache=True)
def _sos_apply(v, x, r, vptr, slot_k, dr):
    x[v] = 1 - x[v]
    for s in range(vptr[v], vptr[v + 1]):
        r[slot_k[s]] += dr[s - vptr[v]]


@njit(cache=True)
def anneal_sos(const, weight, terms, tcoef, vptr, slot_k, slot_b, slot_ptr, pair_u, pair_c,
               n, betas, seeds, polish_limit, init):
    """Same chain semantics as :func:`anneal` for ``sum_k w_k r_k(x)^2``."""
    readouts = seeds.shape[0]
    states = np.empty((readouts, n), dtype=np.uint8)
    x = np.empty(n, dtype=np.uint8)
    r = np.empty(const.shape[0])
    width = 1
    for v in range(n):
        width = max(width, vptr[v + 1] - vptr[v])
    dr = np.empty(width)
    for c in range(readouts):
        np.random.seed(seeds[c])
        _start(x, init)
        _residuals(const, terms, tcoef, x, r)
        for s in range(betas.shape[0]):
            beta = betas[s]
            for v in range(n):
                de = _sos_delta(v, x, r, weight, vptr, slot_k, slot_b, slot_ptr, pair_u, pair_c, dr)
                if de <= 0.0 or np.random.random() < np.exp(-beta * de):
                    _sos_apply(v, x, r, vptr, slot_k, dr)
        for _ in range(polish_limit):
            changed = False
            for v in range(n):
                de = _sos_delta(v, x, r, weight, vptr, slot_k, slot_b, slot_ptr, pair_u, pair_c, dr)
                if de < -1e-15:
                    _sos_apply(v, x, r, vptr, slot_k, dr)
                    changed = True
            if not changed:
                break
        states[c, :] = x
    return states
