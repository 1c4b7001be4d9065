"""Hamiltonians kept as weighted sums of squared quadratic residuals.

Every part of the power-flow Hamiltonians has the form ``sum_k w_k r_k(x)^2``
with each ``r_k`` of degree at most two.  Keeping the residuals lets an
annealer compute the energy change of a bit flip from the few residuals
the bit touches instead of from hundreds of expanded quartic terms.  The
expanded polynomial stays the reference for every reported energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .polynomial import BinaryPolynomial
from .variables import Registry


@dataclass
class SquaredSum:
    registry: Registry
    residuals: list[tuple[float, BinaryPolynomial]] = field(default_factory=list)

    def add(self, weight: float, residual: BinaryPolynomial) -> None:
        if weight < 0:
            raise ValueError("residual weights must be nonnegative")
        if residual.degree > 2:
            raise ValueError("residuals must have degree at most 2")
        if weight:
            self.residuals.append((float(weight), residual))

    def extend(self, other: "SquaredSum") -> None:
        self.residuals.extend(other.residuals)

    def expand(self) -> BinaryPolynomial:
        total = BinaryPolynomial(self.registry)
        for w, r in self.residuals:
            total = total + r.square() * w
        return total.pruned()

    def evaluate(self, bits) -> np.ndarray | float:
        x = np.asarray(bits)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        out = np.zeros(x.shape[0])
        for w, r in self.residuals:
            out += w * np.asarray(r.with_registry(self.registry).evaluate(x)) ** 2
        return float(out[0]) if single else out

    @cached_property
    def tables(self):
        """Flat arrays for the flip kernel.

        ``const[k]``/``weight[k]`` per residual; ``terms`` rows ``(k, i, j)``
        with ``j = -1`` for linear terms and ``tcoef`` their coefficients;
        per variable ``v`` the slots ``vptr[v]:vptr[v+1]`` list each residual
        touching ``v`` (``slot_k``) with the linear coefficient ``slot_b`` and
        pair partners ``pair_u[slot_ptr[s]:slot_ptr[s+1]]`` weighted by ``pair_c``.
        """
        n = len(self.registry)
        nres = len(self.residuals)
        const = np.zeros(nres)
        weight = np.zeros(nres)
        terms, tcoef = [], []
        touch: list[dict[int, list]] = [dict() for _ in range(n)]
        for k, (w, r) in enumerate(self.residuals):
            weight[k] = w
            for idx, c in r.items():
                if not c:
                    continue
                if len(idx) == 0:
                    const[k] += c
                elif len(idx) == 1:
                    terms.append((k, idx[0], -1))
                    tcoef.append(c)
                    touch[idx[0]].setdefault(k, [0.0, []])[0] += c
                else:
                    i, j = idx
                    terms.append((k, i, j))
                    tcoef.append(c)
                    touch[i].setdefault(k, [0.0, []])[1].append((j, c))
                    touch[j].setdefault(k, [0.0, []])[1].append((i, c))
        vptr = np.zeros(n + 1, dtype=np.int64)
        slot_k, slot_b, slot_ptr, pair_u, pair_c = [], [], [0], [], []
        for v in range(n):
            for k in sorted(touch[v]):
                b, pairs = touch[v][k]
                slot_k.append(k)
                slot_b.append(b)
                for u, c in pairs:
                    pair_u.append(u)
                    pair_c.append(c)
                slot_ptr.append(len(pair_u))
            vptr[v + 1] = len(slot_k)
        return (
            const, weight,
            np.array(terms, dtype=np.int64).reshape(-1, 3), np.array(tcoef, dtype=float),
            vptr, np.array(slot_k, dtype=np.int64), np.array(slot_b, dtype=float),
            np.array(slot_ptr, dtype=np.int64), np.array(pair_u, dtype=np.int64), np.array(pair_c, dtype=float),
        )
