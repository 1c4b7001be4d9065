"""Multilinear polynomials over binary variables.

A term is keyed by the bitmask of its variables, so multiplying two terms is
a bitwise OR and the idempotence rule ``x*x = x`` holds by construction.
"""

from __future__ import annotations

from functools import cached_property
from typing import Iterator, Mapping

import numpy as np

from .. import _kernels
from .variables import Registry

MAX_DEGREE = 4


def _bits(mask: int) -> tuple[int, ...]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return tuple(out)


class BinaryPolynomial:
    """Real multilinear polynomial with terms of any degree.

    Instances are treated as immutable; arithmetic returns new objects.  Two
    polynomials can only be combined when they share one :class:`Registry`.
    """

    def __init__(self, registry: Registry, terms: Mapping[int, float] | None = None):
        self.registry = registry
        self._terms: dict[int, float] = dict(terms) if terms else {}

    # -- construction -------------------------------------------------------

    @classmethod
    def constant(cls, registry: Registry, value: float) -> "BinaryPolynomial":
        return cls(registry, {0: float(value)} if value else None)

    @classmethod
    def variable(cls, registry: Registry, index: int, coef: float = 1.0) -> "BinaryPolynomial":
        return cls(registry, {1 << index: float(coef)} if coef else None)

    @classmethod
    def from_terms(cls, registry: Registry, terms: Mapping[tuple[int, ...], float]) -> "BinaryPolynomial":
        """Build from ``{(i, j, ...): coef}``; repeated indices collapse."""
        out: dict[int, float] = {}
        for key, c in terms.items():
            mask = 0
            for i in key:
                if not 0 <= i < len(registry):
                    raise IndexError(f"variable index {i} outside registry of {len(registry)}")
                mask |= 1 << i
            out[mask] = out.get(mask, 0.0) + float(c)
        return cls(registry, out)

    @classmethod
    def linear(cls, registry: Registry, const: float, coefs: Mapping[int, float]) -> "BinaryPolynomial":
        terms = {1 << i: float(c) for i, c in coefs.items() if c}
        if const:
            terms[0] = float(const)
        return cls(registry, terms)

    # -- inspection ---------------------------------------------------------

    @property
    def num_vars(self) -> int:
        return len(self.registry)

    @property
    def offset(self) -> float:
        return self._terms.get(0, 0.0)

    @property
    def degree(self) -> int:
        return max((m.bit_count() for m, c in self._terms.items() if c), default=0)

    def __len__(self) -> int:
        return len(self._terms)

    def items(self) -> Iterator[tuple[tuple[int, ...], float]]:
        """Yield ``(sorted variable indices, coefficient)`` pairs."""
        for mask, c in self._terms.items():
            yield _bits(mask), c

    @property
    def terms(self) -> dict[tuple[int, ...], float]:
        return dict(self.items())

    def coefficient(self, *indices: int) -> float:
        mask = 0
        for i in indices:
            mask |= 1 << i
        return self._terms.get(mask, 0.0)

    def support(self) -> set[int]:
        mask = 0
        for m in self._terms:
            mask |= m
        return set(_bits(mask))

    def max_abs_coefficient(self, min_degree: int = 1) -> float:
        return max((abs(c) for m, c in self._terms.items() if m.bit_count() >= min_degree), default=0.0)

    def bounds(self, exact_limit: int = 16) -> tuple[float, float]:
        """Lower and upper bound of the polynomial over all bitstrings.

        Exact (by enumeration) when at most ``exact_limit`` variables occur,
        otherwise the interval-arithmetic bound from the coefficient signs.
        """
        support = sorted(self.support())
        if len(support) <= exact_limit:
            sub = np.zeros((1 << len(support), self.num_vars), dtype=np.uint8)
            codes = np.arange(1 << len(support))
            for k, v in enumerate(support):
                sub[:, v] = (codes >> k) & 1
            vals = self.evaluate(sub)
            return float(vals.min()), float(vals.max())
        lo = hi = self.offset
        for m, c in self._terms.items():
            if m:
                lo += min(0.0, c)
                hi += max(0.0, c)
        return lo, hi

    # -- arithmetic ---------------------------------------------------------

    def _check(self, other: "BinaryPolynomial") -> None:
        if other.registry is not self.registry and other.registry != self.registry:
            raise ValueError("polynomials belong to different registries")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = BinaryPolynomial.constant(self.registry, other)
        self._check(other)
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return BinaryPolynomial(self.registry, out)

    __radd__ = __add__

    def __neg__(self):
        return BinaryPolynomial(self.registry, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            if other == 0:
                return BinaryPolynomial(self.registry)
            return BinaryPolynomial(self.registry, {m: c * other for m, c in self._terms.items()})
        self._check(other)
        out: dict[int, float] = {}
        get = out.get
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = m1 | m2
                out[m] = get(m, 0.0) + c1 * c2
        return BinaryPolynomial(self.registry, out)

    __rmul__ = __mul__

    def square(self) -> "BinaryPolynomial":
        """``self * self`` exploiting symmetry of the cross terms."""
        items = list(self._terms.items())
        out: dict[int, float] = {}
        get = out.get
        for a, (m1, c1) in enumerate(items):
            out[m1] = get(m1, 0.0) + c1 * c1
            twice = 2.0 * c1
            for m2, c2 in items[a + 1:]:
                m = m1 | m2
                out[m] = get(m, 0.0) + twice * c2
        return BinaryPolynomial(self.registry, out)

    def pruned(self, tol: float = 0.0) -> "BinaryPolynomial":
        return BinaryPolynomial(self.registry, {m: c for m, c in self._terms.items() if abs(c) > tol})

    def with_registry(self, registry: Registry) -> "BinaryPolynomial":
        """Rebind to a registry that extends the current one."""
        if len(registry) < len(self.registry) or any(
                registry[i] != self.registry[i] for i in range(len(self.registry))):
            raise ValueError("target registry does not extend the polynomial's registry")
        return BinaryPolynomial(registry, self._terms)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryPolynomial):
            return NotImplemented
        a = {m: c for m, c in self._terms.items() if c}
        b = {m: c for m, c in other._terms.items() if c}
        return a == b and self.registry == other.registry

    def allclose(self, other: "BinaryPolynomial", rtol: float = 1e-9, atol: float = 1e-12) -> bool:
        keys = set(self._terms) | set(other._terms)
        return all(np.isclose(self._terms.get(k, 0.0), other._terms.get(k, 0.0), rtol=rtol, atol=atol)
                   for k in keys)

    def __repr__(self) -> str:
        return f"BinaryPolynomial({len(self._terms)} terms, degree {self.degree}, {self.num_vars} vars)"

    # -- evaluation ---------------------------------------------------------

    @cached_property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, float]:
        """Padded index table, coefficient vector and constant, for kernels."""
        items = [(b, c) for b, c in self.items() if b and c]
        width = max((len(b) for b, _ in items), default=1)
        if width > MAX_DEGREE:
            raise ValueError(f"degree {width} exceeds the kernel limit of {MAX_DEGREE}")
        idx = np.full((len(items), MAX_DEGREE), -1, dtype=np.int64)
        coef = np.empty(len(items))
        for t, (b, c) in enumerate(items):
            idx[t, :len(b)] = b
            coef[t] = c
        return idx, coef, self.offset

    def incidence(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR list of the terms each variable appears in."""
        idx, _, _ = self.arrays
        n = self.num_vars
        flat = idx.ravel()
        term_of = np.repeat(np.arange(idx.shape[0]), MAX_DEGREE)
        keep = flat >= 0
        var, term = flat[keep], term_of[keep]
        order = np.argsort(var, kind="stable")
        ptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(ptr, var + 1, 1)
        return np.cumsum(ptr), term[order].astype(np.int64)

    def evaluate(self, bits) -> np.ndarray | float:
        """Energy of one bitstring (1-D) or of each row of a 2-D array."""
        x = np.asarray(bits)
        single = x.ndim == 1
        x = np.atleast_2d(x).astype(np.uint8)
        if x.shape[1] != self.num_vars:
            raise ValueError(f"bitstring length {x.shape[1]} does not match {self.num_vars} variables")
        if self.degree > MAX_DEGREE:
            vals = np.full(x.shape[0], self.offset)
            for b, c in self.items():
                if b:
                    vals += c * np.all(x[:, list(b)] == 1, axis=1)
            return float(vals[0]) if single else vals
        idx, coef, off = self.arrays
        vals = _kernels.evaluate_terms(idx, coef, off, x)
        return float(vals[0]) if single else vals


def combine(*parts: BinaryPolynomial | None) -> BinaryPolynomial:
    """Coefficient-wise sum of Hamiltonian parts; ``None`` parts are skipped."""
    present = [p for p in parts if p is not None]
    if not present:
        raise ValueError("nothing to combine")
    # the part with the largest registry defines the variable set
    base = max(present, key=lambda p: len(p.registry))
    out = BinaryPolynomial(base.registry)
    for p in present:
        out = out + p.with_registry(base.registry)
    return out
