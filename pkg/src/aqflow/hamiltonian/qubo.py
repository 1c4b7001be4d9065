"""QUBO matrices, degree reduction with auxiliary products, and text export."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .. import _kernels
from .polynomial import BinaryPolynomial
from .variables import BinaryVarId, Registry, VarKind, aux


@dataclass
class QuboProblem:
    """Minimise ``x^T q x + offset`` over binary ``x``.

    ``q`` is symmetric: the diagonal carries linear coefficients and each
    pair coefficient ``c`` of ``x_i x_j`` is split as ``q[i, j] = q[j, i] = c / 2``.
    """

    q: np.ndarray
    registry: Registry
    offset: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        n = len(self.registry)
        if self.q.shape != (n, n):
            raise ValueError(f"matrix shape {self.q.shape} does not match {n} registered variables")
        if not np.array_equal(self.q, self.q.T):
            raise ValueError("QUBO matrix must be symmetric")

    @property
    def num_vars(self) -> int:
        return self.q.shape[0]

    def to_polynomial(self) -> BinaryPolynomial:
        terms: dict[tuple[int, ...], float] = {}
        n = self.num_vars
        for i in range(n):
            if self.q[i, i]:
                terms[(i,)] = self.q[i, i]
        iu, ju = np.nonzero(np.triu(self.q, 1))
        for i, j in zip(iu.tolist(), ju.tolist()):
            terms[(i, j)] = 2.0 * self.q[i, j]
        if self.offset:
            terms[()] = self.offset
        return BinaryPolynomial.from_terms(self.registry, terms)

    @cached_property
    def _poly(self) -> BinaryPolynomial:
        return self.to_polynomial()

    @property
    def arrays(self):
        return self._poly.arrays

    def incidence(self):
        return self._poly.incidence()

    def max_abs_coefficient(self) -> float:
        return self._poly.max_abs_coefficient()

    def evaluate(self, bits) -> np.ndarray | float:
        x = np.asarray(bits)
        single = x.ndim == 1
        x = np.atleast_2d(x).astype(np.uint8)
        if x.shape[1] != self.num_vars:
            raise ValueError(f"bitstring length {x.shape[1]} does not match {self.num_vars} variables")
        idx, coef, off = self.arrays
        vals = _kernels.evaluate_terms(idx, coef, off, x)
        return float(vals[0]) if single else vals

    # -- plain-text exchange ------------------------------------------------

    def to_triplets(self) -> str:
        """Upper-triangle ``i j coeff`` lines; off-diagonal entries carry the full pair coefficient."""
        lines = [f"# offset {float(self.offset)!r}", f"# variables {self.num_vars}"]
        n = self.num_vars
        for i in range(n):
            for j in range(i, n):
                v = float(self.q[i, j])
                if v:
                    c = v if i == j else 2.0 * v
                    lines.append(f"{i} {j} {c!r}")
        return "\n".join(lines) + "\n"

    def registry_sidecar(self) -> str:
        return json.dumps({str(i): vid.tag for i, vid in enumerate(self.registry)}, indent=1)

    @classmethod
    def from_triplets(cls, text: str, sidecar: str) -> "QuboProblem":
        tags = json.loads(sidecar)
        registry = Registry(BinaryVarId.parse(tags[str(i)]) for i in range(len(tags)))
        n = len(registry)
        q = np.zeros((n, n))
        offset = 0.0
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(" ")
                if key == "offset":
                    offset = float(value)
                elif key == "variables" and int(value) != n:
                    raise ValueError(f"triplet file declares {value} variables, sidecar has {n}")
                continue
            i_s, j_s, c_s = line.split()
            i, j, c = int(i_s), int(j_s), float(c_s)
            if not 0 <= i <= j < n:
                raise ValueError(f"bad triplet indices in line {raw!r}")
            if i == j:
                q[i, i] = c
            else:
                q[i, j] = q[j, i] = c / 2.0
        return cls(q, registry, offset)


def pair_penalty(registry: Registry, i: int, j: int, z: int) -> BinaryPolynomial:
    """``x_i x_j - 2 (x_i + x_j) z + 3 z``: zero iff ``z = x_i x_j``, at least 1 otherwise."""
    return BinaryPolynomial.from_terms(registry, {(i, j): 1.0, (i, z): -2.0, (j, z): -2.0, (z,): 3.0})


def quadratize(poly: BinaryPolynomial, lambda_quad: float | None = None) -> QuboProblem:
    """Reduce a degree-4 polynomial to a QUBO with auxiliary product variables.

    A cubic term ``c x_i x_j x_k`` (indices sorted) becomes
    ``c z_ij x_k + lambda P(x_i, x_j; z_ij)`` and a quartic term
    ``c x_i x_j x_k x_l`` becomes ``c z_ij z_kl + lambda (P(x_i, x_j; z_ij) + P(x_k, x_l; z_kl))``.
    Auxiliaries are shared between terms using the same pair; each term
    brings its own penalty copy, so ``lambda > max |c|`` over the reduced
    terms makes the reduction exact.

    Raises:
        ValueError: for degree above 4, or a penalty that does not dominate.
    """
    if poly.degree > 4:
        raise ValueError(f"cannot quadratize a degree-{poly.degree} polynomial")
    guarded = poly.max_abs_coefficient(min_degree=3)
    if lambda_quad is None:
        lambda_quad = 2.0 * guarded if guarded else 1.0
    if lambda_quad <= 0:
        raise ValueError("lambda_quad must be positive")
    if guarded and not lambda_quad > guarded:
        raise ValueError(f"lambda_quad={lambda_quad} does not dominate the largest reduced coefficient {guarded}")

    base = poly.registry
    if any(vid.kind is VarKind.AUX for vid in base):
        raise ValueError("input already contains auxiliary variables")
    registry = base.copy()
    pair_counts: dict[tuple[int, int], int] = {}
    linear: dict[int, float] = {}
    quad: dict[tuple[int, int], float] = {}
    offset = 0.0

    def z_of(i: int, j: int) -> int:
        pair_counts[(i, j)] = pair_counts.get((i, j), 0) + 1
        return registry.get_or_add(aux(i, j))

    def add_quad(i: int, j: int, c: float) -> None:
        key = (i, j) if i < j else (j, i)
        quad[key] = quad.get(key, 0.0) + c

    # sorted for a deterministic auxiliary numbering
    for b, c in sorted(poly.items(), key=lambda kv: (len(kv[0]), kv[0])):
        if c == 0:
            continue
        if len(b) == 0:
            offset += c
        elif len(b) == 1:
            linear[b[0]] = linear.get(b[0], 0.0) + c
        elif len(b) == 2:
            add_quad(b[0], b[1], c)
        elif len(b) == 3:
            z = z_of(b[0], b[1])
            add_quad(z, b[2], c)
        else:
            z1 = z_of(b[0], b[1])
            z2 = z_of(b[2], b[3])
            add_quad(z1, z2, c)

    for (i, j), count in pair_counts.items():
        z = registry.index(aux(i, j))
        w = lambda_quad * count
        add_quad(i, j, w)
        add_quad(i, z, -2.0 * w)
        add_quad(j, z, -2.0 * w)
        linear[z] = linear.get(z, 0.0) + 3.0 * w

    n = len(registry)
    q = np.zeros((n, n))
    for i, c in linear.items():
        q[i, i] += c
    for (i, j), c in quad.items():
        q[i, j] += c / 2.0
        q[j, i] += c / 2.0
    return QuboProblem(q, registry, offset)


def original_part(bits: np.ndarray, n_original: int) -> np.ndarray:
    """Drop auxiliary columns from readouts of a quadratized problem."""
    return np.asarray(bits)[..., :n_original]
