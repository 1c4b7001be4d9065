"""Annealing backends: simulated annealing on polynomials or QUBOs, and exhaustive search."""

from __future__ import annotations

import csv
import enum
import hashlib
import io
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import _kernels
from .hamiltonian.polynomial import BinaryPolynomial
from .hamiltonian.qubo import QuboProblem

Problem = BinaryPolynomial | QuboProblem


class Capability(str, enum.Enum):
    QUADRATIC_ONLY = "quadratic-only"
    HIGHER_ORDER = "higher-order"


@dataclass(frozen=True)
class AnnealParams:
    """Simulated-annealing settings.

    ``None`` for the schedule fields selects problem-dependent defaults:
    ``t_start`` is the largest coefficient magnitude, ``t_end`` a thousandth
    of it, and ``sweeps_per_readout`` is ten times the variable count.
    After the schedule every chain is quenched greedily for up to
    ``polish_sweeps`` sweeps.
    """

    readouts: int = 5000
    sweeps_per_readout: int | None = None
    t_start: float | None = None
    t_end: float | None = None
    seed: int = 0
    polish_sweeps: int = 100

    def __post_init__(self):
        if self.readouts < 1:
            raise ValueError("readouts must be at least 1")
        if self.sweeps_per_readout is not None and self.sweeps_per_readout < 0:
            raise ValueError("sweeps_per_readout must be nonnegative")
        if self.t_end is not None and not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.t_start is not None and self.t_end is not None and not self.t_start > self.t_end:
            raise ValueError("t_start must exceed t_end")
        if self.polish_sweeps < 0:
            raise ValueError("polish_sweeps must be nonnegative")

    def schedule(self, max_coef: float, n: int) -> np.ndarray:
        """Inverse temperatures, one per sweep, geometric in temperature."""
        t0 = self.t_start if self.t_start is not None else (max_coef if max_coef > 0 else 1.0)
        t1 = self.t_end if self.t_end is not None else 1e-3 * t0
        if not (t0 > t1 > 0):
            raise ValueError(f"invalid temperature schedule {t0} -> {t1}")
        sweeps = self.sweeps_per_readout if self.sweeps_per_readout is not None else 10 * n
        if sweeps == 0:
            return np.empty(0)
        if sweeps == 1:
            return np.array([1.0 / t1])
        return 1.0 / np.geomspace(t0, t1, sweeps)


class Sample(NamedTuple):
    bitstring: str
    energy: float
    count: int

    def bits(self) -> np.ndarray:
        return np.frombuffer(self.bitstring.encode(), dtype=np.uint8) - ord("0")


def _as_poly(problem: Problem) -> BinaryPolynomial:
    return problem.to_polynomial() if isinstance(problem, QuboProblem) else problem


def problem_digest(problem: Problem) -> str:
    poly = _as_poly(problem)
    idx, coef, off = poly.arrays
    h = hashlib.sha256()
    h.update(np.int64(poly.num_vars).tobytes())
    h.update(np.ascontiguousarray(idx).tobytes())
    h.update(np.ascontiguousarray(coef).tobytes())
    h.update(np.float64(off).tobytes())
    return h.hexdigest()[:16]


def _to_strings(states: np.ndarray) -> list[str]:
    if states.shape[1] == 0:
        return [""] * states.shape[0]
    chars = (states + ord("0")).astype(np.uint8)
    return [row.tobytes().decode() for row in chars]


@dataclass(frozen=True)
class ReadoutSet:
    """Distinct readouts sorted by (energy, bitstring), with multiplicities."""

    samples: tuple[Sample, ...]
    problem_digest: str

    def __post_init__(self):
        keys = [(s.energy, s.bitstring) for s in self.samples]
        if keys != sorted(keys):
            raise ValueError("samples must be sorted by energy then bitstring")

    @classmethod
    def from_states(cls, problem: Problem, states: np.ndarray) -> "ReadoutSet":
        """Aggregate raw readouts; energies come from exact re-evaluation."""
        states = np.asarray(states, dtype=np.uint8)
        uniq, counts = np.unique(states, axis=0, return_counts=True)
        energies = np.atleast_1d(problem.evaluate(uniq)) if uniq.shape[1] else \
            np.full(uniq.shape[0], _as_poly(problem).offset)
        samples = sorted(Sample(b, float(e), int(c)) for b, e, c in zip(_to_strings(uniq), energies, counts))
        samples.sort(key=lambda s: (s.energy, s.bitstring))
        return cls(tuple(samples), problem_digest(problem))

    def verify(self, problem: Problem, atol: float = 0.0) -> None:
        """Raise if any stored energy differs from re-evaluation."""
        if problem_digest(problem) != self.problem_digest:
            raise ValueError("readouts belong to a different problem")
        for s in self.samples:
            e = problem.evaluate(s.bits()) if s.bitstring else _as_poly(problem).offset
            if abs(e - s.energy) > atol:
                raise ValueError(f"energy of {s.bitstring} is {e}, stored {s.energy}")

    @property
    def total_count(self) -> int:
        return sum(s.count for s in self.samples)

    def __len__(self) -> int:
        return len(self.samples)

    def merge(self, other: "ReadoutSet") -> "ReadoutSet":
        """Pool two readout sets of the same problem, adding multiplicities."""
        if other.problem_digest != self.problem_digest:
            raise ValueError("cannot merge readouts of different problems")
        pooled: dict[str, Sample] = {s.bitstring: s for s in self.samples}
        for s in other.samples:
            if s.bitstring in pooled:
                pooled[s.bitstring] = s._replace(count=pooled[s.bitstring].count + s.count)
            else:
                pooled[s.bitstring] = s
        ordered = sorted(pooled.values(), key=lambda s: (s.energy, s.bitstring))
        return ReadoutSet(tuple(ordered), self.problem_digest)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bitstring", "energy", "count"])
        for s in self.samples:
            w.writerow([s.bitstring, repr(s.energy), s.count])
        return buf.getvalue()


def best_sample(rs: ReadoutSet) -> tuple[np.ndarray, float]:
    """Lowest energy; ties go to the lexicographically smallest bitstring."""
    if not rs.samples:
        raise ValueError("empty readout set")
    s = rs.samples[0]
    return s.bits(), s.energy


def _chain_seeds(seed: int, count: int) -> np.ndarray:
    """32-bit generator seed for chains ``seed + c`` via the splitmix64 finaliser."""
    z = (np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + np.arange(count, dtype=np.uint64))
    with np.errstate(over="ignore"):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(32)).astype(np.uint32)


def simulated_annealing(problem: Problem, params: AnnealParams, initial: np.ndarray | None = None) -> ReadoutSet:
    """Run one chain per readout.

    A polynomial carrying a ``factored`` sum-of-squares form is annealed
    through that form; flip energies are the same function evaluated more
    cheaply.  Reported energies always come from the expanded polynomial.
    With ``initial`` every chain starts from that bitstring instead of a
    random one.
    """
    poly = _as_poly(problem)
    n = poly.num_vars
    if n == 0:
        raise ValueError("problem has no variables")
    betas = params.schedule(poly.max_abs_coefficient(), n)
    seeds = _chain_seeds(params.seed, params.readouts)
    if initial is None:
        init = np.empty(0, dtype=np.uint8)
    else:
        init = np.asarray(initial, dtype=np.uint8)
        if init.shape != (n,):
            raise ValueError(f"initial state has shape {init.shape}, expected ({n},)")
    factored = getattr(problem, "factored", None)
    if factored is not None and len(factored.registry) == n:
        states = _kernels.anneal_sos(*factored.tables, n, betas, seeds, params.polish_sweeps, init)
    else:
        idx, coef, _ = poly.arrays
        ptr, inc = poly.incidence()
        states = _kernels.anneal(idx, coef, ptr, inc, n, betas, seeds, params.polish_sweeps, init)
    return ReadoutSet.from_states(problem, states)


def solve(problem: Problem, params: AnnealParams, capability: Capability | str = Capability.HIGHER_ORDER,
          initial: np.ndarray | None = None) -> ReadoutSet:
    """Anneal ``problem``; a quadratic-only backend insists on a :class:`QuboProblem`."""
    capability = Capability(capability)
    if capability is Capability.QUADRATIC_ONLY and not isinstance(problem, QuboProblem):
        raise TypeError("quadratic-only backend needs a QuboProblem; quadratize first")
    return simulated_annealing(problem, params, initial)


def exhaustive_solve(problem: Problem, max_vars: int = 25, k: int = 16, chunk: int = 1 << 20) -> ReadoutSet:
    """Enumerate every bitstring and keep the ``k`` lowest-energy ones."""
    poly = _as_poly(problem)
    n = poly.num_vars
    if n > max_vars:
        raise ValueError(f"{n} variables exceed the exhaustive limit of {max_vars}")
    if n == 0:
        return ReadoutSet((Sample("", float(poly.offset), 1),), problem_digest(problem))
    idx, coef, off = poly.arrays
    ptr, inc = poly.incidence()
    total = 1 << n
    keep = k + 8  # incremental energies drift slightly; re-rank exactly below
    best_i = np.empty(0, dtype=np.int64)
    best_e = np.empty(0)
    for start in range(0, total, chunk):
        stop = min(total, start + chunk)
        e = _kernels.gray_energies(idx, coef, ptr, inc, n, off, start, stop)
        sel = np.argpartition(e, min(keep, e.size - 1))[:keep] if e.size > keep else np.arange(e.size)
        best_i = np.concatenate([best_i, sel + start])
        best_e = np.concatenate([best_e, e[sel]])
        if best_e.size > keep:
            order = np.argsort(best_e, kind="stable")[:keep]
            best_i, best_e = best_i[order], best_e[order]
    codes = best_i ^ (best_i >> 1)
    states = ((codes[:, None] >> np.arange(n)) & 1).astype(np.uint8)
    exact = poly.evaluate(states)
    samples = sorted((Sample(b, float(e), 1) for b, e in zip(_to_strings(states), np.atleast_1d(exact))),
                     key=lambda s: (s.energy, s.bitstring))[:k]
    return ReadoutSet(tuple(samples), problem_digest(problem))


BACKENDS = ("exhaustive", "sa-hobo", "sa-qubo")


def run_backend(name: str, problem: Problem, params: AnnealParams,
                initial: np.ndarray | None = None) -> ReadoutSet:
    """Dispatch by backend name; ``sa-qubo`` accepts only a QuboProblem.

    ``initial`` warm-starts the annealing backends and is ignored by
    exhaustive search.
    """
    if name == "exhaustive":
        return exhaustive_solve(problem)
    if name == "sa-hobo":
        return solve(problem, params, Capability.HIGHER_ORDER, initial)
    if name == "sa-qubo":
        return solve(problem, params, Capability.QUADRATIC_ONLY, initial)
    raise ValueError(f"unknown backend {name!r}; choose one of {', '.join(BACKENDS)}")


def with_seed(params: AnnealParams, seed: int) -> AnnealParams:
    return replace(params, seed=seed)
