"""Binary encodings of power-flow and OPF problems."""

from .builder import (
    Constraint,
    DiscretizationConfig,
    Mode,
    PenaltyWeights,
    ProblemEncoding,
    SlackEncodingError,
    build_h_const,
    build_h_cost,
    build_h_obj,
    build_hamiltonian,
    inequality_penalty,
    substitute_voltage,
)
from .factored import SquaredSum
from .polynomial import BinaryPolynomial, combine
from .qubo import QuboProblem, pair_penalty, quadratize
from .variables import BinaryVarId, Registry, VarKind

__all__ = [
    "BinaryPolynomial", "BinaryVarId", "SquaredSum", "Constraint", "DiscretizationConfig", "Mode",
    "PenaltyWeights", "ProblemEncoding", "QuboProblem", "Registry", "SlackEncodingError",
    "VarKind", "build_h_const", "build_h_cost", "build_h_obj", "build_hamiltonian", "combine",
    "inequality_penalty", "pair_penalty", "quadratize", "substitute_voltage",
]
