"""Two-boundary measurement simulator.

State-vector engine for furcation, witness production, alignment projection
and choice decision, with several path-selection mechanisms that can be
checked against Born statistics.
"""

from twoboundary.hilbert import (
    CompositeSpace,
    Operator,
    OperatorKind,
    StateVector,
    apply,
    basis_state,
    dominant_eigenpair,
    haar_random_state,
    inner,
    tensor,
)
from twoboundary.rng import stream

__version__ = "0.1.0"

__all__ = [
    "CompositeSpace",
    "Operator",
    "OperatorKind",
    "StateVector",
    "apply",
    "basis_state",
    "dominant_eigenpair",
    "haar_random_state",
    "inner",
    "stream",
    "tensor",
]
