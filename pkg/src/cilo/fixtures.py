"""Hand-checkable toy instances shared by the tests and the ``bench ex1`` command."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Polyhedron
from .model import Dataset, FeatureMap, FixedBasisHypothesis, LinearHypothesis

EX1_COST = np.array([1.0, 2.0, 2.0])
EX1_THETA1 = np.array([10.0, 1.1, 1.0])
EX1_THETA2 = np.array([1.0, 3.0, 100.0])
EX1_BETA = 1.0


@dataclass(frozen=True)
class Ex1:
    W: Polyhedron
    data: Dataset  # identity features, theta is the predicted cost itself
    span_data: Dataset  # predictions restricted to span{theta1, theta2}
    theta1: np.ndarray
    theta2: np.ndarray
    beta: float


def ex1() -> Ex1:
    """Single sample on the 3-simplex, context x = (1), true cost (1, 2, 2).

    With k = 1 the only feature is ``x_1 = 1``, so ``Phi = I_3``.
    """
    W = Polyhedron.simplex(3)
    X = np.array([[1.0]])
    C = EX1_COST[None, :]
    data = Dataset(X, C, LinearHypothesis(3, FeatureMap(1)))
    span = Dataset(X, C, FixedBasisHypothesis(np.column_stack([EX1_THETA1, EX1_THETA2])))
    return Ex1(W, data, span, EX1_THETA1.copy(), EX1_THETA2.copy(), EX1_BETA)
