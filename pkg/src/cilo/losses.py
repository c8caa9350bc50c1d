"""Empirical decision losses and the two baselines' training losses."""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCandidateSet
from .geometry import (
    BatchLPSolution,
    Polyhedron,
    lp_minimize_batch,
    lp_minimize_budget,
    optimal_face_worst_case,
)
from .model import Dataset


@dataclass(frozen=True)
class LossReport:
    value: float
    subgradient: np.ndarray | None = None
    per_sample: np.ndarray | None = None


@dataclass(frozen=True)
class BetaBounds:
    beta_min: float
    beta_max: float


_true_cache: "weakref.WeakKeyDictionary[Dataset, dict]" = weakref.WeakKeyDictionary()


def true_solutions(data: Dataset, W: Polyhedron) -> BatchLPSolution:
    """Full-information decisions ``w(c_i)``, memoized per (data, W)."""
    per_data = _true_cache.setdefault(data, {})
    sol = per_data.get(id(W))
    if sol is None or sol[0] is not W:
        sol = (W, lp_minimize_batch(data.C, W))
        per_data[id(W)] = sol
    return sol[1]


def beta_bounds(data: Dataset, W: Polyhedron) -> BetaBounds:
    lo = true_solutions(data, W).values.mean()
    hi = -lp_minimize_batch(-data.C, W).values.mean()
    return BetaBounds(float(lo), float(hi))


def decisions(theta, data: Dataset, W: Polyhedron) -> BatchLPSolution:
    return lp_minimize_batch(data.predict_all(theta), W)


def target_loss(theta, data: Dataset, W: Polyhedron, mode: str = "vertex") -> LossReport:
    """Mean true cost of the decisions induced by ``theta``.

    ``vertex`` uses the oracle's deterministic vertex; ``worst_case`` takes
    the largest true cost over each sample's optimal face.
    """
    preds = data.predict_all(theta)
    if mode == "vertex":
        sol = lp_minimize_batch(preds, W)
        per = np.einsum("ij,ij->i", data.C, sol.points)
    elif mode == "worst_case":
        per = np.array([optimal_face_worst_case(p, c, W) for p, c in zip(preds, data.C)])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return LossReport(float(per.mean()), None, per)


def regret(theta, data: Dataset, W: Polyhedron) -> float:
    """Target loss minus the full-information optimum."""
    return target_loss(theta, data, W).value - float(true_solutions(data, W).values.mean())


def cilo_loss(theta, beta: float, data: Dataset, W: Polyhedron) -> LossReport:
    """Budgeted minus unconstrained optimal mean predicted cost.

    The subgradient is the difference of the two optimal moment vectors.
    """
    preds = data.predict_all(theta)
    free = lp_minimize_batch(preds, W)
    beta_min = float(true_solutions(data, W).values.mean())
    budget = lp_minimize_budget(preds, data.C, beta, W, beta_min=beta_min)
    value = budget.value - float(free.values.mean())
    sub = data.adjoint(budget.witness) - data.adjoint(free.points)
    return LossReport(value, sub)


def spo_plus_loss(theta, data: Dataset, W: Polyhedron) -> LossReport:
    """``max_w (c - 2 c_hat) . w + 2 c_hat . w(c)`` averaged over samples."""
    preds = data.predict_all(theta)
    w_true = true_solutions(data, W).points
    inner = lp_minimize_batch(2.0 * preds - data.C, W)
    per = -inner.values + 2.0 * np.einsum("ij,ij->i", preds, w_true)
    sub = 2.0 * data.adjoint(w_true - inner.points)
    return LossReport(float(per.mean()), sub, per)


def slo_loss(theta, data: Dataset) -> LossReport:
    """Mean squared prediction error and its exact gradient."""
    resid = data.predict_all(theta) - data.C
    per = np.einsum("ij,ij->i", resid, resid)
    grad = 2.0 * data.adjoint(resid)
    return LossReport(float(per.mean()), grad, per)


def gamma_hats(candidate_thetas, data: Dataset, W: Polyhedron) -> tuple[float, float]:
    """Empirical misspecification estimates over the given candidates.

    Returns ``(gamma_miss, gamma_class)``: the smallest worst-case regret and
    the root of the smallest mean squared error among the candidates.
    """
    cands = list(candidate_thetas)
    if not cands:
        raise EmptyCandidateSet("need at least one candidate parameter")
    beta_min = float(true_solutions(data, W).values.mean())
    miss = min(target_loss(t, data, W, mode="worst_case").value for t in cands) - beta_min
    cls = min(slo_loss(t, data).value for t in cands)
    return max(miss, 0.0), math.sqrt(cls)
