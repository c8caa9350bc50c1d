"""Moreau-envelope smoothing of the CILO loss for linear hypotheses.

With ``V = {mean_i Phi(x_i)^T w_i : w_i in W}`` and ``Vb`` the same set
restricted to profiles meeting the true-cost budget, the proximal points
of the two convex pieces of the CILO loss are ``lambda - F(lambda)`` where
``F`` projects onto ``-V`` (resp. ``-Vb``).  Both sets are only reachable
through a linear-minimization oracle, so projections run a fully
corrective Frank-Wolfe method (Wolfe's minimum-norm-point scheme) whose
atoms are LP vertex profiles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetInfeasible, DirectionUndefined, NumericalFailure, OnBoundary
from .geometry import Basis, Polyhedron, lp_minimize_batch, lp_minimize_budget
from .losses import true_solutions
from .model import Dataset, feature_spectral_bound

DEFAULT_REL_TOL = 1e-6
BOUNDARY_DIST = 1e-10
MAX_FW_ITERS = 5000


def default_tol(lam) -> float:
    return DEFAULT_REL_TOL * (1.0 + float(np.dot(lam, lam)))


def landscape_scale(data: Dataset, W: Polyhedron) -> float:
    """``B_W * B_Phi``: a bound on the norm of every moment vector."""
    return W.radius * feature_spectral_bound(data)


@dataclass(frozen=True)
class ProjectionResult:
    """Projection of ``lam`` onto ``-V`` (or ``-Vb``).

    ``point = -sum_k weights[k] * adjoint(atoms[k])``.
    """

    point: np.ndarray
    atoms: np.ndarray  # (k, n, d) vertex profiles
    weights: np.ndarray  # (k,)
    distance: float
    fw_gap: float
    converged: bool
    iterations: int
    inside: bool = False  # stopped early: lam is within inside_tol of the set

    @property
    def witness(self) -> np.ndarray:
        return np.tensordot(self.weights, self.atoms, axes=1)


def _affine_minimizer(Q: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Weights (summing to one) of the point of aff(Q rows) closest to z."""
    k = Q.shape[0]
    if k == 1:
        return np.ones(1)
    D = (Q[1:] - Q[0]).T
    r = z - Q[0]
    G = D.T @ D
    try:
        coef = np.linalg.solve(G, D.T @ r)
        ok = np.all(np.isfinite(coef)) and np.linalg.norm(G @ coef - D.T @ r) <= 1e-10 * (1.0 + np.abs(G).max()) * (
            1.0 + np.abs(coef).max()
        )
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        # nearly dependent atoms: fall back to the SVD solve
        coef = np.linalg.lstsq(D, r, rcond=None)[0]
    return np.concatenate([[1.0 - coef.sum()], coef])


class MomentProjector:
    """Projects onto ``-V`` or, with ``beta`` set, onto ``-Vb``.

    Keeps the last atom set and LP bases so consecutive calls at nearby
    points warm start.  Not shared across threads.
    """

    def __init__(self, data: Dataset, W: Polyhedron, beta: float | None = None):
        self.data = data
        self.W = W
        self.beta = None if beta is None else float(beta)
        truth = true_solutions(data, W)
        self.beta_min = float(truth.values.mean())
        self._true_points = truth.points
        self._y = None
        if self.beta is not None and self.beta < self.beta_min - 1e-9 * (1 + abs(self.beta)):
            raise BudgetInfeasible(f"beta={beta:.6g} below beta_min={self.beta_min:.6g}")
        self._basis: Basis | None = None
        self._atoms: list[tuple[np.ndarray, np.ndarray]] = []
        self._weights = np.zeros(0)
        self.lmo_calls = 0
        self.line_steps = 0

    def reset(self) -> None:
        self._atoms, self._weights, self._basis, self._y = [], np.zeros(0), None, None

    def lmo(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Profile and moment vector minimizing ``u . v`` over the set."""
        self.lmo_calls += 1
        preds = self.data.predict_all(u)
        if self.beta is None:
            sol = lp_minimize_batch(preds, self.W, self._basis)
            self._basis = sol.basis
            prof = sol.points
        else:
            res = lp_minimize_budget(
                preds, self.data.C, self.beta, self.W, beta_min=self.beta_min, start=self._basis,
                y_hint=self._y, true_points=self._true_points,
            )
            if res.basis is not None:
                self._basis = res.basis
            self._y = res.dual_y if math.isfinite(res.dual_y) and res.dual_y > 0 else None
            prof = res.witness
        return prof, self.data.adjoint(prof)

    def project(
        self, lam, tol: float | None = None, max_iter: int | None = None, inside_tol: float | None = None
    ) -> ProjectionResult:
        """Fully corrective FW until the duality gap drops below ``tol``.

        With ``inside_tol`` set, stops early (flagging ``inside``) once the
        iterate is that close to ``lam``; interior points otherwise need a
        full corral of atoms.
        """
        lam = np.asarray(lam, dtype=float).ravel()
        z = -lam
        if tol is None:
            tol = default_tol(lam)
        if max_iter is None:
            max_iter = int(min(MAX_FW_ITERS, 10 * lam.size / math.sqrt(tol)))

        if self._atoms:
            profs = [a[0] for a in self._atoms]
            Q = np.array([a[1] for a in self._atoms])
            w = self._minor_cycle(Q, z, self._weights)
        else:
            p0, v0 = self.lmo(-z)
            profs, Q, w = [p0], v0[None, :], np.ones(1)
        x = w @ Q
        gap = math.inf
        it = 0
        converged = inside = False
        for it in range(1, max_iter + 1):
            u = x - z
            if inside_tol is not None and float(np.linalg.norm(u)) <= inside_tol:
                converged = inside = True
                gap = 0.0
                break
            s_prof, s_v = self.lmo(u)
            gap = float(u @ (x - s_v))
            if gap <= tol:
                converged = True
                break
            scale = 1.0 + np.abs(Q).max()
            if np.any(np.abs(Q - s_v).max(axis=1) <= 1e-12 * scale):
                # oracle returned a current atom: x is not the corral minimizer yet
                w_new = self._minor_cycle(Q, z, w)
                if np.allclose(w_new, w, rtol=0, atol=1e-15):
                    break
                w = w_new
            else:
                profs.append(s_prof)
                Q = np.vstack([Q, s_v])
                w = np.append(w, 0.0)
                w_corr = self._minor_cycle(Q, z, w)
                if w_corr[-1] > 0:
                    w = w_corr
                else:
                    # corral step rejected the new atom; fall back to an exact FW line step
                    self.line_steps += 1
                    step = x - s_v
                    gamma = min(max(gap / float(step @ step), 0.0), 1.0)
                    w = (1.0 - gamma) * w
                    w[-1] += gamma
            keep = w > 0
            if not keep.all():
                profs = [p for p, k in zip(profs, keep) if k]
                Q, w = Q[keep], w[keep]
            x = w @ Q

        self._atoms = list(zip(profs, Q))
        self._weights = w.copy()
        point = -x
        return ProjectionResult(
            point=point,
            atoms=np.array(profs),
            weights=w.copy(),
            distance=float(np.linalg.norm(lam - point)),
            fw_gap=max(gap, 0.0),
            converged=converged,
            iterations=it,
            inside=inside,
        )

    @staticmethod
    def _minor_cycle(Q, z, w, eps=1e-12):
        """Move ``w`` to the corral minimizer; every atom with ``w >= 0`` takes part."""
        w = w.copy()
        alive = np.ones(w.size, dtype=bool)
        for _ in range(w.size + 5):
            idx = np.flatnonzero(alive)
            a = np.zeros_like(w)
            a[idx] = _affine_minimizer(Q[idx], z)
            if np.all(a[idx] > eps):
                return a
            neg = idx[a[idx] <= eps]
            denom = w[neg] - a[neg]
            ok = denom > 0
            theta = float(np.min(w[neg][ok] / denom[ok])) if ok.any() else 0.0
            w = w + theta * (a - w)
            w[~alive] = 0.0
            w[w <= eps] = 0.0
            alive &= w > 0
            if not alive.any():
                raise NumericalFailure("minor cycle lost every atom")
            w /= w.sum()
        return w


def project_moment_set(lam, data: Dataset, W: Polyhedron, budget: float | None = None, tol: float | None = None):
    """One-shot projection of ``lam`` onto ``-V`` (or ``-Vb`` when ``budget`` is set)."""
    return MomentProjector(data, W, budget).project(lam, tol)


@dataclass(frozen=True)
class ProxPair:
    theta_plain: np.ndarray
    theta_budget: np.ndarray
    envelopes: tuple[float, float]
    plain: ProjectionResult
    budget: ProjectionResult


class SmoothedCilo:
    """s-CILO and log-CILO objectives at a fixed budget, with warm starts."""

    def __init__(
        self, data: Dataset, W: Polyhedron, beta: float, tol: float | None = None, inside_tol: float | None = None
    ):
        self.data, self.W, self.beta = data, W, float(beta)
        self.tol = tol
        self.inside_tol = inside_tol
        self.plain = MomentProjector(data, W)
        self.budgeted = MomentProjector(data, W, beta)

    def prox_pair(self, lam) -> ProxPair:
        lam = np.asarray(lam, dtype=float).ravel()
        tol = self.tol if self.tol is not None else default_tol(lam)
        pv = self.plain.project(lam, tol, inside_tol=self.inside_tol)
        pb = self.budgeted.project(lam, tol, inside_tol=self.inside_tol)
        half = 0.5 * float(lam @ lam)
        env = (half - 0.5 * pv.distance**2, half - 0.5 * pb.distance**2)
        return ProxPair(lam - pv.point, lam - pb.point, env, pv, pb)

    def s_cilo(self, lam, pair: ProxPair | None = None):
        pair = pair or self.prox_pair(lam)
        value = 0.5 * (pair.budget.distance**2 - pair.plain.distance**2)
        grad = pair.plain.point - pair.budget.point
        return value, grad

    def log_cilo(self, lam, pair: ProxPair | None = None):
        lam = np.asarray(lam, dtype=float).ravel()
        pair = pair or self.prox_pair(lam)
        db, dv = pair.budget.distance, pair.plain.distance
        if db < BOUNDARY_DIST or dv < BOUNDARY_DIST:
            raise OnBoundary(f"distance to moment set below {BOUNDARY_DIST} (plain={dv:.3e}, budget={db:.3e})")
        value = math.log(db) - math.log(dv)
        grad = (lam - pair.budget.point) / db**2 - (lam - pair.plain.point) / dv**2
        return value, grad


def prox_pair(lam, beta, data: Dataset, W: Polyhedron, tol: float | None = None) -> ProxPair:
    return SmoothedCilo(data, W, beta, tol).prox_pair(lam)


def s_cilo(lam, beta, data: Dataset, W: Polyhedron, tol: float | None = None):
    """``(value, grad)`` of half the squared-distance gap to ``-Vb`` versus ``-V``."""
    return SmoothedCilo(data, W, beta, tol).s_cilo(lam)


def log_cilo(lam, beta, data: Dataset, W: Polyhedron, tol: float | None = None):
    """``(value, grad)`` of the log-distance gap; raises ``OnBoundary`` at the sets."""
    return SmoothedCilo(data, W, beta, tol).log_cilo(lam)


def boundary_escape(
    lam,
    data: Dataset,
    W: Polyhedron,
    r_factor: float = 3.0,
    tol: float | None = None,
    projection: ProjectionResult | None = None,
) -> np.ndarray:
    """Push ``lam`` away from ``-V`` along the outward normal.

    Moves by ``r_factor * B_W * B_Phi``.  Points already farther than
    ``B_W * B_Phi`` from ``-V`` are returned unchanged.
    """
    if not 3.0 <= r_factor <= 8.0:
        raise ValueError("r_factor must lie in [3, 8]")
    lam = np.asarray(lam, dtype=float).ravel()
    proj = projection or project_moment_set(lam, data, W, tol=tol)
    direction = lam - proj.point
    dist = float(np.linalg.norm(direction))
    if dist <= BOUNDARY_DIST:
        raise DirectionUndefined("point lies inside -V; no outward normal")
    scale = landscape_scale(data, W)
    if dist > scale:
        return lam.copy()
    return lam + r_factor * scale * direction / dist
