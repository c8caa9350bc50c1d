"""Training loops: CILO through its smoothed surrogates, plus SPO+ and SLO."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import CiloError, EmptyGrid, OnBoundary, SingularSystem
from .geometry import Polyhedron
from .losses import beta_bounds, slo_loss, spo_plus_loss, target_loss
from .model import Dataset, LinearHypothesis
from .smoothing import BOUNDARY_DIST, ProxPair, SmoothedCilo, boundary_escape, landscape_scale

log = logging.getLogger(__name__)

INSIDE_FRACTION = 0.1
INSIDE_STREAK = 10
COMMON_BOUNDARY_FRACTION = 1e-6
MIN_STEP = 1e-16


@dataclass(frozen=True)
class GDConfig:
    """Armijo gradient-descent settings.

    ``grad_tol`` is absolute for :func:`gd_backtracking`; the CILO trainer
    multiplies it by ``B_W * B_Phi``.
    """

    max_iters: int = 500
    grad_tol: float = 1e-5
    init_step: float = 1.0
    backtrack_factor: float = 0.5
    sufficient_decrease: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 0 or self.grad_tol < 0 or self.init_step <= 0:
            raise ValueError("max_iters, grad_tol must be >= 0 and init_step > 0")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if not 0 < self.sufficient_decrease < 0.5:
            raise ValueError("sufficient_decrease must lie in (0, 0.5)")


@dataclass
class GDTrace:
    x: np.ndarray
    value: float
    grad: np.ndarray
    iterations: int
    trace: list = field(default_factory=list)
    stalled: bool = False
    stopped: bool = False

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.grad))


def gd_backtracking(objective, lambda0, cfg: GDConfig, callback=None) -> GDTrace:
    """Gradient descent with Armijo backtracking.

    ``objective(x)`` returns ``(value, grad)`` and may raise ``OnBoundary``
    at inadmissible points, which counts as a failed trial step.
    ``callback(it, x, value, grad)`` runs after every accepted step; a
    truthy return ends the run.
    """
    x = np.array(lambda0, dtype=float)
    f, g = objective(x)
    gn = float(np.linalg.norm(g))
    out = GDTrace(x, f, g, 0, [(0, f, gn)])
    for it in range(1, cfg.max_iters + 1):
        if gn <= cfg.grad_tol:
            break
        t = cfg.init_step
        while True:
            xn = x - t * g
            try:
                fn, gn_vec = objective(xn)
            except OnBoundary:
                fn = math.inf
            if fn <= f - cfg.sufficient_decrease * t * gn * gn:
                break
            t *= cfg.backtrack_factor
            if t < MIN_STEP:
                out.stalled = True
                return out
        x, f, g = xn, fn, gn_vec
        gn = float(np.linalg.norm(g))
        out.x, out.value, out.grad, out.iterations = x, f, g, it
        out.trace.append((it, f, gn))
        if callback is not None and callback(it, x, f, g):
            out.stopped = True
            break
    return out


@dataclass
class BetaCandidate:
    beta: float
    theta: np.ndarray | None
    val_loss: float
    phase: str
    traces: dict = field(default_factory=dict)
    error: str | None = None
    final_grad_norm: float = math.nan
    final_lambda: np.ndarray | None = None


@dataclass
class TrainResult:
    theta: np.ndarray
    beta_used: float | None
    trace: list
    phase: str
    candidates: list = field(default_factory=list)


class _Tracker:
    """Caches the last prox pair and keeps the best validation iterate."""

    def __init__(self, smoothed: SmoothedCilo, val: Dataset, W: Polyhedron):
        self.smoothed, self.val, self.W = smoothed, val, W
        self.pair: ProxPair | None = None
        self.best_loss = math.inf
        self.best_theta: np.ndarray | None = None

    def r(self, lam):
        self.pair = self.smoothed.prox_pair(lam)
        return self.smoothed.s_cilo(lam, self.pair)

    def f(self, lam):
        self.pair = self.smoothed.prox_pair(lam)
        if self.pair.plain.inside:
            raise OnBoundary("iterate entered the moment set")
        return self.smoothed.log_cilo(lam, self.pair)

    def consider(self, pair: ProxPair) -> None:
        theta = pair.theta_budget
        loss = target_loss(theta, self.val, self.W).value
        if loss < self.best_loss - 1e-12:
            self.best_loss, self.best_theta = loss, theta.copy()


def _train_single_beta(train, val, W, beta, cfg, tol, lam0, r_factor) -> BetaCandidate:
    scale = landscape_scale(train, W)
    near_tol = COMMON_BOUNDARY_FRACTION * scale
    gcfg = GDConfig(
        cfg.max_iters, cfg.grad_tol * scale, cfg.init_step, cfg.backtrack_factor, cfg.sufficient_decrease, cfg.seed
    )
    sm = SmoothedCilo(train, W, beta, tol, inside_tol=1e-3 * near_tol)
    tr = _Tracker(sm, val, W)
    traces = {}

    lam = np.zeros(train.m) if lam0 is None else np.array(lam0, dtype=float)
    tr.r(lam)
    tr.consider(tr.pair)
    exterior = lam.copy() if tr.pair.plain.distance > near_tol else None
    streak = 0
    inside = False

    def cb_r(it, x, f, g):
        nonlocal exterior, streak, inside
        tr.consider(tr.pair)
        dv = tr.pair.plain.distance
        if dv > near_tol:
            exterior = x.copy()
        if max(dv, tr.pair.budget.distance) <= near_tol:
            # r vanishes on the whole inner set; nothing more to learn here
            inside = True
            return True
        streak = streak + 1 if dv < INSIDE_FRACTION * scale else 0
        return streak >= INSIDE_STREAK

    run = gd_backtracking(tr.r, lam, gcfg, cb_r)
    traces["s_cilo"] = run.trace
    phase = "s_cilo"
    lam, grad_norm = run.x, run.grad_norm
    final_dv = tr.pair.plain.distance if tr.pair is not None else math.inf
    triggered = run.stopped or final_dv < INSIDE_FRACTION * scale

    if triggered and exterior is not None:
        phase = "log_cilo"
        start = lam if final_dv > near_tol else exterior
        near = False

        def cb_f(it, x, f, g):
            nonlocal near
            tr.consider(tr.pair)
            p = tr.pair
            close = max(p.plain.distance, p.budget.distance) < near_tol
            near = close and float(np.linalg.norm(g)) <= max(gcfg.grad_tol, 1.0 / scale)
            return near

        run2 = gd_backtracking(tr.f, start, gcfg, cb_f)
        traces["log_cilo"] = run2.trace
        lam = run2.x
        if near:
            phase = "escaped"
            lam = boundary_escape(lam, train, W, r_factor, tol, projection=tr.pair.plain)
            tr.r(lam)
            tr.consider(tr.pair)
            run3 = gd_backtracking(tr.r, lam, gcfg, lambda it, x, f, g: tr.consider(tr.pair))
            traces["polish"] = run3.trace
            lam = run3.x
        _, g_last = tr.r(lam)
        grad_norm = float(np.linalg.norm(g_last))

    return BetaCandidate(
        beta=float(beta),
        theta=tr.best_theta,
        val_loss=tr.best_loss,
        phase=phase,
        traces=traces,
        final_grad_norm=grad_norm,
        final_lambda=lam,
    )


def _beta_job(args):
    train, val, W, beta, cfg, tol, lam0, r_factor = args
    try:
        return _train_single_beta(train, val, W, beta, cfg, tol, lam0, r_factor)
    except CiloError as exc:
        log.warning("beta=%.6g skipped: %s", beta, exc)
        return BetaCandidate(float(beta), None, math.inf, "error", error=f"{type(exc).__name__}: {exc}")


def beta_grid_values(beta_grid, train: Dataset | None = None, W: Polyhedron | None = None) -> np.ndarray:
    """Expand ``(low, high, count)`` or an explicit sequence into grid values.

    With ``train`` and ``W`` given, values below the training ``beta_min`` are
    clamped up to it.
    """
    if isinstance(beta_grid, tuple) and len(beta_grid) == 3 and isinstance(beta_grid[2], (int, np.integer)):
        low, high, count = beta_grid
        if count < 1:
            raise EmptyGrid("beta grid needs at least one point")
        if train is not None and W is not None:
            bmin = beta_bounds(train, W).beta_min
            if low < bmin:
                log.warning("beta grid low %.6g below beta_min %.6g; clamped", low, bmin)
                low = bmin
                high = max(high, low)
        values = np.linspace(low, high, count) if count > 1 else np.array([float(low)])
    else:
        values = np.atleast_1d(np.asarray(beta_grid, dtype=float))
        if values.size == 0:
            raise EmptyGrid("beta grid is empty")
        if train is not None and W is not None:
            bmin = beta_bounds(train, W).beta_min
            values = np.maximum(values, bmin)
    return values


def train_cilo(
    train: Dataset,
    val: Dataset,
    W: Polyhedron,
    beta_grid,
    cfg: GDConfig | None = None,
    *,
    tol: float | None = None,
    warm_start: bool = False,
    r_factor: float = 3.0,
    workers: int = 1,
) -> TrainResult:
    """Line search over the budget with gradient descent on the smoothed loss.

    For each budget the iterate whose budgeted proximal point has the
    smallest validation target loss is kept; the best of those is returned.
    """
    cfg = cfg or GDConfig()
    betas = beta_grid_values(beta_grid, train, W)
    if warm_start or workers <= 1:
        cands = []
        lam0 = None
        for b in betas:
            c = _beta_job((train, val, W, b, cfg, tol, lam0, r_factor))
            cands.append(c)
            if warm_start and c.final_lambda is not None:
                lam0 = c.final_lambda
    else:
        jobs = [(train, val, W, b, cfg, tol, None, r_factor) for b in betas]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cands = list(pool.map(_beta_job, jobs))

    ok = [c for c in cands if c.theta is not None]
    if not ok:
        raise CiloError("every beta in the grid failed")
    best = min(ok, key=lambda c: c.val_loss)
    return TrainResult(best.theta, best.beta, best.traces.get("s_cilo", []), best.phase, cands)


def train_spo_plus(train: Dataset, W: Polyhedron, cfg: GDConfig | None = None) -> TrainResult:
    """Subgradient descent on the SPO+ loss with steps ``a / sqrt(t + 1)``.

    Returns the average of the second half of the iterates.
    """
    cfg = cfg or GDConfig()
    theta = np.zeros(train.m)
    avg = np.zeros(train.m)
    count = 0
    trace = []
    half = cfg.max_iters // 2
    for t in range(cfg.max_iters):
        rep = spo_plus_loss(theta, train, W)
        trace.append((t, rep.value, float(np.linalg.norm(rep.subgradient))))
        theta = theta - cfg.init_step / math.sqrt(t + 1) * rep.subgradient
        if t >= half:
            avg += theta
            count += 1
    final = avg / count if count else theta
    return TrainResult(final, None, trace, "spo_plus")


def train_slo(train: Dataset, cfg: GDConfig | None = None) -> TrainResult:
    """Least squares through the (lightly regularized) normal equations."""
    if isinstance(train.hypothesis, LinearHypothesis):
        # block-diagonal design: every output coordinate shares the Gram matrix
        phi = train.phi
        G, R = phi.T @ phi, phi.T @ train.C
    else:
        M = train.feature_matrices()
        G = np.einsum("nda,ndb->ab", M, M)
        R = np.einsum("nda,nd->a", M, train.C)
    q = G.shape[0]
    rho = 1e-8 * max(np.trace(G), 1.0) / q
    try:
        sol = np.linalg.solve(G + rho * np.eye(q), R)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("normal equations are singular") from exc
    theta = sol.T.ravel()
    loss = slo_loss(theta, train).value
    return TrainResult(theta, None, [(0, loss, 0.0)], "slo")
