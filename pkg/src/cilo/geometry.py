"""Feasible polyhedron and the LP oracles built on it.

The feasible set is ``W = {w : A w = b, lower <= w <= upper}`` with finite
bounds.  All LPs are solved with a bounded-variable revised simplex.  The
solver is batched: many objectives over the same polyhedron are pivoted in
lockstep, each with its own basis, which is how every per-sample oracle in
the package calls it.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numba import njit

from .errors import (
    BudgetInfeasible,
    DimensionMismatch,
    DualUnbounded,
    InfeasiblePolyhedron,
    NumericalFailure,
)

FEAS_TOL = 1e-8
TIE_TOL = 1e-9
OPT_TOL = 1e-11
PIVOT_TOL = 1e-11
EXACT_RADIUS_MAX_DIM = 8


@dataclass(frozen=True)
class Basis:
    """Simplex basis: basic column indices and which nonbasics sit at upper.

    For a batch, ``basic`` has shape ``(n, j)`` and ``at_upper`` ``(n, d)``;
    for a single LP the leading axis is absent.
    """

    basic: np.ndarray
    at_upper: np.ndarray

    def batched(self, n: int) -> "Basis":
        if self.basic.ndim == 1:
            return Basis(np.tile(self.basic, (n, 1)), np.tile(self.at_upper, (n, 1)))
        if self.basic.shape[0] != n:
            raise DimensionMismatch(f"basis batch {self.basic.shape[0]} != {n}")
        return self

    def row(self, i: int) -> "Basis":
        return Basis(self.basic[i].copy(), self.at_upper[i].copy())


@dataclass(frozen=True)
class LPSolution:
    point: np.ndarray
    value: float
    is_unique: bool
    basis: Basis
    reduced_costs: np.ndarray


@dataclass(frozen=True)
class BatchLPSolution:
    points: np.ndarray  # (n, d)
    values: np.ndarray  # (n,)
    is_unique: np.ndarray  # (n,) bool
    basis: Basis
    reduced_costs: np.ndarray  # (n, d)

    def __getitem__(self, i: int) -> LPSolution:
        return LPSolution(
            self.points[i].copy(),
            float(self.values[i]),
            bool(self.is_unique[i]),
            self.basis.row(i),
            self.reduced_costs[i].copy(),
        )


@dataclass(frozen=True)
class BudgetSolution:
    """Result of the budget-constrained profile LP.

    ``witness`` is an ``(n, d)`` decision profile, ``gap`` is the certified
    primal minus dual value.  ``dual_y`` is ``inf`` when the budget equals
    the smallest achievable mean cost and the problem was solved
    lexicographically.
    """

    value: float
    dual_y: float
    witness: np.ndarray
    gap: float
    basis: Basis | None = None

    def __iter__(self):
        return iter((self.value, self.dual_y, self.witness))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class Polyhedron:
    """Bounded polyhedron ``{w : A w = b, lower <= w <= upper}``.

    Construction runs a phase-1 solve; redundant equality rows are dropped.
    Instances are immutable and safe to share between threads.
    """

    def __init__(self, A, b, lower, upper):
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        d = lower.size
        A = np.asarray(A, dtype=float)
        if A.size == 0:
            A = np.zeros((0, d))
        A = A.reshape(-1, d) if A.ndim != 2 else A
        b = np.asarray(b, dtype=float).ravel()
        if A.shape[1] != d or upper.size != d or b.size != A.shape[0]:
            raise DimensionMismatch("A, b, lower, upper have inconsistent shapes")
        if A.shape[0] > d:
            raise DimensionMismatch("more equality rows than variables")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise InfeasiblePolyhedron("all variable bounds must be finite")
        if np.any(lower > upper):
            raise InfeasiblePolyhedron("lower bound exceeds upper bound")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise DimensionMismatch("A and b must be finite")
        self.A_input = _readonly(A)
        self.b_input = _readonly(b)
        self.lower = _readonly(lower)
        self.upper = _readonly(upper)
        A_red, b_red, start = _phase_one(A, b, lower, upper)
        self.A = _readonly(A_red)
        self.b = _readonly(b_red)
        self._start = Basis(start.basic.copy(), start.at_upper.copy())
        self._start.basic.setflags(write=False)
        self._start.at_upper.setflags(write=False)

    @classmethod
    def _from_parts(cls, A, b, lower, upper, start: Basis) -> "Polyhedron":
        """Build without phase 1 from a basis known to be feasible."""
        self = cls.__new__(cls)
        self.A_input = _readonly(A)
        self.b_input = _readonly(b)
        self.A = self.A_input
        self.b = self.b_input
        self.lower = _readonly(lower)
        self.upper = _readonly(upper)
        self._start = Basis(np.array(start.basic, dtype=int), np.array(start.at_upper, dtype=bool))
        return self

    @classmethod
    def simplex(cls, d: int) -> "Polyhedron":
        """Probability simplex in R^d."""
        return cls(np.ones((1, d)), [1.0], np.zeros(d), np.ones(d))

    @classmethod
    def box(cls, lower, upper) -> "Polyhedron":
        lower = np.asarray(lower, dtype=float).ravel()
        return cls(np.zeros((0, lower.size)), [], lower, upper)

    @property
    def d(self) -> int:
        return self.lower.size

    @property
    def j(self) -> int:
        return self.A.shape[0]

    @property
    def start_basis(self) -> Basis:
        return self._start

    @cached_property
    def radius(self) -> float:
        return ball_radius(self)

    def contains(self, w, tol: float = FEAS_TOL) -> bool:
        w = np.asarray(w, dtype=float)
        if np.any(w < self.lower - tol) or np.any(w > self.upper + tol):
            return False
        return bool(np.all(np.abs(self.A_input @ w - self.b_input) <= tol * (1 + np.abs(self.b_input))))

    def __repr__(self) -> str:
        return f"Polyhedron(d={self.d}, j={self.j})"


# --------------------------------------------------------------------------
# bounded-variable revised simplex, batched over objectives


@njit(cache=True)
def _simplex_row(A, b, lower, upper, c, basic, at_upper, opt_tol, max_iter, x_out, red_out):
    """Pivot one objective to optimality in place; returns False on the iteration cap."""
    j, D = A.shape
    span = upper - lower
    bland_after = 5 * D
    degenerate = 0
    is_basic = np.zeros(D, dtype=np.bool_)
    xN = np.empty(D)
    B = np.empty((j, j))
    cb = np.empty(j)
    for _ in range(max_iter):
        is_basic[:] = False
        for r in range(j):
            is_basic[basic[r]] = True
        for i in range(D):
            xN[i] = 0.0 if is_basic[i] else (upper[i] if at_upper[i] else lower[i])
        for r in range(j):
            B[:, r] = A[:, basic[r]]
            cb[r] = c[basic[r]]
        xB = np.linalg.solve(B, b - A @ xN)
        y = np.linalg.solve(B.T.copy(), cb)
        red = c - A.T @ y
        q = -1
        best = 0.0
        bland = degenerate > bland_after
        for i in range(D):
            if is_basic[i]:
                red[i] = 0.0
                continue
            if span[i] <= 0.0:
                continue
            if at_upper[i]:
                v = red[i] if red[i] > opt_tol else 0.0
            else:
                v = -red[i] if red[i] < -opt_tol else 0.0
            if v > 0.0:
                if bland:
                    q = i
                    break
                if v > best:
                    best = v
                    q = i
        if q < 0:
            for i in range(D):
                x_out[i] = xN[i]
            for r in range(j):
                x_out[basic[r]] = xB[r]
            red_out[:] = red
            return True

        sigma = -1.0 if at_upper[q] else 1.0
        alpha = np.linalg.solve(B, A[:, q].copy())
        ratios = np.empty(j)
        tmin = np.inf
        for r in range(j):
            sa = sigma * alpha[r]
            k = basic[r]
            if sa > PIVOT_TOL:
                t = (xB[r] - lower[k]) / sa
            elif sa < -PIVOT_TOL:
                t = (upper[k] - xB[r]) / (-sa)
            else:
                t = np.inf
            t = max(t, 0.0)
            ratios[r] = t
            if t < tmin:
                tmin = t
        flip = span[q] < tmin - 1e-12 * (1.0 + tmin)
        step = span[q] if flip else tmin
        degenerate = degenerate + 1 if step <= 1e-12 else 0
        if flip:
            at_upper[q] = not at_upper[q]
            continue
        lim = tmin + 1e-12 * (1.0 + tmin)
        leave = -1
        for r in range(j):
            if ratios[r] > lim:
                continue
            if leave < 0:
                leave = r
            elif bland:
                if basic[r] < basic[leave]:
                    leave = r
            elif abs(alpha[r]) > abs(alpha[leave]):
                leave = r
        leaving = basic[leave]
        at_upper[leaving] = sigma * alpha[leave] < 0
        basic[leave] = q
        at_upper[q] = False
    return False


@njit(cache=True)
def _simplex_rows(A, b, lower, upper, C, basic, at_upper, opt_tol, max_iter, x_out, red_out):
    for i in range(C.shape[0]):
        if not _simplex_row(A, b, lower, upper, C[i], basic[i], at_upper[i], opt_tol[i], max_iter, x_out[i], red_out[i]):
            return i
    return -1


def _run_simplex(A, b, lower, upper, C, basic, at_upper, max_iter=None):
    """Pivot every row of ``C`` to optimality.

    Returns ``(basic, at_upper, x, reduced)``.  Dantzig pricing with
    lowest-index ties; a row switches to Bland's rule after ``5 * D``
    degenerate pivots.  Ratio-test ties prefer a pivot over a bound flip
    and then the largest pivot element.
    """
    C = np.ascontiguousarray(C, dtype=float)
    n, D = C.shape
    j = A.shape[0]
    basic = np.array(basic, dtype=np.int64, copy=True).reshape(n, j)
    at_upper = np.array(at_upper, dtype=bool, copy=True).reshape(n, D)
    scale = 1.0 + np.abs(C).max(axis=1) if D else np.ones(n)
    opt_tol = OPT_TOL * scale

    if j == 0:
        at_upper = np.where(C < -opt_tol[:, None], True, np.where(C > opt_tol[:, None], False, at_upper))
        x_out = np.where(at_upper, upper, lower)
        return basic, at_upper, x_out, C.copy()

    if max_iter is None:
        max_iter = 50 * (D + j) + 200
    x_out = np.empty((n, D))
    red_out = np.empty((n, D))
    A = np.ascontiguousarray(A, dtype=float)
    try:
        bad = _simplex_rows(
            A, np.ascontiguousarray(b, dtype=float), np.ascontiguousarray(lower, dtype=float),
            np.ascontiguousarray(upper, dtype=float), C, basic, at_upper, opt_tol, max_iter, x_out, red_out,
        )
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("singular basis encountered") from exc
    if bad >= 0:
        raise NumericalFailure("simplex iteration cap exceeded (cycling guard)")
    return basic, at_upper, x_out, red_out


def _phase_one(A, b, lower, upper):
    """Find a feasible basis; drop redundant equality rows."""
    j, d = A.shape
    if j == 0:
        return A.copy(), b.copy(), Basis(np.zeros(0, dtype=int), np.zeros(d, dtype=bool))
    r = b - A @ lower
    sgn = np.where(r >= 0, 1.0, -1.0)
    A1 = np.hstack([A, np.diag(sgn)])
    lo1 = np.concatenate([lower, np.zeros(j)])
    hi1 = np.concatenate([upper, np.abs(r) * 2.0 + 1.0])
    C1 = np.concatenate([np.zeros(d), np.ones(j)])[None, :]
    basic0 = np.arange(d, d + j)[None, :]
    up0 = np.zeros((1, d + j), dtype=bool)
    basic, at_upper, x, _ = _run_simplex(A1, b, lo1, hi1, C1, basic0, up0)
    basic, at_upper, x = basic[0], at_upper[0], x[0]
    infeas = x[d:].sum()
    if infeas > FEAS_TOL * (1.0 + np.abs(b).max()) * j:
        raise InfeasiblePolyhedron(f"phase 1 residual {infeas:.3e}")

    keep_rows = list(range(j))
    basic = list(basic)
    # drive artificial columns (all at level ~0) out of the basis
    while True:
        art_pos = [p for p, col in enumerate(basic) if col >= d]
        if not art_pos:
            break
        p = art_pos[0]
        Ar = A1[keep_rows]
        B = Ar[:, basic]
        row = np.linalg.solve(B.T, np.eye(len(basic))[p]) @ Ar[:, :d]
        nonbasic = np.array([c for c in range(d) if c not in basic], dtype=int)
        cand = nonbasic[np.abs(row[nonbasic]) > 1e-9] if nonbasic.size else nonbasic
        if cand.size:
            q = cand[np.argmax(np.abs(row[cand]))]
            basic[p] = int(q)
        else:
            # equality row is a combination of the others
            art_row = basic[p] - d
            keep_rows.remove(art_row)
            del basic[p]
    A_red = A[keep_rows]
    b_red = b[keep_rows]
    up = at_upper[:d].copy()
    up[basic] = False
    return A_red, b_red, Basis(np.array(basic, dtype=int), up)


# --------------------------------------------------------------------------
# public oracles


def lp_minimize_batch(objectives, W: Polyhedron, start: Basis | None = None) -> BatchLPSolution:
    """Minimize each row of ``objectives`` over ``W`` independently."""
    C = np.atleast_2d(np.asarray(objectives, dtype=float))
    n, d = C.shape
    if d != W.d:
        raise DimensionMismatch(f"objective length {d} != polyhedron dimension {W.d}")
    if not np.all(np.isfinite(C)):
        raise DimensionMismatch("objective must be finite")
    st = (start or W.start_basis).batched(n)
    basic, at_upper, x, red = _run_simplex(W.A, W.b, W.lower, W.upper, C, st.basic, st.at_upper)
    x = np.clip(x, W.lower, W.upper)
    scale = 1.0 + np.abs(C).max(axis=1)
    movable = (W.upper - W.lower) > 0
    nb = np.ones((n, d), dtype=bool)
    if W.j:
        nb[np.arange(n)[:, None], basic] = False
    tied = (np.abs(red) <= TIE_TOL * scale[:, None]) & nb & movable
    values = np.einsum("ij,ij->i", C, x)
    return BatchLPSolution(x, values, ~tied.any(axis=1), Basis(basic, at_upper), red)


def lp_minimize(objective, W: Polyhedron, start: Basis | None = None) -> LPSolution:
    """Vertex of ``W`` minimizing ``objective . w``."""
    c = np.asarray(objective, dtype=float).ravel()
    return lp_minimize_batch(c[None, :], W, start)[0]


def optimal_face(W: Polyhedron, sol: LPSolution) -> Polyhedron:
    """Optimal face of the LP that produced ``sol`` (near-ties kept free)."""
    red = sol.reduced_costs
    scale = 1.0 + np.abs(red).max() if red.size else 1.0
    nb = np.ones(W.d, dtype=bool)
    nb[sol.basis.basic] = False
    fix = nb & (np.abs(red) > TIE_TOL * scale)
    lower = W.lower.copy()
    upper = W.upper.copy()
    lower[fix] = sol.point[fix]
    upper[fix] = sol.point[fix]
    return Polyhedron._from_parts(W.A, W.b, lower, upper, sol.basis)


def optimal_face_worst_case(pred, true_cost, W: Polyhedron) -> float:
    """Largest true cost over the set of minimizers of ``pred . w``."""
    sol = lp_minimize(pred, W)
    face = optimal_face(W, sol)
    t = np.asarray(true_cost, dtype=float).ravel()
    return -lp_minimize(-t, face, sol.basis).value


def enumerate_vertices(W: Polyhedron, tol: float = 1e-9) -> np.ndarray:
    """All vertices by basis enumeration; intended for small ``d``."""
    d, j = W.d, W.j
    found = []
    for cols in itertools.combinations(range(d), j):
        cols = list(cols)
        B = W.A[:, cols]
        if j and abs(np.linalg.det(B)) < 1e-12:
            continue
        rest = [c for c in range(d) if c not in cols]
        for mask in itertools.product((False, True), repeat=len(rest)):
            x = np.zeros(d)
            for c, up in zip(rest, mask):
                x[c] = W.upper[c] if up else W.lower[c]
            if j:
                xb = np.linalg.solve(B, W.b - W.A @ x)
                if np.any(xb < W.lower[cols] - tol) or np.any(xb > W.upper[cols] + tol):
                    continue
                x[cols] = xb
            found.append(x)
    if not found:
        return np.zeros((0, d))
    V = np.round(np.array(found), 10)
    return np.unique(V, axis=0)


def ball_radius(W: Polyhedron) -> float:
    """Upper bound on the largest Euclidean norm over ``W``."""
    if W.d <= EXACT_RADIUS_MAX_DIM:
        V = enumerate_vertices(W)
        if len(V):
            return float(np.linalg.norm(V, axis=1).max())
    return float(np.linalg.norm(np.maximum(np.abs(W.lower), np.abs(W.upper))))


# --------------------------------------------------------------------------
# budget-constrained profile LP


def _profile_lexicographic(pred, true, W):
    """Min mean pred cost over profiles where every w_i is true-cost optimal."""
    n = pred.shape[0]
    first = lp_minimize_batch(true, W)
    out = np.empty_like(pred)
    for i in range(n):
        face = optimal_face(W, first[i])
        out[i] = lp_minimize(pred[i], face, first.basis.row(i)).point
    return out


def lp_minimize_budget(
    pred_costs,
    true_costs,
    beta: float,
    W: Polyhedron,
    *,
    beta_min: float | None = None,
    start: Basis | None = None,
    max_pieces: int = 500,
    y_hint: float | None = None,
    true_points: np.ndarray | None = None,
) -> BudgetSolution:
    """Minimize mean ``pred_i . w_i`` subject to mean ``true_i . w_i <= beta``.

    Solved through the scalar Lagrangian dual
    ``y -> mean_i min_w (pred_i + y true_i) . w - y beta``, which is concave
    and piecewise linear.  The maximizer is located by intersecting the
    supporting lines of the current bracket ends until no new piece
    appears; the primal witness mixes the two bracketing profiles so the
    budget holds with equality.  ``y_hint`` (a multiplier from a nearby
    solve) seeds the bracket; ``true_points`` are cached minimizers of the
    true costs.
    """
    P = np.atleast_2d(np.asarray(pred_costs, dtype=float))
    T = np.atleast_2d(np.asarray(true_costs, dtype=float))
    if P.shape != T.shape or P.shape[1] != W.d:
        raise DimensionMismatch("pred_costs and true_costs must both be (n, d)")
    n = P.shape[0]
    beta = float(beta)
    if true_points is None or beta_min is None:
        best_true = lp_minimize_batch(T, W)
        true_points = best_true.points
        b_min = float(best_true.values.mean())
    else:
        b_min = float(beta_min)
    feas = 1e-9 * (1.0 + abs(beta))
    if beta < b_min - feas:
        raise BudgetInfeasible(f"beta={beta:.6g} below beta_min={b_min:.6g}")

    def evaluate(y, basis):
        sol = lp_minimize_batch(P + y * T, W, basis)
        a = float(np.einsum("ij,ij->", P, sol.points)) / n
        s = float(np.einsum("ij,ij->", T, sol.points)) / n - beta
        return a, s, sol.points, sol.basis

    def done(e, y):
        return BudgetSolution(e[0], y, e[2], max(-y * e[1], 0.0), e[3])

    if beta - b_min <= feas:
        e0 = evaluate(0.0, start)
        if e0[1] <= feas:
            return done(e0, 0.0)
        prof = _profile_lexicographic(P, T, W)
        value = float(np.einsum("ij,ij->", P, prof)) / n
        return BudgetSolution(value, math.inf, prof, 0.0, None)

    lo = hi = None
    if y_hint is not None and math.isfinite(y_hint) and y_hint > 0:
        # expand a bracket geometrically around the previous multiplier
        e = evaluate(y_hint, start)
        if abs(e[1]) <= feas:
            return done(e, y_hint)
        step = 1e-3 * y_hint
        y = y_hint
        if e[1] > 0:
            lo, y_lo = e, y_hint
            while hi is None:
                y = y_lo + step
                e = evaluate(y, lo[3])
                if e[1] > feas:
                    lo, y_lo = e, y
                    step *= 4.0
                    if step > 1e300:
                        raise DualUnbounded("could not bracket the dual maximizer")
                else:
                    hi, y_hi = e, y
        else:
            hi, y_hi = e, y_hint
            while lo is None:
                y = max(y_hi - step, 0.0)
                e = evaluate(y, hi[3])
                if e[1] > feas:
                    lo, y_lo = e, y
                elif y == 0.0:
                    return done(e, 0.0)
                else:
                    hi, y_hi = e, y
                    step *= 4.0
        if abs(hi[1]) <= feas:
            return done(hi, y_hi)
    else:
        e0 = evaluate(0.0, start)
        if e0[1] <= feas:
            return done(e0, 0.0)
        # multiplier bound: y* <= (mean pred.w(true) - mean min pred.w) / (beta - beta_min)
        numer = float(np.einsum("ij,ij->", P, true_points)) / n - e0[0]
        y_hi = max(numer, 0.0) / (beta - b_min) + 1.0
        hi = evaluate(y_hi, e0[3])
        doublings = 0
        while hi[1] > feas:
            doublings += 1
            if doublings > 60:
                raise DualUnbounded("could not bracket the dual maximizer")
            y_hi *= 2.0
            hi = evaluate(y_hi, hi[3])
        lo, y_lo = e0, 0.0

    for _ in range(max_pieces):
        a_lo, s_lo = lo[0], lo[1]
        a_hi, s_hi = hi[0], hi[1]
        y_x = (a_hi - a_lo) / (s_lo - s_hi)
        y_x = min(max(y_x, y_lo), y_hi)
        line = a_lo + y_x * s_lo
        a, s, p, bas = evaluate(y_x, lo[3])
        dual = a + y_x * s
        tol = 1e-10 * (1.0 + abs(line) + y_x * (abs(s_lo) + abs(s_hi)))
        if abs(s) <= feas:
            gap = a - dual
            return BudgetSolution(a, y_x, p, max(gap, 0.0), bas)
        if dual >= line - tol:
            t = -s_hi / (s_lo - s_hi)
            witness = t * lo[2] + (1.0 - t) * hi[2]
            value = t * a_lo + (1.0 - t) * a_hi
            gap = value - dual
            if gap > 1e-6 * (1.0 + abs(value)):
                raise NumericalFailure(f"budget LP duality gap {gap:.3e}")
            return BudgetSolution(value, y_x, witness, max(gap, 0.0), bas)
        if s > 0:
            lo, y_lo = (a, s, p, bas), y_x
        else:
            hi, y_hi = (a, s, p, bas), y_x
    raise NumericalFailure("dual piece search did not terminate")
