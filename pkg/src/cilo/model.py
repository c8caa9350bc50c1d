"""Linear hypothesis set built from subset-product features.

A cost predictor is ``c_hat(x) = Phi(x) theta`` where ``Phi(x)`` is block
diagonal with ``d`` copies of the (possibly truncated) feature row
``phi(x)^T``.  Parameters are stored row-major: ``theta.reshape(d, q)[r]``
is the coefficient block of output coordinate ``r``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch

MAX_CONTEXT_DIM = 20


def _check_k(k: int) -> None:
    if not 1 <= k <= MAX_CONTEXT_DIM:
        raise DimensionMismatch(f"context dimension k={k} outside [1, {MAX_CONTEXT_DIM}]")


def subset_product_features(x) -> np.ndarray:
    """Products over all nonempty subsets of ``x``, in binary-counter order.

    Subset ``y = 1 .. 2^k - 1`` contains ``x[i]`` when bit ``i`` of ``y`` is
    set, so ``(x1, x2) -> (x1, x2, x1*x2)``.  Accepts a vector or an
    ``(n, k)`` array.
    """
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    k = X.shape[1]
    _check_k(k)
    F = np.ones((X.shape[0], 1 << k))
    for y in range(1, 1 << k):
        low = y & -y
        F[:, y] = F[:, y ^ low] * X[:, low.bit_length() - 1]
    F = F[:, 1:]
    return F[0] if single else F


@dataclass(frozen=True)
class FeatureMap:
    """Subset-product features with the ``removed`` highest-order ones dropped.

    Features are ranked by subset size, then by binary-counter index; the
    last ``removed`` in that ranking are truncated.  Kept features are
    emitted in binary-counter order, so ``removed=0`` is the full map.
    """

    k: int
    removed: int = 0

    def __post_init__(self):
        _check_k(self.k)
        if not 0 <= self.removed < self.p:
            raise DimensionMismatch(f"removed={self.removed} must lie in [0, {self.p})")

    @property
    def p(self) -> int:
        return (1 << self.k) - 1

    @property
    def q(self) -> int:
        """Number of emitted features."""
        return self.p - self.removed

    @cached_property
    def kept(self) -> np.ndarray:
        ys = np.arange(1, self.p + 1)
        sizes = np.array([bin(y).count("1") for y in ys])
        rank = np.lexsort((ys, sizes))
        return np.sort(rank[: self.q])

    def __call__(self, x) -> np.ndarray:
        X = np.asarray(x, dtype=float)
        if X.shape[-1] != self.k:
            raise DimensionMismatch(f"context has length {X.shape[-1]}, expected {self.k}")
        return subset_product_features(X)[..., self.kept]


@dataclass(frozen=True)
class LinearHypothesis:
    d: int
    feature_map: FeatureMap

    @property
    def q(self) -> int:
        return self.feature_map.q

    @property
    def m(self) -> int:
        return self.d * self.q

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.m:
            raise DimensionMismatch(f"theta has length {theta.size}, expected {self.m}")
        return theta

    def feature_matrix(self, x) -> np.ndarray:
        """Dense ``d x m`` block-diagonal matrix ``Phi(x)``."""
        phi = self.feature_map(x)
        if phi.ndim != 1:
            raise DimensionMismatch("feature_matrix takes a single context vector")
        return np.kron(np.eye(self.d), phi[None, :])

    def predict(self, theta, x) -> np.ndarray:
        theta = self._check_theta(theta)
        return theta.reshape(self.d, self.q) @ self.feature_map(x)

    # batched helpers used by Dataset; ``phi`` holds one feature row per sample
    def features(self, X) -> np.ndarray:
        return self.feature_map(X)

    def predict_rows(self, phi, theta) -> np.ndarray:
        return phi @ theta.reshape(self.d, -1).T

    def adjoint_rows(self, phi, P, weights) -> np.ndarray:
        return (P.T @ (phi * weights[:, None])).ravel()

    def spectral_bound(self, phi) -> float:
        return float(np.linalg.norm(phi, axis=1).max())

    def matrices(self, phi) -> np.ndarray:
        eye = np.eye(self.d)
        return np.stack([np.kron(eye, f[None, :]) for f in phi])


@dataclass(frozen=True, eq=False)
class FixedBasisHypothesis:
    """Context-free predictions ``c_hat = B theta`` for a fixed ``(d, m)`` basis.

    Small hand-built fixtures use this to restrict predictions to a span.
    """

    basis: np.ndarray
    k: int = 1

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.basis, dtype=float))
        B.setflags(write=False)
        object.__setattr__(self, "basis", B)

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    @property
    def m(self) -> int:
        return self.basis.shape[1]

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.m:
            raise DimensionMismatch(f"theta has length {theta.size}, expected {self.m}")
        return theta

    def feature_matrix(self, x) -> np.ndarray:
        return self.basis.copy()

    def predict(self, theta, x) -> np.ndarray:
        return self.basis @ self._check_theta(theta)

    def features(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        if X.shape[1] != self.k:
            raise DimensionMismatch(f"context has length {X.shape[1]}, expected {self.k}")
        return np.ones((X.shape[0], 1))

    def predict_rows(self, phi, theta) -> np.ndarray:
        return np.tile(self.basis @ theta, (phi.shape[0], 1))

    def adjoint_rows(self, phi, P, weights) -> np.ndarray:
        return self.basis.T @ (weights @ P)

    def spectral_bound(self, phi) -> float:
        return float(np.linalg.norm(self.basis, 2))

    def matrices(self, phi) -> np.ndarray:
        return np.repeat(self.basis[None], phi.shape[0], axis=0)


def feature_matrix(x, hyp: LinearHypothesis) -> np.ndarray:
    return hyp.feature_matrix(x)


def predict(theta, x, hyp: LinearHypothesis) -> np.ndarray:
    return hyp.predict(theta, x)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples ``(x_i, c_i)`` with cached feature rows.

    ``X`` is ``(n, k)``, ``C`` is ``(n, d)``.  The empirical distribution is
    uniform over the rows.
    """

    X: np.ndarray
    C: np.ndarray
    hypothesis: LinearHypothesis | FixedBasisHypothesis
    phi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if X.shape[0] != C.shape[0] or X.shape[0] < 1:
            raise DimensionMismatch("X and C need the same positive number of rows")
        if C.shape[1] != self.hypothesis.d:
            raise DimensionMismatch(f"costs have length {C.shape[1]}, hypothesis expects {self.hypothesis.d}")
        if not np.all(np.isfinite(C)):
            raise DimensionMismatch("costs must be finite")
        phi = self.hypothesis.features(X)
        for a in (X, C, phi):
            a.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "phi", phi)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.C.shape[1]

    @property
    def m(self) -> int:
        return self.hypothesis.m

    @property
    def cost_bound(self) -> float:
        """Largest observed cost norm."""
        return float(np.linalg.norm(self.C, axis=1).max())

    def check_theta(self, theta) -> np.ndarray:
        return self.hypothesis._check_theta(theta)

    def predict_all(self, theta) -> np.ndarray:
        """Predicted costs for every sample, ``(n, d)``."""
        return self.hypothesis.predict_rows(self.phi, self.check_theta(theta))

    def adjoint(self, profile, weights=None) -> np.ndarray:
        """``sum_i weights_i Phi(x_i)^T w_i``; uniform ``1/n`` weights by default."""
        P = np.asarray(profile, dtype=float).reshape(self.n, self.d)
        wts = np.full(self.n, 1.0 / self.n) if weights is None else np.asarray(weights, dtype=float)
        return self.hypothesis.adjoint_rows(self.phi, P, wts)

    def feature_matrices(self) -> np.ndarray:
        """Dense ``(n, d, m)`` stack of ``Phi(x_i)``; meant for checks."""
        return self.hypothesis.matrices(self.phi)

    def with_hypothesis(self, hypothesis) -> "Dataset":
        return Dataset(self.X, self.C, hypothesis)

    def to_csv(self, path) -> None:
        k, d = self.X.shape[1], self.d
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x_{i + 1}" for i in range(k)] + [f"c_{i + 1}" for i in range(d)])
            for x, c in zip(self.X, self.C):
                w.writerow([repr(float(v)) for v in (*x, *c)])

    @classmethod
    def from_csv(cls, path, hypothesis) -> "Dataset":
        with open(Path(path), newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        k = sum(h.startswith("x_") for h in header)
        d = sum(h.startswith("c_") for h in header)
        expected = [f"x_{i + 1}" for i in range(k)] + [f"c_{i + 1}" for i in range(d)]
        if header != expected:
            raise DimensionMismatch(f"unexpected CSV header {header}")
        data = np.array([[float(v) for v in r] for r in body if r])
        return cls(data[:, :k], data[:, k:], hypothesis)


def feature_spectral_bound(data: Dataset) -> float:
    """Max over samples of the largest singular value of ``Phi(x_i)``.

    For the block-diagonal map this is the largest feature-row norm.
    """
    return data.hypothesis.spectral_bound(data.phi)
