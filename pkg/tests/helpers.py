import numpy as np

from cilo.geometry import Polyhedron
from cilo.model import Dataset, FeatureMap, LinearHypothesis


def random_polyhedron(rng, d, j=None, upper=1.0):
    """Random nonempty ``{A w = b, 0 <= w <= upper}`` built around an interior point."""
    if j is None:
        j = int(rng.integers(0, d))
    w = rng.uniform(0.1, 0.9, d) * upper
    A = rng.standard_normal((j, d))
    return Polyhedron(A, A @ w, np.zeros(d), np.full(d, upper))


def random_dataset(rng, d, n, k=1, removed=0, spread=2.0):
    hyp = LinearHypothesis(d, FeatureMap(k, removed))
    X = rng.uniform(0.1, spread, (n, k))
    C = rng.standard_normal((n, d))
    return Dataset(X, C, hyp)


def random_instance(seed, d_range=(2, 5), n_range=(1, 5), simplex=False):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(*d_range))
    n = int(rng.integers(*n_range))
    W = Polyhedron.simplex(d) if simplex else random_polyhedron(rng, d)
    return rng, W, random_dataset(rng, d, n)


def direct_prox_envelope(lam, data, W, beta=None, iters=10_000):
    """Moreau envelope of the support function of ``-V`` (or ``-Vb``) at ``lam``.

    Solved by subgradient descent on ``theta -> g(theta) + |lam - theta|^2 / 2``
    with steps ``1/t`` and linearly weighted averaging; independent of any
    projection code.
    """
    from cilo.geometry import lp_minimize_batch, lp_minimize_budget
    from cilo.losses import beta_bounds

    lam = np.asarray(lam, dtype=float)
    bmin = beta_bounds(data, W).beta_min

    def g(theta):
        P = data.predict_all(theta)
        if beta is None:
            sol = lp_minimize_batch(P, W)
            return -sol.values.mean(), -data.adjoint(sol.points)
        res = lp_minimize_budget(P, data.C, beta, W, beta_min=bmin)
        return -res.value, -data.adjoint(res.witness)

    def total(theta):
        v, _ = g(theta)
        return v + 0.5 * float((lam - theta) @ (lam - theta))

    theta = lam.copy()
    avg, wsum = np.zeros_like(lam), 0.0
    best = total(theta)
    for t in range(1, iters + 1):
        v, sub = g(theta)
        best = min(best, v + 0.5 * float((lam - theta) @ (lam - theta)))
        theta = theta - (sub + theta - lam) / t
        avg += t * theta
        wsum += t
    return min(best, total(avg / wsum))
