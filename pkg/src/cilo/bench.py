"""Synthetic misspecification sweep: instance generator, runner, CSV output and CLI."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CiloError, FeasibilityResampleExceeded
from .geometry import Polyhedron
from .losses import beta_bounds, cilo_loss, regret, slo_loss, spo_plus_loss, target_loss
from .model import Dataset, FeatureMap, LinearHypothesis
from .optimize import GDConfig, train_cilo, train_slo, train_spo_plus
from .smoothing import landscape_scale

log = logging.getLogger(__name__)

CSV_HEADER = ["trial_id", "seed", "s", "method", "beta_used", "train_loss", "test_regret", "wall_ms"]
PLOT_HEADER = ["s", "method", "min", "q1", "median", "q3", "max"]
METHODS = ("cilo", "slo", "spo_plus")
MAX_RESAMPLE = 100
X_HIGH = 10.0


@dataclass
class BenchConfig:
    d: int = 20
    k: int = 5
    j: int | None = None  # defaults to ceil(d / 4)
    n_train: int = 20
    n_val: int = 200
    n_test: int = 200
    s_levels: tuple = (0, 20, 25, 27)
    trials: int = 16
    beta_grid_count: int = 24
    seed: int = 0
    upper_bound: float = 10.0
    output_path: str = "results.csv"
    plot_path: str = ""  # defaults to <output stem>_plot.csv
    max_iters: int = 200
    spo_iters: int = 500
    spo_step: float = 0.0  # 0 picks 1 / (B_W * B_Phi) per instance
    warm_start: bool = False
    select_on_test: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.j is None:
            self.j = math.ceil(self.d / 4)
        self.s_levels = tuple(int(s) for s in self.s_levels)
        p = (1 << self.k) - 1
        if not self.d >= self.j >= 1:
            raise ValueError(f"need d >= j >= 1, got d={self.d}, j={self.j}")
        if not 1 <= self.k <= 20:
            raise ValueError("k must lie in [1, 20]")
        if not self.s_levels or any(not 0 <= s < p for s in self.s_levels):
            raise ValueError(f"s levels must lie in [0, {p})")
        if self.trials < 1 or self.beta_grid_count < 1:
            raise ValueError("trials and beta_grid_count must be >= 1")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ValueError("sample counts must be >= 1")
        if self.upper_bound <= 0:
            raise ValueError("upper_bound must be positive")

    @property
    def plot_file(self) -> Path:
        if self.plot_path:
            return Path(self.plot_path)
        out = Path(self.output_path)
        return out.with_name(out.stem + "_plot.csv")


def _parse_value(ftype, raw: str):
    raw = raw.strip()
    t = str(ftype)
    if "tuple" in t:
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if "bool" in t:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if "int" in t:
        return None if raw.lower() in ("", "none") else int(raw)
    if "float" in t:
        return float(raw)
    return raw


def load_config(path) -> BenchConfig:
    """Read flat ``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in dataclasses.fields(BenchConfig)}
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(types[key], raw)
    return BenchConfig(**values)


@dataclass
class Instance:
    W: Polyhedron
    theta_star: np.ndarray
    train: Dataset
    val: Dataset
    test: Dataset


def trial_seed(seed: int, s: int, trial_id: int) -> int:
    """Per-trial seed derived from ``(seed, s, trial_id)``."""
    return int(np.random.SeedSequence([seed, s, trial_id]).generate_state(1, dtype=np.uint64)[0] >> 1)


def _truncated_normal(rng, shape, high=X_HIGH):
    out = rng.standard_normal(shape)
    bad = (out < 0) | (out > high)
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = (out < 0) | (out > high)
    return out


def gen_instance(cfg: BenchConfig, seed: int, s: int = 0) -> Instance:
    """Random polytope, ground truth over the full features, and three splits.

    Costs are noiseless; the returned datasets use the feature map with ``s``
    features removed.
    """
    rng = np.random.default_rng(seed)
    d, k, j = cfg.d, cfg.k, cfg.j
    A = rng.standard_normal((j, d))
    for _ in range(MAX_RESAMPLE):
        w = np.abs(rng.standard_normal(d))
        if w.max() <= cfg.upper_bound:
            break
    else:
        raise FeasibilityResampleExceeded(f"no feasible point within {MAX_RESAMPLE} draws")
    W = Polyhedron(A, A @ w, np.zeros(d), np.full(d, cfg.upper_bound))

    full = LinearHypothesis(d, FeatureMap(k))
    hyp = LinearHypothesis(d, FeatureMap(k, s))
    theta_star = rng.standard_normal(full.m)

    def split(n):
        X = _truncated_normal(rng, (n, k))
        C = Dataset(X, np.zeros((n, d)), full).predict_all(theta_star)
        return Dataset(X, C, hyp)

    return Instance(W, theta_star, split(cfg.n_train), split(cfg.n_val), split(cfg.n_test))


@dataclass
class RunRecord:
    trial_id: int
    seed: int
    s: int
    method: str
    beta_used: float | None = None
    train_loss: float = math.nan
    test_regret: float = math.nan
    wall_ms: float = 0.0
    note: str = field(default="", compare=False)

    def row(self) -> list[str]:
        def num(v):
            return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))

        return [
            str(self.trial_id),
            str(self.seed),
            str(self.s),
            self.method,
            num(self.beta_used),
            num(self.train_loss),
            num(self.test_regret),
            f"{self.wall_ms:.3f}",
        ]


def run_trial(cfg: BenchConfig, s: int, trial_id: int) -> list[RunRecord]:
    seed = trial_seed(cfg.seed, s, trial_id)
    try:
        inst = gen_instance(cfg, seed, s)
        train, W = inst.train, inst.W
        select = inst.test if cfg.select_on_test else inst.val
        out = []

        t0 = time.perf_counter()
        slo = train_slo(train)
        out.append(
            RunRecord(
                trial_id, seed, s, "slo", None, slo_loss(slo.theta, train).value, regret(slo.theta, inst.test, W),
                1e3 * (time.perf_counter() - t0),
            )
        )

        t0 = time.perf_counter()
        step = cfg.spo_step or 1.0 / landscape_scale(train, W)
        spo = train_spo_plus(train, W, GDConfig(max_iters=cfg.spo_iters, init_step=step))
        out.append(
            RunRecord(
                trial_id, seed, s, "spo_plus", None, spo_plus_loss(spo.theta, train, W).value,
                regret(spo.theta, inst.test, W), 1e3 * (time.perf_counter() - t0),
            )
        )

        t0 = time.perf_counter()
        lo = beta_bounds(train, W).beta_min
        hi = max(target_loss(spo.theta, train, W).value, lo)
        res = train_cilo(
            train, select, W, (lo, hi, cfg.beta_grid_count), GDConfig(max_iters=cfg.max_iters),
            warm_start=cfg.warm_start,
        )
        out.append(
            RunRecord(
                trial_id, seed, s, "cilo", res.beta_used, cilo_loss(res.theta, res.beta_used, train, W).value,
                regret(res.theta, inst.test, W), 1e3 * (time.perf_counter() - t0),
            )
        )
        return out
    except CiloError as exc:
        log.error("trial %d at s=%d failed: %s", trial_id, s, exc)
        return [RunRecord(trial_id, seed, s, "error", note=f"{type(exc).__name__}: {exc}")]


def _trial_job(args):
    return run_trial(*args)


def sort_records(records):
    return sorted(records, key=lambda r: (r.s, r.trial_id, r.method))


def write_csv(records, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in sort_records(records):
            w.writerow(r.row())


def csv_digest(path) -> str:
    """SHA-256 of the CSV with the timing column removed."""
    h = hashlib.sha256()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            h.update((",".join(row[:-1]) + "\n").encode())
    return h.hexdigest()


def run_experiments(cfg: BenchConfig, progress=None) -> list[RunRecord]:
    jobs = [(cfg, s, t) for s in cfg.s_levels for t in range(cfg.trials)]
    records = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for recs in pool.map(_trial_job, jobs):
                records.extend(recs)
                if progress:
                    progress(recs)
    else:
        for job in jobs:
            recs = _trial_job(job)
            records.extend(recs)
            if progress:
                progress(recs)
    records = sort_records(records)
    if cfg.output_path:
        write_csv(records, cfg.output_path)
    return records


def emit_plot_data(records, path) -> list[list]:
    """Per-(s, method) five-number summaries of test regret."""
    cells: dict[tuple[int, str], list[float]] = {}
    for r in records:
        if r.method == "error":
            continue
        cells.setdefault((r.s, r.method), []).append(r.test_regret)
    rows = []
    for (s, method), vals in sorted(cells.items()):
        qs = np.percentile(np.asarray(vals, dtype=float), [0, 25, 50, 75, 100])
        rows.append([s, method, *(float(q) for q in qs)])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_HEADER)
        for row in rows:
            w.writerow([str(row[0]), row[1], *(repr(v) for v in row[2:])])
    return rows


# ---------------------------------------------------------------- CLI


def _check(lines, name, ok, detail=""):
    lines.append((name, bool(ok)))
    print(f"{'PASS' if ok else 'FAIL'}  {name}{'  ' + detail if detail else ''}")


def cmd_ex1() -> int:
    from .fixtures import ex1

    ex = ex1()
    W, D, S, b = ex.W, ex.data, ex.span_data, ex.beta
    res = []
    c1, c2 = cilo_loss(ex.theta1, b, D, W).value, cilo_loss(ex.theta2, b, D, W).value
    _check(res, "cilo_loss(theta1)=9, cilo_loss(theta2)=0", abs(c1 - 9) < 1e-9 and abs(c2) < 1e-9, f"{c1:.12g} {c2:.12g}")
    from .geometry import lp_minimize

    w1, w2 = lp_minimize(ex.theta1, W).point, lp_minimize(ex.theta2, W).point
    _check(res, "decisions (0,0,1) and (1,0,0)", np.array_equal(w1, [0, 0, 1]) and np.array_equal(w2, [1, 0, 0]))
    t1, t2 = target_loss(ex.theta1, D, W).value, target_loss(ex.theta2, D, W).value
    _check(res, "target losses 2 and 1", abs(t1 - 2) < 1e-12 and abs(t2 - 1) < 1e-12)
    s1, s2 = spo_plus_loss(ex.theta1, D, W).value, spo_plus_loss(ex.theta2, D, W).value
    _check(res, "SPO+ losses 20 and 1", abs(s1 - 20) < 1e-9 and abs(s2 - 1) < 1e-9, f"{s1:.12g} {s2:.12g}")
    sq = float(np.sum((D.C[0] - ex.theta1) ** 2))
    _check(res, "squared prediction error of theta1 is 82.81", abs(sq - 82.81) < 1e-9)
    cil = train_cilo(S, S, W, [b])
    r_cilo = regret(cil.theta, S, W)
    _check(res, "trained CILO regret <= 1e-3 on the span fixture", r_cilo <= 1e-3, f"{r_cilo:.3g}")
    r_slo = regret(train_slo(S).theta, S, W)
    _check(res, "trained SLO regret >= 0.9 on the span fixture", r_slo >= 0.9, f"{r_slo:.3g}")
    return 0 if all(ok for _, ok in res) else 1


def cmd_selftest(seed: int = 0) -> int:
    """Quick invariant probes on small random instances."""
    from .geometry import enumerate_vertices, lp_minimize
    from .smoothing import SmoothedCilo

    rng = np.random.default_rng(seed)
    res = []
    bad = 0
    for _ in range(20):
        d = int(rng.integers(2, 6))
        j = int(rng.integers(0, d))
        w = rng.uniform(0, 1, d)
        A = rng.standard_normal((j, d))
        W = Polyhedron(A, A @ w, np.zeros(d), np.ones(d))
        c = rng.standard_normal(d)
        V = enumerate_vertices(W)
        bad += abs(lp_minimize(c, W).value - (V @ c).min()) > 1e-8
    _check(res, "simplex matches vertex enumeration", bad == 0, f"{bad} mismatches")

    worst_fd, worst_neg = 0.0, 0.0
    for _ in range(10):
        d, n = int(rng.integers(2, 5)), int(rng.integers(1, 5))
        W = Polyhedron.simplex(d)
        D = Dataset(rng.uniform(0, 2, (n, 1)), rng.standard_normal((n, d)), LinearHypothesis(d, FeatureMap(1)))
        bb = beta_bounds(D, W)
        beta = rng.uniform(bb.beta_min, bb.beta_max)
        sm = SmoothedCilo(D, W, beta, tol=1e-12)
        lam = rng.standard_normal(D.m)
        v, g = sm.s_cilo(lam)
        e = rng.standard_normal(D.m)
        e /= np.linalg.norm(e)
        h = 1e-5
        fd = (sm.s_cilo(lam + h * e)[0] - sm.s_cilo(lam - h * e)[0]) / (2 * h)
        worst_fd = max(worst_fd, abs(fd - g @ e) / max(1.0, abs(fd)))
        worst_neg = min(worst_neg, v, cilo_loss(lam, beta, D, W).value)
    _check(res, "s-CILO directional derivatives match finite differences", worst_fd <= 1e-3, f"{worst_fd:.2e}")
    _check(res, "losses nonnegative", worst_neg >= -1e-6, f"{worst_neg:.2e}")
    return 0 if all(ok for _, ok in res) else 1


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bench", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    run = sub.add_parser("run", help="run the misspecification sweep")
    run.add_argument("--config", type=Path)
    run.add_argument("--d", type=int)
    run.add_argument("--k", type=int)
    run.add_argument("--j", type=int)
    run.add_argument("--n-train", type=int)
    run.add_argument("--trials", type=int)
    run.add_argument("--s-levels", help="comma separated, e.g. 0,27")
    run.add_argument("--beta-grid", type=int, help="number of beta values")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output CSV path")
    sub.add_parser("ex1", help="check the three-variable simplex example")
    st = sub.add_parser("selftest", help="invariant probes on random toy instances")
    st.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.cmd == "ex1":
        return cmd_ex1()
    if args.cmd == "selftest":
        return cmd_selftest(args.seed)

    base = load_config(args.config) if args.config else BenchConfig()
    over = {
        "d": args.d,
        "k": args.k,
        "j": args.j,
        "n_train": args.n_train,
        "trials": args.trials,
        "beta_grid_count": args.beta_grid,
        "seed": args.seed,
        "output_path": args.out,
    }
    if args.s_levels is not None:
        over["s_levels"] = _parse_value("tuple", args.s_levels)
    over = {k: v for k, v in over.items() if v is not None}
    if "d" in over and "j" not in over and args.config is None:
        over["j"] = None
    cfg = BenchConfig(**{**dataclasses.asdict(base), **over})

    def progress(recs):
        r = recs[0]
        print(f"s={r.s} trial={r.trial_id} " + " ".join(f"{x.method}={x.test_regret:.4g}" for x in recs), flush=True)

    records = run_experiments(cfg, progress)
    emit_plot_data(records, cfg.plot_file)
    print(f"wrote {cfg.output_path} and {cfg.plot_file}; digest {csv_digest(cfg.output_path)}")
    return 2 if any(r.method == "error" for r in records) else 0


if __name__ == "__main__":
    sys.exit(main())
