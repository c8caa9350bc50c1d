import csv

import numpy as np
import pytest

from cilo.bench import (
    CSV_HEADER,
    PLOT_HEADER,
    BenchConfig,
    RunRecord,
    csv_digest,
    emit_plot_data,
    gen_instance,
    load_config,
    main,
    run_experiments,
    trial_seed,
)
from cilo.geometry import lp_minimize


def _write(path, text):
    path.write_text(text)
    return path


def test_config_parse(tmp_path):
    p = _write(tmp_path / "a.cfg", "# toy\nd = 4\nk=2\nj=1\ns_levels = 0, 1\nwarm_start = true\nupper_bound=5\n")
    cfg = load_config(p)
    assert (cfg.d, cfg.k, cfg.j, cfg.s_levels, cfg.warm_start, cfg.upper_bound) == (4, 2, 1, (0, 1), True, 5.0)


def test_config_rejects_unknown_and_invalid(tmp_path):
    with pytest.raises(ValueError, match="unknown key"):
        load_config(_write(tmp_path / "b.cfg", "d=4\nlearning_rate=3\n"))
    with pytest.raises(ValueError):
        BenchConfig(d=4, k=2, s_levels=(3,))
    with pytest.raises(ValueError):
        BenchConfig(d=2, j=3)


def test_default_j():
    assert BenchConfig().j == 5 and BenchConfig(d=7).j == 2


def test_instance_determinism_and_shape():
    cfg = BenchConfig()
    seed = trial_seed(0, 0, 3)
    a, b = gen_instance(cfg, seed), gen_instance(cfg, seed)
    assert a.train.m == 620 and a.theta_star.size == 620
    np.testing.assert_array_equal(a.train.C, b.train.C)
    np.testing.assert_array_equal(a.W.A, b.W.A)
    assert np.all((a.test.X >= 0) & (a.test.X <= 10))
    assert trial_seed(0, 0, 3) != trial_seed(0, 27, 3)


def test_truncated_instances_share_ground_truth():
    cfg = BenchConfig(d=4, k=3, j=1, s_levels=(0, 2))
    full, cut = gen_instance(cfg, 11, 0), gen_instance(cfg, 11, 2)
    np.testing.assert_array_equal(full.train.C, cut.train.C)
    assert cut.train.m == 4 * 5


def test_generated_polytopes_feasible():
    cfg = BenchConfig(d=6, k=2, s_levels=(0,))
    for t in range(10):
        inst = gen_instance(cfg, trial_seed(1, 0, t))
        assert inst.W.contains(lp_minimize(np.ones(6), inst.W).point)


def test_smoke_run(tmp_path):
    out = tmp_path / "r.csv"
    cfg = BenchConfig(d=4, k=2, j=1, n_val=20, n_test=20, s_levels=(0,), trials=1, beta_grid_count=3,
                      output_path=str(out), max_iters=30, spo_iters=50)
    recs = run_experiments(cfg)
    assert sorted(r.method for r in recs) == ["cilo", "slo", "spo_plus"]
    assert all(r.test_regret >= -1e-9 and r.wall_ms >= 0 for r in recs)
    rows = list(csv.reader(out.open()))
    assert rows[0] == CSV_HEADER and len(rows) == 4
    assert rows[1][3] == "cilo" and rows[2][4] == ""


def test_plot_quantiles(tmp_path):
    recs = [RunRecord(t, 0, 0, "slo", test_regret=float(t)) for t in range(5)]
    recs.append(RunRecord(9, 0, 0, "error"))
    rows = emit_plot_data(recs, tmp_path / "p.csv")
    assert rows == [[0, "slo", 0.0, 1.0, 2.0, 3.0, 4.0]]
    assert next(csv.reader((tmp_path / "p.csv").open())) == PLOT_HEADER


def test_cli_ex1_and_selftest(capsys):
    assert main(["ex1"]) == 0
    assert "FAIL" not in capsys.readouterr().out
    assert main(["selftest"]) == 0


def _toy_args(tmp_path, name):
    cfg = _write(tmp_path / f"{name}.cfg", "n_val=10\nn_test=10\nmax_iters=20\nspo_iters=30\n")
    return ["run", "--config", str(cfg), "--d", "4", "--k", "2", "--j", "1", "--n-train", "5", "--trials", "2",
            "--s-levels", "0,1", "--beta-grid", "2", "--seed", "3", "--out", str(tmp_path / f"{name}.csv")]


def test_cli_run_deterministic(tmp_path):
    assert main(_toy_args(tmp_path, "a")) == 0
    assert main(_toy_args(tmp_path, "b")) == 0
    assert csv_digest(tmp_path / "a.csv") == csv_digest(tmp_path / "b.csv")
    assert (tmp_path / "a_plot.csv").exists()
    rows = list(csv.DictReader((tmp_path / "a.csv").open()))
    assert len(rows) == 12
    assert [r["s"] for r in rows] == sorted(r["s"] for r in rows)


def test_cli_error_rows_exit_2(tmp_path):
    # no |N(0,1)| vector fits under this cap, so instance generation fails
    cfg = _write(tmp_path / "bad.cfg", "d=4\nk=2\nj=1\ntrials=1\ns_levels=0\nupper_bound=0.001\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "bad.csv")]) == 2
    rows = list(csv.DictReader((tmp_path / "bad.csv").open()))
    assert [r["method"] for r in rows] == ["error"]
