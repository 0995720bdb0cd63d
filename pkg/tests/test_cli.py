import csv
import json

import numpy as np
import pytest

from dtncache import cli


def _run(tmp_path, command, config=None, *extra):
    out = tmp_path / f"{command}.csv"
    argv = [command, "--out", str(out), *extra]
    if config is not None:
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config))
        argv += ["--config", str(path)]
    code = cli.main(argv)
    rows = list(csv.DictReader(out.open())) if out.exists() else None
    return code, rows


def test_optimize_uniform(tmp_path):
    cfg = {"distribution": {"type": "raw", "probs": [1, 1, 1, 1]}, "network": {"cache_capacity": 2}}
    code, rows = _run(tmp_path, "optimize", cfg)
    assert code == 0
    assert [float(r["q"]) for r in rows] == pytest.approx([0.5] * 4, abs=1e-9)
    assert {r["scheme"] for r in rows} == {"optimal"}


def test_optimize_full_capacity(tmp_path):
    cfg = {"distribution": {"type": "zipf", "n": 5, "alpha": 0.7}, "network": {"cache_capacity": 5}}
    code, rows = _run(tmp_path, "optimize", cfg)
    assert code == 0
    assert [r["q"] for r in rows] == ["1"] * 5


def test_optimize_paper_scale(tmp_path):
    code, rows = _run(tmp_path, "optimize", None, "--paper-scale")
    assert code == 0
    assert len(rows) == 10_000
    assert sum(float(r["q"]) for r in rows) == pytest.approx(100, abs=1e-6)


def test_sweep_row_count(tmp_path):
    cfg = {"distribution": {"n": 100}, "network": {"n_users": 300}, "n_requests": 2000}
    code, rows = _run(tmp_path, "sweep", cfg)
    assert code == 0
    assert len(rows) == 4 * 11
    assert [r["scheme"] for r in rows[::11]] == ["random", "k_most_popular", "optimal", "pushing_algorithm"]


def test_sweep_at_zero(tmp_path):
    cfg = {
        "distribution": {"n": 100},
        "network": {"n_users": 300},
        "n_requests": 2000,
        "lambda_t_grid": [0],
        "schemes": ["k_most_popular", "optimal"],
    }
    code, rows = _run(tmp_path, "sweep", cfg)
    assert code == 0
    assert rows[0]["analytic_miss"] == rows[1]["analytic_miss"]


def test_fig1_top_k_indicator(tmp_path):
    cfg = {"distribution": {"n": 20}, "network": {"cache_capacity": 3, "n_users": 50}, "lambda_t_grid": [0]}
    # lambda_user = 0 makes the optimum the top-K indicator, which pushing reproduces exactly.
    cfg["network"]["lambda_user"] = 0.0
    code, rows = _run(tmp_path, "fig1", cfg)
    assert code == 0
    expected = [1.0] * 3 + [0.0] * 17
    assert [float(r["q_optimal"]) for r in rows] == expected
    assert [float(r["q_empirical"]) for r in rows] == expected


def test_fig1_small_population(tmp_path, capsys):
    cfg = {"distribution": {"n": 50}, "network": {"cache_capacity": 4, "n_users": 10}}
    code, rows = _run(tmp_path, "fig1", cfg, "--seed", "3")
    assert code == 0
    assert len(rows) == 50
    assert sum(float(r["q_empirical"]) for r in rows) == pytest.approx(4)
    assert "tv_distance=" in capsys.readouterr().err


def test_duration_command(tmp_path):
    cfg = {"distribution": {"n": 50}, "duration": {"pareto_alpha": 2.0, "t0": 0.0}}
    code, rows = _run(tmp_path, "duration", cfg)
    assert code == 0
    assert all(float(r["prob_miss"]) == 0.0 for r in rows)
    cfg["duration"].update(t0=0.5, method="monte_carlo", n_samples=2000)
    code, rows = _run(tmp_path, "duration", cfg)
    assert code == 0
    assert {r["method"] for r in rows} == {"monte_carlo"}
    assert all(0 <= float(r["prob_miss"]) <= 1 for r in rows)


@pytest.mark.parametrize(
    "cfg",
    [
        {"distribution": {"n": 10}},
        {"distribution": {"n": 10}, "duration": {"t0": 1.0}},
        {"distribution": {"n": 10}, "duration": {"pareto_alpha": 2.0, "t0": 1.0, "method": "exact"}},
    ],
)
def test_duration_bad_block(tmp_path, cfg):
    code, _ = _run(tmp_path, "duration", cfg)
    assert code == 1


@pytest.mark.parametrize(
    "cfg",
    [
        {"lambda_t_grid": [2, 1]},
        {"lambda_t_grid": [-1, 1]},
        {"lambda_t_grid": []},
        {"schemes": ["lru"]},
        {"network": {"cache_capacity": 0}},
        {"network": {"speed": 3}},
        {"distribution": {"type": "pareto"}},
    ],
)
def test_bad_configs_exit_one(tmp_path, cfg):
    cfg = {"distribution": {"n": 10}, "network": {"n_users": 20}, "n_requests": 100, **cfg}
    assert _run(tmp_path, "sweep", cfg)[0] == 1


def test_unreadable_config_and_bad_command(tmp_path):
    assert cli.main(["optimize", "--config", str(tmp_path / "missing.json")]) == 1
    (tmp_path / "list.json").write_text("[1, 2]")
    assert cli.main(["optimize", "--config", str(tmp_path / "list.json")]) == 1
    with pytest.raises(SystemExit) as info:
        cli.main(["explode"])
    assert info.value.code == 1


def test_numerical_failure_exits_two(tmp_path):
    # Bisection stalls before the float sum hits K exactly for this size.
    cfg = {"distribution": {"n": 333}, "tol": 1e-300}
    assert _run(tmp_path, "optimize", cfg)[0] == 2


def test_outputs_are_byte_identical(tmp_path):
    cfg = {"distribution": {"n": 80}, "network": {"n_users": 200}, "n_requests": 3000, "lambda_t_grid": [0, 2, 6]}
    texts = []
    for i in range(2):
        d = tmp_path / str(i)
        d.mkdir()
        assert _run(d, "sweep", cfg, "--seed", "17")[0] == 0
        texts.append((d / "sweep.csv").read_bytes())
    assert texts[0] == texts[1]
    d = tmp_path / "other"
    d.mkdir()
    _run(d, "sweep", cfg, "--seed", "18")
    assert (d / "sweep.csv").read_bytes() != texts[0]


def test_stdout_output(capsys):
    assert cli.main(["optimize", "--out", "-"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "rank,p,q,scheme"
    assert len(lines) == 1001


def test_config_merge_replaces_distribution_type():
    cfg = cli.load_config(None, paper_scale=False)
    merged = cli._merge(cfg, {"distribution": {"type": "raw", "probs": [1, 2]}})
    assert merged["distribution"] == {"type": "raw", "probs": [1, 2]}
    merged = cli._merge(cfg, {"distribution": {"alpha": 0.5}})
    assert merged["distribution"] == {"type": "zipf", "n": 1000, "alpha": 0.5}
    assert cli.DEFAULTS["distribution"]["alpha"] == 1.0
    assert np.isclose(cli.load_config(paper_scale=True)["network"]["lambda_user"], 5.0)
