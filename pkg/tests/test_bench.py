import csv
import json
import math
import random

import numpy as np
import pytest

from kinoplan import bench
from kinoplan.bench import (aggregate, load_plans, load_suite, normalize_costs, reaggregate, run_seed, run_suite,
                            series_of, suite_from_dict, time_grid)
from kinoplan.core import Configuration, Query
from kinoplan.environment import save_environment
from kinoplan.planner import check_solution

from conftest import DATA


def tiny_suite_dict(env_path, **over):
    d = {
        "name": "tiny",
        "environment": str(env_path),
        "system": "diff_drive",
        "roadmap": {"grid_xy": 1.5, "grid_theta": math.pi, "radius": 3.0},
        "queries": [{"name": "a", "start": [1, 1, 0], "goal": [2.5, 3, 1.57]},
                    {"name": "b", "start": [1, 4, 0], "goal": [2.5, 1, 0]}],
        "strategies": ["rogue", "random"],
        "planners": ["dirt"],
        "seeds": 1,
        "max_iterations": 150,
    }
    d.update(over)
    return d


@pytest.fixture
def env_file(tmp_path, small_env):
    path = tmp_path / "env.json"
    save_environment(small_env, path)
    return path


# --------------------------------------------------------------------- metrics

def test_normalize_costs_example():
    out = normalize_costs({"q": [10, 12, 15]})
    assert out["q"] == pytest.approx([1.0, 1.2, 1.5])
    assert normalize_costs({"q": []}) == {}
    with pytest.raises(ValueError):
        normalize_costs({"q": [0.0, 1.0]})


def _records():
    runs, sols = [], []
    for strat in ("rogue", "rlg"):
        for q in ("a", "b"):
            for seed in (0, 1, 2):
                runs.append({"planner": "dirt", "strategy": strat, "query": q, "seed": str(seed)})
    rows = [("rogue", "a", 0, 1.0, 30.0), ("rogue", "a", 0, 5.0, 20.0), ("rogue", "a", 1, 2.0, 25.0),
            ("rogue", "b", 0, 3.0, 10.0), ("rlg", "a", 0, 4.0, 40.0), ("rlg", "b", 2, 0.5, 12.0),
            ("rlg", "b", 2, 8.0, 11.0), ("rlg", "a", 1, 9.0, 99.0)]
    for strat, q, seed, t, c in rows:
        sols.append({"planner": "dirt", "strategy": strat, "query": q, "seed": str(seed), "iteration": "0",
                     "t_found": repr(t), "cost": repr(c), "replay_ok": "1"})
    sols.append({"planner": "dirt", "strategy": "rlg", "query": "a", "seed": "2", "iteration": "0",
                 "t_found": "0.2", "cost": "1.0", "replay_ok": "0"})
    return runs, sols


def test_aggregate_values():
    runs, sols = _records()
    times = np.array([0.1, 1.0, 3.0, 10.0])
    cur = aggregate(runs, sols, times)
    assert cur["best_cost"] == {"a": 20.0, "b": 10.0}
    assert cur["replay_failures"] == 1
    ro = cur["series"]["dirt-rogue"]
    assert ro["success_ratio"] == pytest.approx([0, 1 / 6, 3 / 6, 3 / 6])
    assert ro["mean_normalized_cost"][0] is None
    # at t=10: a/0 -> 20/20, a/1 -> 25/20, b/0 -> 10/10
    assert ro["mean_normalized_cost"][-1] == pytest.approx((1 + 1.25 + 1) / 3)
    rl = cur["series"]["dirt-rlg"]
    assert rl["mean_normalized_cost"][-1] == pytest.approx((2 + 99 / 20 + 1.1) / 3)
    assert rl["final_success_ratio"] == pytest.approx(3 / 6)


def test_aggregate_is_pure_and_order_independent():
    runs, sols = _records()
    times = time_grid(10.0)
    snapshot = json.dumps([runs, sols])
    ref = aggregate(runs, sols, times)
    assert json.dumps([runs, sols]) == snapshot
    rnd = random.Random(0)
    for _ in range(5):
        r2, s2 = runs[:], sols[:]
        rnd.shuffle(r2)
        rnd.shuffle(s2)
        assert aggregate(r2, s2, times) == ref


def test_success_ratio_monotone_and_bounded():
    runs, sols = _records()
    cur = aggregate(runs, sols, time_grid(10.0))
    for s in cur["series"].values():
        sr = np.array(s["success_ratio"])
        assert np.all(np.diff(sr) >= 0) and sr.min() >= 0 and sr.max() <= 1


def test_time_grid():
    g = time_grid(60.0)
    assert len(g) == 100 and g[0] == pytest.approx(0.1) and g[-1] == pytest.approx(60.0)
    assert time_grid(500, iteration_mode=True)[0] == 1.0


def test_run_seed_offset(monkeypatch):
    a = np.random.default_rng(run_seed(3, 1, 0)).random()
    monkeypatch.setenv("ROGUE_SEED_OFFSET", "100")
    b = np.random.default_rng(run_seed(3, 1)).random()
    assert b == np.random.default_rng(run_seed(103, 1, 0)).random()
    assert a != b
    assert np.random.default_rng(run_seed(3, 0, 0)).random() != a


# --------------------------------------------------------------------- suites

def test_suite_validation(env_file):
    with pytest.raises(ValueError, match="distinct"):
        suite_from_dict(tiny_suite_dict(env_file, seeds=[1, 1]))
    with pytest.raises(ValueError, match="exactly one"):
        suite_from_dict(tiny_suite_dict(env_file, budget_s=5))
    with pytest.raises(ValueError):
        suite_from_dict(tiny_suite_dict(env_file, strategies=["greedy"]))
    with pytest.raises(ValueError, match="collision"):
        suite_from_dict(tiny_suite_dict(env_file, queries=[{"start": [3.5, 3, 0], "goal": [1, 1, 0]}]))
    s = suite_from_dict(tiny_suite_dict(env_file))
    assert s.n_runs == 4 and s.iteration_mode and s.budget == 150


@pytest.mark.parametrize("name", ["narrow_diff_drive", "narrow_car_like", "indoor_diff_drive",
                                  "warehouse_diff_drive"])
def test_shipped_suites_load(name):
    s = load_suite(DATA / "suites" / f"{name}.json")
    assert s.n_runs == 120 and s.budget_s == 60.0
    assert set(s.strategies) == {"rogue", "random", "rlg"}


def test_run_suite_records(tmp_path, env_file):
    suite = suite_from_dict(tiny_suite_dict(env_file, seeds=2, strategies=["rogue", "rlg"]))
    out = tmp_path / "out"
    curves = run_suite(suite, out)
    runs = list(csv.DictReader(open(out / "runs.csv")))
    assert len(runs) == 2 * 2 * 1 * 2
    assert {r["status"] for r in runs} == {"ok"}
    assert all(int(r["iterations"]) == 150 for r in runs)
    sols = list(csv.DictReader(open(out / "solutions.csv")))
    assert all(r["replay_ok"] == "1" for r in sols)
    assert reaggregate(out) == curves
    assert curves["meta"]["time_unit"] == "iterations"
    assert (out / "roadmap.rm").exists()
    for row in load_plans(out):
        q = suite.queries[[x.name for x in suite.queries].index(row["query"])]
        assert check_solution(q, row["plan"], suite.env, suite.system)[0]
    ser = series_of(curves, "dirt", "rogue")
    assert len(ser.times) == 100


def test_run_suite_deterministic_and_parallel(tmp_path, env_file):
    suite = suite_from_dict(tiny_suite_dict(env_file))
    run_suite(suite, tmp_path / "a")
    run_suite(suite, tmp_path / "b", jobs=2)
    for f in ("runs.csv", "solutions.csv", "plans.jsonl", "curves.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_failed_run_is_recorded(tmp_path, env_file, monkeypatch):
    suite = suite_from_dict(tiny_suite_dict(env_file, strategies=["random"]))

    def boom(*a, **k):
        raise RuntimeError("kaboom")

    monkeypatch.setattr(bench, "plan", boom)
    run_suite(suite, tmp_path)
    runs = list(csv.DictReader(open(tmp_path / "runs.csv")))
    assert [r["status"] for r in runs] == ["error", "error"]
    assert "kaboom" in runs[0]["error"]
