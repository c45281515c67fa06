import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evonav.envs import VARIABLES
from evonav.errors import BudgetTooSmall, MissingVariable
from evonav.evaluator import (
    Budget,
    DifficultyRanking,
    OracleRunner,
    SyntheticRunner,
    VariableSpec,
    baseline_config,
    default_specs,
    evaluate_extremes,
    fit_line,
    fit_response,
    mean_perf,
    rank_from_deltas,
    write_ranking,
)

TABLE_I = {"room_number": 0.6093, "ped_policy": 0.2759, "ped_count": 0.2166, "ped_speed": 0.1753,
           "room_size": 0.0509, "corridor_width": 0.0074, "convexity": 0.0064}
TABLE_I_ORDER = ["room_number", "ped_policy", "ped_count", "ped_speed", "room_size", "corridor_width", "convexity"]
TINY = Budget(2, 4)


def test_table_one_order():
    assert rank_from_deltas(TABLE_I).names == TABLE_I_ORDER


def test_equal_deltas_keep_canonical_order():
    assert rank_from_deltas({n: 0.1 for n in VARIABLES}).names == list(VARIABLES)


def test_missing_and_unknown_variables():
    with pytest.raises(MissingVariable):
        rank_from_deltas({"room_number": 1.0, "ped_count": 0.5})
    with pytest.raises(ValueError):
        rank_from_deltas({**TABLE_I, "weather": 1.0})


@given(st.lists(st.integers(-1000, 1000), min_size=7, max_size=7), st.floats(0.01, 100))
def test_positive_scaling_keeps_ranking(values, c):
    deltas = dict(zip(VARIABLES, (v / 1000 for v in values)))
    a = rank_from_deltas(deltas).names
    assert rank_from_deltas({k: v * c for k, v in deltas.items()}).names == a


def test_oracle_gives_zero_deltas():
    ranking, _ = evaluate_extremes(OracleRunner(), budget=TINY)
    assert all(d == 0 for _, d in ranking.entries)
    assert ranking.names == list(VARIABLES)


def test_synthetic_room_number_delta():
    ranking, detail = evaluate_extremes(SyntheticRunner("room_number", -0.1, 1.0), budget=TINY)
    assert ranking.delta("room_number") == pytest.approx(0.4)
    assert all(ranking.delta(n) == pytest.approx(0.0) for n in VARIABLES if n != "room_number")
    assert detail["room_number"]["min"] == pytest.approx(1.0)


def test_exact_line_fit():
    spec = VariableSpec("ped_speed", 1.0, 2.0)
    runner = SyntheticRunner("ped_speed", -0.1, 0.9)
    resp = fit_response(runner, spec, 5, TINY)
    assert resp.slope == pytest.approx(-0.1, abs=1e-9)
    assert resp.intercept == pytest.approx(0.9, abs=1e-9)
    assert resp.residual < 1e-9


def test_constant_response_slope_zero():
    resp = fit_response(OracleRunner(), VariableSpec("ped_count", 10, 18), 4, TINY)
    assert resp.slope == pytest.approx(0.0, abs=1e-12)


@given(st.lists(st.floats(-1, 1), min_size=5, max_size=5))
def test_fit_matches_normal_equations(ys):
    x = np.linspace(0, 4, 5)
    A = np.column_stack([x, np.ones(5)])
    coef = np.linalg.solve(A.T @ A, A.T @ np.array(ys))
    slope, intercept, _ = fit_line(x, ys)
    assert slope == pytest.approx(coef[0], abs=1e-9)
    assert intercept == pytest.approx(coef[1], abs=1e-9)


def test_budget_checks():
    with pytest.raises(BudgetTooSmall):
        Budget(0, 10).check()
    with pytest.raises(BudgetTooSmall):
        Budget(50, 10).check()
    with pytest.raises(BudgetTooSmall):
        Budget(5, 10, iterations=2).check()


def test_iteration_cap_limits_steps():
    m, steps = mean_perf(SyntheticRunner(steps=10), baseline_config(), Budget(2, 50, iterations=35), 0)
    assert steps == 35


def test_reproducible():
    r = SyntheticRunner("ped_count", -0.02, 0.5, noise=0.3)
    a = evaluate_extremes(r, budget=TINY, seed=4)
    b = evaluate_extremes(r, budget=TINY, seed=4)
    assert a == b


def test_noisy_delta_converges():
    runner = SyntheticRunner("room_number", -0.1, 1.0, noise=0.5)
    ranking, _ = evaluate_extremes(runner, [VariableSpec("room_number", 0, 4)], Budget(50, 200), seed=1)
    assert abs(ranking.delta("room_number") - 0.4) < 0.05


def test_specs_and_baseline():
    specs = {s.name: s for s in default_specs()}
    assert set(specs) == set(VARIABLES)
    assert specs["convexity"].sample_levels(5).tolist() == [0, 0.25, 0.5, 0.75, 1.0]
    assert specs["convexity"].physical(1.0) == math.inf
    base = baseline_config()
    assert base.ped_speed == 1.5 and base.room_number == 2
    with pytest.raises(ValueError):
        VariableSpec("weather", 0, 1)


def test_ranking_round_trip(tmp_path):
    r = rank_from_deltas(TABLE_I)
    write_ranking(tmp_path / "r.json", r)
    assert DifficultyRanking.from_dict(json.loads((tmp_path / "r.json").read_text())) == r


def test_response_csv(tmp_path):
    resp = fit_response(SyntheticRunner("ped_speed", 0.2, 0.1), VariableSpec("ped_speed", 1.0, 2.0), 3, TINY)
    resp.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "level,mean,count" and len(lines) == 4
