import csv
import dataclasses
import json
import math

import numpy as np
import pytest

from gridsec.simnet import AttackSpec, MisbehaviorSpec, Scenario, run
from gridsec.simnet.metrics import (
    collect_metrics,
    csv_columns,
    declaration_times,
    detection_delays,
    false_alarm_period,
    post_detection_average,
    summary,
    window_average,
    write_csv,
    write_json,
)


@pytest.fixture(scope="module")
def case1():
    return run(Scenario(T=120, seed=1, attacks=(AttackSpec((1, 2), 60, 0.3),), M=30))


def test_window_and_post_detection_examples():
    s = np.arange(11, dtype=float)
    assert window_average(s, 2, 4) == 3.0
    assert math.isnan(window_average(np.full(5, np.nan), 0, 4))
    series = np.array([[0, 1, 2, 3, 4], [10, 10, 10, 10, 10]], dtype=float)
    assert post_detection_average(series, [2, math.inf], 4) == 3.0
    assert post_detection_average(series, [1, 3], 4) == pytest.approx((2.5 + 10) / 2)
    assert math.isnan(post_detection_average(series, [math.inf, math.inf], 4))
    np.testing.assert_array_equal(detection_delays([5, 9, math.inf], 1), [4, 8, math.inf])
    assert false_alarm_period([100, math.inf, 300], 1000) == (pytest.approx(1400 / 3), 1)


def test_declaration_times_majority():
    v = np.zeros((6, 3, 3), dtype=np.int8)
    v[2:, 1, 0] = 1  # node 2 votes against node 1 from t = 2
    assert declaration_times(v) == {}  # 1 of 2 is not a strict majority
    v[4:, 2, 0] = 1
    assert declaration_times(v) == {1: 4}
    assert declaration_times(v, exclude={3}) == {}


def test_zero_error_gives_zero_mse(case1):
    rec = dataclasses.replace(case1, mse={k: np.zeros_like(v) for k, v in case1.mse.items()})
    met = collect_metrics(rec)
    assert all(v == 0.0 for v in met["window_average"].values())
    assert all(not np.any(v) for v in met["mse_vs_time"].values())


def test_identical_runs_identical_tables(tmp_path, case1):
    again = run(case1.scenario)
    for name, rec in (("a", case1), ("b", again)):
        write_csv(rec, tmp_path / f"{name}.csv")
        write_json(rec, tmp_path / f"{name}.json")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_csv_layout(tmp_path, case1):
    write_csv(case1, tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == csv_columns(4)
    assert len(rows) - 1 == case1.t_end
    assert [int(r[0]) for r in rows[1:3]] == [1, 2]
    col = rows[0].index("mse_total")
    assert float(rows[1][col]) == case1.mse["proposed"][1]


def test_summary_fields(tmp_path, case1):
    s = summary(case1, window=(60, 110))
    assert s["gamma_net"] == case1.gamma_net
    assert s["detection_delay"] == case1.gamma_net - 60
    assert s["window"] == [60, 110]
    write_json(case1, tmp_path / "s.json", window=(60, 110))
    back = json.load(open(tmp_path / "s.json"))
    assert back["window_average_mse"]["proposed"] == pytest.approx(s["window_average_mse"]["proposed"])


def test_summary_without_alarm():
    rec = run(Scenario(T=30, M=10, on_alarm="observe"))
    s = summary(rec)
    assert s["gamma_net"] is None and s["post_detection_average_mse"] is None


def test_hacked_votes_excluded_in_summary():
    rec = run(Scenario(T=60, seed=2, misbehaviors=(MisbehaviorSpec(3, 1, 0.1),), on_alarm="observe", M=30))
    s = summary(rec)
    assert set(s["trust_declarations_without_hacked_votes"]) <= set(s["trust_declarations"]) | {"3"}
