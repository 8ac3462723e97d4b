import io
import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcb.data_model import FutureTarget, RankedStepList
from gcb.metrics import (
    HorizonMismatch,
    aggregate,
    evaluate,
    geometric_mean,
    ordinal,
    step_hr,
    step_ndcg,
)
from oracles import METRIC_EXPECTED, metric_fixture


def one_step(*lists):
    return [[RankedStepList(1, tuple(c))] for c in lists]


def test_step_hr_examples():
    truths = [(1,), (2,), (3,)]
    assert step_hr(one_step([1], [2], [3]), truths, 1, 5) == 1.0
    assert step_hr(one_step([9], [9], [9]), truths, 1, 5) == 0.0
    assert step_hr(one_step([1], [9], [3]), truths, 1, 5) == pytest.approx(2 / 3)


def test_step_ndcg_examples():
    assert step_ndcg(one_step([1, 2]), [(1,)], 1, 5) == 1.0
    assert step_ndcg(one_step([2, 1]), [(1,)], 1, 5) == pytest.approx(1 / math.log2(3))
    assert step_ndcg(one_step([2, 1]), [(1,)], 1, 1) == 0.0
    assert step_ndcg(one_step([]), [(1,)], 1, 5) == 0.0


def test_aggregate_examples():
    rep = aggregate({("HR", 5, 1): 0.04, ("HR", 5, 2): 0.01, ("NDCG", 5, 1): 0.0, ("NDCG", 5, 2): 0.3}, 2, [5], 10)
    assert rep.aggregate[("MHR", 5)] == pytest.approx(0.025)
    assert rep.aggregate[("SHR", 5)] == pytest.approx(0.02)
    assert rep.aggregate[("SNDCG", 5)] == 0.0
    one = aggregate({("HR", 5, 1): 0.3, ("NDCG", 5, 1): 0.2}, 1, [5], 1)
    assert one.aggregate[("MHR", 5)] == one.aggregate[("SHR", 5)] == 0.3


def test_fixture_matches_hand_values():
    preds, truths = metric_fixture()
    rep = evaluate(preds, truths, 3, (5, 10))
    for key, want in METRIC_EXPECTED.items():
        got = rep.step[key] if len(key) == 3 else rep.aggregate[key]
        assert abs(got - want) <= 1e-12, key


def test_report_names_and_files():
    preds, truths = metric_fixture()
    rep = evaluate(preds, truths, 3, (5, 10))
    names = rep.named()
    assert {"MHR@5", "SNDCG@10", "1st_HR@5", "2nd_NDCG@10", "3rd_HR@10"} <= set(names)
    assert len(names) == 2 * 4 + 3 * 2 * 2
    buf = io.StringIO()
    rep.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "metric,K,position,value" and lines[1].startswith("MHR,5,all,")
    buf = io.StringIO()
    rep.to_json(buf)
    assert json.loads(buf.getvalue())["metrics"]["3rd_HR@10"] == pytest.approx(0.6)


def test_seq1_report_has_exactly_first_step_metrics():
    rep = evaluate(one_step([1]), [(1,)], 1)
    assert sorted(n for n in rep.named() if n[0].isdigit()) == ["1st_HR@10", "1st_HR@5", "1st_NDCG@10", "1st_NDCG@5"]


def test_horizon_errors():
    with pytest.raises(HorizonMismatch):
        step_hr(one_step([1]), [(1,)], 2, 5)
    with pytest.raises(HorizonMismatch):
        step_hr(one_step([1], [2]), [(1,)], 1, 5)
    with pytest.raises(HorizonMismatch):
        step_hr(one_step([1]), [FutureTarget((1, 2))], 2, 5)


def test_ordinals():
    assert [ordinal(j) for j in (1, 2, 3, 4, 11, 12, 13, 21, 22)] == [
        "1st", "2nd", "3rd", "4th", "11th", "12th", "13th", "21st", "22nd"]


def test_geometric_mean_edge_cases():
    assert geometric_mean([0.5, 0.5, 0.5]) == 0.5
    assert geometric_mean([0.2, 0.0]) == 0.0


@st.composite
def fixtures(draw):
    k = draw(st.integers(1, 4))
    users = draw(st.integers(1, 8))
    preds, truths = [], []
    for _ in range(users):
        truth = draw(st.lists(st.integers(1, 15), min_size=k, max_size=k))
        steps = [RankedStepList(j + 1, tuple(draw(st.lists(st.integers(1, 15), max_size=12, unique=True))))
                 for j in range(k)]
        preds.append(steps)
        truths.append(FutureTarget(truth))
    return preds, truths, k


@settings(max_examples=1000, deadline=None)
@given(fixtures())
def test_metric_inequalities(fx):
    preds, truths, k = fx
    rep = evaluate(preds, truths, k, (5, 10))
    for K in (5, 10):
        assert rep.aggregate[("SHR", K)] <= rep.aggregate[("MHR", K)]
        assert rep.aggregate[("SNDCG", K)] <= rep.aggregate[("MNDCG", K)]
        for j in range(1, k + 1):
            assert rep.step[("HR", K, j)] >= rep.step[("NDCG", K, j)]
            assert 0.0 <= rep.step[("NDCG", K, j)] <= 1.0
    for key in rep.step:
        if key[1] == 5:
            assert rep.step[(key[0], 10, key[2])] >= rep.step[key]
