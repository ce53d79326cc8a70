import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stnas.arch import ArchSpec, enumerate_space
from stnas.memory import EMPTY_HISTORY, Bank, BankError, BankParseError, EvalRecord
from stnas.metrics import Metrics

SPACE = enumerate_space()


def rec(rnd, mae, spec=None, stage="explore"):
    spec = spec or SPACE[rnd % len(SPACE)]
    return EvalRecord(round=rnd, spec=spec, metrics=Metrics(mae, 5.0, mae * 1.3), stage=stage)


def maes(bank):
    return [r.mae for r in bank]


def test_insert_orders_worst_first():
    bank = Bank()
    for i, m in enumerate([3.0, 1.0, 2.0], start=1):
        bank.insert(rec(i, m))
    assert maes(bank) == [3.0, 2.0, 1.0]
    assert Bank([rec(1, 4.0)]).records[0].mae == 4.0


def test_ties_keep_earlier_round_first():
    bank = Bank([rec(2, 2.0), rec(1, 2.0)])
    assert [r.round for r in bank] == [1, 2]


def test_duplicate_round_is_rejected():
    bank = Bank([rec(1, 1.0)])
    with pytest.raises(BankError):
        bank.insert(rec(1, 2.0))


def test_best():
    bank = Bank([rec(1, 3.0), rec(2, 1.0), rec(3, 2.0)])
    assert bank.best().round == 2
    assert Bank([rec(4, 9.0)]).best().round == 4
    with pytest.raises(BankError):
        Bank().best()


def test_failed_rounds_sort_as_worst():
    bank = Bank([rec(1, 1.0)])
    bank.insert(EvalRecord(2, SPACE[0], Metrics.failed()))
    assert bank.records[0].round == 2 and bank.best().round == 1


def test_render_history():
    assert Bank().render_history() == EMPTY_HISTORY
    text = Bank([rec(1, 1.5)]).render_history()
    assert "MAE 1.5" in text and text.count("\n") == 0
    assert text.startswith("Round 1: {")


def test_render_order_matches_bank_order():
    rng = random.Random(3)
    records = [rec(i, rng.uniform(1, 5)) for i in range(1, 6)]
    bank = Bank(records)
    lines = bank.render_history().splitlines()
    assert [int(x.split(":")[0].split()[1]) for x in lines] == [r.round for r in bank]
    reverse = bank.render_history("best_first").splitlines()
    assert reverse == lines[::-1]
    with pytest.raises(ValueError):
        bank.render_history("sideways")


def test_render_failed_and_undefined():
    bank = Bank([EvalRecord(1, SPACE[0], Metrics(2.0, None, 3.0)),
                 EvalRecord(2, SPACE[1], Metrics.failed())])
    lines = bank.render_history().splitlines()
    assert "MAE inf" in lines[0] and "MAPE n/a%" in lines[1]


@settings(max_examples=1000, deadline=None)
@given(st.permutations(list(range(12))),
       st.lists(st.sampled_from([1.0, 1.5, 2.0, 2.5, 3.0]), min_size=12, max_size=12))
def test_sorted_after_any_insert_order(order, values):
    bank = Bank()
    for i in order:
        bank.insert(rec(i + 1, values[i]))
        keys = [(-r.mae, r.round) for r in bank]
        assert keys == sorted(keys)
    assert bank.best().mae == min(values)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.1, 100.0), min_size=1, max_size=15), st.integers(-20, 20))
def test_best_is_argmin_and_scale_stable(values, exponent):
    scale = 2.0 ** exponent  # exact, so rescaling cannot create new ties
    bank = Bank([rec(i + 1, v) for i, v in enumerate(values)])
    scaled = Bank([rec(i + 1, v * scale) for i, v in enumerate(values)])
    assert bank.best().mae == min(values)
    assert bank.best().round == scaled.best().round


def test_contains_agrees_with_scan():
    bank = Bank([rec(i, 1.0 + i, SPACE[i * 7]) for i in range(1, 10)])
    for spec in SPACE[:80]:
        assert bank.contains(spec) == any(r.spec == spec for r in bank.records)


def test_persist_round_trip(tmp_path):
    bank = Bank([rec(1, 3.0), rec(2, 1.0, stage="optimize"),
                 EvalRecord(3, SPACE[5], Metrics(2.0, None, 2.5))])
    path = tmp_path / "bank.jsonl"
    bank.persist(path)
    loaded = Bank.load(path)
    assert loaded == bank
    lines = path.read_text().splitlines()
    assert [json.loads(x)["round"] for x in lines] == [r.round for r in bank]
    assert list(json.loads(lines[0])) == ["round", "stage", "layers", "mae", "mape", "rmse"]


def test_load_reports_bad_line(tmp_path):
    good = rec(1, 1.0).to_json()
    bad = json.loads(rec(2, 2.0).to_json())
    del bad["mae"]
    path = tmp_path / "bank.jsonl"
    path.write_text(good + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(BankParseError) as info:
        Bank.load(path)
    assert info.value.line == 2 and "mae" in str(info.value)
    path.write_text("{not json\n")
    with pytest.raises(BankParseError):
        Bank.load(path)
