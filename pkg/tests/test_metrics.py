import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stnas.arch import ArchSpec, init_model
from stnas.metrics import Metrics, compute_metrics, evaluate, predict
from stnas.st_ops import InputError


def test_hand_examples():
    m = compute_metrics([1.0, 2.0], [1.0, 4.0])
    assert abs(m.mae - 1.0) < 1e-12
    assert abs(m.rmse - math.sqrt(2.0)) < 1e-12
    assert abs(m.mape - 25.0) < 1e-12
    assert abs(compute_metrics([110.0], [100.0]).mape - 10.0) < 1e-12
    p = compute_metrics([3.0, 5.0], [3.0, 5.0])
    assert (p.mae, p.mape, p.rmse) == (0.0, 0.0, 0.0)


def test_mape_masks_tiny_targets():
    m = compute_metrics([1.0, 2.0, 3.0], [0.0, 1e-5, 3.0])
    assert m.mape == 0.0
    assert compute_metrics([1.0], [0.0]).mape is None
    assert compute_metrics([1.0], [0.0]).mae == 1.0


def test_shape_errors():
    with pytest.raises(InputError):
        compute_metrics([1.0], [1.0, 2.0])
    with pytest.raises(InputError):
        compute_metrics([], [])


def _naive(pred, target):
    n = len(pred)
    abs_sum = sq_sum = 0.0
    for i in range(n):
        abs_sum += abs(pred[i] - target[i])
        sq_sum += (pred[i] - target[i]) ** 2
    return abs_sum / n, math.sqrt(sq_sum / n)


def test_matches_naive_loop_on_random_entries():
    rng = np.random.default_rng(0)
    pred, target = rng.normal(50, 10, 100), rng.normal(50, 10, 100)
    m = compute_metrics(pred, target)
    mae, rmse = _naive(pred, target)
    assert abs(m.mae - mae) < 1e-12 and abs(m.rmse - rmse) < 1e-12


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 20, elements=finite), arrays(np.float64, 20, elements=finite))
def test_rmse_bounds_mean_error(pred, target):
    m = compute_metrics(pred, target)
    assert m.mae >= 0 and m.rmse >= 0
    assert m.rmse >= abs(np.mean(pred - target)) - 1e-9


def test_failed_sentinel():
    f = Metrics.failed(3)
    assert f.is_failed and f.mape is None and f.rmse == math.inf
    assert not Metrics(1.0, 2.0, 3.0).is_failed


def test_evaluate_denormalizes(small_data, small_cfg):
    _, train, valid, _, norm, adj = small_data
    m = init_model(ArchSpec.from_codes("STT " * 6), small_cfg, 0)
    met = evaluate(m, valid, norm, adj)
    pred = norm.invert(predict(m, valid, adj))
    ref = compute_metrics(pred, norm.invert(valid.targets))
    assert met == ref and met.window_count == len(valid)
    # error in raw units is the normalized error times the scale
    z_mae = np.mean(np.abs(predict(m, valid, adj) - valid.targets))
    assert abs(met.mae - z_mae * norm.std) < 1e-9
