import numpy as np
import pytest

from stnas.data import (
    DataParseError,
    Normalizer,
    RawDataset,
    load_dataset,
    split_lengths,
    synthesize_dataset,
    window_count,
    window_split,
)
from stnas.st_ops import InputError


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_readings_and_edges(tmp_path):
    r = _write(tmp_path, "r.csv", "1,2\n3,4\n5,6\n")
    a = _write(tmp_path, "a.csv", "0,1,2.0\n")
    raw = load_dataset(r, a)
    assert np.array_equal(raw.readings, [[1, 2], [3, 4], [5, 6]])
    assert np.array_equal(raw.adjacency, [[0, 2], [0, 0]])
    assert raw.node_count == 2 and raw.step_count == 3


def test_load_with_headers(tmp_path):
    r = _write(tmp_path, "r.csv", "s0,s1\n1,2\n3,4\n")
    a = _write(tmp_path, "a.csv", "src,dst,weight\n1,0,0.5\n")
    raw = load_dataset(r, a)
    assert raw.readings.shape == (2, 2) and raw.adjacency[1, 0] == 0.5


@pytest.mark.parametrize("readings,edges,bad_file,line", [
    ("1,2\n3,4,5\n", "0,1,1\n", "r.csv", 2),
    ("1,2\nx,4\n", "0,1,1\n", "r.csv", 2),
    ("1,2\n3,4\n", "0,1,1\n0,2,1\n", "a.csv", 2),
    ("1,2\n3,4\n", "0,1\n", "a.csv", 1),
    ("1,2\n3,4\n", "0,1,-1\n", "a.csv", 1),
])
def test_parse_errors_name_the_line(tmp_path, readings, edges, bad_file, line):
    r = _write(tmp_path, "r.csv", readings)
    a = _write(tmp_path, "a.csv", edges)
    with pytest.raises(DataParseError) as info:
        load_dataset(r, a)
    assert info.value.line == line
    assert bad_file in str(info.value)


def test_raw_dataset_invariants():
    with pytest.raises(InputError):
        RawDataset(np.array([[1.0, np.nan]]), np.zeros((2, 2)))
    with pytest.raises(InputError):
        RawDataset(np.ones((3, 2)), np.zeros((3, 3)))


def test_synthetic_is_seeded_and_varied():
    a = synthesize_dataset(11, 4, 500)
    b = synthesize_dataset(11, 4, 500)
    assert np.array_equal(a.readings, b.readings) and np.array_equal(a.adjacency, b.adjacency)
    assert np.all(np.isfinite(a.readings)) and a.readings.var() > 0
    assert not np.array_equal(a.readings, synthesize_dataset(12, 4, 500).readings)
    with pytest.raises(InputError):
        synthesize_dataset(0, 4, 239)
    with pytest.raises(InputError):
        synthesize_dataset(0, 1, 500)


def test_split_arithmetic():
    assert split_lengths(100) == (70, 10, 20)
    assert window_count(70, 12, 12) == 47
    assert window_count(10, 12, 12) == 0


def test_split_without_a_valid_window_is_an_error():
    raw = synthesize_dataset(0, 3, 240)
    with pytest.raises(InputError, match="valid"):
        window_split(raw, ratios=(0.8, 0.05, 0.15))
    with pytest.raises(InputError):
        window_split(raw, ratios=(1.0, 0.0, 0.0))
    with pytest.raises(InputError):
        window_split(raw, ratios=(0.5, 0.1, 0.1))


def test_window_split_contents_and_no_leakage():
    raw = synthesize_dataset(1, 3, 300)
    train, valid, test, norm = window_split(raw, 12, 12)
    n_train, n_valid, n_test = split_lengths(300)
    assert len(train) == n_train - 23 and len(valid) == n_valid - 23 and len(test) == n_test - 23
    assert train.inputs.shape[1:] == (12, 3, 1) and train.targets.shape[1:] == (12, 3)
    z = norm.apply(raw.readings)
    k = 5
    s = train.starts[k]
    assert np.array_equal(train.inputs[k, :, :, 0], z[s:s + 12])
    assert np.array_equal(train.targets[k], z[s + 12:s + 24])
    assert train.starts[-1] + 23 < valid.starts[0]
    assert valid.starts[-1] + 23 < test.starts[0]
    assert abs(z[:n_train].mean()) < 1e-9


def test_normalizer_round_trip_and_constant_fallback():
    x = np.random.default_rng(0).normal(5, 3, size=50)
    n = Normalizer.fit(x)
    assert np.max(np.abs(n.invert(n.apply(x)) - x)) < 1e-12
    assert Normalizer.fit(np.full(10, 2.0)).std == 1.0
