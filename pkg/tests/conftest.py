import numpy as np
import pytest

from stnas.arch import ModelConfig
from stnas.data import synthesize_dataset, window_split
from stnas.st_ops import build_adjacency_set


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


@pytest.fixture(scope="session")
def small_data():
    """Seeded 6-node synthetic dataset with S=P=4 windows."""
    raw = synthesize_dataset(3, 6, 400, history=4, horizon=4)
    train, valid, test, norm = window_split(raw, 4, 4)
    return raw, train, valid, test, norm, build_adjacency_set(raw.adjacency)


@pytest.fixture
def small_cfg():
    return ModelConfig(num_nodes=6, hidden_size=4, attn_dim=4, attn_heads=2, ffn_dim=6,
                       graph_order=2, node_embed_dim=3, dropout=0.0, history=4, horizon=4)


# compact model used by the exhaustive sweep and the search-loop oracle
COMPACT_ARGS = ["--synthetic", "8:2000", "--seed", "0", "--epochs", "2",
                "--hidden-size", "4", "--attn-heads", "1", "--graph-order", "1"]


def _source_digest(args) -> str:
    import hashlib
    import pathlib

    import stnas

    h = hashlib.sha256(" ".join(args).encode())
    for path in sorted(pathlib.Path(stnas.__file__).parent.glob("*.py")):
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def compact_sweep(request):
    """Path to the 729-row sweep CSV for COMPACT_ARGS.

    The CSV is produced through ``stnas enumerate`` and kept in the pytest
    cache, keyed by the package sources, so it is recomputed after any code
    change. Set STNAS_FRESH_SWEEP=1 to ignore the cache.
    """
    import os

    from stnas.cli import main

    cache_dir = request.config.cache.mkdir("stnas-sweep")
    path = cache_dir / f"{_source_digest(COMPACT_ARGS)}.csv"
    if os.environ.get("STNAS_FRESH_SWEEP") == "1" or not path.exists():
        tmp = path.with_suffix(".partial")
        rc = main(["enumerate", *COMPACT_ARGS, "--workers", str(os.cpu_count() or 1),
                   "--out", str(tmp)])
        assert rc == 0
        tmp.replace(path)
    return path


# one PASS/FAIL line per acceptance criterion in the terminal summary
_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    prev = _CRITERIA.get(number, (title, "PASS"))[1]
    if rep.failed:
        status = "FAIL"
    elif rep.skipped:
        status = "SKIP" if prev == "PASS" else prev
    else:
        status = prev
    _CRITERIA[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title}")
