import json

import pytest

from stnas.arch import enumerate_space
from stnas.cli import main, read_config_file
from stnas.search import RunLog, read_sweep_csv
from stnas.st_ops import ConfigError

SMALL = ["--synthetic", "5:300", "--seed", "3", "--epochs", "1", "--max-steps", "2",
         "--hidden-size", "4", "--attn-heads", "1", "--graph-order", "1"]
SPACE = enumerate_space()


@pytest.fixture
def script(tmp_path):
    path = tmp_path / "script.json"
    path.write_text(json.dumps({"mode": "cot",
                                "answers": [SPACE[i].to_dict() for i in (0, 100, 400)]}))
    return str(path)


def test_search_writes_log_and_bank(tmp_path, script, capsys):
    out = tmp_path / "run"
    assert main(["search", *SMALL, "--rounds", "3", "--scripted", script, "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    runlog = RunLog.read(out / "log.jsonl")
    assert len(runlog.entries) == 3 and runlog.final["seed"] == 3
    assert summary["best"] == runlog.final["best_spec"]
    assert len((out / "bank.jsonl").read_text().splitlines()) == 3


def test_replay_command(tmp_path, script, capsys):
    out = tmp_path / "run"
    main(["search", *SMALL, "--rounds", "2", "--scripted", script, "--out", str(out)])
    assert main(["replay", str(out / "log.jsonl")]) == 0
    lines = (out / "log.jsonl").read_text().splitlines()
    entry = json.loads(lines[0])
    entry["transcript"][0]["user"] = "edited"
    lines[0] = json.dumps(entry)
    (out / "log.jsonl").write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["replay", str(out / "log.jsonl")]) == 1
    assert "instruction differs" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["search", "--rounds", "2", "--scripted", "x.json"],            # no dataset
    ["search", *SMALL, "--bogus"],                                    # unknown flag
    ["search", "--synthetic", "8-2000", "--scripted", "x.json"],    # malformed N:steps
    ["search", *SMALL],                                               # no backend
    ["search", *SMALL, "--explore-ratio", "2", "--scripted", "x.json"],
    ["evaluate", *SMALL, "--spec", "STP,XYZ"],
])
def test_configuration_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "x.json").write_text('{"answers": []}')
    assert main(argv) == 2


def test_config_file_and_flag_precedence(tmp_path, script):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# search settings\nrounds = 3\nseed = 11\nexplore-ratio = 1.0\n")
    out = tmp_path / "run"
    assert main(["search", *SMALL, "--config", str(cfg), "--rounds", "2", "--scripted", script,
                 "--out", str(out)]) == 0
    runlog = RunLog.read(out / "log.jsonl")
    assert len(runlog.entries) == 2          # flag wins
    assert runlog.final["seed"] == 3         # SMALL passes --seed 3 explicitly
    assert runlog.final["explore_ratio"] == 1.0  # taken from the file
    cfg.write_text("colour = blue\n")
    assert main(["search", *SMALL, "--config", str(cfg), "--scripted", script]) == 2
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "absent.cfg")


def test_unreachable_backend_exits_3(tmp_path):
    argv = ["search", *SMALL, "--rounds", "1", "--llm-url", "http://127.0.0.1:9/v1",
            "--out", str(tmp_path / "run")]
    assert main(argv) == 3


def test_evaluate_prints_metrics(capsys):
    assert main(["evaluate", *SMALL, "--spec", "STP,STT,TTS,STP,STT,TTS"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["valid"]["mae"] > 0 and out["test"]["window_count"] > 0
    assert out["spec"]["Layer_2"] == "spatial-then-temporal"


def test_enumerate_covers_the_space(compact_sweep):
    rows = read_sweep_csv(compact_sweep)
    assert len(rows) == 729
    assert {spec for spec, _ in rows} == set(SPACE)
    assert all(met.mae > 0 for _, met in rows)
