import csv
import io
import subprocess
import sys

import pytest

from macrerand.cli import main, vector_lines


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "scenario.conf"
    p.write_text("n_stations = 3\nT = 2\nseed = 5\nduration = 9\nrate = 20\n")
    return p


def test_run_writes_outputs(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(config), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "frames sent=" in text and "linker timing" in text
    for name in ("frames.jsonl", "truth.jsonl", "metrics.csv", "summary.json"):
        assert (out / name).exists()


def test_link_replays_log(config, tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", str(config), "--out", str(out)])
    capsys.readouterr()
    report = tmp_path / "report.csv"
    assert main(["link", str(out / "frames.jsonl"), "--attack", "timing",
                 "--truth", str(out / "truth.jsonl"), "--out", str(report)]) == 0
    err = capsys.readouterr().err
    assert "accuracy=" in err
    rows = list(csv.reader(report.open()))
    assert rows[0] == ["boundary", "anonymity_set", "accuracy"]
    assert len(rows) == 1 + 4
    assert all(r[1] == "3" for r in rows[1:])


@pytest.mark.parametrize("attack", ["sn", "pn", "nonce-prune"])
def test_link_attacks(config, tmp_path, capsys, attack):
    out = tmp_path / "out"
    main(["run", str(config), "--out", str(out)])
    capsys.readouterr()
    assert main(["link", str(out / "frames.jsonl"), "--attack", attack,
                 "--truth", str(out / "truth.jsonl"), "--window", "0.5"]) == 0
    assert capsys.readouterr().out.startswith("boundary,anonymity_set,accuracy")


def test_wrap_table(capsys):
    assert main(["wrap-table", "--frame-bits", "400", "--bitrate", "1e10",
                 "--t-values", "1,10,60,600,3600,86400"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert [r[1] for r in rows[1:]] == ["25", "28", "31", "34", "37", "41"]
    assert all(float(r[4]) >= 60 for r in rows[1:])


def test_wrap_table_ladder(capsys):
    main(["wrap-table", "--frame-bits", "400", "--bitrate", "1e10", "--t-min", "60",
          "--t-max", "3600"])
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    ts = [int(r[0]) for r in rows[1:]]
    assert ts and min(ts) >= 60 and max(ts) <= 3600


def test_vectors_round_trip(tmp_path, capsys):
    assert main(["vectors", "--emit", "--count", "5"]) == 0
    emitted = capsys.readouterr().out
    assert emitted.splitlines() == vector_lines(5)
    f = tmp_path / "v.txt"
    f.write_text("# base ptk u mac\n" + emitted)
    assert main(["vectors", "--check", str(f)]) == 0
    assert "5/5" in capsys.readouterr().out


def test_vectors_detect_mismatch(tmp_path, capsys):
    lines = vector_lines(2)
    bad = lines[1][:-1] + ("0" if lines[1][-1] != "0" else "1")
    f = tmp_path / "v.txt"
    f.write_text(lines[0] + "\n" + bad + "\n")
    assert main(["vectors", "--check", str(f)]) == 1
    assert "line 2" in capsys.readouterr().err


def test_frozen_vector_file(tmp_path):
    f = tmp_path / "v.txt"
    f.write_text("020000000001 " + "00" * 32 + " 0 1a5da7c7a12b\n")
    assert main(["vectors", "--check", str(f)]) == 0


def test_bad_config_exit(tmp_path, capsys):
    p = tmp_path / "bad.conf"
    p.write_text("T=30\nh=30\nl=30\nseed=1\n")
    assert main(["run", str(p)]) == 2
    assert "error:" in capsys.readouterr().err


def test_exhaustion_exit(tmp_path, capsys):
    p = tmp_path / "tight.conf"
    p.write_text("T=2\nseed=1\nn_stations=1\nh=46\nl=2\nrate=200\nduration=5\n")
    assert main(["run", str(p)]) == 1
    assert "NonceSpaceExhausted" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "macrerand", "wrap-table", "--frame-bits",
                           "12000", "--bitrate", "54e6", "--t-values", "30"],
                          capture_output=True, text=True, check=True)
    assert proc.stdout.splitlines()[1].startswith("30,18,30,")


def test_log_replay_matches_live_capture(tmp_path):
    from macrerand.adversary import observations_from_log
    from macrerand.sim import ScenarioConfig, run_scenario
    r = run_scenario(ScenarioConfig(T=2, seed=6, n_stations=3, duration=7, rate=20,
                                    downlink_rate=5, loss=0.1), tmp_path)
    with open(tmp_path / "frames.jsonl") as f:
        assert observations_from_log(f) == r.observations
