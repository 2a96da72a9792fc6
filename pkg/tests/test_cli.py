import csv
import io
import json
import os

import pytest

from bklab import cli
from bklab.config import ConfigError, parse_config, parse_initial
from bklab.simulator import read_jsonl

MINIMAL = "lambda = 1\nmu = 1\noffspring = poisson\ntheta = 1\nN = 100\ninitial = 1x1\n"
REFERENCE = ["lambda=1", "mu=1", "offspring=poisson", "theta=1.5", "N=500", "initial=1x1"]


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# minimal run\n" + MINIMAL + "replicates = 50  # small\n")
    return path


def read_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("# bklab schema=1")
    return list(csv.DictReader(lines[1:]))


def test_minimal_file_fills_defaults(tmp_path):
    path = tmp_path / "min.cfg"
    path.write_text(MINIMAL)
    cfg = parse_config(path)
    assert cfg["replicates"] == 1000 and cfg["seed"] == 0 and cfg["horizon"] == 10 and cfg["k_se"] == 3
    assert cfg.params.N == 100 and cfg.initial.to_dict() == {1: 1}


def test_negative_theta_is_a_range_error(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text(MINIMAL.replace("theta = 1", "theta = -1"))
    with pytest.raises(ConfigError) as exc:
        parse_config(path)
    assert any("range error" in e and "'theta'" in e for e in exc.value.errors)


def test_command_line_beats_file(cfg_file):
    assert parse_config(cfg_file)["replicates"] == 50
    assert parse_config(cfg_file, ["replicates=10"])["replicates"] == 10


def test_threads_env_fallback(cfg_file, monkeypatch):
    monkeypatch.setenv("BKLAB_THREADS", "3")
    assert parse_config(cfg_file).threads == 3
    assert parse_config(cfg_file, ["threads=2"]).threads == 2


def test_all_errors_are_collected(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("lambda = 0\nmu = x\ncolour = red\nnot a pair\n")
    with pytest.raises(ConfigError) as exc:
        parse_config(path)
    text = "\n".join(exc.value.errors)
    for needle in ("'lambda'", "'mu'", "'colour'", ":4:", "'offspring'", "'N'"):
        assert needle in text


def test_initial_grammar():
    assert parse_initial("3x1, 1x5") == {1: 3, 5: 1}
    with pytest.raises(ValueError):
        parse_initial("3")
    with pytest.raises(ValueError):
        parse_initial("1x0")


def test_simulate_writes_ten_events(tmp_path, capsys):
    out = tmp_path / "path.jsonl"
    code = cli.main(["simulate", "-s", "stop=transitions:10", *sum([["-s", s] for s in REFERENCE], []), "-o", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert sum(json.loads(l)["type"] == "event" for l in lines) == 10
    assert json.loads(lines[0])["type"] == "header"
    rec = read_jsonl(io.StringIO(out.read_text()))
    assert len(rec) == 10


def _args(*extra):
    return sum([["-s", s] for s in REFERENCE + list(extra)], [])


def test_tv_reference_config_exits_zero(tmp_path, capsys):
    out = tmp_path / "tv.csv"
    code = cli.main(["tv", *_args("horizon=50"), "--replicates", "2000", "-o", str(out)])
    assert code == 0
    rows = read_csv(out)
    assert {r["verdict"] for r in rows} <= {"holds", "inconclusive"}
    assert "tv_assembly" in capsys.readouterr().out


def test_sweep_has_one_row_per_value(tmp_path):
    out = tmp_path / "sweep.csv"
    code = cli.main(["sweep", *_args("sweep=N:500,1000,2000"), "--replicates", "100", "-o", str(out)])
    assert code == 0
    rows = read_csv(out)
    assert [int(r["N"]) for r in rows] == [500, 1000, 2000]


def test_coupling_and_lr_columns(tmp_path):
    out = tmp_path / "c.csv"
    assert cli.main(["coupling", *_args(), "--replicates", "100", "-o", str(out)]) == 0
    assert list(read_csv(out)[0]) == ["replicate_id", "diverged", "divergence_index", "n_infections"]
    out = tmp_path / "l.csv"
    assert cli.main(["lr-verify", *_args(), "--replicates", "100", "-o", str(out)]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["replicate_id", "L_final", "stopped_at", "mode", "m_or_M"] and len(rows) == 100


def test_jsonl_report_format(tmp_path):
    out = tmp_path / "b.jsonl"
    assert cli.main(["bounds", *_args("format=jsonl", "horizons=10,100", "N_grid=1000,100000"), "-o", str(out)]) == 0
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert lines[0]["schema"] == 1 and len(lines) == 5


def test_other_commands_run(tmp_path):
    assert cli.main(["concentration", *_args("n=16", "y_grid=0,5"), "--replicates", "2000",
                     "-o", str(tmp_path / "k.csv")]) == 0
    assert cli.main(["concentration", *_args("drift=true", "y_grid=30,60"), "--replicates", "2000",
                     "-o", str(tmp_path / "d.csv")]) == 1
    assert cli.main(["rc", *_args("N=1000000"), "--replicates", "100", "-o", str(tmp_path / "r.csv")]) == 0
    assert cli.main(["growth", *_args("t_grid=0.5,1"), "--replicates", "200", "-o", str(tmp_path / "g.csv")]) == 0


def test_config_error_exit_code(capsys):
    assert cli.main(["tv", "-s", "lambda=1"]) == 2
    assert "config error" in capsys.readouterr().err


def test_io_error_exit_code(tmp_path, capsys):
    target = tmp_path / "missing" / "out.csv"
    assert cli.main(["bounds", *_args(), "-o", str(target)]) == 3
    assert "I/O error" in capsys.readouterr().err


def test_partial_output_removed(tmp_path):
    target = tmp_path / "out.csv"
    with pytest.raises(RuntimeError):
        with cli.atomic_output(target) as fh:
            fh.write("half")
            raise RuntimeError("boom")
    assert os.listdir(tmp_path) == []


def test_seed_determines_output_across_threads(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["lr-verify", *_args("horizon=15"), "--replicates", "200", "--seed", "9", "--threads", "1", "-o", str(a)]) == 0
    assert cli.main(["lr-verify", *_args("horizon=15"), "--replicates", "200", "--seed", "9", "--threads", "2", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
