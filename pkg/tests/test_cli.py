import dataclasses
import json
import subprocess
import sys
from fractions import Fraction

import pytest

from problab import cli
from problab import conjectures_exact as cx
from problab.cli import ConfigError, ExperimentConfig, GraphFormatError, ingest_graphs, main, run_experiment


def test_config_round_trip():
    cfg = ExperimentConfig("oriented", "theta", {"p": 0.3, "L_grid": [10, 20]}, seed=5, trials=40, workers=2)
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg


def test_config_errors_name_fields():
    with pytest.raises(ConfigError, match="colour: unknown field"):
        ExperimentConfig.from_dict({"module": "saw", "command": "count", "colour": 1})
    with pytest.raises(ConfigError, match="params.bogus"):
        ExperimentConfig("saw", "count", {"bogus": 1})
    with pytest.raises(ConfigError, match="seed"):
        ExperimentConfig("saw", "count", seed=-1)
    with pytest.raises(ConfigError, match="module/command"):
        ExperimentConfig("saw", "fly")
    with pytest.raises(ConfigError, match="command: required"):
        ExperimentConfig.from_dict({"module": "saw"})


def test_graph_ingestion(tmp_path):
    good = tmp_path / "g.txt"
    good.write_text("C~\n\nBw\n")
    gs = ingest_graphs(good)
    assert [g.m for g in gs] == [6, 3]
    bad = tmp_path / "b.txt"
    bad.write_text("C~\nBw\nzz\n")
    with pytest.raises(GraphFormatError, match="line 3"):
        ingest_graphs(bad)
    loop = tmp_path / "l.txt"
    loop.write_text("Bw\n:AJ\n")  # sparse6 with a self-loop
    with pytest.raises(GraphFormatError, match="line 2: loop"):
        ingest_graphs(loop)
    multi = tmp_path / "m.txt"
    multi.write_text(":Ab\n")
    with pytest.raises(GraphFormatError, match="line 1: multiple edge"):
        ingest_graphs(multi)


def test_exit_codes(tmp_path, capsys, monkeypatch):
    assert main(["saw", "count", "--n", "4"]) == 0
    assert "square,4,100" in capsys.readouterr().out
    assert main(["saw", "count", "--n", "-3"]) == 1
    assert main(["nonsense"]) == 1
    bad = tmp_path / "b.txt"
    bad.write_text("zz\n")
    assert main(["forest", "check", "--graphs", str(bad)]) == 1

    # a reported violation must surface as exit 2 with a witness on disk
    real = cx.association_check

    def broken(g, cls):
        rep = real(g, cls)
        return dataclasses.replace(rep, max_excess=Fraction(1, 9))
    monkeypatch.setattr(cx, "association_check", broken)
    g = tmp_path / "k3.txt"
    g.write_text("Bw\n")
    rc = main(["forest", "check", "--graphs", str(g), "--witness-dir", str(tmp_path / "w")])
    assert rc == 2
    assert list((tmp_path / "w").glob("usf_witness_*.txt"))


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv("PROBLAB_SEED", "17")
    args = cli.build_parser().parse_args(["oriented", "theta", "--L-grid", "8", "--trials", "20"])
    assert cli.config_from_args(args).seed == 17
    args = cli.build_parser().parse_args(["oriented", "theta", "--seed", "3"])
    assert cli.config_from_args(args).seed == 3


def test_output_files_and_rerun(tmp_path):
    out = tmp_path / "o.csv"
    assert main(["oriented", "theta", "--L-grid", "8,12", "--trials", "50", "--seed", "4", "--out", str(out)]) == 0
    text = out.read_text()
    lines = text.splitlines()
    assert lines[0] == "# format: problab-csv/1" and lines[1] == "# seed: 4"
    side = json.loads((tmp_path / "o.csv.json").read_text())
    assert {"config", "provenance", "rows"} <= set(side) and "timestamp" in side["provenance"]
    # the embedded config alone reproduces the data
    embedded = ExperimentConfig.from_json(lines[2][len("# config: "):])
    assert run_experiment(embedded).csv_text() == text


def test_run_subcommand(tmp_path):
    cfg = ExperimentConfig("saw", "count", {"kind": "hex", "n": 6}, seed=1)
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    assert main(["run", str(p), "--out", str(tmp_path / "r.csv")]) == 0
    assert "hex,6,90" in (tmp_path / "r.csv").read_text()


@pytest.mark.parametrize("argv", [
    ["mirrors", "ehrenfest", "--p", "0.7", "--L-grid", "10,20", "--trials", "200"],
    ["needles", "crossing", "--grid", "0.5,1.5", "--side", "6", "--trials", "60"],
    ["epidemic", "scan", "--alpha-grid", "2,8", "--box", "6", "--n-star", "100", "--trials", "30"],
])
def test_worker_count_invariance(argv):
    base = ExperimentConfig(**{**cli.config_from_args(cli.build_parser().parse_args(argv + ["--seed", "11"]))
                               .to_dict()})
    one = run_experiment(base).data_text()
    many = run_experiment(ExperimentConfig(**{**base.to_dict(), "workers": 3})).data_text()
    assert one == many


def test_selftest_and_console_script():
    assert main(["selftest"]) == 0
    r = subprocess.run([sys.executable, "-m", "problab.cli", "saw", "count", "--n", "3"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and r.stdout.splitlines()[-1] == "square,3,36"
