import json
import shutil
from pathlib import Path

import pytest

from cubeshap.cli import main
from cubeshap.model import ContributionMatrix
from cubeshap.runconfig import parse_config_text, ranking_from_report
from cubeshap.errors import ConfigError

from oracles import TOY_DELTA

DATA = Path(__file__).resolve().parents[1] / "data"


@pytest.fixture
def workdir(tmp_path):
    for name in ("requests.csv", "requests.conf"):
        shutil.copy(DATA / name, tmp_path / name)
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


def test_attribute_json_report(workdir):
    out = workdir / "c.json"
    assert run("attribute", "--config", workdir / "requests.conf", "--out", out) == 0
    report = json.loads(out.read_text())
    assert report["seed"] == 42 and report["config"]["seed"] == 42
    c = ContributionMatrix.from_dict(report["contribution"])
    assert c.method == "aumann-ratio-closed"
    assert c.delta_y == pytest.approx(TOY_DELTA)
    assert f"{c.delta_y:.4%}" == "-4.7619%"


def test_reports_are_byte_identical(workdir):
    for engine in ("permutation", "kernel"):
        a, b = workdir / f"a_{engine}.json", workdir / f"b_{engine}.json"
        for path in (a, b):
            assert run("attribute", "--config", workdir / "requests.conf", "--engine", engine,
                       "--samples", 200, "--seed", 7, "--out", path) == 0
        assert a.read_bytes() == b.read_bytes()
        assert json.loads(a.read_text())["seed"] == 7


def test_rank_equals_marginalized_attribute(workdir):
    report, ranked = workdir / "c.json", workdir / "r.json"
    for engine in ("auto", "exact", "permutation"):
        assert run("attribute", "--config", workdir / "requests.conf", "--engine", engine, "--out", report) == 0
        assert run("rank", "--config", workdir / "requests.conf", "--engine", engine, "--out", ranked) == 0
        expected = ranking_from_report(json.loads(report.read_text()))
        got = [(r["subcube"], r["total"]) for r in json.loads(ranked.read_text())["ranking"]]
        assert got == expected


def test_other_formats(workdir, capsys):
    assert run("attribute", "--config", workdir / "requests.conf", "--format", "csv") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "subcube,succ,total,total"
    assert run("rank", "--config", workdir / "requests.conf", "--format", "table") == 0
    assert capsys.readouterr().out.splitlines()[1].split()[1] == "dc2"


def test_empty_csv_exit_2(workdir, capsys):
    (workdir / "empty.csv").write_text("")
    assert run("attribute", "--config", workdir / "requests.conf", "--input", workdir / "empty.csv") == 2
    assert "no records" in capsys.readouterr().err


def test_missing_file_exit_4(workdir):
    assert run("attribute", "--config", workdir / "requests.conf", "--input", workdir / "nope.csv") == 4
    assert run("attribute", "--config", workdir / "missing.conf") == 4


def test_zero_denominator_exit_3(tmp_path, capsys):
    (tmp_path / "z.csv").write_text("t,g,a,b\nr,x,1,0\nr,y,2,0\nt,x,1,1\nt,y,1,2\n")
    (tmp_path / "z.conf").write_text(
        'input = "z.csv"\ntimestep_column = "t"\nexplicand = "t"\nreference = "r"\n'
        'attributes = ["g"]\ndrill = ["g"]\nsubmeasure a = sum(a)\nsubmeasure b = sum(b)\nmeasure = a / b\n'
    )
    assert run("attribute", "--config", tmp_path / "z.conf") == 3
    assert "UndefinedMeasure" in capsys.readouterr().err


def test_non_additive_routes_to_raw_records(tmp_path):
    (tmp_path / "v.csv").write_text(
        "day,page,user\nd1,p1,u1\nd1,p2,u2\nd2,p2,u2\nd0,p1,u1\nd0,p2,u3\n"
    )
    (tmp_path / "v.conf").write_text(
        'input = "v.csv"\ntimestep_column = "day"\nexplicand = "d2"\nreference = ["d1", "d0"]\n'
        'attributes = ["page"]\ndrill = ["page"]\nsubmeasure dau = count_distinct(user)\nmeasure = "dau"\n'
    )
    out = tmp_path / "c.json"
    assert run("attribute", "--config", tmp_path / "v.conf", "--out", out) == 0
    c = ContributionMatrix.from_dict(json.loads(out.read_text())["contribution"])
    assert c.method == "nongam-exact"
    assert c.total == pytest.approx(c.delta_y)


def test_config_validation():
    base = ('input = "x.csv"\ntimestep_column = "t"\nattributes = ["g"]\ndrill = ["g"]\n'
            'submeasure s = sum(v)\nmeasure = "s"\n')
    with pytest.raises(ConfigError):
        parse_config_text(base + 'explicand = "a"\nreference = ["b", "a"]\n')
    with pytest.raises(ConfigError):
        parse_config_text(base.replace('drill = ["g"]', 'drill = ["h"]') + 'explicand = "a"\nreference = "b"\n')
    with pytest.raises(ConfigError):
        parse_config_text(base + 'explicand = "a"\nreference = "b"\ncolour = "red"\n')
    cfg = parse_config_text(base + 'explicand = "a"\nreference = ["b", "c"]\nseed = 9\n')
    assert cfg.expected_mode and cfg.engine.seed == 9


def test_experiment_commands(tmp_path, capsys):
    assert run("experiment", "berkeley", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "+12.15%" in out and "-18.92%" in out
    assert (tmp_path / "berkeley.json").exists() and (tmp_path / "berkeley.csv").exists()
    assert run("experiment", "rq1", "--set", "repetitions=1", "--set", "sample_sizes=[100]", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "rq1.json").read_text())
    assert report["x"] == [100] and report["repetitions"] == 1
    assert run("experiment", "rq4") == 2
    assert run("experiment", "rq1", "--set", "bogus=1") == 2


def test_rq2_twice_identical(tmp_path):
    args = ["--set", "repetitions=2", "--set", "decays=[0.1,0.5]", "--set", "users=2000"]
    assert run("experiment", "rq2", *args, "--out", tmp_path / "a") == 0
    assert run("experiment", "rq2", *args, "--out", tmp_path / "b") == 0
    for name in ("rq2.json", "rq2.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
