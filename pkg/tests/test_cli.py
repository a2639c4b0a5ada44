import csv
import io
import json

import pytest

from trajpred.cli import main

RASTER = ["--size", "46", "--resolution", "0.75"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "scenes.json"
    assert main(["gen", "--count", "40", "--seed", "1", "--out", str(data)]) == 0
    assert main(["trajset", "--data", str(data), "--epsilon", "2", "--out", str(root / "ts.json")]) == 0
    return root


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_gen_is_deterministic(workspace, tmp_path):
    assert run("gen", "--count", 40, "--seed", 1, "--out", tmp_path / "again.json") == 0
    assert (tmp_path / "again.json").read_bytes() == (workspace / "scenes.json").read_bytes()
    assert run("gen", "--count", 40, "--seed", 2, "--out", tmp_path / "other.json") == 0
    assert (tmp_path / "other.json").read_bytes() != (workspace / "scenes.json").read_bytes()


def test_gen_from_config_file(tmp_path):
    (tmp_path / "g.json").write_text(json.dumps({"count": 3}))
    assert run("gen", "--config", tmp_path / "g.json", "--out", tmp_path / "s.json") == 0
    assert len(json.loads((tmp_path / "s.json").read_text())) == 3


def test_rasterize_single_and_all(workspace, tmp_path):
    assert run("rasterize", "--data", workspace / "scenes.json", "--index", 0, *RASTER, "--out", tmp_path / "one.png") == 0
    assert (tmp_path / "one.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert run("rasterize", "--data", workspace / "scenes.json", *RASTER, "--out", tmp_path / "all") == 0
    assert len(list((tmp_path / "all").glob("*.png"))) == 40


def test_baseline_oracle_beats_constant_velocity(workspace, tmp_path, capsys):
    assert run("baseline", "--data", workspace / "scenes.json", "--out", tmp_path / "b.csv") == 0
    rows = {r["arm"]: r for r in read_csv(tmp_path / "b.csv")}
    assert float(rows["physics_oracle"]["minade1"]) <= float(rows["constant_velocity"]["minade1"])


def test_train_eval_report_plot_chain(workspace, tmp_path, capsys):
    data, ts = workspace / "scenes.json", workspace / "ts.json"
    enc = tmp_path / "enc.ckpt"
    assert run("pretrain", "--data", data, "--count", 10, "--epochs", 1, *RASTER, "--out", enc) == 0
    assert "rotation accuracy" in capsys.readouterr().out
    for arm, extra in (("scratch", []), ("pretrained", ["--encoder", enc])):
        ckpt = tmp_path / f"{arm}.ckpt"
        assert run("train", "--data", data, "--trajset", ts, "--epochs", 1, "--hidden", 8, *RASTER, *extra, "--out", ckpt) == 0
        assert run(
            "eval", "--data", data, "--trajset", ts, "--model", ckpt, "--arm", arm, *RASTER,
            "--out", tmp_path / "runs" / f"{arm}.json",
        ) == 0
    out = capsys.readouterr().out
    assert out.count("scratch,0,") == 1 and out.count("pretrained,0,") == 1

    assert run("report", "--runs", tmp_path / "runs", "--out", tmp_path / "report.csv") == 0
    rows = read_csv(tmp_path / "report.csv")
    assert [(r["arm"], r["seed"]) for r in rows] == [("pretrained", "0"), ("pretrained", "median"), ("scratch", "0"), ("scratch", "median")]

    assert run("plot", "hitrate", "--runs", tmp_path / "runs", "--k-max", 5, "--out", tmp_path / "h.svg") == 0
    assert run(
        "plot", "overlay", "--data", data, "--index", 2, "--trajset", ts, *RASTER,
        "--model", f"scratch:covernet:{tmp_path / 'scratch.ckpt'}", "--out", tmp_path / "o.svg",
    ) == 0
    assert 'data-arm="scratch"' in (tmp_path / "o.svg").read_text()


def test_mtp_head_without_trajset(workspace, tmp_path):
    ckpt = tmp_path / "mtp.ckpt"
    assert run("train", "--data", workspace / "scenes.json", "--head", "mtp", "--no-freeze", "--epochs", 1, "--hidden", 8, *RASTER, "--out", ckpt) == 0
    assert run("eval", "--data", workspace / "scenes.json", "--head", "mtp", "--model", ckpt, *RASTER, "--out", tmp_path / "r.json") == 0
    assert json.loads((tmp_path / "r.json").read_text())["head"] == "mtp"


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["train", "--data", "x", "--head", "lstm", "--out", "y"])
    assert exc.value.code == 2


def test_runtime_errors_exit_1(workspace, tmp_path, capsys):
    assert run("baseline", "--data", tmp_path / "nope.json", "--out", tmp_path / "b.csv") == 1
    assert "nope.json" in capsys.readouterr().err
    assert run("train", "--data", workspace / "scenes.json", "--out", tmp_path / "m.ckpt") == 1
    assert "--trajset" in capsys.readouterr().err
    assert run("report", "--runs", tmp_path, "--out", tmp_path / "r.csv") == 1
    assert run("rasterize", "--data", workspace / "scenes.json", "--index", 99, "--out", tmp_path / "x.png") == 1
    (tmp_path / "bad.ckpt").write_bytes(b"junk")
    assert run("eval", "--data", workspace / "scenes.json", "--head", "mtp", "--model", tmp_path / "bad.ckpt", "--out", tmp_path / "r.json") == 1
    assert "checkpoint" in capsys.readouterr().err
