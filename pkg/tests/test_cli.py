import json

import pytest

from redoffload.cli import main
from redoffload.evaluation import read_cdf_csv, read_degradation_csv, read_sweep_csv
from redoffload.sim import read_result_csv
from redoffload.trace import load_trace


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--seed", "2", "--n-tasks", "700", "--out", str(d / "t.csv"),
                 "--save-config", str(d / "cfg.json")]) == 0
    return d


def test_gen_and_stats(workdir):
    assert load_trace(workdir / "t.csv").n_tasks == 700
    assert main(["gen", "--config", str(workdir / "cfg.json"), "--out", str(workdir / "t2.csv")]) == 0
    assert (workdir / "t2.csv").read_bytes() == (workdir / "t.csv").read_bytes()
    assert main(["stats", "--trace", str(workdir / "t.csv"), "--out-dir", str(workdir / "st"),
                 "--points", "50"]) == 0
    curves = read_cdf_csv(workdir / "st" / "cdf.csv")
    assert {"min", "server_1", "best_rssi"} <= set(curves)


def test_train_and_simulate(workdir, capsys):
    t = str(workdir / "t.csv")
    assert main(["train-predictor", "--trace", t, "--epochs", "2", "--out", str(workdir / "p.npz")]) == 0
    assert main(["train-agent", "--trace", t, "--steps", "150", "--out", str(workdir / "a.npz"),
                 "--log", str(workdir / "log.csv")]) == 0
    runs = [["--controller", "all"], ["--controller", "best-rssi"], ["--controller", "random"],
            ["--controller", "fixed:2"], ["--controller", "myopic", "--checkpoint", str(workdir / "p.npz")],
            ["--controller", "drl", "--checkpoint", str(workdir / "a.npz")]]
    for k, extra in enumerate(runs):
        out = workdir / f"sim{k}"
        capsys.readouterr()
        assert main(["simulate", "--trace", t, "--out-dir", str(out), *extra]) == 0
        summary = json.loads(capsys.readouterr().out)
        res = read_result_csv(out / "result.csv")
        assert summary["fraction_below"] == res.fraction_below
        assert (out / "decisions.csv").exists()
    assert main(["report", "--trace", t, "--predictor", str(workdir / "p.npz"),
                 "--out-dir", str(workdir / "rep")]) == 0
    assert {r.missing for r in read_degradation_csv(workdir / "rep" / "degradation.csv")} == {0, 1, 2}


def test_sweep_and_report(workdir):
    spec = {"controllers": [{"kind": "all"}, {"kind": "myopic", "params": [0.2]}], "seeds": [0, 1],
            "synthetic": json.loads((workdir / "cfg.json").read_text()), "predictor": {"epochs": 1}}
    (workdir / "spec.json").write_text(json.dumps(spec))
    assert main(["sweep", "--spec", str(workdir / "spec.json"), "--out-dir", str(workdir / "sw")]) == 0
    rows = read_sweep_csv(workdir / "sw" / "sweep.csv")
    assert len(rows) == 2 * 2 + 2
    assert main(["report", "--trace", str(workdir / "t.csv"), "--sweep", str(workdir / "sw" / "sweep.csv"),
                 "--out-dir", str(workdir / "rep2")]) == 0
    table = json.loads((workdir / "rep2" / "tradeoff.json").read_text())
    assert [r["controller"] for r in table] == ["all-servers", "myopic"]


def test_exit_codes(workdir, tmp_path):
    assert main(["stats", "--trace", str(tmp_path / "missing.csv"), "--out-dir", str(tmp_path)]) == 1
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["sweep", "--spec", str(tmp_path / "bad.json")]) == 1
    assert main(["simulate", "--trace", str(workdir / "t.csv"), "--controller", "myopic",
                 "--out-dir", str(tmp_path)]) == 1
    assert main(["simulate", "--trace", str(workdir / "t.csv"), "--controller", "fixed:9",
                 "--out-dir", str(tmp_path)]) != 0
    with pytest.raises(SystemExit):
        main(["nonsense"])
