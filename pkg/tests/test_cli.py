import csv
import json
from datetime import date, timedelta

import numpy as np
import pytest

from kanf.cli import main
from kanf.core import KanNetwork, save_checkpoint
from kanf.data import OhlcvSeries, write_ohlcv_csv

SMALL = ["--h", "10", "--T", "3", "--hidden", "3", "--steps-phase1", "5", "--steps-phase2", "5"]


def run(argv, capsys):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def synth(tmp_path, capsys, kind="sine", *params, name="data"):
    out = tmp_path / name
    args = ["synth", "--kind", kind, "--out", out]
    for p in params:
        args += ["--param", p]
    code, _, err = run(args, capsys)
    assert code == 0, err
    return out / "series.csv"


def file_bytes(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file()}


def error_of(err):
    doc = json.loads(err.strip().splitlines()[-1])
    assert set(doc) == {"error", "message"}
    return doc["error"]


def test_synth_outputs(tmp_path, capsys):
    path = synth(tmp_path, capsys, "lead_lag", "length=200", "lag=2")
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "A", "B"]
    assert len(rows) == 201
    meta = json.loads((path.parent / "synth.json").read_text())
    assert meta["lag"] == 2
    cfg = json.loads((path.parent / "config.json").read_text())
    assert cfg["command"] == "synth" and cfg["params"] == {"length": 200, "lag": 2}


def test_missing_data_is_io_error(tmp_path, capsys):
    out = tmp_path / "o"
    code, _, err = run(["train", "--data", tmp_path / "nope.csv", "--out", out, *SMALL], capsys)
    assert code == 2
    assert error_of(err) == "io"
    assert not out.exists()


@pytest.mark.parametrize("extra", [
    ["--steps-phase1", "-1"],
    ["--learning-rate", "0"],
    ["--bogus"],
    ["--model", "rnn"],
    ["--h", "0"],
])
def test_validation_errors_write_nothing(tmp_path, capsys, extra):
    data = synth(tmp_path, capsys)
    out = tmp_path / "o"
    code, _, err = run(["train", "--data", data, "--out", out, *SMALL, *extra], capsys)
    assert code == 3
    assert error_of(err) == "validation"
    assert not out.exists()


def test_config_file_precedence(tmp_path, capsys):
    data = synth(tmp_path, capsys, "sine", "length=120")
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"h": 10, "T": 3, "hidden": [3], "steps_phase1": 4, "steps_phase2": 2,
                                "seed": 5}))
    out = tmp_path / "o"
    code, _, err = run(["train", "--config", conf, "--data", data, "--out", out, "--steps-phase2", "3"], capsys)
    assert code == 0, err
    echoed = json.loads((out / "config.json").read_text())
    assert echoed["steps_phase1"] == 4 and echoed["steps_phase2"] == 3 and echoed["seed"] == 5
    assert echoed["prune_threshold"] == 5e-2
    log = json.loads((out / "train_log.json").read_text())["models"][0]
    assert len(log["losses_phase1"]) == 4 and len(log["losses_phase2"]) == 3
    conf.write_text(json.dumps({"unknown_key": 1}))
    code, _, err = run(["train", "--config", conf, "--data", data, "--out", tmp_path / "o2"], capsys)
    assert code == 3


def test_train_reduces_loss_and_is_deterministic(tmp_path, capsys):
    data = synth(tmp_path, capsys, "sine", "length=300", "noise=0.1")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code, _, err = run(["train", "--data", data, "--out", out, *SMALL, "--steps-phase1", "30"], capsys)
        assert code == 0, err
        outs.append(out)
    assert (outs[0] / "checkpoints" / "000.json").exists()
    log = json.loads((outs[0] / "train_log.json").read_text())["models"][0]
    assert log["final_loss"] < log["losses_phase1"][0]
    assert file_bytes(outs[0]) == file_bytes(outs[1])


def trained(tmp_path, capsys, model="tkan", kind="sine", *params):
    data = synth(tmp_path, capsys, kind, "length=200", *params)
    out = tmp_path / f"train_{model}"
    code, _, err = run(["train", "--data", data, "--out", out, "--model", model, *SMALL], capsys)
    assert code == 0, err
    return data, out


def test_predict_rows_and_determinism(tmp_path, capsys):
    data, ckpt = trained(tmp_path, capsys, "mtkan", "lead_lag")
    a, b = tmp_path / "pa", tmp_path / "pb"
    for out in (a, b):
        code, _, err = run(["predict", "--data", data, "--checkpoint", ckpt, "--out", out,
                            "--backtest", "--plot"], capsys)
        assert code == 0, err
    with open(a / "forecast.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 3
    assert {r["series_id"] for r in rows} == {"A", "B"}
    assert all(r["actual"] != "" for r in rows)
    assert (a / "forecast.svg").read_text().lstrip().startswith("<?xml")
    assert file_bytes(a) == file_bytes(b)


def test_predict_zero_model_gives_mean(tmp_path, capsys):
    data = synth(tmp_path, capsys, "sine", "length=60")
    ckpt = save_checkpoint(tmp_path / "zero.json", KanNetwork.zeros([10, 3, 3]),
                           {"mean": [0.75], "std": [2.0], "input_scale": 1 / 3},
                           {"columns": ["x"], "h": 10, "T": 3})
    out = tmp_path / "p"
    code, _, err = run(["predict", "--data", data, "--checkpoint", ckpt, "--out", out], capsys)
    assert code == 0, err
    with open(out / "forecast.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert all(float(r["predicted"]) == 0.75 and r["actual"] == "" for r in rows)


def test_checkpoint_version_mismatch(tmp_path, capsys):
    data = synth(tmp_path, capsys, "sine", "length=60")
    ckpt = save_checkpoint(tmp_path / "c.json", KanNetwork.zeros([10, 3]))
    doc = json.loads(ckpt.read_text())
    doc["format_version"] = 99
    ckpt.write_text(json.dumps(doc))
    code, _, err = run(["predict", "--data", data, "--checkpoint", ckpt, "--out", tmp_path / "p"], capsys)
    assert code != 0
    assert error_of(err) == "checkpoint"
    assert not (tmp_path / "p").exists()


def test_drift_command(tmp_path, capsys):
    data = synth(tmp_path, capsys, "regime_switch", "length=400", "switch_at=200")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code, stdout, err = run(["drift", "--data", data, "--out", out, *SMALL,
                                 "--segment-length", "100"], capsys)
        assert code == 0, err
        outs.append(out)
    report = json.loads((outs[0] / "drift_report.json").read_text())
    assert len(report["segments"]) == 4 and len(report["boundaries"]) == 3
    assert report["threshold_mode"] == "mad"
    assert (outs[0] / "distance_matrix.csv").read_text().startswith("model,0,1,2,3")
    assert file_bytes(outs[0]) == file_bytes(outs[1])


def test_drift_rejects_short_segments(tmp_path, capsys):
    data = synth(tmp_path, capsys)
    code, _, err = run(["drift", "--data", data, "--out", tmp_path / "o", *SMALL, "--segment-length", "13"],
                       capsys)
    assert code == 3


def test_symbolify_command(tmp_path, capsys):
    _, ckpt = trained(tmp_path, capsys)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code, stdout, err = run(["symbolify", "--checkpoint", ckpt / "checkpoints" / "000.json",
                                 "--out", out, "--sample-count", "50"], capsys)
        assert code == 0, err
        outs.append(out)
    doc = json.loads((outs[0] / "symbolic.json").read_text())
    assert json.loads(stdout)["edges"] == len(doc["edges"])
    assert len(doc["formulas"]) == 3
    assert file_bytes(outs[0]) == file_bytes(outs[1])


def test_benchmark_command(tmp_path, capsys):
    data = synth(tmp_path, capsys, "lead_lag", "length=200")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code, _, err = run(["benchmark", "--data", data, "--out", out, *SMALL, "--mlp-hidden", "5;4,4"],
                           capsys)
        assert code == 0, err
        outs.append(out)
    with open(outs[0] / "benchmark.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["Model"] for r in rows] == ["T-KAN", "MT-KAN", "MLP", "MLP"]
    assert rows[2]["Parameters"] == str(10 * 5 + 5 + 5 * 3 + 3)
    assert all(np.isfinite(float(r[k])) for r in rows for k in ("MSE", "MAE", "RMSE"))
    assert file_bytes(outs[0]) == file_bytes(outs[1])


def test_ohlcv_inputs_become_volatility(tmp_path, capsys):
    rng = np.random.default_rng(0)
    paths = []
    for ticker, start in (("AAA", 0), ("BBB", 3)):
        n = 150
        close = 50 * np.exp(np.cumsum(rng.normal(0, 0.01, n)))
        dates = [date(2023, 1, 1) + timedelta(days=start + i) for i in range(n)]
        s = OhlcvSeries(ticker, dates, close, close * 1.01, close * 0.99, close, np.full(n, 1e6))
        paths.append(write_ohlcv_csv(tmp_path / f"{ticker}.csv", s))
    out = tmp_path / "o"
    code, _, err = run(["train", "--data", paths[0], "--data", paths[1], "--out", out, "--model", "mtkan",
                        *SMALL], capsys)
    assert code == 0, err
    meta = json.loads((out / "checkpoints" / "000.json").read_text())["metadata"]
    assert meta["columns"] == ["AAA", "BBB"]


def test_log_level_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("KANF_LOG", "info")
    data = synth(tmp_path, capsys, "sine", "length=60")
    code, _, err = run(["train", "--data", data, "--out", tmp_path / "o", *SMALL], capsys)
    assert code == 0
    assert "INFO" in err
