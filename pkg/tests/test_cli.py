import json

import numpy as np
import pandas as pd
import pytest
import yaml

from hybridcast.backtest import intervals_to_csv, read_report_csv
from hybridcast.cli import main
from hybridcast.series import TimeSeries, parse_csv, to_csv
from hybridcast.synthetic import synthetic_load

SMALL_FLAGS = ["--context-hours", "168", "--horizon", "4"]


def _csv(tmp_path, values, name="in.csv", drop=()):
    s = TimeSeries.from_values(values)
    lines = to_csv(s).splitlines()
    keep = [lines[0]] + [ln for i, ln in enumerate(lines[1:]) if i not in drop]
    p = tmp_path / name
    p.write_text("\n".join(keep) + "\n")
    return p


def test_ingest_clean_file(tmp_path, capsys):
    src = _csv(tmp_path, np.arange(100.0))
    assert main(["ingest", "--input", str(src), "--out", str(tmp_path / "out.csv")]) == 0
    assert "100 rows, 0 gaps filled" in capsys.readouterr().out
    assert len(parse_csv((tmp_path / "out.csv").read_text())) == 100


def test_ingest_one_gap(tmp_path, capsys):
    src = _csv(tmp_path, np.arange(10.0), drop={4})
    assert main(["ingest", "--input", str(src), "--out", str(tmp_path / "out.csv")]) == 0
    assert "1 gap filled" in capsys.readouterr().out
    np.testing.assert_allclose(parse_csv((tmp_path / "out.csv").read_text()).values, np.arange(10.0))


def test_ingest_boundary_gap(tmp_path, capsys):
    src = tmp_path / "in.csv"
    src.write_text("timestamp,value\n2024-01-01T00:00:00Z,\n2024-01-01T01:00:00Z,2\n")
    assert main(["ingest", "--input", str(src), "--out", str(tmp_path / "out.csv")]) == 2
    assert "first point" in capsys.readouterr().err


def test_ingest_parse_error_names_row(tmp_path, capsys):
    src = tmp_path / "in.csv"
    src.write_text("timestamp,value\n2024-01-01T00:00:00Z,1\nnot-a-date,2\n")
    assert main(["ingest", "--input", str(src), "--out", str(tmp_path / "out.csv")]) == 2
    assert "row 3" in capsys.readouterr().err


def test_synth_writes_bundled_series(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s.csv")]) == 0
    s = parse_csv((tmp_path / "s.csv").read_text())
    np.testing.assert_array_equal(s.values, synthetic_load().values)


def test_minimal_backtest_has_24_rows(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({"methods": ["point"], "context_lens": [168]}))
    out = tmp_path / "run"
    assert main(["backtest", "--input", "synthetic", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_report_csv((out / "report.csv").read_bytes())
    assert len(rows) == 24 and {r.method for r in rows} == {"point"}
    for name in ("report.json", "plot_mse_168h.csv", "config.resolved.yaml"):
        assert (out / name).is_file()


def test_snapshot_reproduces_outputs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    flags = ["--methods", "point,bagged,avg,regression-stack", *SMALL_FLAGS]
    assert main(["backtest", "--input", "synthetic", "--out", str(a), "--seed", "3", *flags]) == 0
    snap = yaml.safe_load((a / "config.resolved.yaml").read_text())
    assert snap["input"] == "synthetic" and snap["seed"] == 3 and snap["horizon"] == 4
    assert main(["backtest", "--config", str(a / "config.resolved.yaml"), "--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({"methods": ["point"], "horizon": 2, "seed": 1}))
    out = tmp_path / "run"
    assert main(["backtest", "--input", "synthetic", "--config", str(cfg), "--out", str(out), *SMALL_FLAGS]) == 0
    snap = yaml.safe_load((out / "config.resolved.yaml").read_text())
    assert snap["horizon"] == 4 and snap["seed"] == 1 and snap["context_lens"] == [168]


def test_missing_input_file(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert main(["backtest", "--input", str(missing), "--out", str(tmp_path / "run")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("horizon: 30\n")
    assert main(["backtest", "--input", "synthetic", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 1
    assert "horizon" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    assert main(["backtest"]) == 1
    assert main(["frobnicate"]) == 1


def test_partial_context_failure_exits_zero(tmp_path, capsys):
    src = tmp_path / "short.csv"
    src.write_text(to_csv(synthetic_load(1500, seed=2)))
    out = tmp_path / "run"
    code = main(["backtest", "--input", str(src), "--out", str(out), "--context-hours", "168,1600",
                 "--horizon", "2", "--methods", "point"])
    assert code == 0
    assert "1600h" in capsys.readouterr().err
    assert "point,1600,1,--,--,," in (out / "report.csv").read_text()


def test_feedback_trace_written(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({"methods": ["point"], "feedback": True, "feedback_max_iters": 2,
                                   "forecaster_a": {"kind": "ar_ols", "p": 2}, "stride": 6}))
    out = tmp_path / "run"
    assert main(["backtest", "--input", "synthetic", "--config", str(cfg), "--out", str(out), *SMALL_FLAGS]) == 0
    lines = (out / "feedback_trace_168h.csv").read_text().splitlines()
    assert lines[0] == "iteration,validation_rmse" and 2 <= len(lines) - 1 <= 3


def _validation_file(run, sigma_scale, n=4000, seed=0):
    rng = np.random.default_rng(seed)
    mu = rng.normal(100, 10, n)
    y = mu + rng.normal(0, 5, n)
    half = 1.96 * 5 * sigma_scale
    df = pd.DataFrame({"window_id": np.arange(n), "step": 1, "mean": mu, "lower": mu - half,
                       "upper": mu + half, "actual": y})
    df["covered"] = ((df.lower <= y) & (y <= df.upper)).astype(int)
    run.mkdir(exist_ok=True)
    (run / "intervals_validation_168h.csv").write_text(intervals_to_csv(df))


def test_calibrate_well_calibrated(tmp_path):
    run = tmp_path / "run"
    _validation_file(run, 1.1)
    assert main(["calibrate", "--run", str(run)]) == 0
    doc = json.loads((run / "inflation.json").read_text())
    assert doc["contexts"]["168"]["factor"] == 1.0 and doc["contexts"]["168"]["reached"]


def test_calibrate_half_sigma(tmp_path):
    run = tmp_path / "run"
    _validation_file(run, 0.5, n=20000, seed=1)
    assert main(["calibrate", "--run", str(run), "--max-factor", "3"]) == 0
    doc = json.loads((run / "inflation.json").read_text())
    assert doc["contexts"]["168"]["factor"] == pytest.approx(2.0, abs=0.05)


def test_calibrate_unreachable_warns(tmp_path, capsys):
    run = tmp_path / "run"
    _validation_file(run, 0.2)
    assert main(["calibrate", "--run", str(run)]) == 0
    assert "unreachable" in capsys.readouterr().err
    entry = json.loads((run / "inflation.json").read_text())["contexts"]["168"]
    assert entry["reached"] is False and entry["coverage"] < 0.95


def test_calibrate_without_artifacts(tmp_path):
    assert main(["calibrate", "--run", str(tmp_path)]) == 2


def test_calibrate_on_backtest_output(tmp_path):
    out = tmp_path / "run"
    assert main(["backtest", "--input", "synthetic", "--out", str(out), "--methods", "regression-stack", *SMALL_FLAGS]) == 0
    assert main(["calibrate", "--run", str(out)]) == 0
    entry = json.loads((out / "inflation.json").read_text())["contexts"]["168"]
    assert 1.0 <= entry["factor"] <= 2.0
