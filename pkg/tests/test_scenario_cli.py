import json
import math
import os

import numpy as np
import pytest

from ipidcd import (
    ModelError,
    ObservationSequence,
    ingest_csv,
    parse_config,
    run_scenario,
    synthetic_days,
)
from ipidcd.cli import main

BASE = """
[model]
family = poisson
period = 12
boundaries = 3, 6, 9, 12
baseline = 1, 2, 4, 2

[grid]
multipliers = 2

[detector]
kind = all
threshold = {threshold}

[scenario]
day_length = 24
reset_policy = {policy}
"""


def _cfg(policy="at-day-boundary", threshold=4.0):
    return parse_config(BASE.format(policy=policy, threshold=threshold))


def _stream(cfg, seed=0, days=4, event_day=None, mult=3.0):
    return synthetic_days(cfg.model(cfg.baseline), days, 24, seed, event_day=event_day, multiplier=mult)


def test_never_equals_manual_stepping():
    cfg = _cfg("never")
    seq = _stream(cfg, 1, event_day=3)
    out = run_scenario(cfg, {"c": seq})
    det = cfg.detector(cfg.model(cfg.baseline))
    ws, fired_at = [], None
    for k, y in zip(seq.indices, seq.values):
        res = det.step(y)
        ws.append(det.statistic)
        if res is not None:
            fired_at = res.stopping_time
            break
    trace = out.modalities["c"]
    assert trace.W.tolist() == ws
    assert fired_at is not None and [a.index for a in out.alarms] == [fired_at]
    day = (fired_at - 1) // 24 + 1
    assert trace.day_verdicts[day - 1] == "alarm"
    assert all(v == "not-monitored" for v in trace.day_verdicts[day:])


def test_day_boundary_reset_makes_days_independent():
    cfg = _cfg("at-day-boundary", threshold=1e9)
    a = _stream(cfg, 1)
    b = a.values.copy()
    b[:24] = _stream(cfg, 99, days=1).values
    ta = run_scenario(cfg, {"c": a}).modalities["c"]
    tb = run_scenario(cfg, {"c": ObservationSequence(b)}).modalities["c"]
    assert ta.W[:24].tolist() != tb.W[:24].tolist()
    assert ta.W[24:].tolist() == tb.W[24:].tolist()


def test_day_boundary_skips_rest_of_day_after_alarm():
    cfg = _cfg("at-day-boundary", threshold=2.0)
    seq = _stream(cfg, 3, event_day=2, mult=6.0)
    out = run_scenario(cfg, {"c": seq})
    trace = out.modalities["c"]
    assert "alarm" in trace.day_verdicts
    for a in out.alarms:
        # nothing after the alarm is consumed until the next day starts
        nxt = [n for n in trace.n if n > a.index]
        if nxt:
            assert (nxt[0] - 1) % 24 == 0
    assert len({a.day for a in out.alarms}) == len(out.alarms)


def test_at_alarm_restarts_next_sample():
    cfg = _cfg("at-alarm", threshold=2.0)
    seq = _stream(cfg, 3, event_day=2, mult=6.0)
    out = run_scenario(cfg, {"c": seq})
    trace = out.modalities["c"]
    assert len(trace.n) == 96
    assert len(out.alarms) > 1
    for a in out.alarms:
        if a.index < 96:
            fresh = cfg.detector(cfg.model(cfg.baseline)).reset(a.index + 1)
            fresh.advance(seq.values[a.index])
            assert trace.W[a.index] == fresh.statistic


def test_empty_stream():
    out = run_scenario(_cfg(), {"c": ObservationSequence([])})
    assert len(out.modalities["c"].n) == 0 and not out.alarms and out.day_verdicts == []


def test_partial_day_rejected():
    with pytest.raises(ModelError, match="whole number"):
        run_scenario(_cfg(), {"c": ObservationSequence(np.ones(30))})


def test_event_day_synthetic_alarm_and_overall_verdicts():
    cfg = _cfg(threshold=math.log(4 * 24))
    streams = {"a": _stream(cfg, 5, event_day=3, mult=4.0), "b": _stream(cfg, 6)}
    out = run_scenario(cfg, streams)
    assert out.modalities["a"].day_verdicts[2] == "alarm"
    assert out.day_verdicts[2] == "alarm"
    assert len(out.day_verdicts) == 4


def test_synthetic_days_event_window():
    cfg = _cfg()
    model = cfg.model(cfg.baseline)
    quiet = synthetic_days(model, 3, 24, 7)
    loud = synthetic_days(model, 3, 24, 7, event_day=2, event_start=10, multiplier=50.0)
    assert np.array_equal(quiet.values[:33], loud.values[:33])
    assert loud.values[33:48].mean() > 10 * quiet.values[33:48].mean() + 1
    assert np.array_equal(quiet.values[48:], loud.values[48:])


def test_baseline_fit_from_config(tmp_path):
    cfg = _cfg()
    train = synthetic_days(cfg.model(cfg.baseline), 50, 24, 11)
    from ipidcd import write_counts_csv

    path = write_counts_csv(train, tmp_path / "train.csv")
    text = BASE.format(policy="never", threshold=4.0).replace("baseline = 1, 2, 4, 2", f"baseline_fit = {path}")
    fitted = parse_config(text)
    out = run_scenario(fitted, {"c": _stream(cfg, 1)})
    assert np.allclose(out.modalities["c"].baseline, (1, 2, 4, 2), rtol=0.2)


# CLI


def _write_cfg(tmp_path, threshold=4.0, extra=""):
    text = BASE.format(policy="at-day-boundary", threshold=threshold) + extra
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


def test_cli_simulate_fit_detect_round_trip(tmp_path):
    cfg_path = _write_cfg(tmp_path, threshold=3.0)
    sim = tmp_path / "sim"
    rc = main(["simulate", "--config", cfg_path, "--modality", "c", "--days", "4", "--event-day", "3",
               "--default-multiplier", "4", "--train-days", "5", "--seed", "2", "--out", str(sim)])
    assert rc == 2
    rc = main(["fit", "--config", cfg_path, "--train", f"c={sim / 'train_c.csv'}", "--out", str(tmp_path / "b.json")])
    assert rc == 0
    rc = main(["detect", "--config", cfg_path, "--input", f"c={sim / 'c.csv'}", "--baseline",
               str(tmp_path / "b.json"), "--out", str(tmp_path / "det")])
    cfg = parse_config(open(cfg_path).read())
    base = tuple(json.load(open(tmp_path / "b.json"))["modalities"]["c"])
    ref = run_scenario(cfg, {"c": ingest_csv(str(sim / "c.csv"))}, {"c": base})
    assert rc == (2 if ref.any_alarm else 0)
    doc = json.load(open(tmp_path / "det" / "report.json"))
    assert doc["modalities"]["c"]["W"] == ref.modalities["c"].W.tolist()
    assert doc["alarms"] == json.loads(json.dumps([vars(a) for a in ref.alarms]))


def test_cli_exit_codes(tmp_path, capsys):
    cfg_path = _write_cfg(tmp_path, threshold=1e6)
    csv = tmp_path / "c.csv"
    csv.write_text("index,value\n" + "".join(f"{i},1\n" for i in range(1, 25)))
    assert main(["detect", "--config", cfg_path, "--input", f"c={csv}", "--out", str(tmp_path / "o")]) == 0
    bad = tmp_path / "bad.csv"
    bad.write_text("index,value\n1,1\n2,-1\n")
    assert main(["detect", "--config", cfg_path, "--input", f"c={bad}", "--out", str(tmp_path / "o")]) == 1
    assert "line 3" in capsys.readouterr().err
    assert main(["detect", "--config", str(tmp_path / "missing.ini"), "--input", f"c={csv}",
                 "--out", str(tmp_path / "o")]) == 1
    with pytest.raises(SystemExit) as info:
        main(["detect", "--bogus"])
    assert info.value.code == 1


def test_cli_calibrate_and_evaluate(tmp_path, capsys):
    cfg_path = _write_cfg(tmp_path)
    assert main(["calibrate", "--config", cfg_path, "--beta", "1000"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["log_beta"] == math.log(1000)
    assert main(["calibrate", "--config", cfg_path]) == 1
    rc = main(["evaluate", "--config", cfg_path, "--change", "scale:2", "--betas", "20", "50",
               "--reps", "100", "--out", str(tmp_path / "ev"), "--format", "both"])
    assert rc == 0
    assert os.path.exists(tmp_path / "ev" / "efficiency.csv")
    rep = json.load(open(tmp_path / "ev" / "report.json"))
    assert rep["betas"] == [20.0, 50.0] and "pass" in rep
    assert main(["evaluate", "--config", cfg_path, "--change", "single:9:3", "--out", str(tmp_path / "x")]) == 1


def test_cli_report_rerenders(tmp_path):
    cfg_path = _write_cfg(tmp_path, threshold=3.0)
    main(["simulate", "--config", cfg_path, "--modality", "c", "--days", "2", "--seed", "1",
          "--out", str(tmp_path / "s"), "--format", "json"])
    assert main(["report", "--in", str(tmp_path / "s" / "report.json"), "--out", str(tmp_path / "r"),
                 "--format", "both"]) == 0
    assert open(tmp_path / "s" / "report.json").read() == open(tmp_path / "r" / "report.json").read()
    assert os.path.exists(tmp_path / "r" / "trajectory_c.csv")
