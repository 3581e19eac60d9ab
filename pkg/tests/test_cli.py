import io
import json
import time

import numpy as np
import pytest

import oracles as O
from twinmon.calibration import QuantileTable, shipped_table_path
from twinmon.cli import expand_spec, load_spec, main
from twinmon.monitoring import critical_value
from twinmon.config import MonitorConfig, Scale


def run(capsys, argv, stdin=None, monkeypatch=None):
    if stdin is not None:
        monkeypatch.setattr("sys.stdin", io.StringIO(stdin))
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def events(out):
    return [json.loads(line) for line in out.splitlines() if line.strip()]


def zero_noise_stream(n=50, k_star=20, delta=1.0, length=400):
    x = np.zeros(n + length)
    x[n + k_star - 1 :] = delta
    return x


def test_monitor_zero_noise_matches_oracle(capsys, monkeypatch):
    n, k_star = 50, 20
    x = zero_noise_stream(n, k_star)
    text = "\n".join(f"{v:g}" for v in x) + "\n"
    code, out, _ = run(capsys, ["monitor", "--n-train", "50", "--scale", "known:1", "--trace"],
                       text, monkeypatch)
    assert code == 0
    ev = events(out)
    assert ev[0]["event"] == "config" and ev[0]["n_train"] == 50
    alarm = ev[-1]
    q = critical_value(MonitorConfig(n_train=n, scale=Scale.known(1)), None, None)
    k_hat = O.first_crossing(lambda k: O.tc_value(list(x), n, k, 0.6, 20)[0], q, len(x) - n)
    assert alarm["event"] == "alarm" and alarm["k_hat"] == k_hat
    assert alarm["change_estimate"] == n + k_star - 1
    steps = [e for e in ev if e["event"] == "step"]
    assert [e["k"] for e in steps] == list(range(1, k_hat + 1))


def test_monitor_empty_input(capsys, monkeypatch):
    code, out, _ = run(capsys, ["monitor"], "", monkeypatch)
    assert code == 0
    assert events(out)[-1] == {"event": "end", "verdict": "none", "reason": "no input"}


def test_monitor_malformed_lines_skipped(capsys, monkeypatch, caplog, rng):
    vals = [f"{v:.6f}" for v in rng.normal(size=150)]
    vals.insert(5, "oops")
    vals.insert(60, "nan")
    code, out, _ = run(capsys, ["monitor", "--n-train", "100", "--threshold", "1e9"],
                       "\n".join(vals), monkeypatch)
    assert code == 0
    assert "2 malformed line(s) skipped" in caplog.text
    assert events(out)[-1]["steps"] == 50


def test_monitor_batch_same_verdict(capsys, monkeypatch):
    text = "\n".join(f"{v:g}" for v in zero_noise_stream())
    _, a, _ = run(capsys, ["monitor", "--n-train", "50", "--scale", "known:1"], text, monkeypatch)
    _, b, _ = run(capsys, ["monitor", "--n-train", "50", "--scale", "known:1", "--batch", "16"],
                  text, monkeypatch)
    assert events(a)[-1] == events(b)[-1]


@pytest.mark.parametrize("const", [1.0, 0.5])
def test_monitor_rc_constant(capsys, monkeypatch, const):
    n = 50
    x = list(zero_noise_stream(n, 20, delta=2.0))
    text = "\n".join(f"{v:g}" for v in x)
    code, out, _ = run(capsys, ["monitor", "--detector", "RC", "--n-train", str(n),
                                "--orlicz", "1.0", "--rc-constant", str(const)], text, monkeypatch)
    assert code == 0
    ev = events(out)
    assert ev[0]["rc_constant"] == const
    k_hat = O.first_crossing(
        lambda k: O.retro_value(x, n, k) / (const * O.rc_bound(k, n, 0.05, 1.0)), 1.0, len(x) - n)
    assert ev[-1]["event"] == "alarm" and ev[-1]["k_hat"] == k_hat


def test_spec_rc_constant_reaches_config():
    _, specs, _ = expand_spec({"kind": "level", "detectors": ["RC"], "rc_constant": 0.7})
    assert specs[0].config(specs[0].detectors[0]).rc_constant == 0.7


def test_exit_codes(capsys, monkeypatch, tmp_path):
    assert run(capsys, ["monitor", "--beta", "0.5"], "", monkeypatch)[0] == 2
    assert run(capsys, ["calibrate", "--law", "L_SN", "--beta", "0.4", "--draws", "5"])[0] == 2
    assert run(capsys, ["monitor", "--detector", "XYZ"], "", monkeypatch)[0] == 2
    with pytest.raises(SystemExit) as e:
        main(["nonsense"])
    assert e.value.code == 2
    # constant training sample: variance cannot be estimated
    code, _, err = run(capsys, ["monitor", "--n-train", "5", "--scale", "train_variance"],
                       "1\n1\n1\n1\n1\n2\n", monkeypatch)
    assert code == 3 and "data error" in err
    tab = QuantileTable.load(shipped_table_path("L_TC"))
    p = tab.store(tmp_path / "tc.json")
    code, _, err = run(capsys, ["monitor", "--table", str(p), "--beta", "0.7"], "1\n", monkeypatch)
    assert code == 4


def test_env_and_config_precedence(capsys, monkeypatch, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_train": 7, "beta": 0.7}))
    monkeypatch.setenv("TWINMON_N_TRAIN", "9")
    args = ["monitor", "--config", str(cfg), "--threshold", "1e9"]
    _, out, _ = run(capsys, args, "1\n2\n", monkeypatch)
    head = events(out)[0]
    assert head["n_train"] == 9 and head["beta"] == 0.7
    _, out, _ = run(capsys, args + ["--n-train", "11"], "1\n2\n", monkeypatch)
    assert events(out)[0]["n_train"] == 11
    monkeypatch.setenv("TWINMON_N_TRAIN", "nine")
    assert run(capsys, args, "1\n", monkeypatch)[0] == 2


def test_calibrate_fast_timing(capsys, tmp_path):
    t0 = time.time()
    code, out, err = run(capsys, ["calibrate", "--law", "L_SN", "--draws", "100", "--fast",
                                  "--out", str(tmp_path / "t.json")])
    assert time.time() - t0 < 10
    assert code == 0
    assert out.splitlines()[1].split() == ["90%", "91%", "92%", "93%", "94%", "95%", "96%",
                                           "97%", "98%", "99%"]
    meta = json.loads(err.strip().splitlines()[-1])
    assert meta["fingerprint"] == QuantileTable.load(tmp_path / "t.json").fingerprint


def test_calibrate_reproduces_shipped_null_table(capsys, tmp_path):
    p = tmp_path / "c.json"
    code, _, _ = run(capsys, ["calibrate", "--law", "NULL_SIM", "--detector", "C", "--out", str(p)])
    assert code == 0
    assert p.read_bytes() == shipped_table_path("NULL_SIM(C)").read_bytes()


def test_calibrate_seed_changes_table(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    base = ["calibrate", "--law", "L_TC", "--draws", "50", "--fast"]
    run(capsys, base + ["--seed", "1", "--out", str(a)])
    run(capsys, base + ["--seed", "1", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()
    run(capsys, base + ["--seed", "2", "--out", str(b)])
    assert QuantileTable.load(a).quantiles != QuantileTable.load(b).quantiles


def test_tables_listing(capsys):
    code, out, _ = run(capsys, ["tables"])
    assert code == 0
    assert out.startswith("L_SN")
    assert "NULL_SIM(C)" in out


def test_shipped_specs_expand():
    kind, specs, _ = expand_spec(load_spec("table2"))
    assert kind == "level" and len(specs) == 12
    assert {sp.horizon for sp in specs} == {20 * sp.n_train for sp in specs}
    kind, specs, _ = expand_spec(load_spec("table3"), fast=True)
    assert kind == "power" and [sp.change.delta for sp in specs[:3]] == [0.15, 0.25, 0.35]
    assert specs[0].replications == 200 and specs[0].change.k_star == 400
    kind, specs, _ = expand_spec(load_spec("fig1"))
    assert [sp.change.k_star for sp in specs] == [1, 400, 1000, 1600]
    kind, specs, durations = expand_spec(load_spec("fig2"))
    assert kind == "epidemic" and len(durations) == 20 and durations[-1] == 1.0


def _write_spec(tmp_path, detectors):
    p = tmp_path / "s.spec"
    p.write_text(json.dumps({"experiment_id": "mini", "kind": "power", "n_train": 30,
                             "k_star": ["2N"], "delta": [1.0], "t_horizon": 5,
                             "detectors": detectors, "replications": 20, "seed": 4}))
    return p


def test_simulate_deterministic(capsys, tmp_path):
    spec = _write_spec(tmp_path, ["TC", "C", "MM"])
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(capsys, ["simulate", str(spec), "--out", str(a)])[0] == 0
    assert run(capsys, ["simulate", str(spec), "--out", str(b), "--threads", "2"])[0] == 0
    assert a.read_text() == b.read_text()
    assert a.read_text().splitlines()[0].startswith("experiment_id")


def test_simulate_unknown_detector(capsys, tmp_path):
    spec = _write_spec(tmp_path, ["TC", "BOGUS"])
    code, _, err = run(capsys, ["simulate", str(spec), "--out", str(tmp_path / "x.csv")])
    assert code == 2 and "BOGUS" in err
    assert run(capsys, ["simulate", str(tmp_path / "nope.spec")])[0] == 2


def test_analyze_demo(capsys, tmp_path):
    dets = "TC,C,PC,FC,WC,MM,SNTC" + (",NPTC" if shipped_table_path("L_F").exists() else "")
    code, out, _ = run(capsys, ["analyze", "--demo", "--training-days", "31", "--detectors", dets,
                                "--trace-dir", str(tmp_path / "tr")])
    assert code == 0
    rep = json.loads(out)
    assert rep["n_train"] == 31
    assert set(rep["detectors"]) == set(dets.split(","))
    assert rep["detectors"]["TC"]["detected"]
    assert (tmp_path / "tr" / "trace_TC.csv").exists()


def test_analyze_missing_column(capsys, tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("date,count\n2021-01-01,1\n")
    code, _, err = run(capsys, ["analyze", "--input", str(p)])
    assert code == 3 and "value" in err
    code, out, _ = run(capsys, ["analyze", "--input", str(p), "--value-col", "count",
                                "--training-days", "31"])
    assert code == 3
    assert run(capsys, ["analyze"])[0] == 2
