import math

import numpy as np
import pytest

import oracles as O
from twinmon import ConfigError
from twinmon.monitoring import critical_value
from twinmon.simlab import (
    RESULT_COLUMNS,
    TRUNC_EXP_MEAN,
    TRUNC_EXP_VAR,
    TRUNC_POINT,
    ChangeSpec,
    ExperimentSpec,
    NoiseModel,
    delays,
    emit_results,
    generate_stream,
    read_results,
    run_delay_experiment,
    run_epidemic_experiment,
    run_experiment,
    run_level_experiment,
    run_power_experiment,
)


def test_truncexp_moments_closed_form():
    c = TRUNC_POINT
    mass = 1 - math.exp(-c)
    mean = (1 - math.exp(-c) * (c + 1)) / mass
    m2 = (2 - math.exp(-c) * (c * c + 2 * c + 2)) / mass
    assert TRUNC_EXP_MEAN == pytest.approx(mean, rel=1e-12)
    assert TRUNC_EXP_VAR == pytest.approx(m2 - mean**2, rel=1e-12)


@pytest.mark.parametrize("text,var", [("truncexp", TRUNC_EXP_VAR), ("truncexp:standardized", 1.0)])
def test_truncexp_sample_moments(text, var):
    noise = NoiseModel.parse(text)
    x = noise.sample(np.random.default_rng(0), 1_000_000)
    assert abs(x.mean()) < 0.01
    assert x.var() == pytest.approx(var, abs=0.01)
    assert noise.variance == pytest.approx(var)
    sd = math.sqrt(TRUNC_EXP_VAR) if noise.standardize else 1.0
    assert x.min() >= -TRUNC_EXP_MEAN / sd - 1e-12
    assert x.max() <= (TRUNC_POINT - TRUNC_EXP_MEAN) / sd + 1e-12


def test_noise_families():
    rng = np.random.default_rng(1)
    for name, var in (("normal", 1.0), ("uniform", 1.0)):
        x = NoiseModel.parse(name).sample(rng, 400_000)
        assert x.var() == pytest.approx(var, abs=0.01)
    assert NoiseModel.parse("exponential").family == "truncexp"
    assert NoiseModel.parse("ar1:0.3:uniform").label == "ar1:0.3:uniform"
    assert math.isinf(NoiseModel.parse("cauchy").variance)
    assert np.all(NoiseModel.parse("zero").sample(rng, 10) == 0)
    with pytest.raises(ConfigError):
        NoiseModel.parse("laplace")
    with pytest.raises(ConfigError):
        NoiseModel("ar1", phi=1.0)


def test_generate_stream_change_models():
    noise = NoiseModel()
    base = generate_stream(noise, None, 50, 500, seed=3, rep=2)
    same = generate_stream(noise, ChangeSpec(10, 0.0), 50, 500, seed=3, rep=2)
    np.testing.assert_array_equal(base, same)
    assert base.shape == (550,)
    perm = generate_stream(noise, ChangeSpec(10, 2.0), 50, 500, seed=3, rep=2) - base
    assert np.all(perm[:59] == 0) and np.allclose(perm[59:], 2.0)
    epi0 = generate_stream(noise, ChangeSpec(10, 2.0, duration=0.0), 50, 500, 3, 2) - base
    assert np.flatnonzero(epi0).tolist() == [59]
    epi = generate_stream(noise, ChangeSpec(10, 2.0, duration=0.1), 50, 500, 3, 2) - base
    assert np.flatnonzero(epi).tolist() == list(range(59, 65))
    with pytest.raises(ConfigError):
        ChangeSpec(0, 1.0)


def test_delays_helper():
    kh = np.array([-1, 5, 10, 12, 30])
    np.testing.assert_array_equal(delays(kh, 10), [0, 2, 20])


def _spec(**kw):
    base = dict(experiment_id="t", n_train=50, t_horizon=4, replications=12, seed=5,
                detectors=("TC", "C", "PC", "FC", "WC", "MM", "RC"))
    base.update(kw)
    return ExperimentSpec(**base)


def test_runner_preconditions():
    with pytest.raises(ConfigError):
        run_level_experiment(_spec(change=ChangeSpec(5, 1.0)))
    with pytest.raises(ConfigError):
        run_power_experiment(_spec())
    with pytest.raises(ConfigError):
        run_delay_experiment(_spec(change=ChangeSpec(5, 1.0, duration=0.5)))
    with pytest.raises(ValueError):
        _spec(detectors=("TC", "XYZ"))


def test_determinism_and_threads():
    sp = _spec(change=ChangeSpec(40, 1.0), detectors=("NPTC", "TC", "C", "WC"))
    a = run_experiment(sp)
    b = run_experiment(sp, threads=3)
    for det in a.outcomes:
        np.testing.assert_array_equal(a.outcomes[det].k_hat, b.outcomes[det].k_hat)
        np.testing.assert_array_equal(a.outcomes[det].ell_hat, b.outcomes[det].ell_hat)


def test_zero_noise_delay_matches_oracle():
    n, k_star, delta = 50, 30, 1.5
    sp = _spec(noise=NoiseModel("zero"), change=ChangeSpec(k_star, delta), replications=2)
    res = run_delay_experiment(sp)
    x = list(generate_stream(NoiseModel("zero"), ChangeSpec(k_star, delta), n, sp.horizon, 0))
    for det in ("TC", "C", "PC", "FC", "WC", "MM"):
        q = critical_value(sp.config(det), None, None)
        if det == "TC":
            f = lambda k: O.tc_value(x, n, k, 0.6, 20)[0]  # noqa: E731
        else:
            f = lambda k, d=det: O.baseline_value(x, n, k, d)  # noqa: E731
        k_hat = O.first_crossing(f, q, sp.horizon)
        expected = np.array([] if k_hat is None else [k_hat - k_star] * 2, dtype=float)
        np.testing.assert_array_equal(res.delays(det), expected)


def test_rows_and_false_alarms():
    sp = _spec(change=ChangeSpec(150, 0.5), replications=30, detectors=("TC", "C"))
    res = run_power_experiment(sp)
    rows = {r["detector"]: r for r in res.rows()}
    for det, row in rows.items():
        kh = res.outcomes[det].k_hat
        assert row["false_alarms"] == int(((kh >= 0) & (kh < 150)).sum())
        assert row["discarded"] == 30 - res.delays(det).shape[0]
        assert 0 <= row["rejection_rate"] <= 1
        assert row["t_horizon"] == 200


def test_epidemic_runs_per_duration():
    sp = _spec(change=ChangeSpec(20, 2.0), replications=5, detectors=("TC",))
    out = run_epidemic_experiment(sp, [0.1, 0.5])
    assert [r.spec.change.duration for r in out] == [0.1, 0.5]
    assert out[0].spec.experiment_id == "t_D0.1"


def test_emit_results_round_trip(tmp_path):
    sp = _spec(change=ChangeSpec(20, 1.0), replications=20, detectors=("TC", "MM"))
    res = run_delay_experiment(sp)
    p = emit_results(res, tmp_path / "r.csv")
    rows = read_results(p)
    assert list(rows[0]) == list(RESULT_COLUMNS)
    for r in rows:
        med = res.median_delay(r["detector"])
        assert (r["delay_p50"] == "" and math.isnan(med)) or float(r["delay_p50"]) == med
    j = emit_results([res], tmp_path / "r.json", "json", {"note": 1})
    assert read_results(j) == [{k: _num(v) for k, v in r.items()} for r in rows]
    empty = emit_results([], tmp_path / "e.csv")
    assert empty.read_text().strip() == ",".join(RESULT_COLUMNS)
    with pytest.raises(ConfigError):
        emit_results(res, tmp_path / "x", "xml")


def _num(v):
    if v == "":
        return v
    try:
        f = float(v)
    except ValueError:
        return v
    if v == "inf":
        return "inf"
    return int(f) if f.is_integer() and "." not in v else f
