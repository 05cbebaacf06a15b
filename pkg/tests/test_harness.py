import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravalloc._validation import ParameterError
from gravalloc.harness import rates, tails
from gravalloc.harness.cli import EXIT_CENSORED, EXIT_ERROR, EXIT_PASS, main
from gravalloc.harness.runner import ExperimentConfig, run_experiment
from gravalloc.harness.suites import SUITES, run_suite

# rates


@pytest.mark.parametrize("d", range(3, 9))
def test_fixed_point(d):
    g = rates.g_rate(d)
    assert isinstance(g, Fraction)
    assert rates.f_rate(d, g) == g


def test_kink_locations():
    assert rates.kinks(3) == (Fraction(1),)
    assert rates.kinks(4) == (Fraction(4, 3), Fraction(3, 2))
    for d in range(5, 9):
        assert rates.kinks(d) == (Fraction(2),)


@settings(max_examples=100, deadline=None)
@given(d=st.integers(3, 8), num=st.integers(0, 400))
def test_f_rate_continuous_nonincreasing_and_at_least_one(d, num):
    g = Fraction(num, 100)
    eps = Fraction(1, 10**9)
    f = rates.f_rate(d, g)
    assert f >= 1
    assert rates.f_rate(d, g + eps) <= f
    assert abs(rates.f_rate(d, g + eps) - f) <= 4 * eps


@pytest.mark.parametrize("d", range(3, 9))
def test_slope_changes_exactly_at_kinks(d):
    e = Fraction(1, 1000)
    for k in rates.kinks(d):
        left = (rates.f_rate(d, k) - rates.f_rate(d, k - e)) / e
        right = (rates.f_rate(d, k + e) - rates.f_rate(d, k)) / e
        assert left != right
    # away from kinks the slope is locally constant
    g = Fraction(1, 3)
    assert rates.f_rate(d, g + e) - rates.f_rate(d, g) == rates.f_rate(d, g) - rates.f_rate(d, g - e)


def test_h_rate_and_errors():
    assert rates.h_rate(5, Fraction(3, 2)) == Fraction(3, 2)
    assert rates.rate_eval(4, "1/2", "h") == Fraction(5, 4)
    with pytest.raises(ParameterError):
        rates.h_rate(4, 0)
    with pytest.raises(ParameterError):
        rates.f_rate(2, 1)
    with pytest.raises(ParameterError):
        rates.rate_eval(3, 1, "z")


def test_rates_csv_is_exact():
    text = rates.rates_csv(rates.rate_table((4,), 2, Fraction(1, 6)))
    lines = text.splitlines()
    assert lines[0] == "d,gamma,f,gamma_float,f_float"
    assert "4,4/3,4/3," in text
    assert len(lines) == 1 + 13


# tails


def test_tail_statistic_deterministic_and_positive():
    spec = tails.TailSpec(q=2.0, p=5.0)
    a = tails.sample_statistic(spec, 300, seed=4)
    b = tails.sample_statistic(spec, 300, seed=4)
    assert np.array_equal(a, b)
    assert np.all(a >= 0)
    table = tails.mc_tail(spec, [0.0], 300, samples=a)
    assert table.rows[0].p_hat == pytest.approx(np.mean(a > 0))


def test_tail_table_wilson_and_censoring():
    spec = tails.TailSpec(q=2.0, p=5.0)
    table = tails.mc_tail(spec, [0.1, 1.0, 100.0], 500, seed=1)
    for r in table.rows:
        assert r.lower <= r.p_hat <= r.upper
    assert table.rows[-1].censored and table.rows[-1].exceed == 0
    d = table.to_dict()
    assert d["rows"][0]["n"] == 500


def test_tail_fit_recovers_gaussian_form():
    spec = tails.TailSpec(q=2.0, p=5.0)
    ts = np.linspace(0.5, 2.0, 7)
    rows = [tails.TailRow(float(t), 1000, 10**6, float(np.exp(-0.3 * 2 * t * t)), 0.0, 1.0, False) for t in ts]
    fit = tails.fit_tail_form(tails.TailTable(spec, rows, 0, 0.95, 10), margin=1.0)
    assert fit.rate == pytest.approx(0.3)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.bound(1.0, 2.0, 3) == pytest.approx(np.exp(-0.6))


def test_tail_spec_validation():
    with pytest.raises(ParameterError):
        tails.TailSpec(q=3.0, p=2.0)
    with pytest.raises(ParameterError):
        tails.TailSpec("potential", dim=3)


# suites, runner, CLI


@pytest.mark.parametrize("name", ["kernel", "emptybox", "rates", "cubature", "equilibrium"])
def test_quick_suites_pass(name):
    res = run_suite(name)
    assert res.status == "pass", res.details


def test_unknown_suite():
    with pytest.raises(ValueError):
        run_suite("nope")
    assert "dominatedboxes" in SUITES


def test_runner_is_byte_reproducible(tmp_path):
    cfg = ExperimentConfig("rates", out=str(tmp_path / "a"), params={"dims": [3, 4], "step": "1/4"})
    run_experiment(cfg)
    first = (tmp_path / "a" / "rates.csv").read_bytes()
    run_experiment(cfg)
    assert (tmp_path / "a" / "rates.csv").read_bytes() == first
    assert first.startswith(b"# schema: 1\n")


def test_runner_writes_error_record(tmp_path):
    cfg = ExperimentConfig("tails", dim=3, replicas=10, out=str(tmp_path), params={"q": 5.0, "p": 2.0})
    payload = run_experiment(cfg)
    assert payload["status"] == "error"
    rec = json.loads((tmp_path / "tails.json").read_text())
    assert rec["error"]["type"] == "ParameterError"


def test_config_rejects_unknown_kind():
    with pytest.raises(ParameterError):
        ExperimentConfig("bogus")


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["rates", "--dims", "3", "--step", "1/2", "--gamma-max", "1"]) == EXIT_PASS
    assert "3,1,1," in capsys.readouterr().out
    assert main(["verify", "rates"]) == EXIT_PASS
    code = main(["mc-tail", "--replicas", "100", "--thresholds", "500,600", "--q", "2", "--p", "4"])
    assert code == EXIT_CENSORED
    assert main(["mc-tail", "--replicas", "100", "--q", "4", "--p", "2"]) == EXIT_ERROR
    out = tmp_path / "stars.jsonl"
    assert main(["sample", "--side", "2", "--out", str(out)]) == EXIT_PASS
    assert out.exists()


def test_cli_run_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kind": "rates", "out": str(tmp_path / "out"), "params": {"dims": [5]}}))
    assert main(["run", str(cfg)]) == EXIT_PASS
    assert json.loads(capsys.readouterr().out)["status"] == "pass"
