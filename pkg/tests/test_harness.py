import json
import subprocess
import sys

import numpy as np
import pytest

from activesmc import cli, harness
from activesmc.harness import ConfigError, RunConfig, compare, dump_config, parse_config, rmse, run_experiment

SMALL = {
    "model": {"name": "plane", "params": {"d": 3, "n_obs": 5}},
    "algorithm": "as-smc",
    "n_particles": 40,
    "n_inner": 4,
    "schedule": [0.0, 0.01, 0.1, 1.0],
    "repeats": 3,
    "seed": 5,
}


def cfg(**over):
    return RunConfig.model_validate({**SMALL, **over})


def test_rmse_examples():
    truth = np.array([0.5, -1.0])
    np.testing.assert_array_equal(rmse([truth], truth), 0.0)
    np.testing.assert_allclose(rmse(np.full((4, 2), -0.3), np.zeros(2)), [0.3, 0.3])
    np.testing.assert_allclose(rmse([[1.0], [3.0]], [0.0]), [np.sqrt(5.0)])


def test_unknown_key_reported_with_line():
    text = json.dumps({**SMALL, "n_partciles": 10}, indent=2)
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    line = next(n for n, s in enumerate(text.splitlines(), 1) if "n_partciles" in s)
    assert "n_partciles" in str(exc.value) and f"line {line}" in str(exc.value)


@pytest.mark.parametrize(
    "bad",
    [
        {"algorithm": "mcmc"},
        {"schedule": [0.0, 0.5]},
        {"gap_rule": {"kind": "fixed"}},
        {"n_particles": 0},
        {"resample": {"trigger": "ess", "colour": 1}},
    ],
)
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        parse_config(json.dumps({**SMALL, **bad}))


def test_malformed_json_position():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config('{\n  "model": ,\n}')


def test_config_round_trip():
    c = parse_config(json.dumps(SMALL))
    again = parse_config(dump_config(c))
    assert again == c
    assert dump_config(again) == dump_config(c)


def test_bad_model_params_are_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="model.params"):
        run_experiment(cfg(model={"name": "plane", "params": {"depth": 3}}), tmp_path)
    with pytest.raises(ConfigError):
        run_experiment(cfg(truth=[0.0, 0.0]), tmp_path)


@pytest.mark.parametrize("algorithm", ["smc", "as-smc", "adaptive-as-smc", "as-smc2", "as-mh"])
def test_every_algorithm_writes_results(tmp_path, algorithm):
    out = run_experiment(cfg(algorithm=algorithm, repeats=2, truth="analytic"), tmp_path)
    d = tmp_path / f"plane-{algorithm}"
    assert (d / "result.json").exists() and (d / "timing.json").exists()
    assert out["n_success"] == 2 and len(out["rmse"]) == 3
    assert np.all(np.isfinite(out["rmse"]))
    if algorithm == "as-mh":
        assert (d / "chain_0.csv").exists()
    else:
        lines = (d / "logz.csv").read_text().splitlines()
        assert lines[0] == "repeat,stage,log_z" and len(lines) == 1 + 2 * 4


def test_rmse_in_result_matches_repeats(tmp_path):
    out = run_experiment(cfg(truth=[0.1, 0.2, 0.3]), tmp_path)
    est = np.array([r["posterior_mean"] for r in out["repeats"]])
    np.testing.assert_allclose(out["rmse"], np.sqrt(((est - [0.1, 0.2, 0.3]) ** 2).mean(0)), rtol=1e-15)


def test_failed_repeat_recorded(tmp_path, monkeypatch, caplog):
    real = harness._run_one

    def flaky(c, toy, target, r):
        if r == 1:
            raise FloatingPointError("population died")
        return real(c, toy, target, r)

    monkeypatch.setattr(harness, "_run_one", flaky)
    out = run_experiment(cfg(), tmp_path)
    assert out["n_success"] == 2
    assert out["repeats"][1]["error"].startswith("FloatingPointError")
    assert "failed" in caplog.text


def test_outputs_byte_identical_across_threads(tmp_path):
    c = cfg(algorithm="adaptive-as-smc", schedule={"n_particles": 200})
    run_experiment(c, tmp_path / "a", threads=1)
    run_experiment(c, tmp_path / "b", threads=3)
    for name in ("result.json", "logz.csv", "spectra.csv"):
        assert (tmp_path / "a" / c.run_name / name).read_bytes() == (tmp_path / "b" / c.run_name / name).read_bytes()


def test_compare_rows(tmp_path):
    a = run_experiment(cfg(output={"name": "a"}), tmp_path)
    run_experiment(cfg(output={"name": "b"}), tmp_path)
    rows = compare([tmp_path / "a" / "result.json", tmp_path / "b" / "result.json"], tmp_path / "cmp.csv")
    assert len(rows) == 2
    assert {k: v for k, v in rows[0].items() if k != "name"} == {k: v for k, v in rows[1].items() if k != "name"}
    assert rows[0]["rmse_median"] == pytest.approx(float(np.median(a["rmse"])))
    assert rows[0]["rmse_min"] <= rows[0]["rmse_q1"] <= rows[0]["rmse_median"] <= rows[0]["rmse_q3"] <= rows[0]["rmse_max"]
    single = compare([tmp_path / "a" / "result.json"])
    assert single == rows[:1]
    assert (tmp_path / "cmp.csv").read_text().startswith("name,algorithm,rmse_min")


def test_compare_rejects_mismatched_models(tmp_path):
    run_experiment(cfg(output={"name": "a"}), tmp_path)
    run_experiment(cfg(output={"name": "b"}, model={"name": "plane", "params": {"d": 3, "n_obs": 6}}), tmp_path)
    with pytest.raises(ValueError, match="different model"):
        compare([tmp_path / "a" / "result.json", tmp_path / "b" / "result.json"])


def test_cli_verbs(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({**SMALL, "schedule": {"n_particles": 200}}))
    assert cli.main(["pilot", str(path)]) == 0
    sched = json.loads(capsys.readouterr().out)
    assert sched[0] == 0.0 and sched[-1] == 1.0
    assert cli.main(["spectrum", str(path), "--out-dir", str(tmp_path / "s")]) == 0
    assert json.loads(capsys.readouterr().out)["d_a"] == 1
    assert (tmp_path / "s" / "spectrum.csv").exists()
    assert cli.main(["run", str(path), "--out-dir", str(tmp_path), "--seed", "2", "--paper-faithful"]) == 0
    assert json.loads(capsys.readouterr().out)["n_success"] == 3
    res = json.loads((tmp_path / "plane-as-smc" / "result.json").read_text())
    assert res["config"]["seed"] == 2 and res["config"]["resample"] == {"trigger": "always", "threshold": 0.5, "scheme": "multinomial"}
    assert cli.main(["compare", str(tmp_path / "plane-as-smc" / "result.json")]) == 0
    assert capsys.readouterr().out.startswith("name,algorithm")


def test_cli_structured_error(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({**SMALL, "extra": 1}))
    assert cli.main(["run", str(path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and "extra" in err["message"]
    assert cli.main(["pilot", str(tmp_path / "missing.json")]) == 2


def test_console_entry_point(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(SMALL))
    proc = subprocess.run([sys.executable, "-m", "activesmc", "spectrum", str(path)], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["d_a"] == 1
