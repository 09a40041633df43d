import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltcouple.harness import cli
from tiltcouple.harness.config import (ConfigError, ConstraintWarning, ExperimentConfig,
                                       load_config, parse_config)
from tiltcouple.harness.records import (CheckRecord, RunRecord, append_jsonl, csv_rows, dumps,
                                        plain, read_jsonl, validate_check, validate_run)
from tiltcouple.harness.seeding import int_seed, rng_for
from tiltcouple.harness.suite import CHECKS, MODULE_ORDER, run_verification_suite, select_checks

# ---------------------------------------------------------------- config


def test_config_text_roundtrip():
    cfg = ExperimentConfig(N_list=(8, 10), delta=0.6, shape="box", cache_dir="/x")
    back = parse_config(cfg.dumps())
    assert back == cfg and back.hash() == cfg.hash()


def test_config_hash_tracks_values():
    assert ExperimentConfig().hash() != ExperimentConfig(seed=1).hash()


def test_parse_comments_and_lists():
    cfg = parse_config("# comment\nN_list = 8, 12  # trailing\nbeta = 0.25\n")
    assert cfg.N_list == (8, 12) and cfg.beta == 0.25


@pytest.mark.parametrize("text", [
    "delta = 0.2\ndelta_prime = 0.3",
    "beta = 0",
    "t_rule = exponential",
    "trials = 0",
    "nonsense = 1",
    "seed = -1",
    "alpha = abc",
    "N_list = 1",
    "no equals sign",
])
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_default_and_missing(tmp_path):
    assert load_config("default") == ExperimentConfig()
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_gamma_constraint_is_a_warning():
    cfg = ExperimentConfig(gamma=0.35)
    assert cfg.constraint_warnings()
    with pytest.warns(ConstraintWarning):
        cfg.warn()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ExperimentConfig(gamma=0.95).warn()


def test_time_scale_rules():
    cfg = ExperimentConfig()
    for N in (8, 12, 16):
        t = cfg.t_N(N)
        assert t == int(np.ceil(2 * N ** 2.5))
        assert cfg.eps_N(N) ** 2 == pytest.approx(N ** 2.25 / t)


# ---------------------------------------------------------------- seeding


@given(st.integers(0, 2 ** 64 - 1), st.text(max_size=8), st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_seed_paths_are_deterministic(master, name, trial):
    a = rng_for(master, name, trial).random(3)
    b = rng_for(master, name, trial).random(3)
    assert np.array_equal(a, b)
    assert 0 <= int_seed(master, name, trial) < 2 ** 63


def test_seed_paths_differ():
    assert rng_for(1, "a", 0).random() != rng_for(1, "a", 1).random()
    assert rng_for(1, "a").random() != rng_for(1, "b").random()
    with pytest.raises(ValueError):
        rng_for(1, -3)


# ---------------------------------------------------------------- records


def test_plain_converts_numpy_and_nonfinite():
    obj = plain({"a": np.float64(1.5), "b": np.arange(3), "c": np.nan, "d": np.bool_(True)})
    assert obj == {"a": 1.5, "b": [0, 1, 2], "c": None, "d": True}
    json.loads(dumps(obj))


def test_records_validate_and_roundtrip(tmp_path):
    rec = RunRecord("abc", 5, "suite")
    rec.add(CheckRecord("m", "x", True, {"v": np.float32(2.0), "arr": [1, 2]}, N=8), elapsed=0.1)
    rec.add(CheckRecord("m", "y", None, {}, asserted=False))
    validate_run(rec.as_dict())
    for c in rec.checks:
        validate_check(c.as_dict())
    append_jsonl(tmp_path / "r.jsonl", [rec])
    append_jsonl(tmp_path / "r.jsonl", [rec])
    rows = read_jsonl(tmp_path / "r.jsonl")
    assert len(rows) == 2 and rows[0]["checks"] == rows[1]["checks"]
    assert {r["metric"] for r in csv_rows(rec.checks)} == {"v", "arr[0]", "arr[1]"}
    assert rec.passed


def test_failed_only_counts_asserted_checks():
    rec = RunRecord("h", 0)
    rec.add(CheckRecord("m", "report", False, {}, asserted=False))
    assert rec.passed
    rec.add(CheckRecord("m", "assert", False, {}))
    assert not rec.passed


# ---------------------------------------------------------------- suite


def test_empty_check_list_gives_empty_record(config):
    rec = run_verification_suite(config, checks=[])
    assert rec.checks == [] and rec.passed


def test_check_selection_follows_dependency_order():
    chosen = select_checks(("couple", "spectrum"))
    modules = [m for m, _, _ in chosen]
    assert modules.index("spectrum") < modules.index("couple")
    assert set(CHECKS) == set(MODULE_ORDER)
    with pytest.raises(ValueError):
        select_checks(("nope",))


def test_same_seed_gives_identical_payload(config):
    small = config.replace(N_list=(8,), check_N=8, trials=5)
    a = run_verification_suite(small, ("slt", "couple"), seed=9)
    b = run_verification_suite(small, ("slt", "couple"), seed=9)
    assert dumps(a.payload()) == dumps(b.payload())


def test_check_exceptions_are_recorded(config):
    def broken(ctx):
        raise ValueError("boom")
    rec = run_verification_suite(config, checks=[("spectrum", "broken", broken)])
    assert not rec.passed and rec.checks[0].error == "ValueError: boom"


# ---------------------------------------------------------------- cli


def run_cli(args, capsys):
    code = cli.main(args)
    return code, capsys.readouterr()


def test_cli_spectrum_json_is_schema_valid(tmp_path, cache_dir, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"cache_dir = {cache_dir}\n")
    code, out = run_cli(["spectrum", "--config", str(cfg), "--json", "--out", str(tmp_path / "o")],
                        capsys)
    assert code == 0
    lines = [json.loads(line) for line in out.out.splitlines()]
    assert lines
    for line in lines:
        validate_check(line)
    written = {p.name for p in (tmp_path / "o").iterdir()}
    assert {"spectrum.jsonl", "spectrum.csv", "spectrum.cfg", "spectrum_eigen_asymptotic.png"} <= written
    validate_run(read_jsonl(tmp_path / "o" / "spectrum.jsonl")[0])


def test_cli_zero_trials_is_usage_error(capsys):
    code, out = run_cli(["couple", "--trials", "0"], capsys)
    assert code == 2 and "trials" in out.err


def test_cli_unknown_flag_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["spectrum", "--bogus"])
    assert exc.value.code == 2


def test_cli_bad_config_exits_two(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("delta = 2\n")
    assert run_cli(["slt", "--config", str(bad)], capsys)[0] == 2


def test_cli_geometry_error_exits_two(tmp_path, cache_dir, capsys):
    cfg = tmp_path / "g.cfg"
    cfg.write_text(f"cache_dir = {cache_dir}\neps = 0.9\nN_list = 8\ncheck_N = 8\ntrials = 1\n")
    assert run_cli(["couple", "--config", str(cfg), "--out", str(tmp_path)], capsys)[0] == 2


def test_cli_env_overrides_and_replay(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.SEED_ENV, "77")
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert run_cli(["slt"], capsys)[0] == 0
    record = read_jsonl(tmp_path / "env" / "slt.jsonl")[-1]
    assert record["seed"] == 77
    code, out = run_cli(["replay", str(tmp_path / "env" / "slt.jsonl")], capsys)
    assert code == 0 and "identical" in out.out


def test_cli_repeat_runs_identical(tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        run_cli(["slt", "--seed", "42", "--out", str(tmp_path / name)], capsys)
        outs.append(read_jsonl(tmp_path / name / "slt.jsonl")[0]["checks"])
        assert (tmp_path / name / "slt.csv").read_text()
    assert outs[0] == outs[1]
    assert (tmp_path / "a" / "slt.csv").read_text() == (tmp_path / "b" / "slt.csv").read_text()
