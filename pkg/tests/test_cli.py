import json
import math

import pytest

from dicert.cli import main, parse_grid
from dicert.trials_io import read_trials


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_grid():
    assert parse_grid("0:0.3:0.1") == [0.0, 0.1, 0.2, 0.3]
    assert parse_grid("0.5,0.6") == [0.5, 0.6]
    assert len(parse_grid("chsh:50")) == 50
    assert parse_grid(None) is None


def test_simulate_chsh(tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    code, text, _ = run(capsys, "simulate", "--strategy", "chsh", "--theta", 45, "--n", 2000, "--seed", 7,
                        "--out", out)
    assert code == 0
    tf = read_trials(out)
    assert len(tf.trials) == 2000 and tf.seed == 7
    side = json.loads(out.with_suffix(".json").read_text())
    assert len(side["provenance"]["config_hash"]) == 64


def test_simulate_ghz_support(tmp_path, capsys):
    out = tmp_path / "g.jsonl"
    assert run(capsys, "simulate", "--strategy", "ghz", "--n", 100, "--out", out)[0] == 0
    tf = read_trials(out)
    assert all(sum(rec.settings) % 2 == 1 for rec in tf.trials)


def test_simulate_cglmp_auto_zeta(tmp_path, capsys):
    out = tmp_path / "c.jsonl"
    assert run(capsys, "simulate", "--strategy", "cglmp3", "--zeta", "auto", "--n", 50, "--out", out)[0] == 0
    tf = read_trials(out)
    assert tf.meta["strategy_params"]["zeta"] == pytest.approx((math.sqrt(11) - math.sqrt(3)) / 2)


def test_unknown_strategy(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--strategy", "w3", "--out", tmp_path / "x.jsonl")
    assert code == 2 and "unknown strategy" in err


def test_bound_commands(capsys):
    code, text, _ = run(capsys, "bound", "--functional", "chsh", "--hypothesis", "negativity", "--n0", 0.25,
                        "--level", 2)
    assert code == 0 and "status=" in text
    value = float(text.split("=")[1].split()[0])
    assert 2.4142 <= value <= 2.6450
    code, text, _ = run(capsys, "bound", "--functional", "mermin", "--hypothesis", "biseparable")
    assert float(text.split("=")[1].split()[0]) == pytest.approx(2 * math.sqrt(2), abs=1e-5)


def test_explain(capsys):
    code, text, _ = run(capsys, "explain", "--functional", "chsh", "--hypothesis", "fidelity", "--threshold",
                        0.7, "--level", 2)
    assert code == 0 and "linear forms: fidelity" in text


def _certify(tmp_path, capsys, name, *extra):
    trials = tmp_path / "t.jsonl"
    if not trials.exists():
        run(capsys, "simulate", "--strategy", "chsh", "--n", 3000, "--seed", 1, "--out", trials)
    code, text, err = run(capsys, "certify", trials, "--out", tmp_path / name, *extra)
    return code, text, err


def test_certify_negativity_deterministic(tmp_path, capsys):
    args = ("--hypothesis", "negativity", "--level", 2, "--grid", "0:0.4:0.1")
    code, text, _ = _certify(tmp_path, capsys, "a/neg", *args)
    assert code == 0 and "certified negativity threshold" in text
    code, _, _ = _certify(tmp_path, capsys, "b/neg", *args)
    for suffix in ("-certified.csv", "-run000-trace.csv"):
        assert (tmp_path / f"a/neg{suffix}").read_bytes() == (tmp_path / f"b/neg{suffix}").read_bytes()
    summary = json.loads((tmp_path / "a/neg-summary.json").read_text())
    assert summary["runs"][0]["certified"] >= 0.1
    assert summary["provenance"]["case"] == "certify-chsh-negativity"


def test_certify_chsh_value_kaniewski(tmp_path, capsys):
    code, text, _ = _certify(tmp_path, capsys, "kan", "--hypothesis", "chsh-value", "--grid", "chsh:10",
                             "--post", "kaniewski")
    assert code == 0 and "fidelity >=" in text
    header = (tmp_path / "kan-certified.csv").read_text().splitlines()[0]
    assert header == "run,N,certified,fidelity"


def test_certify_pbr_simplified_lhv(tmp_path, capsys):
    code, text, _ = _certify(tmp_path, capsys, "pbr", "--hypothesis", "lhv", "--protocol", "pbr",
                             "--variant", "simplified")
    assert code == 0 and "p-value bound" in text


def test_config_overrides_flags(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 123, "seed": 5}))
    out = tmp_path / "t.jsonl"
    assert run(capsys, "--config", cfg, "simulate", "--n", 999, "--out", out)[0] == 0
    tf = read_trials(out)
    assert len(tf.trials) == 123 and tf.seed == 5
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(capsys, "--config", cfg, "simulate", "--out", out)[0] == 2


def test_invalid_gamma(tmp_path, capsys):
    code, _, err = _certify(tmp_path, capsys, "x", "--hypothesis", "lhv", "--gamma", 1.5)
    assert code == 2 and "gamma" in err


def test_gain_ghz(capsys, tmp_path):
    code, text, _ = run(capsys, "gain", "--strategy", "ghz", "--hypothesis", "lhv", "--out", tmp_path / "g.csv")
    rows = text.strip().splitlines()
    assert code == 0 and len(rows) == 2
    g_mart, g_pbr = (float(v) for v in rows[1].split(",")[-2:])
    assert g_mart == pytest.approx(0.415037, abs=1e-6)
    assert g_pbr == pytest.approx(0.415037, abs=1e-4)


def test_solver_failure_exit_code(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DICERT_BACKEND", "cvxopt")
    from dicert import cli
    from dicert.errors import SolverError

    def boom(*a, **k):
        raise SolverError("forced", "failed")

    monkeypatch.setattr(cli, "bound_functional", boom)
    code, _, err = run(capsys, "bound", "--functional", "chsh", "--hypothesis", "quantum", "--level", 1)
    assert code == 3 and "solver failure" in err
