import json
import math

import numpy as np
import pytest

from dicert.errors import MalformedBehaviorError, TrialFormatError
from dicert.functionals import empirical_average, make_chsh, make_mermin, trial_values
from dicert.scenario import (
    CHSH_SCENARIO,
    Behavior,
    SettingsDistribution,
    deterministic_vertex_tables,
    frequency_from_trials,
)
from dicert.trials_io import TrialFile, export_csv, read_trials, sample_runs, sample_trials, write_trials


def test_deterministic_vertex_sampling():
    v = Behavior(CHSH_SCENARIO, deterministic_vertex_tables(CHSH_SCENARIO)[5])
    tr = sample_trials(v, SettingsDistribution.uniform(CHSH_SCENARIO), 500, seed=1)
    for rec in tr:
        assert v.table[rec.settings + rec.outcomes] == 1.0


def test_seed_determinism(ideal_chsh):
    w = SettingsDistribution.uniform(CHSH_SCENARIO)
    assert sample_trials(ideal_chsh, w, 1000, seed=9) == sample_trials(ideal_chsh, w, 1000, seed=9)
    assert sample_trials(ideal_chsh, w, 1000, seed=9) != sample_trials(ideal_chsh, w, 1000, seed=10)
    runs = sample_runs(ideal_chsh, w, 100, seed=4, runs=3)
    assert runs[2] == sample_trials(ideal_chsh, w, 100, seed=6)


def test_frequencies_converge(ideal_chsh):
    w = SettingsDistribution.uniform(CHSH_SCENARIO)
    tr = sample_trials(ideal_chsh, w, 100000, seed=2)
    f = frequency_from_trials(tr, CHSH_SCENARIO)
    assert np.abs(f.table - ideal_chsh.table).max() < 0.02


def test_mean_within_three_sigma(ideal_chsh):
    F = make_chsh()
    tr = sample_trials(ideal_chsh, F.settings_dist, 100000, seed=3)
    vals = F.bell_function()
    probs = F.settings_dist.joint_weights() * ideal_chsh.table
    mean = float(np.sum(probs * vals))
    sigma = math.sqrt(float(np.sum(probs * vals**2)) - mean**2) / math.sqrt(len(tr))
    assert mean == pytest.approx(2 * math.sqrt(2))
    assert abs(empirical_average(F, tr) - mean) < 3 * sigma


def test_support_respected(ghz):
    w = make_mermin().settings_dist
    tr = sample_trials(ghz, w, 2000, seed=5)
    assert np.all(w.weights[tuple(tr.settings.T)] > 0)
    assert np.all(trial_values(make_mermin(), tr) == 4.0)


def test_invalid_behavior_rejected():
    with pytest.raises(MalformedBehaviorError):
        sample_trials(Behavior(CHSH_SCENARIO, np.full(CHSH_SCENARIO.shape, 0.3)),
                      SettingsDistribution.uniform(CHSH_SCENARIO), 10, seed=0)


def test_roundtrip(tmp_path, ideal_chsh, ghz):
    w = SettingsDistribution.uniform(CHSH_SCENARIO)
    tr = sample_trials(ideal_chsh, w, 100000, seed=7)
    path = tmp_path / "t.jsonl"
    write_trials(path, TrialFile(CHSH_SCENARIO, w, tr, 7, "chsh"))
    back = read_trials(path)
    assert back.trials == tr and back.seed == 7 and back.source == "chsh"
    wm = make_mermin().settings_dist
    tri = sample_trials(ghz, wm, 10, seed=1)
    write_trials(tmp_path / "g.jsonl", TrialFile(ghz.scenario, wm, tri, 1, "ghz"))
    first = json.loads((tmp_path / "g.jsonl").read_text().splitlines()[1])
    assert set(first) == {"x", "y", "z", "a", "b", "c"}
    assert read_trials(tmp_path / "g.jsonl").trials == tri


def _header():
    w = SettingsDistribution.uniform(CHSH_SCENARIO)
    return json.dumps(TrialFile(CHSH_SCENARIO, w, None).header())


@pytest.mark.parametrize("line,needle", [
    ('{"x": 0, "y": 0, "a": 0}', "keys"),
    ('{"x": 0, "y": 2, "a": 0, "b": 0}', "out of range"),
    ('{"x": 0, "y": 0, "a": 0, "b": 0, "c": 1}', "keys"),
    ('{"x": 0, "y": 0, "a": 0.5, "b": 0}', "integers"),
    ("not json", "invalid JSON"),
])
def test_malformed_lines(tmp_path, line, needle):
    path = tmp_path / "bad.jsonl"
    path.write_text(_header() + '\n{"x": 1, "y": 1, "a": 0, "b": 1}\n' + line + "\n")
    with pytest.raises(TrialFormatError) as exc:
        read_trials(path)
    assert exc.value.line == 3 and needle in str(exc.value)


def test_bad_header(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"format": "dicert-trials/1"}\n')
    with pytest.raises(TrialFormatError):
        read_trials(path)


def test_csv_export(tmp_path, ideal_chsh):
    tr = sample_trials(ideal_chsh, SettingsDistribution.uniform(CHSH_SCENARIO), 5, seed=0)
    export_csv(tmp_path / "t.csv", tr)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "x,y,a,b" and len(lines) == 6
