import numpy as np
import pytest

import oracles
from dicert.errors import EmptyDataError, MalformedBehaviorError, TooLargeError
from dicert.scenario import (
    CGLMP3_SCENARIO,
    CHSH_SCENARIO,
    MERMIN_SCENARIO,
    Behavior,
    Scenario,
    SettingsDistribution,
    Trials,
    deterministic_vertex_tables,
    frequency_from_trials,
    mix_with_uniform,
    signaling_deviation,
    uniform_behavior,
    validate_behavior,
)


def test_scenario_shapes():
    assert CHSH_SCENARIO.shape == (2, 2, 2, 2)
    assert CGLMP3_SCENARIO.shape == (2, 2, 3, 3)
    assert MERMIN_SCENARIO.shape == (2,) * 6
    assert MERMIN_SCENARIO.parties == 3
    assert Scenario.uniform(2, 2, 2) == CHSH_SCENARIO
    assert Scenario.from_dict(CGLMP3_SCENARIO.to_dict()) == CGLMP3_SCENARIO


@pytest.mark.parametrize("settings,outcomes", [((2,), (2,)), ((2, 2), (2,)), ((2, 0), (2, 2)),
                                               ((2,) * 4, (2,) * 4)])
def test_scenario_rejects_bad_counts(settings, outcomes):
    with pytest.raises(ValueError):
        Scenario(settings, outcomes)


def test_behavior_shape_and_nan():
    with pytest.raises(MalformedBehaviorError):
        Behavior(CHSH_SCENARIO, np.zeros((2, 2, 2)))
    t = np.full(CHSH_SCENARIO.shape, 0.25)
    t[0, 0, 0, 0] = np.nan
    with pytest.raises(MalformedBehaviorError):
        Behavior(CHSH_SCENARIO, t)
    # flat input of the right size is reshaped
    assert Behavior(CHSH_SCENARIO, np.full(16, 0.25)).table.shape == (2, 2, 2, 2)


def test_validate_flags(ideal_chsh):
    rep = validate_behavior(ideal_chsh)
    assert rep.ok
    signaling = np.zeros(CHSH_SCENARIO.shape)
    signaling[:, 0, 0, 0] = 1.0  # Alice's marginal depends on y
    signaling[:, 1, 1, 1] = 1.0
    rep = validate_behavior(signaling, scenario=CHSH_SCENARIO)
    assert rep.normalized and rep.nonnegative and not rep.nonsignaling
    # marginals 1 and 0 across the two settings deviate by 0.5 from their mean
    assert signaling_deviation(signaling, CHSH_SCENARIO) == pytest.approx(0.5)
    bad = np.full(CHSH_SCENARIO.shape, 0.3)
    assert not validate_behavior(bad, scenario=CHSH_SCENARIO).normalized


@pytest.mark.parametrize("s,count", [(CHSH_SCENARIO, 16), (CGLMP3_SCENARIO, 81), (MERMIN_SCENARIO, 64)])
def test_vertex_enumeration_matches_oracle(s, count):
    mine = deterministic_vertex_tables(s)
    ref = oracles.deterministic_behaviors(s.settings, s.outcomes)
    assert len(mine) == count == len(ref)
    assert {m.tobytes() for m in mine} == {r.tobytes() for r in ref}
    for v in mine:
        assert validate_behavior(v, scenario=s).ok


def test_vertex_guard():
    with pytest.raises(TooLargeError):
        deterministic_vertex_tables(Scenario((5, 5), (5, 5)), guard=1000)


def test_settings_distribution():
    w = SettingsDistribution.on_support(MERMIN_SCENARIO, [(0, 0, 1), (1, 1, 1)])
    assert w.weights[0, 0, 1] == 0.5 and w.support.sum() == 2
    assert w.joint_weights().shape == MERMIN_SCENARIO.shape
    with pytest.raises(ValueError):
        SettingsDistribution(CHSH_SCENARIO, np.array([0.5, 0.5, 0.5, -0.5]))


def test_trials_and_frequencies():
    s = CHSH_SCENARIO
    tr = Trials(s, [[0, 0], [0, 0], [1, 0]], [[0, 1], [0, 0], [1, 1]])
    assert len(tr) == 3 and tr[2].outcomes == (1, 1)
    assert len(tr[:2]) == 2
    f = frequency_from_trials(tr, s)
    assert f.table[0, 0, 0, 1] == 0.5 and f.table[1, 0, 1, 1] == 1.0
    assert f.undefined[0, 1] and f.undefined[1, 1]
    assert f.has_zeros()
    mixed = mix_with_uniform(f, 2)
    assert (mixed.table > 0).all()
    assert np.allclose(mixed.table.sum(axis=(2, 3)), 1)
    assert np.allclose(mix_with_uniform(f, 0).table, uniform_behavior(s).table)
    with pytest.raises(EmptyDataError):
        frequency_from_trials(Trials(s, np.zeros((0, 2)), np.zeros((0, 2))), s)
    with pytest.raises(ValueError):
        Trials(s, [[2, 0]], [[0, 0]])


def test_behavior_json_roundtrip(ideal_chsh):
    again = Behavior.from_json(ideal_chsh.to_json())
    assert np.array_equal(again.table, ideal_chsh.table)
