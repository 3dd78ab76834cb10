import math

import numpy as np
import pytest

import oracles
from dicert.engine import bound_functional, is_member, maximize_functional, optimize_linear
from dicert.errors import UnsupportedError
from dicert.functionals import make_chsh, make_mermin
from dicert.hypotheses import (
    build_bell_capped,
    build_biseparable,
    build_fidelity_capped,
    build_lhv,
    build_negativity_capped,
    build_nonsignaling,
    build_quantum_set,
    partial_transpose_map,
)
from dicert.scenario import CHSH_SCENARIO, MERMIN_SCENARIO, validate_behavior

R2 = math.sqrt(2)


def test_chsh_bounds():
    F = make_chsh()
    assert maximize_functional(F, build_lhv(CHSH_SCENARIO)) == pytest.approx(2.0, abs=1e-6)
    for level in (1, 2):
        assert maximize_functional(F, build_quantum_set(CHSH_SCENARIO, level)) == pytest.approx(2 * R2, abs=1e-6)
    assert maximize_functional(F, build_nonsignaling(CHSH_SCENARIO)) == pytest.approx(4.0, abs=1e-6)


def test_negativity_cap_extremes_level1():
    F = make_chsh()
    assert maximize_functional(F, build_negativity_capped(CHSH_SCENARIO, 1, 0.0)) == pytest.approx(2.0, abs=1e-6)
    assert maximize_functional(F, build_negativity_capped(CHSH_SCENARIO, 1, 0.5)) == pytest.approx(2 * R2, abs=1e-6)


def test_negativity_cap_level2_between_closed_form_and_level1():
    F = make_chsh()
    v1 = maximize_functional(F, build_negativity_capped(CHSH_SCENARIO, 1, 0.1))
    v2 = maximize_functional(F, build_negativity_capped(CHSH_SCENARIO, 2, 0.1))
    assert oracles.chsh_negativity_cap(0.1) - 1e-6 <= v2 <= v1 + 1e-6


def test_fidelity_cap():
    F = make_chsh()
    vals = [maximize_functional(F, build_fidelity_capped(CHSH_SCENARIO, 2, f0)) for f0 in (0.5, 0.75, 1.0)]
    assert vals[0] == pytest.approx(1 + R2, abs=1e-6)
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] == pytest.approx(2 * R2, abs=1e-6)
    with pytest.raises(UnsupportedError):
        build_fidelity_capped(CHSH_SCENARIO, 2, 0.5, theta=0.3)


def test_bell_capped_attains_cap():
    F = make_chsh()
    for s0 in (2.2, 2.6):
        value, status = bound_functional(F, build_bell_capped(F, s0, True, 1))
        assert value == pytest.approx(s0, abs=1e-6)
    assert maximize_functional(F, build_bell_capped(F, 3.5, False)) == pytest.approx(3.5, abs=1e-6)


def test_mermin_bounds():
    F = make_mermin()
    assert maximize_functional(F, build_lhv(MERMIN_SCENARIO)) == pytest.approx(2.0, abs=1e-6)
    assert maximize_functional(F, build_biseparable(MERMIN_SCENARIO)) == pytest.approx(2 * R2, abs=1e-5)
    assert maximize_functional(F, build_quantum_set(MERMIN_SCENARIO, 1)) == pytest.approx(4.0, abs=1e-6)


def test_optimum_behaviors_are_valid():
    F = make_chsh()
    H = build_quantum_set(CHSH_SCENARIO, 2)
    _, x = optimize_linear(H, np.asarray(F.coefficients.ravel() @ H.behavior_coeffs).ravel())
    P = H.behavior_of(x)
    assert validate_behavior(P, tol=1e-6).ok


def test_scenario_restrictions():
    with pytest.raises(UnsupportedError):
        build_negativity_capped(MERMIN_SCENARIO, 1, 0.1)
    with pytest.raises(UnsupportedError):
        build_biseparable(CHSH_SCENARIO)
    with pytest.raises(ValueError):
        build_negativity_capped(CHSH_SCENARIO, 1, -0.1)


def test_explain_lists_blocks():
    text = build_negativity_capped(CHSH_SCENARIO, 2, 0.2).explain()
    assert "psd block chi: 25x25" in text and "variables: 106" in text
    assert "polytope vertices: 16" in build_lhv(CHSH_SCENARIO).explain()


def test_partial_transpose_map_is_permutation():
    H = build_quantum_set(CHSH_SCENARIO, 2)
    perm = partial_transpose_map(H.structure, [0, 1])
    assert sorted(perm.tolist()) == list(range(H.structure.n_moments))


def test_ideal_behavior_memberships(ideal_chsh):
    assert not is_member(ideal_chsh, build_lhv(CHSH_SCENARIO))
    assert is_member(ideal_chsh, build_quantum_set(CHSH_SCENARIO, 2))
    assert is_member(ideal_chsh, build_negativity_capped(CHSH_SCENARIO, 2, 0.5))
    assert not is_member(ideal_chsh, build_negativity_capped(CHSH_SCENARIO, 2, 0.4))


def test_certified_bound_brackets_interior_point_value():
    F = make_chsh()
    H = build_negativity_capped(CHSH_SCENARIO, 1, 0.2)
    exact, status = bound_functional(F, H)
    cert, cstatus = bound_functional(F, H, "scs")
    assert status == "optimal" and cstatus == "certified"
    assert exact - 1e-7 <= cert <= exact + 1e-4


def test_variable_bounds_hold_for_quantum_moments():
    from dicert.moments import moment_vector
    from dicert.quantum import chsh_strategy

    for level in (1, 2):
        H = build_quantum_set(CHSH_SCENARIO, level)
        for theta in (0.1, 0.5, math.pi / 4):
            m = moment_vector(chsh_strategy(theta), H.structure)
            assert np.all(np.abs(m) <= H.var_bound + 1e-12)
        # every moment appears in the partial-transposed block, so its PSD bound covers all variables
        Hn = build_negativity_capped(CHSH_SCENARIO, level, 0.3)
        pt_ids = Hn.psd_blocks[2].coeffs.indices
        assert set(pt_ids) == set(range(Hn.n_vars // 2, Hn.n_vars))
