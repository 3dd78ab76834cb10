"""Bell functionals: coefficient tables, settings distributions and bounds.

The per-trial Bell function is ``I(v) = beta[v] / P_settings(x..)``, so that
its expectation under a behavior equals ``sum(beta * P)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ScenarioMismatchError, UndefinedBellFunctionError, UnsupportedError
from .scenario import (
    CGLMP3_SCENARIO,
    CHSH_SCENARIO,
    MERMIN_SCENARIO,
    Behavior,
    Scenario,
    SettingsDistribution,
    as_trials,
)


@dataclass(frozen=True)
class BellFunctional:
    scenario: Scenario
    coefficients: np.ndarray = field(repr=False)
    settings_dist: SettingsDistribution = field(repr=False)
    local_bound: float | None = None
    quantum_bound: float | None = None
    name: str = ""
    other_bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        beta = np.array(self.coefficients, dtype=float).reshape(self.scenario.shape)
        beta.setflags(write=False)
        object.__setattr__(self, "coefficients", beta)
        if self.settings_dist.scenario != self.scenario:
            raise ScenarioMismatchError("settings distribution belongs to another scenario")
        off_support = ~self.settings_dist.joint_weights().astype(bool)
        if np.any(beta[off_support] != 0):
            raise ValueError("coefficients must vanish outside the settings support")

    def bell_function(self) -> np.ndarray:
        """Table of ``I(v)``; NaN where the settings have zero probability."""
        w = self.settings_dist.joint_weights()
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(w > 0, self.coefficients / w, np.nan)


def _uniform(s: Scenario) -> SettingsDistribution:
    return SettingsDistribution.uniform(s)


def make_chsh() -> BellFunctional:
    s = CHSH_SCENARIO
    beta = np.empty(s.shape)
    for x, y, a, b in np.ndindex(*s.shape):
        beta[x, y, a, b] = (-1) ** (x * y + a + b)
    return BellFunctional(s, beta, _uniform(s), 2.0, 2 * math.sqrt(2), "chsh")


def make_tilted_chsh(alpha: float) -> BellFunctional:
    """CHSH plus ``alpha * sum_ab (-1)^a P(ab|0,0)`` (Alice's x=0 marginal, y=0 branch)."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    chsh = make_chsh()
    beta = np.array(chsh.coefficients)
    for a in range(2):
        beta[0, 0, a, :] += alpha * (-1) ** a
    return BellFunctional(chsh.scenario, beta, chsh.settings_dist, 2.0 + alpha,
                          math.sqrt(8 + 2 * alpha**2), f"tilted:{alpha:g}")


def tilted_alpha(theta: float) -> float:
    """Tilt for which the partially entangled strategy at ``theta`` is optimal."""
    return 2 * math.sqrt(math.cos(2 * theta) ** 2 / (1 + math.sin(2 * theta) ** 2))


def _delta(f: int, d: int) -> int:
    return 1 if f % d == 0 else 0


def make_cglmp3() -> BellFunctional:
    s = CGLMP3_SCENARIO
    beta = np.empty(s.shape)
    for x, y, a, b in np.ndindex(*s.shape):
        g = _delta(x, 2) * _delta(y - 1, 2)
        beta[x, y, a, b] = ((-1) ** (x * (y - 1)) * (_delta(a - b, 3) - (1 - g) * _delta(b - a - 1, 3))
                            - g * _delta(b - a + 1, 3))
    return BellFunctional(s, beta, _uniform(s), 2.0, None, "cglmp3")


MERMIN_SUPPORT = ((0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 1, 1))


def make_mermin() -> BellFunctional:
    s = MERMIN_SCENARIO
    beta = np.zeros(s.shape)
    for x, y, z, a, b, c in np.ndindex(*s.shape):
        beta[x, y, z, a, b, c] = (-1) ** (x * y * z + a + b + c) * _delta(x + y + z - 1, 2)
    dist = SettingsDistribution.on_support(s, MERMIN_SUPPORT)
    return BellFunctional(s, beta, dist, 2.0, 4.0, "mermin", {"2-producible": 2 * math.sqrt(2)})


def functional_by_name(spec: str) -> BellFunctional:
    """Parse ``chsh``, ``tilted:<alpha>``, ``cglmp3`` or ``mermin``."""
    spec = spec.strip().lower()
    if spec == "chsh":
        return make_chsh()
    if spec.startswith("tilted"):
        _, _, alpha = spec.partition(":")
        return make_tilted_chsh(float(alpha or 0.0))
    if spec == "cglmp3":
        return make_cglmp3()
    if spec == "mermin":
        return make_mermin()
    raise UnsupportedError(f"unknown functional {spec!r}")


def evaluate(F: BellFunctional, P) -> float:
    table = P.table if isinstance(P, Behavior) else np.asarray(P)
    if isinstance(P, Behavior) and P.scenario != F.scenario:
        raise ScenarioMismatchError("behavior and functional scenarios differ")
    return float(np.sum(F.coefficients * table))


def empirical_average(F: BellFunctional, trials) -> float:
    trials = as_trials(trials, F.scenario)
    if len(trials) == 0:
        raise ValueError("no trials")
    return float(trial_values(F, trials).mean())


def trial_values(F: BellFunctional, trials) -> np.ndarray:
    """``I(v_j)`` for every trial, in order."""
    trials = as_trials(trials, F.scenario)
    vals = F.bell_function()[trials.cell_index()]
    if np.isnan(vals).any():
        bad = int(np.flatnonzero(np.isnan(vals))[0])
        raise UndefinedBellFunctionError(
            f"trial {bad} uses settings {trials[bad].settings} outside the settings support")
    return vals


def extrema(F: BellFunctional) -> tuple[float, float]:
    vals = F.bell_function()
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        raise ValueError("functional has empty support")
    return float(vals.min()), float(vals.max())
