"""Bell scenarios, behaviors, trial records and relative frequencies.

A behavior for an ``n``-party scenario is stored as a dense array of shape
``settings + outcomes``, e.g. ``P[x, y, a, b]`` for two parties. Flattening it
row-major gives the canonical ordering used for serialization and solver
interop: settings tuples are the slow index, outcome tuples the fast one.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import EmptyDataError, MalformedBehaviorError, ScenarioMismatchError, TooLargeError

NS_TOL = 1e-9
VERTEX_GUARD = 10**6


@dataclass(frozen=True)
class Scenario:
    """Number of settings and outcomes for each party (outcome count uniform per party)."""

    settings: tuple[int, ...]
    outcomes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "settings", tuple(int(m) for m in self.settings))
        object.__setattr__(self, "outcomes", tuple(int(d) for d in self.outcomes))
        if len(self.settings) != len(self.outcomes):
            raise ValueError("settings and outcomes must list one count per party")
        if len(self.settings) not in (2, 3):
            raise ValueError("only 2- and 3-party scenarios are supported")
        if min(self.settings + self.outcomes) < 1:
            raise ValueError("all setting and outcome counts must be >= 1")

    @classmethod
    def uniform(cls, parties: int, settings: int, outcomes: int) -> "Scenario":
        return cls((settings,) * parties, (outcomes,) * parties)

    @property
    def parties(self) -> int:
        return len(self.settings)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.settings + self.outcomes

    @property
    def n_setting_tuples(self) -> int:
        return math.prod(self.settings)

    @property
    def n_outcome_tuples(self) -> int:
        return math.prod(self.outcomes)

    def setting_tuples(self) -> Iterator[tuple[int, ...]]:
        return itertools.product(*(range(m) for m in self.settings))

    def outcome_tuples(self) -> Iterator[tuple[int, ...]]:
        return itertools.product(*(range(d) for d in self.outcomes))

    def to_dict(self) -> dict:
        return {"settings": list(self.settings), "outcomes": list(self.outcomes)}

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(tuple(d["settings"]), tuple(d["outcomes"]))


CHSH_SCENARIO = Scenario((2, 2), (2, 2))
CGLMP3_SCENARIO = Scenario((2, 2), (3, 3))
MERMIN_SCENARIO = Scenario((2, 2, 2), (2, 2, 2))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Behavior:
    scenario: Scenario
    table: np.ndarray = field(repr=False)
    name: str = ""

    def __post_init__(self):
        table = np.asarray(self.table, dtype=float)
        if table.shape != self.scenario.shape:
            if table.size == math.prod(self.scenario.shape):
                table = table.reshape(self.scenario.shape)
            else:
                raise MalformedBehaviorError(
                    f"table has shape {table.shape}, scenario needs {self.scenario.shape}")
        if np.isnan(table).any():
            raise MalformedBehaviorError("behavior table has missing (NaN) entries")
        object.__setattr__(self, "table", _frozen(table))

    def __getitem__(self, key):
        return self.table[key]

    def flat(self) -> np.ndarray:
        return self.table.reshape(-1)

    def blocks(self) -> np.ndarray:
        """Table as (setting tuple, outcome tuple) matrix."""
        s = self.scenario
        return self.table.reshape(s.n_setting_tuples, s.n_outcome_tuples)

    def mix(self, other: "Behavior", weight: float) -> "Behavior":
        """Return ``(1 - weight) * self + weight * other``."""
        if other.scenario != self.scenario:
            raise ScenarioMismatchError("cannot mix behaviors of different scenarios")
        return Behavior(self.scenario, (1 - weight) * self.table + weight * other.table)

    def to_json(self) -> dict:
        return {"scenario": self.scenario.to_dict(), "P": self.blocks().tolist(), "name": self.name}

    @classmethod
    def from_json(cls, d: dict) -> "Behavior":
        return cls(Scenario.from_dict(d["scenario"]), np.asarray(d["P"], dtype=float), d.get("name", ""))


def uniform_behavior(s: Scenario) -> Behavior:
    return Behavior(s, np.full(s.shape, 1.0 / s.n_outcome_tuples), "uniform")


@dataclass(frozen=True)
class SettingsDistribution:
    scenario: Scenario
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(self.scenario.settings)
        if (w < 0).any() or abs(w.sum() - 1) > 1e-12:
            raise ValueError("settings weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def uniform(cls, s: Scenario) -> "SettingsDistribution":
        return cls(s, np.full(s.settings, 1.0 / s.n_setting_tuples))

    @classmethod
    def on_support(cls, s: Scenario, support: Iterable[tuple[int, ...]]) -> "SettingsDistribution":
        """Uniform distribution over the listed settings tuples."""
        w = np.zeros(s.settings)
        support = list(support)
        for xs in support:
            w[xs] = 1.0 / len(support)
        return cls(s, w)

    @property
    def support(self) -> np.ndarray:
        return self.weights > 0

    def joint_weights(self) -> np.ndarray:
        """Weights broadcast to the full behavior shape (w_xy repeated over outcomes)."""
        s = self.scenario
        return np.broadcast_to(self.weights.reshape(s.settings + (1,) * s.parties), s.shape)

    def to_dict(self) -> dict:
        return {"weights": self.weights.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, s: Scenario, d: dict) -> "SettingsDistribution":
        return cls(s, np.asarray(d["weights"], dtype=float))


@dataclass(frozen=True)
class TrialRecord:
    settings: tuple[int, ...]
    outcomes: tuple[int, ...]


class Trials:
    """Ordered trial data held as two integer arrays of shape ``(N, parties)``.

    Indexing with an int gives a :class:`TrialRecord`, slicing gives ``Trials``.
    """

    def __init__(self, scenario: Scenario, settings, outcomes):
        settings = np.asarray(settings, dtype=np.int64).reshape(-1, scenario.parties)
        outcomes = np.asarray(outcomes, dtype=np.int64).reshape(-1, scenario.parties)
        if settings.shape != outcomes.shape:
            raise ValueError("settings and outcomes arrays differ in length")
        if len(settings):
            if (settings < 0).any() or (settings >= np.array(scenario.settings)).any():
                raise ValueError("setting index out of range for scenario")
            if (outcomes < 0).any() or (outcomes >= np.array(scenario.outcomes)).any():
                raise ValueError("outcome index out of range for scenario")
        settings.setflags(write=False)
        outcomes.setflags(write=False)
        self.scenario = scenario
        self.settings = settings
        self.outcomes = outcomes

    @classmethod
    def from_records(cls, scenario: Scenario, records: Sequence[TrialRecord]) -> "Trials":
        if isinstance(records, Trials):
            return records
        settings = [r.settings for r in records]
        outcomes = [r.outcomes for r in records]
        return cls(scenario, np.array(settings, dtype=np.int64).reshape(-1, scenario.parties),
                   np.array(outcomes, dtype=np.int64).reshape(-1, scenario.parties))

    def __len__(self) -> int:
        return len(self.settings)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Trials(self.scenario, self.settings[idx], self.outcomes[idx])
        return TrialRecord(tuple(int(v) for v in self.settings[idx]),
                           tuple(int(v) for v in self.outcomes[idx]))

    def __iter__(self) -> Iterator[TrialRecord]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        return (isinstance(other, Trials) and self.scenario == other.scenario
                and np.array_equal(self.settings, other.settings)
                and np.array_equal(self.outcomes, other.outcomes))

    def cell_index(self) -> tuple[np.ndarray, ...]:
        """Index tuple into a behavior-shaped array, one entry per trial."""
        return tuple(self.settings.T) + tuple(self.outcomes.T)


def as_trials(trials, scenario: Scenario) -> Trials:
    if isinstance(trials, Trials):
        if trials.scenario != scenario:
            raise ScenarioMismatchError("trials belong to a different scenario")
        return trials
    return Trials.from_records(scenario, list(trials))


@dataclass(frozen=True)
class ValidationReport:
    normalized: bool
    nonnegative: bool
    nonsignaling: bool
    max_normalization_error: float
    min_entry: float
    max_signaling: float

    @property
    def ok(self) -> bool:
        return self.normalized and self.nonnegative and self.nonsignaling


def signaling_deviation(table: np.ndarray, s: Scenario) -> float:
    """Largest violation of the no-signaling marginal identities.

    For each party, summing out its outcome must give a quantity that does
    not depend on its own setting.
    """
    n = s.parties
    worst = 0.0
    for p in range(n):
        marg = table.sum(axis=n + p)  # drop party p's outcome
        dev = np.abs(marg - marg.mean(axis=p, keepdims=True)).max() if s.settings[p] > 1 else 0.0
        worst = max(worst, float(dev))
    return worst


def validate_behavior(P, tol: float = NS_TOL, scenario: Scenario | None = None) -> ValidationReport:
    if isinstance(P, Behavior):
        s, table = P.scenario, P.table
    else:
        if scenario is None:
            raise MalformedBehaviorError("raw tables need an explicit scenario")
        s, table = scenario, np.asarray(P, dtype=float)
        if table.shape != s.shape:
            raise MalformedBehaviorError(f"table has shape {table.shape}, expected {s.shape}")
        if np.isnan(table).any():
            raise MalformedBehaviorError("table has missing entries")
    n = s.parties
    sums = table.sum(axis=tuple(range(n, 2 * n)))
    norm_err = float(np.abs(sums - 1).max())
    min_entry = float(table.min())
    sig = signaling_deviation(table, s)
    return ValidationReport(norm_err <= tol, min_entry >= -tol, sig <= tol, norm_err, min_entry, sig)


def deterministic_vertex_tables(s: Scenario, guard: int = VERTEX_GUARD) -> np.ndarray:
    """All local deterministic behaviors as an array of shape ``(n_vertices, *s.shape)``."""
    count = math.prod(d ** m for m, d in zip(s.settings, s.outcomes))
    if count > guard:
        raise TooLargeError(f"{count} deterministic vertices exceeds the guard of {guard}")
    party_fns = [list(itertools.product(range(d), repeat=m)) for m, d in zip(s.settings, s.outcomes)]
    # per-party response tables r[f, x, a] = [f(x) == a]
    responses = []
    for fns, m, d in zip(party_fns, s.settings, s.outcomes):
        r = np.zeros((len(fns), m, d))
        for i, f in enumerate(fns):
            r[i, np.arange(m), f] = 1.0
        responses.append(r)
    out = np.empty((count,) + s.shape)
    n = s.parties
    for idx, combo in enumerate(itertools.product(*(range(len(f)) for f in party_fns))):
        table = np.ones(())
        for p, i in enumerate(combo):
            table = np.multiply.outer(table, responses[p][i])
        # axes are (x0, a0, x1, a1, ...); reorder to settings then outcomes
        perm = [2 * p for p in range(n)] + [2 * p + 1 for p in range(n)]
        out[idx] = table.transpose(perm)
    return out


def enumerate_deterministic_vertices(s: Scenario, guard: int = VERTEX_GUARD) -> list[Behavior]:
    return [Behavior(s, t, "deterministic") for t in deterministic_vertex_tables(s, guard)]


@dataclass(frozen=True)
class FrequencyTable:
    """Relative frequencies; conditional blocks for unseen settings are NaN."""

    scenario: Scenario
    table: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "table", _frozen(self.table))
        counts = np.array(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n_trials(self) -> int:
        return int(self.counts.sum())

    @property
    def undefined(self) -> np.ndarray:
        """Boolean mask over settings tuples that were never observed."""
        return self.counts == 0

    def has_zeros(self, support: np.ndarray | None = None) -> bool:
        mask = np.ones(self.scenario.settings, bool) if support is None else support
        blocks = self.table[mask]
        return bool(np.isnan(blocks).any() or (blocks == 0).any())

    def as_behavior(self) -> Behavior:
        return Behavior(self.scenario, self.table)


def frequency_from_trials(trials, s: Scenario) -> FrequencyTable:
    trials = as_trials(trials, s)
    if len(trials) == 0:
        raise EmptyDataError("no trials to estimate frequencies from")
    counts = np.zeros(s.shape)
    np.add.at(counts, trials.cell_index(), 1)
    n_xy = counts.sum(axis=tuple(range(s.parties, 2 * s.parties)))
    with np.errstate(invalid="ignore", divide="ignore"):
        table = counts / n_xy.reshape(s.settings + (1,) * s.parties)
    return FrequencyTable(s, table, n_xy.astype(np.int64))


def mix_with_uniform(f: FrequencyTable, n_est: int) -> FrequencyTable:
    """Shrink ``f`` toward the uniform distribution with weight ``1/(n_est+1)``.

    Unseen settings blocks are replaced by the uniform block, so every
    entry of the result is strictly positive. ``n_est = 0`` returns the
    uniform distribution.
    """
    s = f.scenario
    u = 1.0 / s.n_outcome_tuples
    base = np.where(np.isnan(f.table), u, f.table)
    mixed = (n_est * base + u) / (n_est + 1)
    return FrequencyTable(s, mixed, f.counts)
