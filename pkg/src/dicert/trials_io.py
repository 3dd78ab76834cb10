"""Trial sampling and the JSON-Lines trial format.

File layout: one header object, then one object per trial in experimental
order::

    {"format": "dicert-trials/1", "scenario": {...}, "settings_dist": {...}, "seed": 7, "source": "chsh"}
    {"x": 0, "y": 1, "a": 1, "b": 0}

Tripartite records add ``"z"`` and ``"c"``. Sampling uses NumPy's PCG64
generator seeded with ``seed``; independent runs use ``seed + run``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MalformedBehaviorError, TrialFormatError
from .scenario import Behavior, Scenario, SettingsDistribution, Trials, validate_behavior

FORMAT = "dicert-trials/1"
SETTING_KEYS = ("x", "y", "z")
OUTCOME_KEYS = ("a", "b", "c")


@dataclass
class TrialFile:
    scenario: Scenario
    settings_dist: SettingsDistribution
    trials: Trials
    seed: int | None = None
    source: str = ""
    meta: dict = field(default_factory=dict)

    def header(self) -> dict:
        doc = {"format": FORMAT, "scenario": self.scenario.to_dict(),
               "settings_dist": self.settings_dist.to_dict(), "seed": self.seed, "source": self.source}
        if self.meta:
            doc["meta"] = self.meta
        return doc


def sample_trials(P: Behavior, w: SettingsDistribution, N: int, seed: int | None = None,
                  rng: np.random.Generator | None = None) -> Trials:
    """``N`` i.i.d. trials: settings from ``w``, outcomes from ``P(.|settings)``."""
    s = P.scenario
    if w.scenario != s:
        raise MalformedBehaviorError("settings distribution belongs to another scenario")
    rep = validate_behavior(P, tol=1e-9)
    if not (rep.normalized and rep.nonnegative):
        raise MalformedBehaviorError("behavior is not a valid conditional distribution")
    if N < 0:
        raise ValueError("N must be nonnegative")
    rng = rng if rng is not None else np.random.default_rng(seed)
    joint = w.weights.ravel()
    setting_cells = rng.choice(joint.size, size=N, p=joint / joint.sum())
    blocks = P.table.reshape(joint.size, -1)
    # inverse-CDF draw per trial from its settings block
    cdf = np.cumsum(blocks, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(N)
    outcome_cells = np.minimum((u[:, None] >= cdf[setting_cells]).sum(axis=1), blocks.shape[1] - 1)
    settings = np.stack(np.unravel_index(setting_cells, s.settings), axis=1)
    outcomes = np.stack(np.unravel_index(outcome_cells, s.outcomes), axis=1)
    return Trials(s, settings, outcomes)


def sample_runs(P: Behavior, w: SettingsDistribution, N: int, seed: int, runs: int) -> list[Trials]:
    return [sample_trials(P, w, N, seed + r) for r in range(runs)]


def _record(settings, outcomes) -> str:
    parts = []
    k = len(settings)
    for i in range(k):
        parts.append(f'"{SETTING_KEYS[i]}": {int(settings[i])}')
    for i in range(k):
        parts.append(f'"{OUTCOME_KEYS[i]}": {int(outcomes[i])}')
    return "{" + ", ".join(parts) + "}"


def write_trials(path, tf: TrialFile) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(tf.header(), sort_keys=True) + "\n")
        for st, oc in zip(tf.trials.settings, tf.trials.outcomes):
            fh.write(_record(st, oc) + "\n")


def read_trials(path) -> TrialFile:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise TrialFormatError("missing header", 1)
        try:
            head = json.loads(first)
            scenario = Scenario.from_dict(head["scenario"])
            dist = (SettingsDistribution.from_dict(scenario, head["settings_dist"])
                    if head.get("settings_dist") else SettingsDistribution.uniform(scenario))
        except (ValueError, KeyError, TypeError) as exc:
            raise TrialFormatError(f"bad header: {exc}", 1) from None
        k = scenario.parties
        skeys, okeys = SETTING_KEYS[:k], OUTCOME_KEYS[:k]
        expected = set(skeys + okeys)
        settings, outcomes = [], []
        support = dist.weights > 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise TrialFormatError(f"invalid JSON: {exc}", lineno) from None
            if not isinstance(rec, dict) or set(rec) != expected:
                raise TrialFormatError(f"record keys {sorted(rec) if isinstance(rec, dict) else rec} "
                                       f"do not match scenario fields {sorted(expected)}", lineno)
            st = tuple(rec[key] for key in skeys)
            oc = tuple(rec[key] for key in okeys)
            for v in st + oc:
                if not isinstance(v, int) or isinstance(v, bool):
                    raise TrialFormatError("indices must be integers", lineno)
            if any(not 0 <= v < m for v, m in zip(st, scenario.settings)):
                raise TrialFormatError(f"settings {st} out of range for the header scenario", lineno)
            if any(not 0 <= v < d for v, d in zip(oc, scenario.outcomes)):
                raise TrialFormatError(f"outcomes {oc} out of range for the header scenario", lineno)
            if not support[st]:
                raise TrialFormatError(f"settings {st} lie outside the settings distribution support", lineno)
            settings.append(st)
            outcomes.append(oc)
    trials = Trials(scenario, np.array(settings, dtype=np.int64).reshape(-1, k),
                    np.array(outcomes, dtype=np.int64).reshape(-1, k))
    return TrialFile(scenario, dist, trials, head.get("seed"), head.get("source", ""), head.get("meta", {}))


def export_csv(path, trials: Trials) -> None:
    k = trials.scenario.parties
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SETTING_KEYS[:k] + OUTCOME_KEYS[:k])
        for st, oc in zip(trials.settings, trials.outcomes):
            w.writerow([int(v) for v in st] + [int(v) for v in oc])
