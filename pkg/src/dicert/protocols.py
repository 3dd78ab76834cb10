"""Martingale and prediction-based-ratio (PBR) hypothesis tests, gain rates and threshold scans."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .engine import LN2, kl_project
from .errors import EmptyDataError, SolverError, UnsupportedError
from .functionals import BellFunctional, extrema, trial_values
from .hypotheses import HypothesisSet, build_quantum_set
from .scenario import (
    Behavior,
    SettingsDistribution,
    as_trials,
    frequency_from_trials,
    mix_with_uniform,
)

log = logging.getLogger(__name__)

BETA_STAR = (16 + 14 * math.sqrt(2)) / 17
P_STAR_FLOOR = 1e-12
INSIDE_TOL = 1e-8  # nats; below this the gain is negligible and R is noise


@dataclass
class PValueTrace:
    """Checkpoints ``(N, p_bound)`` of one protocol run; ``p_bound`` is clamped into ``(0, 1]``."""

    protocol: str
    hypothesis: str
    threshold: float | None = None
    n: list = field(default_factory=list)
    log2_p: list = field(default_factory=list)  # log2 of the p bound, <= 0
    status_counts: Counter = field(default_factory=Counter)
    complete: bool = True
    message: str = ""

    def append(self, n_trials: int, log2_p: float):
        self.n.append(int(n_trials))
        self.log2_p.append(min(0.0, float(log2_p)))

    @property
    def p_bound(self) -> np.ndarray:
        return np.exp2(np.asarray(self.log2_p, dtype=float))

    @property
    def minus_log2_p(self) -> np.ndarray:
        return -np.asarray(self.log2_p, dtype=float)

    @property
    def final_p(self) -> float:
        return float(self.p_bound[-1]) if self.n else 1.0

    def rows(self):
        for n, lp in zip(self.n, self.log2_p):
            yield (self.protocol, self.hypothesis, self.threshold, n, 2.0**lp, -lp + 0.0)


TRACE_COLUMNS = ("protocol", "hypothesis", "threshold", "N", "p_bound", "minus_log2_p")


def traces_to_csv(traces: Sequence[PValueTrace]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for tr in traces:
        for row in tr.rows():
            proto, hyp, thr, n, p, mlp = row
            w.writerow([proto, hyp, "" if thr is None else repr(float(thr)), n, repr(p), repr(mlp)])
    return buf.getvalue()


def traces_metadata(traces: Sequence[PValueTrace], **extra) -> str:
    counts = Counter()
    for tr in traces:
        counts.update(tr.status_counts)
    doc = dict(extra)
    doc["solver_status_counts"] = dict(sorted(counts.items()))
    doc["incomplete_runs"] = [
        {"hypothesis": tr.hypothesis, "threshold": tr.threshold, "message": tr.message}
        for tr in traces if not tr.complete]
    return json.dumps(doc, indent=2, sort_keys=True)


# ---------------------------------------------------------------- martingale

def _check_b(B_H: float, b: tuple[float, float]):
    b_minus, b_plus = b
    if not b_minus < b_plus:
        raise ValueError("need b- < b+")
    if not b_minus < B_H <= b_plus:
        raise ValueError(f"need b- < B_H <= b+, got B_H={B_H} with b=({b_minus}, {b_plus})")


def martingale_log2_factor(I_hat: float, B_H: float, b: tuple[float, float]) -> float:
    """log2 of the bracketed per-trial factor of the martingale p-value bound (<= 0)."""
    _check_b(B_H, b)
    b_minus, b_plus = b
    if I_hat <= B_H:
        return 0.0
    width = b_plus - b_minus
    if I_hat >= b_plus:
        # continuous limit at the upper end
        return math.log2((B_H - b_minus) / width)
    up = (b_plus - I_hat) / width
    lo = (I_hat - b_minus) / width
    return min(0.0, up * math.log2((b_plus - B_H) / (b_plus - I_hat))
               + lo * math.log2((B_H - b_minus) / (I_hat - b_minus)))


def martingale_pvalue(I_hat: float, B_H: float, b: tuple[float, float], N: int) -> float:
    if N < 1:
        raise ValueError("N must be at least 1")
    return 2.0 ** (N * martingale_log2_factor(I_hat, B_H, b))


def martingale_gain(I_Q: float, B_H: float, b: tuple[float, float]) -> float:
    """Asymptotic confidence-gain rate in bits per trial (0 when ``I_Q <= B_H``)."""
    _check_b(B_H, b)
    b_minus, b_plus = b
    if not b_minus <= I_Q <= b_plus:
        raise ValueError("I_Q must lie in [b-, b+]")
    return 0.0 - martingale_log2_factor(I_Q, B_H, b)


def martingale_run(trials, F: BellFunctional, B_H: float, n_blk: int = 500,
                   hypothesis: str = "", threshold: float | None = None) -> PValueTrace:
    """p-value bound after every ``n_blk`` trials, from the running mean over the whole prefix."""
    trials = as_trials(trials, F.scenario)
    if len(trials) == 0:
        raise EmptyDataError("no trials")
    if n_blk < 1:
        raise ValueError("n_blk must be positive")
    b = extrema(F)
    _check_b(B_H, b)
    vals = trial_values(F, trials)
    csum = np.cumsum(vals)
    trace = PValueTrace("martingale", hypothesis or F.name, threshold)
    for end in _checkpoints(len(trials), n_blk):
        trace.append(end, end * martingale_log2_factor(csum[end - 1] / end, B_H, b))
    return trace


def _checkpoints(n: int, n_blk: int):
    ends = list(range(n_blk, n + 1, n_blk))
    if not ends or ends[-1] != n:
        ends.append(n)
    return ends


# ---------------------------------------------------------------- PBR

@dataclass
class PbrState:
    k: int = 0
    log_t: float = 0.0  # natural log of the test statistic
    ratio: np.ndarray | None = None
    n_est: int = 0
    n_test: int = 0


def pbr_ratio(f_reg, H: HypothesisSet, w: SettingsDistribution, backend=None):
    """``R = f_reg / P*`` with ``P*`` the KL projection of ``f_reg`` onto ``H``; returns ``(R, status)``."""
    table = f_reg.table if hasattr(f_reg, "table") else np.asarray(f_reg)
    proj = kl_project(table, H, w, backend)
    p_star = proj.projection.table
    if proj.divergence <= INSIDE_TOL:
        # f lies in H: P* = f, so R = 1 up to solver noise
        return np.where(table > 0, 1.0, 0.0), proj.status
    small = (p_star < P_STAR_FLOOR) & (table > 0)
    if small.any():
        log.warning("P* below %g on %d entries; ratio capped", P_STAR_FLOOR, int(small.sum()))
    R = np.where(table > 0, table / np.maximum(p_star, P_STAR_FLOOR), 0.0)
    return R, proj.status


def _regularize(f_mixed: np.ndarray, reg_set: HypothesisSet, w, backend):
    proj = kl_project(f_mixed, reg_set, w, backend)
    return proj.projection.table, proj.status


def pbr_run(trials, H: HypothesisSet, w: SettingsDistribution | None = None, n_blk: int = 500,
            variant: str = "full", reference: Behavior | None = None, reg_level: int | None = None,
            reg_set: HypothesisSet | None = None, backend=None, hypothesis: str = "",
            threshold: float | None = None) -> PValueTrace:
    """Prediction-based-ratio test of ``H``.

    ``variant``: ``full`` (mix, regularize onto ``Q_reg_level``, project onto
    ``H``), ``simplified`` (no regularization) or ``ideal`` (a single ratio
    from ``reference`` applied to every trial). The ratio fitted on the first
    ``k * n_blk`` trials is applied to trials ``k*n_blk+1 .. (k+1)*n_blk``.
    Solver failures truncate the trace.
    """
    s = H.scenario
    trials = as_trials(trials, s)
    w = w or SettingsDistribution.uniform(s)
    if len(trials) == 0:
        raise EmptyDataError("no trials")
    if n_blk < 1:
        raise ValueError("n_blk must be positive")
    support = w.weights > 0
    cells = trials.cell_index()
    settings_idx = cells[: s.parties]
    if not np.all(support[tuple(settings_idx)]):
        bad = int(np.flatnonzero(~support[tuple(settings_idx)])[0])
        raise UnsupportedError(f"trial {bad} uses settings outside the support of the settings distribution")
    trace = PValueTrace(f"pbr-{variant}", hypothesis or H.tag, threshold if threshold is not None else H.threshold)
    state = PbrState()
    n = len(trials)

    def apply(R, start, stop):
        vals = R[tuple(c[start:stop] for c in cells)]
        with np.errstate(divide="ignore"):
            state.log_t += float(np.sum(np.log(vals)))
        state.n_test += stop - start

    if variant == "ideal":
        if reference is None:
            raise ValueError("the ideal variant needs a reference behavior")
        try:
            R, status = pbr_ratio(reference, H, w, backend)
        except SolverError as exc:
            trace.status_counts[exc.status or "failed"] += 1
            trace.complete, trace.message = False, str(exc)
            return trace
        trace.status_counts[status] += 1
        state.ratio = R
        for start in range(0, n, n_blk):
            stop = min(n, start + n_blk)
            apply(R, start, stop)
            trace.append(stop, -state.log_t / LN2)
        return trace

    if variant not in ("full", "simplified"):
        raise UnsupportedError(f"unknown PBR variant {variant!r}")
    if variant == "full" and reg_set is None:
        level = reg_level if reg_level is not None else (H.level or 1)
        reg_set = build_quantum_set(s, level)
    while (state.k + 1) * n_blk < n:
        state.k += 1
        state.n_est = state.k * n_blk
        f = frequency_from_trials(trials[: state.n_est], s)
        table = f.table
        if f.has_zeros(support) or np.isnan(table[support]).any():
            table = mix_with_uniform(f, state.n_est).table
        try:
            if variant == "full":
                table, status = _regularize(table, reg_set, w, backend)
                trace.status_counts[status] += 1
            R, status = pbr_ratio(table, H, w, backend)
            trace.status_counts[status] += 1
        except SolverError as exc:
            trace.status_counts[exc.status or "failed"] += 1
            trace.complete = False
            trace.message = f"block {state.k}: {exc}"
            log.warning("PBR run stopped at block %d: %s", state.k, exc)
            break
        state.ratio = R
        stop = min(n, state.n_est + n_blk)
        apply(R, state.n_est, stop)
        trace.append(stop, -state.log_t / LN2)
    return trace


def pbr_gain(P_Q: Behavior, H: HypothesisSet, w: SettingsDistribution | None = None, backend=None) -> float:
    """Asymptotic PBR gain rate in bits per trial: the KL divergence from ``P_Q`` to ``H``."""
    return kl_project(P_Q, H, w, backend).bits


# ---------------------------------------------------------------- scans

@dataclass
class ScanResult:
    thresholds: list
    checkpoints: list
    certified: list  # per checkpoint: largest rejected threshold, or None
    traces: list

    @property
    def final(self):
        return self.certified[-1] if self.certified else None


def threshold_scan(traces_by_threshold: dict, gamma: float = 0.99) -> ScanResult:
    """Largest threshold whose hypothesis is rejected (``p <= 1 - gamma``) at each checkpoint.

    ``traces_by_threshold`` maps threshold -> ``PValueTrace`` or ``None`` when
    the bound could not be computed; missing or truncated checkpoints count as
    not rejected.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if not traces_by_threshold:
        raise ValueError("empty threshold grid")
    grid = sorted(traces_by_threshold)
    alpha = math.log2(1 - gamma)
    checkpoints = sorted({n for tr in traces_by_threshold.values() if tr is not None for n in tr.n})
    certified = []
    for cp in checkpoints:
        best = None
        for thr in grid:
            tr = traces_by_threshold[thr]
            if tr is None or cp not in tr.n:
                continue
            if tr.log2_p[tr.n.index(cp)] <= alpha + 1e-12:
                best = thr
        certified.append(best)
    traces = [traces_by_threshold[t] for t in grid]
    return ScanResult(grid, checkpoints, certified, traces)


def scan(trials, grid: Sequence[float], run: Callable[[float], PValueTrace], gamma: float = 0.99,
         jobs: int = 1) -> ScanResult:
    """Run ``run(threshold)`` over ``grid`` (solver failures -> not rejected) and scan the traces."""
    if not len(grid):
        raise ValueError("empty threshold grid")
    if list(grid) != sorted(grid):
        raise ValueError("threshold grid must be sorted ascending")

    def one(thr):
        try:
            return thr, run(thr)
        except SolverError as exc:
            log.warning("threshold %g: %s", thr, exc)
            return thr, None

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as ex:
            results = dict(ex.map(one, grid))
    else:
        results = dict(map(one, grid))
    return threshold_scan(results, gamma)


def kaniewski_fidelity(S: float) -> float:
    """Fidelity lower bound to the maximally entangled state from a certified CHSH value."""
    if not 2 - 1e-9 <= S <= 2 * math.sqrt(2) + 1e-9:
        raise ValueError("S must lie in [2, 2 sqrt 2]")
    return max(0.5, 0.5 + (S - BETA_STAR) / (2 * (2 * math.sqrt(2) - BETA_STAR)))


def negativity_grid(start: float = 0.0, stop: float = 0.49, step: float = 0.01) -> list:
    return [round(x, 10) for x in np.arange(start, stop + step / 2, step)]


def fidelity_grid(start: float = 0.5, stop: float = 0.99, step: float = 0.01) -> list:
    return [round(x, 10) for x in np.arange(start, stop + step / 2, step)]


def chsh_value_grid(n: int = 50) -> list:
    """``S0 = 2 + k * 2(sqrt 2 - 1)/n`` for ``k = 0..n-1``."""
    step = 2 * (math.sqrt(2) - 1) / n
    return [2 + k * step for k in range(n)]
