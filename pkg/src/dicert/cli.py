"""Command-line interface: ``dicert {simulate,certify,gain,bound,explain}``.

Angles are given in degrees on the command line. A ``--config`` JSON file
overrides flags of the same name (dashes become underscores). Every command
that writes files also writes ``<out>.json`` with a provenance block.
The solver backend is chosen with the ``DICERT_BACKEND`` environment
variable (``auto``, ``clarabel``, ``cvxopt``, ``scs``, ``cvxpy[:SOLVER]``).

Exit codes: 0 success, 2 usage or input error, 3 a solver failure affected a
reported number.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .engine import bound_functional, kl_project
from .errors import DicertError, SolverError
from .functionals import BellFunctional, evaluate, extrema, functional_by_name, make_chsh, make_cglmp3, make_mermin
from .hypotheses import (
    HypothesisSet,
    build_bell_capped,
    build_biseparable,
    build_fidelity_capped,
    build_lhv,
    build_negativity_capped,
    build_nonsignaling,
    build_quantum_set,
)
from .protocols import (
    chsh_value_grid,
    kaniewski_fidelity,
    martingale_gain,
    martingale_run,
    pbr_run,
    threshold_scan,
    traces_metadata,
    traces_to_csv,
)
from .quantum import CGLMP_ZETA, born_behavior, cglmp_state, negativity_exact, psi_theta, strategy_by_name, mes
from .scenario import CGLMP3_SCENARIO, CHSH_SCENARIO, MERMIN_SCENARIO, Scenario, SettingsDistribution
from .trials_io import TrialFile, export_csv, read_trials, sample_trials, write_trials

log = logging.getLogger("dicert")

EXIT_USAGE = 2
EXIT_SOLVER = 3
HYPOTHESES = ("negativity", "fidelity", "chsh-value", "bell-value", "lhv", "biseparable", "quantum",
              "nonsignaling")
THRESHOLD_FAMILIES = ("negativity", "fidelity", "chsh-value", "bell-value")


@dataclass
class RunConfig:
    """Resolved options of one CLI invocation."""

    command: str
    strategy: str | None = None
    functional: str | None = None
    hypothesis: str | None = None
    protocol: str = "martingale"
    variant: str = "full"
    grid: list | None = None
    level: int | None = None
    n_blk: int = 500
    gamma: float = 0.99
    seed: int | None = None
    runs: int = 1
    n: int | None = None
    theta: float | None = None  # degrees
    zeta: float | None = None
    threshold: float | None = None
    fractions: list | None = None
    inputs: list = field(default_factory=list)
    out: str | None = None
    post: str | None = None
    jobs: int = 1

    def validate(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.grid is not None and list(self.grid) != sorted(self.grid):
            raise ValueError("threshold grid must be sorted ascending")
        if self.n_blk < 1:
            raise ValueError("n_blk must be positive")
        if self.jobs < 1:
            raise ValueError("jobs must be positive")
        for path in self.inputs:
            if not Path(path).is_file():
                raise ValueError(f"input file {path} does not exist")

    def digest(self) -> str:
        doc = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(doc.encode()).hexdigest()


# ---------------------------------------------------------------- helpers

def parse_grid(text: str | None) -> list | None:
    """``start:stop:step`` (inclusive), ``chsh:<n>`` or a comma list."""
    if text is None:
        return None
    text = str(text).strip()
    if text.startswith("chsh:"):
        return chsh_value_grid(int(text.split(":", 1)[1]))
    if text.count(":") == 2:
        start, stop, step = (float(v) for v in text.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 12) for k in range(count)]
    return [float(v) for v in text.split(",") if v.strip()]


def default_functional(s: Scenario) -> BellFunctional:
    if s == CHSH_SCENARIO:
        return make_chsh()
    if s == CGLMP3_SCENARIO:
        return make_cglmp3()
    if s == MERMIN_SCENARIO:
        return make_mermin()
    raise ValueError("no default functional for this scenario; pass --functional")


def default_level(s: Scenario, hypothesis: str) -> int:
    if hypothesis == "biseparable" or s == MERMIN_SCENARIO:
        return 1
    if s == CGLMP3_SCENARIO:
        return 2
    return 3


def default_grid(hypothesis: str, F: BellFunctional) -> list | None:
    if hypothesis == "negativity":
        return parse_grid("0:0.49:0.01")
    if hypothesis == "fidelity":
        return parse_grid("0.5:0.99:0.01")
    if hypothesis in ("chsh-value", "bell-value"):
        if F.name == "chsh":
            return chsh_value_grid(50)
        raise ValueError("pass --grid for bell-value hypotheses")
    return None


def strategy_settings(name: str, scenario: Scenario) -> SettingsDistribution:
    if name == "ghz":
        return make_mermin().settings_dist
    return SettingsDistribution.uniform(scenario)


def build_hypothesis(hypothesis: str, s: Scenario, level: int, threshold: float | None,
                     F: BellFunctional | None = None) -> HypothesisSet:
    if hypothesis == "negativity":
        return build_negativity_capped(s, level, threshold)
    if hypothesis == "fidelity":
        return build_fidelity_capped(s, level, threshold)
    if hypothesis in ("chsh-value", "bell-value"):
        return build_bell_capped(F, threshold, True, level)
    if hypothesis == "lhv":
        return build_lhv(s)
    if hypothesis == "biseparable":
        return build_biseparable(s, level)
    if hypothesis == "quantum":
        return build_quantum_set(s, level)
    if hypothesis == "nonsignaling":
        return build_nonsignaling(s)
    raise ValueError(f"unknown hypothesis {hypothesis!r}")


class BoundCache:
    """Thread-safe memo of ``B_H`` values keyed by hypothesis and threshold; records solver statuses."""

    def __init__(self, F: BellFunctional, hypothesis: str, level: int):
        import threading

        self.F, self.hypothesis, self.level = F, hypothesis, level
        self.values, self.statuses = {}, {}
        self._lock = threading.Lock()

    def __call__(self, threshold):
        with self._lock:
            if threshold in self.values:
                return self.values[threshold]
        if self.hypothesis in ("chsh-value", "bell-value"):
            # the capped set attains its cap whenever the cap is below the quantum maximum
            value, status = float(threshold), "exact"
        elif self.hypothesis == "lhv":
            value, status = self.F.local_bound, "exact"
        else:
            H = build_hypothesis(self.hypothesis, self.F.scenario, self.level, threshold, self.F)
            value, status = bound_functional(self.F, H)
        with self._lock:
            self.values[threshold] = value
            self.statuses[threshold] = status
        return value


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def write_sidecar(out: Path, cfg: RunConfig, case: str, payload: dict):
    doc = {"provenance": {"case": case, "config_hash": cfg.digest(), "config": asdict(cfg),
                          "package_version": __version__,
                          "backend": os.environ.get("DICERT_BACKEND", "auto")}}
    doc.update(payload)
    _write(out.with_suffix(".json"), json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg: RunConfig) -> int:
    name = (cfg.strategy or "chsh").lower()
    params = {}
    if cfg.theta is not None:
        params["theta"] = math.radians(cfg.theta)
    if cfg.zeta is not None:
        params["zeta"] = cfg.zeta
    strat = strategy_by_name(name, **params)
    P = born_behavior(strat)
    w = strategy_settings(name, P.scenario)
    n = 100000 if cfg.n is None else cfg.n
    seed = 0 if cfg.seed is None else cfg.seed
    out = Path(cfg.out or "trials.jsonl")
    paths = []
    for r in range(cfg.runs):
        path = out if cfg.runs == 1 else out.with_name(f"{out.stem}-run{r:03d}{out.suffix}")
        trials = sample_trials(P, w, n, seed + r)
        meta = {"run": r, "strategy_params": {k: float(v) for k, v in params.items()}}
        write_trials(path, TrialFile(P.scenario, w, trials, seed + r, name, meta))
        if cfg.post == "csv":
            export_csv(path.with_suffix(".csv"), trials)
        paths.append(str(path))
    write_sidecar(out, cfg, f"simulate-{name}", {"files": paths, "n_trials": n})
    print(f"wrote {len(paths)} file(s) of {n} trials: {', '.join(paths)}")
    return 0


def _certify_one(tf: TrialFile, cfg: RunConfig, F: BellFunctional, grid, bounds: BoundCache, level: int):
    hyp = cfg.hypothesis
    thresholds = grid if grid is not None else [None]

    def run(thr):
        try:
            if cfg.protocol == "martingale":
                B_H = bounds(thr)
                if B_H >= extrema(F)[1] - 1e-12:
                    return thr, None  # cannot be rejected by this functional
                return thr, martingale_run(tf.trials, F, B_H, cfg.n_blk, hyp, thr)
            H = build_hypothesis(hyp, tf.scenario, level, thr, F)
            return thr, pbr_run(tf.trials, H, tf.settings_dist, cfg.n_blk, cfg.variant,
                                reg_level=level, hypothesis=hyp, threshold=thr)
        except SolverError as exc:
            log.warning("threshold %s: %s", thr, exc)
            return thr, None

    if cfg.jobs > 1:
        with ThreadPoolExecutor(cfg.jobs) as ex:
            results = dict(ex.map(run, thresholds))
    else:
        results = dict(map(run, thresholds))
    failed = [t for t, tr in results.items() if tr is None and not _unrejectable(t, bounds, F, cfg)]
    failed += [t for t, tr in results.items() if tr is not None and not tr.complete]
    key = {t if t is not None else 0.0: tr for t, tr in results.items()}
    return threshold_scan(key, cfg.gamma), failed


def _unrejectable(thr, bounds: BoundCache, F, cfg) -> bool:
    return cfg.protocol == "martingale" and thr in bounds.values and bounds.values[thr] >= extrema(F)[1] - 1e-12


def cmd_certify(cfg: RunConfig) -> int:
    if not cfg.inputs:
        raise ValueError("certify needs at least one trial file")
    if cfg.hypothesis not in HYPOTHESES:
        raise ValueError(f"unknown hypothesis {cfg.hypothesis!r}")
    files = [read_trials(p) for p in cfg.inputs]
    s = files[0].scenario
    if any(tf.scenario != s for tf in files):
        raise ValueError("all trial files must share one scenario")
    F = functional_by_name(cfg.functional) if cfg.functional else default_functional(s)
    if cfg.hypothesis == "chsh-value" and F.name != "chsh":
        raise ValueError("the chsh-value hypothesis needs the chsh functional")
    level = cfg.level or default_level(s, cfg.hypothesis)
    grid = cfg.grid if cfg.grid is not None else default_grid(cfg.hypothesis, F)
    bounds = BoundCache(F, cfg.hypothesis, level)
    out = Path(cfg.out or "certify")
    summary_runs, failed_any = [], False
    curve_rows = ["run,N,certified" + (",fidelity" if cfg.post == "kaniewski" else "")]
    for r, (path, tf) in enumerate(zip(cfg.inputs, files)):
        result, failed = _certify_one(tf, cfg, F, grid, bounds, level)
        failed_any |= bool(failed)
        traces = [t for t in result.traces if t is not None]
        _write(out.with_name(f"{out.name}-run{r:03d}-trace.csv"), traces_to_csv(traces))
        for cp, cert in zip(result.checkpoints, result.certified):
            row = f"{r},{cp},{'' if cert is None else repr(float(cert))}"
            if cfg.post == "kaniewski":
                row += "," + ("" if cert is None else repr(kaniewski_fidelity(cert)))
            curve_rows.append(row)
        entry = {"file": str(path), "seed": tf.seed, "n_trials": len(tf.trials),
                 "certified": result.final, "failed_thresholds": failed,
                 "meta": json.loads(traces_metadata(traces))}
        if grid is None:
            entry["p_bound"] = traces[0].final_p if traces else 1.0
        if cfg.post == "kaniewski" and result.final is not None:
            entry["fidelity"] = kaniewski_fidelity(result.final)
        summary_runs.append(entry)
    _write(out.with_name(f"{out.name}-certified.csv"), "\n".join(curve_rows) + "\n")
    finals = [e["certified"] for e in summary_runs]
    payload = {"functional": F.name, "hypothesis": cfg.hypothesis, "protocol": cfg.protocol,
               "variant": cfg.variant if cfg.protocol == "pbr" else None, "level": level,
               "gamma": cfg.gamma, "n_blk": cfg.n_blk, "grid": grid,
               "bounds": {repr(k): v for k, v in sorted(bounds.values.items(), key=lambda kv: (kv[0] is None, kv[0] or 0))},
               "bound_statuses": {repr(k): v for k, v in bounds.statuses.items()},
               "runs": summary_runs,
               "mean_certified": (float(np.mean([0.0 if v is None else v for v in finals]))
                                  if grid is not None else None)}
    write_sidecar(out.with_name(f"{out.name}-summary"), cfg, f"certify-{F.name}-{cfg.hypothesis}", payload)
    for e in summary_runs:
        msg = f"{e['file']}: certified {cfg.hypothesis} threshold {e['certified']} at gamma={cfg.gamma}"
        if "p_bound" in e:
            msg = f"{e['file']}: p-value bound {e['p_bound']:.6g} for {cfg.hypothesis}"
        if "fidelity" in e:
            msg += f" (fidelity >= {e['fidelity']:.6f})"
        print(msg)
    if failed_any:
        print("solver failures affected the reported values", file=sys.stderr)
        return EXIT_SOLVER
    return 0


def _exact_property(hypothesis: str, strategy: str, param: float) -> float:
    if strategy == "cglmp3":
        rho = np.outer(cglmp_state(param), cglmp_state(param).conj())
        return negativity_exact(rho, (3, 3))
    psi = psi_theta(param)
    if hypothesis == "negativity":
        return negativity_exact(np.outer(psi, psi.conj()))
    if hypothesis == "fidelity":
        return float(abs(np.vdot(mes(2), psi)) ** 2)
    raise ValueError(f"--fractions is not defined for the {hypothesis} hypothesis")


def cmd_gain(cfg: RunConfig) -> int:
    name = (cfg.strategy or "chsh").lower()
    hyp = cfg.hypothesis or "lhv"
    if name in ("chsh", "tilted"):
        params = [math.radians(t) for t in (cfg.grid or [cfg.theta if cfg.theta is not None else 45.0])]
        labels = cfg.grid or [cfg.theta if cfg.theta is not None else 45.0]
    elif name == "cglmp3":
        params = cfg.grid or [cfg.zeta if cfg.zeta is not None else CGLMP_ZETA]
        labels = params
    else:
        params, labels = [None], [0.0]
    rows = ["parameter,functional,hypothesis,threshold,I_Q,B_H,G_mart,G_pbr"]
    failed = False
    for label, param in zip(labels, params):
        strat = strategy_by_name(name, **({} if param is None else
                                          {"zeta" if name == "cglmp3" else "theta": param}))
        P = born_behavior(strat)
        s = P.scenario
        F = functional_by_name(cfg.functional) if cfg.functional else default_functional(s)
        level = cfg.level or default_level(s, hyp)
        if cfg.fractions:
            thresholds = [f * _exact_property(hyp, name, param) for f in cfg.fractions]
        elif hyp in THRESHOLD_FAMILIES:
            thresholds = [cfg.threshold if cfg.threshold is not None else 0.0]
        else:
            thresholds = [None]
        w = F.settings_dist
        I_Q = evaluate(F, P)
        b = extrema(F)
        for thr in thresholds:
            try:
                H = build_hypothesis(hyp, s, level, thr, F)
                if hyp == "lhv":
                    B_H = F.local_bound
                elif hyp in ("chsh-value", "bell-value"):
                    B_H = thr
                else:
                    B_H, _ = bound_functional(F, H)
                g_mart = martingale_gain(I_Q, min(B_H, b[1]), b) if B_H < b[1] else 0.0
                g_pbr = kl_project(P, H, w).bits
            except SolverError as exc:
                log.warning("parameter %s threshold %s: %s", label, thr, exc)
                failed = True
                continue
            rows.append(",".join([repr(float(label)), F.name, hyp, "" if thr is None else repr(float(thr)),
                                  repr(I_Q), repr(B_H), repr(g_mart), repr(g_pbr)]))
    text = "\n".join(rows) + "\n"
    if cfg.out:
        out = Path(cfg.out)
        _write(out, text)
        write_sidecar(out, cfg, f"gain-{name}-{hyp}", {"rows": len(rows) - 1})
    sys.stdout.write(text)
    return EXIT_SOLVER if failed else 0


def cmd_bound(cfg: RunConfig) -> int:
    if not cfg.functional:
        raise ValueError("bound needs --functional")
    F = functional_by_name(cfg.functional)
    hyp = cfg.hypothesis or "quantum"
    level = cfg.level or default_level(F.scenario, hyp)
    H = build_hypothesis(hyp, F.scenario, level, cfg.threshold, F)
    try:
        value, status = bound_functional(F, H)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"B_H = {value:.10f}  (functional={F.name}, hypothesis={hyp}, level={level}, "
          f"threshold={cfg.threshold}, status={status})")
    if cfg.out:
        out = Path(cfg.out)
        write_sidecar(out, cfg, f"bound-{F.name}-{hyp}",
                      {"B_H": value, "status": status, "level": level, "threshold": cfg.threshold})
    return 0


def cmd_explain(cfg: RunConfig) -> int:
    F = functional_by_name(cfg.functional or "chsh")
    hyp = cfg.hypothesis or "quantum"
    level = cfg.level or default_level(F.scenario, hyp)
    threshold = cfg.threshold
    if threshold is None and hyp in ("fidelity", "chsh-value", "bell-value"):
        raise ValueError(f"the {hyp} hypothesis needs --threshold")
    print(build_hypothesis(hyp, F.scenario, level, threshold, F).explain())
    return 0


COMMANDS = {"simulate": cmd_simulate, "certify": cmd_certify, "gain": cmd_gain, "bound": cmd_bound,
            "explain": cmd_explain}


# ---------------------------------------------------------------- parsing

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dicert", description="Device-independent certification toolkit.")
    ap.add_argument("--config", help="JSON file whose keys override flags")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, hypothesis=True):
        p.add_argument("--functional", help="chsh | tilted:<alpha> | cglmp3 | mermin")
        if hypothesis:
            p.add_argument("--hypothesis", choices=HYPOTHESES)
        p.add_argument("--level", type=int, help="moment-matrix level (default 3 CHSH, 2 CGLMP, 1 tripartite)")
        p.add_argument("--out")

    p = sub.add_parser("simulate", help="sample trials from a named quantum strategy")
    p.add_argument("--strategy", default="chsh", help="chsh | tilted | cglmp3 | ghz | product00")
    p.add_argument("--theta", type=float, help="state angle in degrees (default 45)")
    p.add_argument("--zeta", help="CGLMP state parameter or 'auto'")
    p.add_argument("--n", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=1, help="independent runs with seeds seed+run")
    p.add_argument("--csv", dest="post", action="store_const", const="csv", help="also export CSV")
    p.add_argument("--out", default="trials.jsonl")

    p = sub.add_parser("certify", help="threshold scan on trial files")
    p.add_argument("inputs", nargs="+", help="trial files (one run each)")
    common(p)
    p.add_argument("--protocol", choices=("martingale", "pbr"), default="martingale")
    p.add_argument("--variant", choices=("full", "simplified"), default="full")
    p.add_argument("--grid", help="start:stop:step, chsh:<n> or comma list")
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--nblk", dest="n_blk", type=int, default=500)
    p.add_argument("--post", choices=("kaniewski",))
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("gain", help="asymptotic confidence-gain rates")
    p.add_argument("--strategy", default="chsh")
    common(p)
    p.add_argument("--theta", type=float, help="degrees")
    p.add_argument("--zeta", help="CGLMP state parameter or 'auto'")
    p.add_argument("--grid", help="parameter sweep: degrees for chsh, zeta for cglmp3")
    p.add_argument("--threshold", type=float)
    p.add_argument("--fractions", help="thresholds as fractions of the exact state property")

    p = sub.add_parser("bound", help="B_H: largest functional value over a hypothesis set")
    common(p)
    p.add_argument("--n0", dest="threshold", type=float)
    p.add_argument("--f0", dest="threshold", type=float)
    p.add_argument("--s0", dest="threshold", type=float)

    p = sub.add_parser("explain", help="describe the conic structure of a hypothesis set")
    common(p)
    p.add_argument("--threshold", type=float)
    return ap


def resolve_config(args: argparse.Namespace) -> RunConfig:
    opts = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            override = json.load(fh)
        opts.update({k.replace("-", "_"): v for k, v in override.items()})
    if isinstance(opts.get("grid"), str):
        opts["grid"] = parse_grid(opts["grid"])
    if isinstance(opts.get("fractions"), str):
        opts["fractions"] = parse_grid(opts["fractions"])
    zeta = opts.get("zeta")
    if zeta is not None:
        opts["zeta"] = CGLMP_ZETA if str(zeta).lower() == "auto" else float(zeta)
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(opts) - known
    if unknown:
        raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
    cfg = RunConfig(**opts)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[cfg.command](cfg)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DicertError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
