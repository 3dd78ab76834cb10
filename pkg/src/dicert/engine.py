"""The three program classes: KL projection, functional maximization, negativity minimization."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import conic
from .conic import ConicProblem, require_usable
from .errors import MalformedBehaviorError, ScenarioMismatchError, SolverError, UnsupportedError
from .functionals import BellFunctional
from .hypotheses import HypothesisSet, build_negativity_capped
from .scenario import Behavior, FrequencyTable, SettingsDistribution, signaling_deviation

log = logging.getLogger(__name__)

LN2 = math.log(2)
F_FLOOR = 1e-12
CERT_TOL = 1e-4  # first-order accuracy when the bound is certified through the dual
CERTIFIED = "certified"


def _pad(mat: sp.spmatrix, n_extra: int) -> sp.csr_matrix:
    if n_extra == 0:
        return sp.csr_matrix(mat)
    return sp.csr_matrix(sp.hstack([mat, sp.csr_matrix((mat.shape[0], n_extra))]))


def hypothesis_problem(H: HypothesisSet, c: np.ndarray, n_extra: int = 0, extra_eq=None,
                       extra_ub=None, exp=None, offset: float = 0.0) -> ConicProblem:
    """Lower ``H`` to a ``ConicProblem`` with ``n_extra`` trailing auxiliary variables."""
    n = H.n_vars + n_extra
    A, b = H.eq
    G, h = H.ub
    A, G = _pad(A, n_extra), _pad(G, n_extra)
    if extra_eq is not None:
        A = sp.csr_matrix(sp.vstack([A, extra_eq[0]]))
        b = np.concatenate([b, extra_eq[1]])
    if extra_ub is not None:
        G = sp.csr_matrix(sp.vstack([G, extra_ub[0]]))
        h = np.concatenate([h, extra_ub[1]])
    psd = [(blk.size, _pad(blk.coeffs, n_extra)) for blk in H.psd_blocks]
    return ConicProblem(n, c, (A, b), (G, h), psd, exp, offset)


def _flat_table(f, scenario) -> np.ndarray:
    if isinstance(f, (Behavior, FrequencyTable)):
        if f.scenario != scenario:
            raise ScenarioMismatchError("data and hypothesis scenarios differ")
        table = f.table
    else:
        table = np.asarray(f, dtype=float)
    if table.shape != scenario.shape:
        raise MalformedBehaviorError(f"table shape {table.shape} does not match {scenario.shape}")
    return table.ravel()


def _entry_weights(w: SettingsDistribution) -> np.ndarray:
    return np.asarray(w.joint_weights(), dtype=float).ravel()


@dataclass(frozen=True)
class KLProjection:
    divergence: float  # nats
    projection: Behavior
    status: str

    @property
    def bits(self) -> float:
        return self.divergence / LN2


def _kl_weights(f, H: HypothesisSet, w: SettingsDistribution | None):
    w = w or SettingsDistribution.uniform(H.scenario)
    if w.scenario != H.scenario:
        raise ScenarioMismatchError("settings distribution and hypothesis scenarios differ")
    flat = _flat_table(f, H.scenario)
    wt = _entry_weights(w)
    on = wt > 0
    if np.isnan(flat[on]).any():
        raise MalformedBehaviorError("frequency table is undefined on settings in the support; mix it first")
    mask = on & (flat >= F_FLOOR)
    coef = np.where(mask, wt * np.where(mask, flat, 1.0), 0.0)
    return flat, coef, np.flatnonzero(mask)


def _divergence(flat, coef, idx, P) -> float:
    p = P[idx]
    if np.any(p <= 0):
        return math.inf
    return max(0.0, float(np.sum(coef[idx] * (np.log(flat[idx]) - np.log(p)))))


def kl_project(f, H: HypothesisSet, w: SettingsDistribution | None = None, backend=None) -> KLProjection:
    """``min over P in H of sum_xy w_xy sum_ab f log(f/P)``, returned in nats (``.bits`` for base 2).

    Entries with ``f < 1e-12`` contribute nothing.
    """
    flat, coef, idx = _kl_weights(f, H, w)
    be = backend if hasattr(backend, "solve") else conic.get_backend(backend)
    if not be.has_exp:
        return _kl_cutting_plane(flat, coef, idx, H, be)
    k = idx.size
    n = H.n_vars + k
    c = np.zeros(n)
    c[H.n_vars:] = coef[idx]
    offset = float(np.sum(coef[idx] * np.log(flat[idx])))
    # triple i: (-t_i, 1, P_i) in K_exp, i.e. t_i >= -log P_i
    B = H.behavior_coeffs[idx]
    rows_t = sp.csr_matrix((-np.ones(k), (np.arange(k), H.n_vars + np.arange(k))), shape=(k, n))
    rows_p = _pad(B, k)
    E = sp.csr_matrix(sp.vstack([rows_t, sp.csr_matrix((k, n)), rows_p]))
    perm = np.arange(3 * k).reshape(3, k).T.ravel()
    E = E[perm]
    e = np.concatenate([np.zeros(k), np.ones(k), H.behavior_const[idx]])[perm]
    prob = hypothesis_problem(H, c, k, exp=(E, e), offset=offset)
    sol = require_usable(conic.solve(prob, be), f"KL projection onto {H.tag}")
    P = H.behavior_coeffs @ sol.x[:H.n_vars] + H.behavior_const
    d = _divergence(flat, coef, idx, P)
    if not math.isfinite(d):
        d = max(0.0, sol.value)
    return KLProjection(d, H.behavior_of(sol.x[:H.n_vars]), sol.status)


def _kl_cutting_plane(flat, coef, idx, H, backend, max_iter: int = 200, tol: float = 1e-9) -> KLProjection:
    """Kelley cutting planes on ``t_i >= -log P_i`` for back-ends without an exponential cone."""
    k = idx.size
    n = H.n_vars + k
    c = np.zeros(n)
    c[H.n_vars:] = coef[idx]
    offset = float(np.sum(coef[idx] * np.log(flat[idx])))
    B = _pad(H.behavior_coeffs[idx], k)
    p0 = H.behavior_const[idx]
    cut_rows, cut_rhs = [], []
    # start with tangents at the data itself
    points = [flat[idx].copy()]
    best = math.inf
    x = None
    for _ in range(max_iter):
        for pk in points[-1:]:
            pk = np.maximum(pk, 1e-9)
            # -log P >= -log pk - (P - pk)/pk  ->  -(1/pk) P - t <= log pk - 1 + (1/pk) p0 ... per entry
            rows = sp.csr_matrix(-sp.diags(1.0 / pk) @ B)
            rows = rows - sp.csr_matrix((np.ones(k), (np.arange(k), H.n_vars + np.arange(k))), shape=(k, n))
            cut_rows.append(rows)
            cut_rhs.append(np.log(pk) - 1.0 + p0 / pk)
        extra = (sp.csr_matrix(sp.vstack(cut_rows)), np.concatenate(cut_rhs))
        prob = hypothesis_problem(H, c, k, extra_ub=extra, offset=offset)
        sol = require_usable(conic.solve(prob, backend), f"KL cutting plane onto {H.tag}")
        x = sol.x
        P = H.behavior_coeffs @ x[:H.n_vars] + H.behavior_const
        best = min(best, _divergence(flat, coef, idx, P))
        if best - sol.value <= tol:
            break
        points.append(P[idx])
    else:
        raise SolverError(f"KL cutting plane did not converge within {max_iter} rounds", conic.INACCURATE)
    return KLProjection(max(0.0, best), H.behavior_of(x[:H.n_vars]), conic.OPTIMAL)


def _optimize(H: HypothesisSet, coeffs: np.ndarray, maximize: bool, backend):
    sign = -1.0 if maximize else 1.0
    prob = hypothesis_problem(H, sign * np.asarray(coeffs, dtype=float))
    sol = conic.solve(prob, backend)
    if sol.status == conic.UNBOUNDED:
        raise SolverError(f"objective is unbounded over {H.tag}", sol.status)
    require_usable(sol, f"linear optimization over {H.tag}")
    return sign * sol.value, sol.x, sol.status


def optimize_linear(H: HypothesisSet, coeffs: np.ndarray, maximize: bool = True, backend=None):
    """Optimize ``coeffs @ v`` over the variables of ``H``; returns ``(value, v)``."""
    value, x, _ = _optimize(H, coeffs, maximize, backend)
    return value, x


def bound_functional(F: BellFunctional, H: HypothesisSet, backend=None) -> tuple[float, str]:
    """``(B_H, solver status)``: upper bound on the largest value of ``F`` over ``H``.

    Problems too large for the interior-point back-ends (and any SCS solve)
    are bounded through ``conic.dual_bound`` when ``H`` carries variable
    bounds; the returned value is then rigorous whatever the solver accuracy,
    and the status is ``certified``.
    """
    if F.scenario != H.scenario:
        raise ScenarioMismatchError("functional and hypothesis scenarios differ")
    beta = F.coefficients.ravel()
    row = np.asarray(beta @ H.behavior_coeffs).ravel()
    const = float(beta @ H.behavior_const)
    prob = hypothesis_problem(H, -row)
    be = backend if hasattr(backend, "solve") else conic.get_backend(backend, None)
    large = isinstance(be, conic.AutoBackend) and conic.auto_chain(prob)[0].name == "scs"
    if H.var_bound is not None and (large or be.name == "scs"):
        sol = conic.solve(prob, conic.ScsBackend(), CERT_TOL if large else conic.FEAS_TOL)
        if sol.status == conic.INFEASIBLE:
            raise SolverError(f"{H.tag} is empty", sol.status)
        if sol.dual is None:
            raise SolverError(f"no dual certificate for {H.tag}: {sol.raw_status}", sol.status)
        lower = conic.dual_bound(prob, sol.dual, H.var_bound)
        return -lower + const, CERTIFIED
    value, _, status = _optimize(H, row, True, be)
    return value + const, status


def maximize_functional(F: BellFunctional, H: HypothesisSet, backend=None) -> float:
    """Upper bound on the largest value of ``F`` over ``H``."""
    return bound_functional(F, H, backend)[0]


def cg_vector(P: Behavior, structure) -> dict:
    """Collins-Gisin coordinates of a nonsignaling behavior keyed like ``structure.cg_ids``."""
    table = P.table
    out = {}
    for key in structure.cg_ids:
        xs, sel = [], []
        for word in key:
            if word:
                (x, a), = word
                xs.append(x)
                sel.append(a)
            else:
                xs.append(0)
                sel.append(slice(None))
        block = table[tuple(xs)][tuple(sel)]
        out[key] = float(np.sum(block))
    return out


def min_negativity(P: Behavior, level: int, backend=None) -> float:
    """Smallest ``tr s-`` over moment-matrix splittings consistent with ``P``; a negativity lower bound."""
    s = P.scenario
    if signaling_deviation(P.table, s) > 1e-7:
        raise UnsupportedError("behavior is signaling; regularize it onto the quantum set first")
    H = build_negativity_capped(s, level, None)
    st = H.structure
    k = st.n_moments
    rows, rhs = [], []
    for key, val in cg_vector(P, st).items():
        mid = st.cg_ids[key]
        rows.append(([mid, k + mid], [1.0, -1.0]))
        rhs.append(val)
    r, c, v = [], [], []
    for i, (cols, vals) in enumerate(rows):
        r += [i, i]
        c += cols
        v += vals
    pin = (sp.csr_matrix((v, (r, c)), shape=(len(rows), H.n_vars)), np.array(rhs))
    neg, _ = H.forms["negativity"]
    prob = hypothesis_problem(H, neg, extra_eq=pin)
    sol = conic.solve(prob, backend)
    if sol.status == conic.INFEASIBLE:
        raise SolverError(f"behavior lies outside Q_{level}", sol.status)
    require_usable(sol, "negativity minimization")
    return max(0.0, sol.value)


def membership_distance(P, H: HypothesisSet, backend=None) -> float:
    """Smallest sup-norm distance from ``P`` to the behaviors of ``H``."""
    flat = _flat_table(P, H.scenario)
    m = flat.size
    n = H.n_vars + 1
    B = _pad(H.behavior_coeffs, 1)
    s_col = sp.csr_matrix((-np.ones(m), (np.arange(m), np.full(m, H.n_vars))), shape=(m, n))
    G = sp.csr_matrix(sp.vstack([B + s_col, -B + s_col]))
    h = np.concatenate([flat - H.behavior_const, H.behavior_const - flat])
    c = np.zeros(n)
    c[-1] = 1.0
    sol = require_usable(conic.solve(hypothesis_problem(H, c, 1, extra_ub=(G, h)), backend),
                          f"membership test for {H.tag}")
    return max(0.0, sol.value)


def is_member(P, H: HypothesisSet, tol: float = 1e-6, backend=None) -> bool:
    return membership_distance(P, H, backend) <= tol
