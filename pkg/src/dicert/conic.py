"""Neutral conic problems and solver back-end adapters.

A ``ConicProblem`` minimizes ``c @ x + offset`` subject to

* ``A_eq x = b_eq`` and ``A_ub x <= b_ub``,
* PSD blocks ``mat(L x) >= 0`` with ``L`` of shape ``(size*size, n)`` (row-major),
* exponential-cone triples ``(E x + e)[3i:3i+3] in K_exp`` where
  ``K_exp = closure{(u, v, w): v > 0, v exp(u / v) <= w}``.

Back-ends are selected by name or through the ``DICERT_BACKEND`` environment
variable: ``auto`` (default), ``clarabel``, ``cvxopt``, ``scs`` or
``cvxpy[:SOLVER]``. ``auto`` picks Clarabel for exponential-cone problems of
moderate size, CVXOPT for linear SDPs with few variables (accurate on the
degenerate optima of moment relaxations), and SCS for everything larger;
an unusable result is retried with the next back-end in that order.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import SolverError, UnsupportedError

log = logging.getLogger(__name__)

FEAS_TOL = 1e-8
BACKEND_ENV = "DICERT_BACKEND"

INACCURATE_TOL = 1e-6
OPTIMAL, INFEASIBLE, INACCURATE, UNBOUNDED, FAILED = (
    "optimal", "infeasible", "inaccurate", "unbounded", "failed")


@dataclass
class ConicProblem:
    n: int
    c: np.ndarray
    eq: tuple
    ub: tuple
    psd: list = field(default_factory=list)  # [(size, L)]
    exp: tuple | None = None  # (E, e)
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        if self.c.shape != (self.n,):
            raise ValueError("objective length does not match the variable count")
        for mat, rhs in (self.eq, self.ub):
            if mat.shape != (len(rhs), self.n):
                raise ValueError("affine constraint dimensions are inconsistent")
        for size, L in self.psd:
            if L.shape != (size * size, self.n):
                raise ValueError("PSD block dimensions are inconsistent")
        if self.exp is not None:
            E, e = self.exp
            if E.shape != (len(e), self.n) or len(e) % 3:
                raise ValueError("exponential-cone rows must come in triples")

    @property
    def n_exp(self) -> int:
        return 0 if self.exp is None else len(self.exp[1]) // 3

    def residuals(self, x: np.ndarray) -> dict:
        """Primal violations of every constraint family at ``x``."""
        out = {"eq": 0.0, "ub": 0.0, "psd": 0.0, "exp": 0.0}
        A, b = self.eq
        if A.shape[0]:
            out["eq"] = float(np.abs(A @ x - b).max())
        G, h = self.ub
        if G.shape[0]:
            out["ub"] = float(max(0.0, (G @ x - h).max()))
        for size, L in self.psd:
            m = (L @ x).reshape(size, size)
            out["psd"] = max(out["psd"], float(max(0.0, -np.linalg.eigvalsh((m + m.T) / 2).min())))
        if self.exp is not None:
            E, e = self.exp
            t = (E @ x + e).reshape(-1, 3)
            u, v, w = t[:, 0], t[:, 1], t[:, 2]
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                gap = np.where(v > 0, v * np.exp(u / np.where(v > 0, v, 1)) - w, np.inf)
            out["exp"] = float(max(0.0, np.nanmax(gap))) if gap.size else 0.0
        return out

    def to_json(self) -> str:
        """Dump in a solver-neutral schema (all sparse maps as COO triples)."""

        def coo(m):
            m = sp.coo_matrix(m)
            return {"shape": list(m.shape), "row": m.row.tolist(), "col": m.col.tolist(),
                    "val": m.data.tolist()}

        doc = {
            "schema": "dicert-conic/1",
            "variables": self.n,
            "objective": {"c": self.c.tolist(), "offset": self.offset, "sense": "min"},
            "eq": {"A": coo(self.eq[0]), "b": np.asarray(self.eq[1]).tolist()},
            "ub": {"A": coo(self.ub[0]), "b": np.asarray(self.ub[1]).tolist()},
            "psd": [{"size": size, "L": coo(L)} for size, L in self.psd],
            "exp": None if self.exp is None else {"E": coo(self.exp[0]), "e": np.asarray(self.exp[1]).tolist()},
        }
        return json.dumps(doc)


@dataclass
class ConicSolution:
    status: str
    value: float
    x: np.ndarray | None
    residuals: dict = field(default_factory=dict)
    backend: str = ""
    raw_status: str = ""
    dual: np.ndarray | None = None  # multipliers of ``stacked_form`` rows, when the back-end reports them

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    @property
    def usable(self) -> bool:
        """Optimal, or inaccurate with every primal residual below ``INACCURATE_TOL``."""
        if self.status == OPTIMAL:
            return True
        return (self.status == INACCURATE and self.x is not None
                and max(self.residuals.values(), default=0.0) <= INACCURATE_TOL)


def _svec_map(size: int, lower: bool = False) -> sp.csr_matrix:
    """Triangle svec of the symmetric part, off-diagonals scaled by sqrt 2.

    Upper triangle column-major by default (Clarabel); ``lower`` gives the
    lower triangle column-major (SCS).
    """
    rows, cols, vals = [], [], []
    r = 0
    h = math.sqrt(2) / 2
    for j in range(size):
        for i in (range(j, size) if lower else range(j + 1)):
            if i == j:
                rows.append(r), cols.append(i * size + i), vals.append(1.0)
            else:
                rows += [r, r]
                cols += [i * size + j, j * size + i]
                vals += [h, h]
            r += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(r, size * size))


_SVEC_CACHE: dict = {}


def _svec(size, lower=False):
    if (size, lower) not in _SVEC_CACHE:
        _SVEC_CACHE[size, lower] = _svec_map(size, lower)
    return _SVEC_CACHE[size, lower]


def _independent_rows(A: sp.spmatrix, b: np.ndarray, tol: float = 1e-9):
    """Drop linearly dependent equality rows (CVXOPT needs full row rank)."""
    if A.shape[0] == 0:
        return A, b
    import scipy.linalg as la

    dense = A.toarray()
    _, r, piv = la.qr(dense.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > tol * max(1.0, diag.max())))
    keep = np.sort(piv[:rank])
    resid = dense @ np.linalg.lstsq(dense[keep], b[keep], rcond=None)[0] - b
    if np.abs(resid).max(initial=0.0) > 1e-7:
        return None, None
    return sp.csr_matrix(dense[keep]), b[keep]


def stacked_form(prob: ConicProblem):
    """``(A, b, cone)`` with ``A x + s = b``, ``s`` in zero x nonnegative x svec-PSD x exp cones."""
    A, b = prob.eq
    G, h = prob.ub
    blocks, rhs = [A, G], [np.asarray(b, float), np.asarray(h, float)]
    for size, L in prob.psd:
        T = _svec(size, lower=True)
        blocks.append(-(T @ L)), rhs.append(np.zeros(T.shape[0]))
    if prob.exp is not None:
        E, e = prob.exp
        blocks.append(-E), rhs.append(np.asarray(e, dtype=float))
    cone = {"z": A.shape[0], "l": G.shape[0], "s": [size for size, _ in prob.psd], "ep": prob.n_exp}
    return sp.csc_matrix(sp.vstack(blocks)), np.concatenate(rhs), cone


def dual_bound(prob: ConicProblem, y: np.ndarray, box: np.ndarray) -> float:
    """Rigorous lower bound on the minimum from an approximate dual ``y`` of ``stacked_form``.

    ``y`` is first moved into the dual cone (nonnegative part, PSD part
    clipped to its nonnegative eigenvalues). For any feasible ``x`` with
    ``|x_i| <= box_i`` weak duality then gives
    ``c @ x >= -b @ y - |c + A.T @ y| @ box``.
    """
    if prob.exp is not None:
        raise UnsupportedError("dual certificates are implemented for linear and PSD constraints only")
    A_all, b_all, cone = stacked_form(prob)
    y = np.array(y, dtype=float)
    if y.shape != (A_all.shape[0],):
        raise ValueError("dual vector does not match the constraint rows")
    off = cone["z"]
    y[off:off + cone["l"]] = np.maximum(y[off:off + cone["l"]], 0.0)
    off += cone["l"]
    for size in cone["s"]:
        T = _svec(size, lower=True)
        m = T.shape[0]
        M = (T.T @ y[off:off + m]).reshape(size, size)
        w, U = np.linalg.eigh((M + M.T) / 2)
        y[off:off + m] = T @ ((U * np.maximum(w, 0.0)) @ U.T).ravel()
        off += m
    r = prob.c + A_all.T @ y
    return float(-b_all @ y - np.abs(r) @ np.asarray(box, dtype=float) + prob.offset)


def psd_dense_cost(prob: ConicProblem) -> int:
    """Entries of the dense PSD scaling blocks an interior-point KKT system would hold."""
    return sum((size * (size + 1) // 2) ** 2 for size, _ in prob.psd)


class ClarabelBackend:
    name = "clarabel"
    reentrant = True
    has_exp = True

    def solve(self, prob: ConicProblem, tol: float = FEAS_TOL) -> ConicSolution:
        import clarabel

        blocks, rhs, cones = [], [], []
        A, b = prob.eq
        if A.shape[0]:
            blocks.append(A), rhs.append(b), cones.append(clarabel.ZeroConeT(A.shape[0]))
        G, h = prob.ub
        if G.shape[0]:
            blocks.append(G), rhs.append(h), cones.append(clarabel.NonnegativeConeT(G.shape[0]))
        for size, L in prob.psd:
            T = _svec(size)
            blocks.append(-(T @ L)), rhs.append(np.zeros(T.shape[0]))
            cones.append(clarabel.PSDTriangleConeT(size))
        if prob.exp is not None:
            E, e = prob.exp
            blocks.append(-E), rhs.append(np.asarray(e, dtype=float))
            cones.extend(clarabel.ExponentialConeT() for _ in range(prob.n_exp))
        Amat = sp.csc_matrix(sp.vstack(blocks)) if blocks else sp.csc_matrix((0, prob.n))
        bvec = np.concatenate(rhs) if rhs else np.zeros(0)
        P = sp.csc_matrix((prob.n, prob.n))
        settings = clarabel.DefaultSettings()
        settings.verbose = bool(os.environ.get("DICERT_SOLVER_VERBOSE"))
        settings.tol_feas = tol
        settings.tol_gap_abs = tol
        settings.tol_gap_rel = tol
        settings.max_iter = 400
        solver = clarabel.DefaultSolver(P, prob.c, Amat, bvec, cones, settings)
        sol = solver.solve()
        raw = str(sol.status)
        if raw == "Solved":
            status = OPTIMAL
        elif raw in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            status = INFEASIBLE
        elif raw in ("DualInfeasible", "AlmostDualInfeasible"):
            status = UNBOUNDED
        elif raw == "AlmostSolved":
            status = INACCURATE
        else:
            status = FAILED
        x = np.array(sol.x) if status in (OPTIMAL, INACCURATE) else None
        value = float(prob.c @ x + prob.offset) if x is not None else math.nan
        res = prob.residuals(x) if x is not None else {}
        return ConicSolution(status, value, x, res, self.name, raw)


class CvxoptBackend:
    """Direct CVXOPT ``conelp``; linear objectives only."""

    name = "cvxopt"
    reentrant = False
    has_exp = False

    def solve(self, prob: ConicProblem, tol: float = FEAS_TOL) -> ConicSolution:
        import cvxopt

        if prob.exp is not None:
            raise UnsupportedError("CVXOPT back-end has no exponential cone")

        def spm(m):
            m = sp.coo_matrix(m)
            return cvxopt.spmatrix(m.data.tolist(), m.row.tolist(), m.col.tolist(), m.shape)

        A, b = _independent_rows(*prob.eq)
        if A is None:
            return ConicSolution(INFEASIBLE, math.nan, None, {}, self.name, "inconsistent equalities")
        G, h = prob.ub
        Gs, hs = [G], [h]
        for size, L in prob.psd:
            # CVXOPT reads column-major full matrices; pass the symmetric part
            idx = np.arange(size * size).reshape(size, size)
            Gs.append(-(L + L[idx.T.ravel()]) * 0.5)
            hs.append(np.zeros(size * size))
        Gm = sp.vstack(Gs)
        dims = {"l": G.shape[0], "q": [], "s": [size for size, _ in prob.psd]}
        opts = {"show_progress": bool(os.environ.get("DICERT_SOLVER_VERBOSE")),
                "abstol": tol * 0.1, "reltol": tol * 0.1, "feastol": tol * 0.1, "maxiters": 200}
        try:
            res = cvxopt.solvers.conelp(cvxopt.matrix(prob.c), spm(Gm), cvxopt.matrix(np.concatenate(hs)),
                                        dims, spm(A), cvxopt.matrix(b), options=opts)
        except (ValueError, ArithmeticError) as exc:
            return ConicSolution(FAILED, math.nan, None, {}, self.name, str(exc))
        raw = res["status"]
        x = None if res["x"] is None else np.array(res["x"]).ravel()
        if raw == "optimal":
            status = OPTIMAL
        elif raw == "primal infeasible":
            status = INFEASIBLE
        elif raw == "dual infeasible":
            status = UNBOUNDED
        else:
            status = INACCURATE if x is not None else FAILED
        if status not in (OPTIMAL, INACCURATE):
            x = None
        value = float(prob.c @ x + prob.offset) if x is not None else math.nan
        res_ = prob.residuals(x) if x is not None else {}
        return ConicSolution(status, value, x, res_, self.name, raw)


class ScsBackend:
    """Direct SCS (first order); scales to large PSD blocks at moderate accuracy."""

    name = "scs"
    reentrant = True
    has_exp = True

    def solve(self, prob: ConicProblem, tol: float = FEAS_TOL) -> ConicSolution:
        import scs

        A_all, b_all, cone = stacked_form(prob)
        data = {"A": A_all, "b": b_all, "c": prob.c}
        eps = max(tol, 1e-7)
        solver = scs.SCS(data, cone, eps_abs=eps, eps_rel=eps, max_iters=500000,
                         verbose=bool(os.environ.get("DICERT_SOLVER_VERBOSE")))
        out = solver.solve()
        raw = out["info"]["status"]
        status = {"solved": OPTIMAL, "solved_inaccurate": INACCURATE, "infeasible": INFEASIBLE,
                  "infeasible_inaccurate": INFEASIBLE, "unbounded": UNBOUNDED,
                  "unbounded_inaccurate": UNBOUNDED}.get(raw, FAILED)
        x = np.asarray(out["x"], dtype=float) if status in (OPTIMAL, INACCURATE) else None
        value = float(prob.c @ x + prob.offset) if x is not None else math.nan
        res = prob.residuals(x) if x is not None else {}
        y = np.asarray(out["y"], dtype=float)
        return ConicSolution(status, value, x, res, self.name, raw, y if np.all(np.isfinite(y)) else None)


class CvxpyBackend:
    """Adapter through cvxpy; ``solver`` is any cvxpy solver name."""

    reentrant = False

    def __init__(self, solver: str | None = None):
        self.solver = solver
        self.name = f"cvxpy:{solver}" if solver else "cvxpy"

    @property
    def has_exp(self) -> bool:
        import cvxpy as cp
        exp_solvers = {cp.SCS, cp.CLARABEL, cp.ECOS, "MOSEK"}
        return self.solver is None or self.solver.upper() in exp_solvers

    def solve(self, prob: ConicProblem, tol: float = FEAS_TOL) -> ConicSolution:
        import cvxpy as cp

        x = cp.Variable(prob.n)
        cons = []
        A, b = prob.eq
        if A.shape[0]:
            cons.append(A @ x == b)
        G, h = prob.ub
        if G.shape[0]:
            cons.append(G @ x <= h)
        for size, L in prob.psd:
            M = cp.reshape(L @ x, (size, size), order="C")
            cons.append((M + M.T) / 2 >> 0)
        if prob.exp is not None:
            if not self.has_exp:
                raise UnsupportedError(f"{self.name} has no exponential cone")
            E, e = prob.exp
            t = E @ x + e
            cons.append(cp.ExpCone(t[0::3], t[1::3], t[2::3]))
        problem = cp.Problem(cp.Minimize(prob.c @ x), cons)
        try:
            problem.solve(solver=self.solver)
        except cp.SolverError as exc:
            return ConicSolution(FAILED, math.nan, None, {}, self.name, str(exc))
        raw = str(problem.status)
        status = {cp.OPTIMAL: OPTIMAL, cp.OPTIMAL_INACCURATE: INACCURATE,
                  cp.INFEASIBLE: INFEASIBLE, cp.INFEASIBLE_INACCURATE: INFEASIBLE,
                  cp.UNBOUNDED: UNBOUNDED, cp.UNBOUNDED_INACCURATE: UNBOUNDED}.get(raw, FAILED)
        xv = None if x.value is None else np.asarray(x.value, dtype=float)
        value = float(prob.c @ xv + prob.offset) if xv is not None else math.nan
        res = prob.residuals(xv) if xv is not None else {}
        return ConicSolution(status, value, xv, res, self.name, raw)


_LOCK = threading.Lock()


CLARABEL_DENSE_LIMIT = 2 * 10**6
CVXOPT_VAR_LIMIT = 1500


def auto_chain(prob: ConicProblem) -> list:
    """Back-ends tried in order by ``auto``; later ones are fallbacks for unusable results."""
    dense = psd_dense_cost(prob)
    small = dense <= CLARABEL_DENSE_LIMIT
    if prob.exp is not None:
        return [ClarabelBackend(), ScsBackend()] if small else [ScsBackend()]
    if prob.psd and prob.n <= CVXOPT_VAR_LIMIT:
        return [CvxoptBackend(), ClarabelBackend() if small else ScsBackend()]
    return [ClarabelBackend(), ScsBackend()] if small else [ScsBackend()]


def auto_backend(prob: ConicProblem):
    return auto_chain(prob)[0]


def get_backend(name: str | None = None, prob: ConicProblem | None = None):
    """Back-end by name; ``auto`` needs the problem to decide."""
    name = name or os.environ.get(BACKEND_ENV, "auto")
    key = name.strip().lower()
    if key == "auto":
        if prob is None:
            return AutoBackend()
        return auto_backend(prob)
    if key == "clarabel":
        return ClarabelBackend()
    if key == "cvxopt":
        return CvxoptBackend()
    if key == "scs":
        return ScsBackend()
    if key.startswith("cvxpy"):
        _, _, solver = name.partition(":")
        return CvxpyBackend(solver.upper() or None)
    raise UnsupportedError(f"unknown solver backend {name!r}")


class AutoBackend:
    """Placeholder that defers the choice to ``auto_backend`` per problem."""

    name = "auto"
    reentrant = True
    has_exp = True

    def solve(self, prob: ConicProblem, tol: float = FEAS_TOL) -> ConicSolution:
        return solve(prob, auto_backend(prob), tol)


def _run(be, prob: ConicProblem, tol: float) -> ConicSolution:
    if be.reentrant:
        return be.solve(prob, tol)
    with _LOCK:
        return be.solve(prob, tol)


def solve(prob: ConicProblem, backend=None, tol: float = FEAS_TOL) -> ConicSolution:
    """Solve with the chosen back-end, serializing non-reentrant ones.

    In ``auto`` mode an unusable result (other than a certificate of
    infeasibility or unboundedness) is retried with the next back-end.
    """
    be = backend if hasattr(backend, "solve") else get_backend(backend, None)
    chain = auto_chain(prob) if isinstance(be, AutoBackend) else [be]
    for i, be in enumerate(chain):
        sol = _run(be, prob, tol)
        if sol.usable or sol.status in (INFEASIBLE, UNBOUNDED) or i == len(chain) - 1:
            break
        log.info("%s returned %s (%s); retrying with %s", be.name, sol.status, sol.raw_status, chain[i + 1].name)
    if not sol.usable:
        log.warning("%s returned %s (%s)", be.name, sol.status, sol.raw_status)
    elif sol.status != OPTIMAL:
        log.info("%s returned %s (%s), residuals within tolerance", be.name, sol.status, sol.raw_status)
    return sol


def require_usable(sol: ConicSolution, what: str) -> ConicSolution:
    """Raise unless the solution is optimal or an acceptably accurate near-optimum."""
    if not sol.usable:
        raise SolverError(f"{what}: solver status {sol.status} ({sol.raw_status})", sol.status)
    return sol
