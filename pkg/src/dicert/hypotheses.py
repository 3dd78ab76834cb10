"""Declarative conic descriptions of composite-hypothesis correlation sets.

A ``HypothesisSet`` is a set of real variables ``v`` with

* linear equalities ``A_eq v = b_eq`` and inequalities ``A_ub v <= b_ub``,
* PSD blocks ``mat(L v) >= 0`` (row-major flattened, symmetric),
* an affine behavior map ``P = B v + p0`` (flattened behavior table),
* named linear forms (negativity, fidelity, ...) used as objectives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ScenarioMismatchError, UnsupportedError
from .functionals import BellFunctional
from .moments import MomentStructure, build_moment_structure, swap_fidelity_form
from .scenario import Behavior, Scenario, deterministic_vertex_tables


@dataclass(frozen=True)
class PsdBlock:
    size: int
    coeffs: sp.csr_matrix = field(repr=False)  # (size*size, n_vars)
    label: str = ""


@dataclass(frozen=True, eq=False)
class HypothesisSet:
    tag: str
    scenario: Scenario
    n_vars: int
    behavior_coeffs: sp.csr_matrix = field(repr=False)
    behavior_const: np.ndarray = field(repr=False)
    psd_blocks: tuple[PsdBlock, ...] = ()
    eq: tuple = field(default=None, repr=False)
    ub: tuple = field(default=None, repr=False)
    forms: dict = field(default_factory=dict, repr=False)
    level: int | None = None
    threshold: float | None = None
    structure: MomentStructure | None = field(default=None, repr=False)
    vertices: np.ndarray | None = field(default=None, repr=False)
    # a priori |v_i| <= var_bound[i] on the whole set; enables dual certificates
    var_bound: np.ndarray | None = field(default=None, repr=False)

    def behavior_of(self, v: np.ndarray) -> Behavior:
        flat = self.behavior_coeffs @ v + self.behavior_const
        return Behavior(self.scenario, np.maximum(flat, 0.0).reshape(self.scenario.shape), self.tag)

    def explain(self) -> str:
        lines = [f"hypothesis set: {self.tag}",
                 f"scenario: settings={self.scenario.settings} outcomes={self.scenario.outcomes}",
                 f"level: {self.level if self.level is not None else '-'}",
                 f"threshold: {self.threshold if self.threshold is not None else '-'}",
                 f"variables: {self.n_vars}"]
        if self.structure is not None:
            lines.append(f"moment matrix: {self.structure.size}x{self.structure.size}, "
                         f"{self.structure.n_moments} distinct moments")
        if self.vertices is not None:
            lines.append(f"polytope vertices: {len(self.vertices)}")
        for blk in self.psd_blocks:
            lines.append(f"psd block {blk.label}: {blk.size}x{blk.size}")
        lines.append(f"equalities: {self.eq[0].shape[0]}")
        lines.append(f"inequalities: {self.ub[0].shape[0]}")
        if self.forms:
            lines.append("linear forms: " + ", ".join(sorted(self.forms)))
        return "\n".join(lines)


class _Rows:
    """Accumulates sparse linear rows ``sum(vals * v[cols]) (op) rhs``."""

    def __init__(self):
        self.rows: list[tuple[np.ndarray, np.ndarray]] = []
        self.rhs: list[float] = []

    def add(self, cols, vals, rhs):
        self.rows.append((np.asarray(cols, dtype=np.int64), np.asarray(vals, dtype=float)))
        self.rhs.append(float(rhs))

    def build(self, n_vars):
        r, c, v = [], [], []
        for i, (cols, vals) in enumerate(self.rows):
            r.extend([i] * len(cols))
            c.extend(cols)
            v.extend(vals)
        mat = sp.csr_matrix((v, (r, c)), shape=(len(self.rows), n_vars))
        return mat, np.array(self.rhs, dtype=float)


def _moment_block(structure: MomentStructure, parts, n_vars: int, label: str,
                  cell_ids: np.ndarray | None = None) -> PsdBlock:
    """PSD block ``sum(sign * chi(m at offset))`` over ``parts = [(offset, sign), ...]``."""
    ids = structure.cell_ids if cell_ids is None else cell_ids
    flat = ids.ravel()
    rows = np.flatnonzero(flat >= 0)
    r, c, v = [], [], []
    for offset, sign in parts:
        r.append(rows)
        c.append(offset + flat[rows])
        v.append(np.full(rows.size, float(sign)))
    mat = sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                        shape=(flat.size, n_vars))
    return PsdBlock(structure.size, mat, label)


def partial_transpose_map(structure: MomentStructure, parties) -> np.ndarray:
    """Moment-id permutation realizing the partial transpose on ``parties``."""
    perm = np.arange(structure.n_moments)
    parties = (parties,) if isinstance(parties, int) else tuple(parties)
    for p in parties:
        if not 0 <= p < structure.scenario.parties:
            raise ValueError(f"invalid party {p}")
        perm = structure.transpose_permutation(p)[perm]
    return perm


def _pt_cell_ids(structure: MomentStructure, party: int) -> np.ndarray:
    perm = partial_transpose_map(structure, party)
    ids = structure.cell_ids
    return np.where(ids >= 0, perm[np.maximum(ids, 0)], -1)


def _zero_const(s: Scenario) -> np.ndarray:
    return np.zeros(s.n_setting_tuples * s.n_outcome_tuples)


def build_quantum_set(s: Scenario, level: int) -> HypothesisSet:
    st = build_moment_structure(s, level)
    n = st.n_moments
    eq = _Rows()
    eq.add([st.identity_id], [1.0], 1.0)
    ub = _Rows()
    return HypothesisSet(f"Q_{level}", s, n, st.behavior_map, _zero_const(s),
                         (_moment_block(st, [(0, 1)], n, "chi"),), eq.build(n), ub.build(n),
                         {}, level, None, st, var_bound=np.ones(n))


def _require_bipartite(s: Scenario, what: str):
    if s.parties != 2:
        raise UnsupportedError(f"{what} is only defined for bipartite scenarios")


def build_negativity_capped(s: Scenario, level: int, n0: float | None) -> HypothesisSet:
    """Behaviors whose moment matrix splits as ``chi(s+) - chi(s-)`` with PPT parts and ``tr s- <= n0``.

    ``n0=None`` leaves the trace of ``s-`` uncapped (used for minimization).
    """
    _require_bipartite(s, "the negativity-capped set")
    if n0 is not None and n0 < 0:
        raise ValueError("N0 must be nonnegative")
    st = build_moment_structure(s, level)
    k = st.n_moments
    n = 2 * k
    pt = _pt_cell_ids(st, 0)
    blocks = (_moment_block(st, [(0, 1), (k, -1)], n, "chi"),
              _moment_block(st, [(0, 1)], n, "chi(s+)^T_A", pt),
              _moment_block(st, [(k, 1)], n, "chi(s-)^T_A", pt))
    ident = st.identity_id
    eq = _Rows()
    eq.add([ident, k + ident], [1.0, -1.0], 1.0)
    ub = _Rows()
    if n0 is not None:
        ub.add([k + ident], [1.0], n0)
    bmap = sp.csr_matrix(sp.hstack([st.behavior_map, -st.behavior_map]))
    neg = np.zeros(n)
    neg[k + ident] = 1.0
    tag = f"negativity<={n0:g}" if n0 is not None else "negativity"
    # every moment of a PSD block with a suffix-closed basis is bounded by its identity moment
    bound = None if n0 is None else np.r_[np.full(k, 1.0 + n0), np.full(k, n0)]
    return HypothesisSet(tag, s, n, bmap, _zero_const(s), blocks, eq.build(n), ub.build(n),
                         {"negativity": (neg, 0.0)}, level, n0, st, var_bound=bound)


def build_lhv(s: Scenario) -> HypothesisSet:
    verts = deterministic_vertex_tables(s)
    nv = len(verts)
    eq = _Rows()
    eq.add(np.arange(nv), np.ones(nv), 1.0)
    ub = _Rows()
    for i in range(nv):
        ub.add([i], [-1.0], 0.0)
    bmap = sp.csr_matrix(verts.reshape(nv, -1).T)
    return HypothesisSet("LHV", s, nv, bmap, _zero_const(s), (), eq.build(nv), ub.build(nv),
                         {}, None, None, None, verts, var_bound=np.ones(nv))


def build_biseparable(s: Scenario, level: int = 1) -> HypothesisSet:
    """``chi = chi_1 + chi_2 + chi_3`` with ``chi_i`` PPT across party ``i`` versus the rest."""
    if s.parties != 3:
        raise UnsupportedError("the biseparable set needs a tripartite scenario")
    st = build_moment_structure(s, level)
    k = st.n_moments
    n = 3 * k
    blocks = [_moment_block(st, [(0, 1), (k, 1), (2 * k, 1)], n, "chi")]
    for i in range(3):
        blocks.append(_moment_block(st, [(i * k, 1)], n, f"chi_{i}"))
        blocks.append(_moment_block(st, [(i * k, 1)], n, f"chi_{i}^T_{i}", _pt_cell_ids(st, i)))
    ident = st.identity_id
    eq = _Rows()
    eq.add([ident, k + ident, 2 * k + ident], [1.0, 1.0, 1.0], 1.0)
    bmap = sp.csr_matrix(sp.hstack([st.behavior_map] * 3))
    return HypothesisSet(f"biseparable_{level}", s, n, bmap, _zero_const(s), tuple(blocks),
                         eq.build(n), _Rows().build(n), {}, level, None, st, var_bound=np.ones(n))


def build_fidelity_capped(s: Scenario, level: int, f0: float, theta: float = math.pi / 4) -> HypothesisSet:
    """Level-``level`` quantum set with SWAP fidelity to the maximally entangled state at most ``f0``."""
    if abs(theta - math.pi / 4) > 1e-12:
        raise UnsupportedError("only the maximally entangled target (theta = pi/4) is supported")
    if not 0 <= f0 <= 1:
        raise ValueError("F0 must lie in [0, 1]")
    q = build_quantum_set(s, level)
    form = swap_fidelity_form(q.structure)
    ub = _Rows()
    nz = np.flatnonzero(form)
    ub.add(nz, form[nz], f0)
    return HypothesisSet(f"fidelity<={f0:g}", s, q.n_vars, q.behavior_coeffs, q.behavior_const,
                         q.psd_blocks, q.eq, ub.build(q.n_vars), {"fidelity": (form, 0.0)},
                         level, f0, q.structure, var_bound=q.var_bound)


def build_nonsignaling(s: Scenario) -> HypothesisSet:
    """Nonsignaling polytope with the behavior entries as variables."""
    n = s.n_setting_tuples * s.n_outcome_tuples
    shape = s.shape
    idx = np.arange(n).reshape(shape)
    k = s.parties
    eq = _Rows()
    for xs in s.setting_tuples():
        eq.add(idx[xs].ravel(), np.ones(idx[xs].size), 1.0)
    # marginal of every party subset must not depend on the settings of the others
    for p in range(k):
        for xs in s.setting_tuples():
            if xs[p] == 0:
                continue
            other = list(xs)
            other[p] = 0
            block = idx[xs]
            base = idx[tuple(other)]
            for outs in np.ndindex(*[s.outcomes[q] for q in range(k) if q != p]):
                sel = list(outs)
                sel.insert(p, slice(None))
                cols = np.concatenate([block[tuple(sel)], base[tuple(sel)]])
                vals = np.concatenate([np.ones(s.outcomes[p]), -np.ones(s.outcomes[p])])
                eq.add(cols, vals, 0.0)
    ub = _Rows()
    for i in range(n):
        ub.add([i], [-1.0], 0.0)
    return HypothesisSet("NS", s, n, sp.identity(n, format="csr"), np.zeros(n), (),
                         eq.build(n), ub.build(n), {}, None, None, var_bound=np.ones(n))


def build_bell_capped(F: BellFunctional, s0: float, quantum: bool = True, level: int = 1) -> HypothesisSet:
    """Behaviors with ``sum(beta * P) <= s0``, inside ``Q_level`` or (quantum off) the nonsignaling polytope."""
    base = build_quantum_set(F.scenario, level) if quantum else build_nonsignaling(F.scenario)
    row = F.coefficients.ravel() @ base.behavior_coeffs
    row = np.asarray(row).ravel()
    ub_mat, ub_rhs = base.ub
    nz = np.flatnonzero(row)
    cap = sp.csr_matrix((row[nz], (np.zeros(nz.size, dtype=np.int64), nz)), shape=(1, base.n_vars))
    ub = (sp.csr_matrix(sp.vstack([ub_mat, cap])), np.append(ub_rhs, s0))
    label = "Q_%d" % level if quantum else "NS"
    return HypothesisSet(f"{F.name}<={s0:g} [{label}]", F.scenario, base.n_vars, base.behavior_coeffs,
                         base.behavior_const, base.psd_blocks, base.eq, ub,
                         {F.name: (row, 0.0)}, base.level, s0, base.structure, var_bound=base.var_bound)


def check_scenario(H: HypothesisSet, s: Scenario):
    if H.scenario != s:
        raise ScenarioMismatchError(f"hypothesis set scenario {H.scenario} does not match {s}")
