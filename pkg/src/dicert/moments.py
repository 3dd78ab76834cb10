"""Moment matrices over local projector words.

Each party's generating set is the Collins-Gisin one: every projector
``(x, a)`` except the last outcome of each setting. A word is a tuple of such
letters, reduced with ``P_a|x P_a|x = P_a|x`` and ``P_a|x P_a'|x = 0``.

The moment matrix is indexed by tuples of local words, with cell
``((i, j), (k, l)) = tr(rho A_i^+ A_k (x) B_j^+ B_l)``. Cells whose operator
products coincide share a moment variable. Only behaviors (real numbers)
and real-valued forms are ever optimized over, and the entrywise complex
conjugate of any feasible moment matrix is again feasible, so the matrices
are taken real symmetric: a key and the key with *every* party's word
reversed name the same variable.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property, reduce

import numpy as np
import scipy.sparse as sp

from .errors import UnsupportedError
from .scenario import Scenario

Letter = tuple[int, int]
Word = tuple[Letter, ...]
Key = tuple[Word, ...]

MAX_LEVEL = 3


def reduce_word(word) -> Word | None:
    """Reduce a projector word; ``None`` means the product is zero."""
    out: list[Letter] = []
    for letter in word:
        if out and out[-1][0] == letter[0]:
            if out[-1][1] != letter[1]:
                return None
            continue
        out.append(letter)
    return tuple(out)


def local_basis(settings: int, outcomes: int, level: int) -> list[Word]:
    """Reduced words of length <= level, identity first, ordered by length."""
    letters = [(x, a) for x in range(settings) for a in range(outcomes - 1)]
    words: list[Word] = [()]
    frontier: list[Word] = [()]
    for _ in range(level):
        nxt = []
        for w in frontier:
            for letter in letters:
                if w and w[-1][0] == letter[0]:
                    continue
                nxt.append(w + (letter,))
        words.extend(nxt)
        frontier = nxt
    return words


def _rev(word: Word) -> Word:
    return tuple(reversed(word))


def canonical(key: Key) -> Key:
    rev = tuple(_rev(w) for w in key)
    return min(key, rev)


@dataclass(frozen=True)
class MonomialBasis:
    words: tuple[Word, ...]

    def __len__(self):
        return len(self.words)


@dataclass(frozen=True, eq=False)
class MomentStructure:
    """Symbolic moment matrix for one scenario and hierarchy level."""

    scenario: Scenario
    level: int
    bases: tuple[MonomialBasis, ...] = field(repr=False)
    keys: tuple[Key, ...] = field(repr=False)
    index: dict = field(repr=False)
    cell_ids: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.cell_ids.shape[0]

    @property
    def n_moments(self) -> int:
        return len(self.keys)

    @property
    def identity_id(self) -> int:
        return self.index[tuple(() for _ in self.bases)]

    def moment_id(self, key: Key) -> int:
        red = tuple(reduce_word(w) for w in key)
        if any(w is None for w in red):
            raise ValueError("key reduces to zero")
        try:
            return self.index[canonical(red)]
        except KeyError:
            raise KeyError(f"moment {key} does not appear at level {self.level}") from None

    def transpose_permutation(self, party: int) -> np.ndarray:
        """Moment-id permutation induced by transposing ``party``'s word indices."""
        perm = np.empty(self.n_moments, dtype=np.int64)
        for i, key in enumerate(self.keys):
            k = list(key)
            k[party] = _rev(k[party])
            perm[i] = self.index[canonical(tuple(k))]
        return perm

    def transposed_cell_ids(self, party: int) -> np.ndarray:
        perm = self.transpose_permutation(party)
        ids = self.cell_ids
        return np.where(ids >= 0, perm[np.maximum(ids, 0)], -1)

    @cached_property
    def behavior_map(self) -> sp.csr_matrix:
        """Sparse map from the moment vector to the flattened behavior table.

        Last-outcome projectors are written as ``1 - sum(other projectors)``.
        """
        s = self.scenario
        rows, cols, vals = [], [], []
        for r, (xs, outs) in enumerate(itertools.product(s.setting_tuples(), s.outcome_tuples())):
            # per party: list of (coef, word) for the projector of outcome a of setting x
            factors = []
            for p, (x, a) in enumerate(zip(xs, outs)):
                d = s.outcomes[p]
                if a < d - 1:
                    factors.append([(1.0, ((x, a),))])
                else:
                    factors.append([(1.0, ())] + [(-1.0, ((x, b),)) for b in range(d - 1)])
            for combo in itertools.product(*factors):
                coef = math.prod(c for c, _ in combo)
                key = tuple(w for _, w in combo)
                rows.append(r)
                cols.append(self.index[canonical(key)])
                vals.append(coef)
        n_rows = s.n_setting_tuples * s.n_outcome_tuples
        return sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, self.n_moments))

    @cached_property
    def cg_ids(self) -> dict:
        """Moment ids of keys made of identities and single projectors (Collins-Gisin coordinates)."""
        out = {}
        letters = [[()] + [((x, a),) for x in range(m) for a in range(d - 1)]
                   for m, d in zip(self.scenario.settings, self.scenario.outcomes)]
        for key in itertools.product(*letters):
            out[key] = self.index[canonical(key)]
        return out

    def matrix(self, moments: np.ndarray, cell_ids: np.ndarray | None = None) -> np.ndarray:
        """Numeric moment matrix from a moment vector."""
        ids = self.cell_ids if cell_ids is None else cell_ids
        m = np.asarray(moments, dtype=float)
        return np.where(ids >= 0, m[np.maximum(ids, 0)], 0.0)


_STRUCTURE_CACHE: dict = {}


def build_moment_structure(s: Scenario, level: int) -> MomentStructure:
    if level not in range(1, MAX_LEVEL + 1):
        raise UnsupportedError(f"hierarchy level {level} not supported (1..{MAX_LEVEL})")
    cache_key = (s, level)
    if cache_key in _STRUCTURE_CACHE:
        return _STRUCTURE_CACHE[cache_key]
    bases = tuple(MonomialBasis(tuple(local_basis(m, d, level))) for m, d in zip(s.settings, s.outcomes))
    # per-party table of reduced products rev(w_i) w_k
    local_products = []
    for basis in bases:
        ws = basis.words
        local_products.append([[reduce_word(_rev(wi) + wk) for wk in ws] for wi in ws])
    index: dict = {}
    keys: list[Key] = []
    # the identity key gets id 0
    ident = tuple(() for _ in bases)
    index[ident] = 0
    keys.append(ident)
    multi = list(itertools.product(*(range(len(b)) for b in bases)))
    n = len(multi)
    cell_ids = np.full((n, n), -1, dtype=np.int64)
    for r, ri in enumerate(multi):
        for c, ci in enumerate(multi):
            key = tuple(local_products[p][ri[p]][ci[p]] for p in range(len(bases)))
            if any(w is None for w in key):
                continue
            key = canonical(key)
            mid = index.get(key)
            if mid is None:
                mid = index[key] = len(keys)
                keys.append(key)
            cell_ids[r, c] = mid
    structure = MomentStructure(s, level, bases, tuple(keys), index, cell_ids)
    _STRUCTURE_CACHE[cache_key] = structure
    return structure


def moment_vector(strategy, structure: MomentStructure) -> np.ndarray:
    """Real parts of ``tr(rho W_1 (x) W_2 ...)`` for every moment key of ``structure``."""
    dims = strategy.dims
    rho_t = strategy.state.T
    cache: list[dict] = [{} for _ in dims]

    def local(p, word):
        if word not in cache[p]:
            m = np.eye(dims[p], dtype=complex)
            for x, a in word:
                m = m @ strategy.povms[p][x][a]
            cache[p][word] = m
        return cache[p][word]

    out = np.empty(structure.n_moments)
    for i, key in enumerate(structure.keys):
        op = reduce(np.kron, (local(p, w) for p, w in enumerate(key)))
        out[i] = np.sum(rho_t * op).real
    return out


class Poly:
    """Noncommutative polynomial over one party's projector words."""

    def __init__(self, terms=None):
        self.terms: dict = {}
        for w, c in (terms or {}).items():
            self._add(w, c)

    def _add(self, word, coef):
        red = reduce_word(word)
        if red is None or coef == 0:
            return
        self.terms[red] = self.terms.get(red, 0) + coef

    @classmethod
    def const(cls, c):
        return cls({(): c})

    @classmethod
    def proj(cls, x, a=0):
        return cls({((x, a),): 1.0})

    def __add__(self, other):
        other = other if isinstance(other, Poly) else Poly.const(other)
        out = Poly(self.terms)
        for w, c in other.terms.items():
            out._add(w, c)
        return out

    __radd__ = __add__

    def __neg__(self):
        return Poly({w: -c for w, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-(other if isinstance(other, Poly) else Poly.const(other)))

    def __rsub__(self, other):
        return Poly.const(other) - self

    def __mul__(self, other):
        if not isinstance(other, Poly):
            return Poly({w: c * other for w, c in self.terms.items()})
        out = Poly()
        for w1, c1 in self.terms.items():
            for w2, c2 in other.terms.items():
                out._add(w1 + w2, c1 * c2)
        return out

    def __rmul__(self, other):
        return self * other

    def __truediv__(self, k):
        return self * (1.0 / k)

    def dagger(self):
        return Poly({_rev(w): np.conj(c) for w, c in self.terms.items()})


def _swap_kraus(Z: Poly, X: Poly) -> tuple[Poly, Poly]:
    """Operators ``K_c`` with ``S (|phi> (x) |0'>) = sum_c K_c|phi> (x) |c'>`` for ``S = V W V``.

    ``V`` applies ``X`` to the system when the ancilla is ``|1'>``; ``W``
    flips the ancilla on the ``-1`` eigenspace of ``Z``.
    """
    k0 = (1 + Z) / 2
    k1 = X * (1 - Z) / 2
    return k0, k1


def swap_fidelity_form(structure: MomentStructure) -> np.ndarray:
    """Linear form on moments giving ``<MES| rho_SWAP |MES>`` for the CHSH scenario.

    Alice uses ``Z = A_0``, ``X = A_1``; Bob uses ``Z = (B_0 + B_1)/sqrt 2``
    and ``X = (B_0 - B_1)/sqrt 2``, with ``A_x = 2 P_0|x - 1``.
    """
    s = structure.scenario
    if s.settings != (2, 2) or s.outcomes != (2, 2):
        raise UnsupportedError("the SWAP fidelity form is only built for the CHSH scenario")
    if structure.level < 2:
        raise UnsupportedError("the SWAP fidelity form needs hierarchy level >= 2")
    obs = [2 * Poly.proj(0) - 1, 2 * Poly.proj(1) - 1]
    za, xa = obs
    zb = (obs[0] + obs[1]) / math.sqrt(2)
    xb = (obs[0] - obs[1]) / math.sqrt(2)
    ka = _swap_kraus(za, xa)
    kb = _swap_kraus(zb, xb)
    # <MES| rho_SWAP |MES> = 1/2 sum over (c, c') in {0,1}^2 of tr(rho K_c'^+ K_c (x) K_c'^+ K_c)
    form = np.zeros(structure.n_moments)
    for c, cp in itertools.product(range(2), repeat=2):
        pa = ka[cp].dagger() * ka[c]
        pb = kb[cp].dagger() * kb[c]
        for wa, ca in pa.terms.items():
            for wb, cb in pb.terms.items():
                form[structure.moment_id((wa, wb))] += 0.5 * float(np.real(ca * cb))
    return form
