"""Independent reference computations used to cross-check the package.

Nothing here imports ``dicert``: each oracle rebuilds its object from scratch
(mpmath closed forms, itertools enumeration, expectation-maximization,
explicit Pauli algebra) so that agreement is a genuine second route.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from mpmath import mp, mpf, log, sqrt

mp.dps = 30

# Frozen outputs of the closed-form oracles below (30-digit mpmath, rounded).
FROZEN = {
    "chsh_mart_log2_factor": -0.04627384685340693,
    "chsh_mart_factor": 0.9684343472761883,
    "mermin_gain_lhv": 0.4150374992788438,
    "mermin_gain_bisep": 0.22844669683638803,
    "mermin_100_minus_log2_p": 22.844669683638803,
    "mermin_100_p": 1.3276059318059154e-07,
    "beta_star": 2.1058229337190195,
    "kaniewski_2_5": 0.772747564417433,
    "cglmp_born": 2.914854215512676,
    "cglmp_negativity": 0.9835809311223006,
    "chsh_kl_lhv_bits": 0.04627384685340693,
    "neg_closed_form": {0.0: 2.0, 0.1: 2.165685424949238, 0.2: 2.331370849898476,
                        0.3: 2.497056274847714, 0.4: 2.662741699796952, 0.5: 2.82842712474619},
}


def mart_log2_factor(I, B, bm, bp) -> float:
    I, B, bm, bp = (mpf(v) for v in (I, B, bm, bp))
    if I <= B:
        return 0.0
    w = bp - bm
    if I >= bp:
        return float(log((B - bm) / w, 2))
    return float(((bp - I) / w) * log((bp - B) / (bp - I), 2) + ((I - bm) / w) * log((B - bm) / (I - bm), 2))


def beta_star() -> float:
    return float((16 + 14 * sqrt(2)) / 17)


def kaniewski(S) -> float:
    bs = (16 + 14 * sqrt(2)) / 17
    return float(max(mpf(1) / 2, mpf(1) / 2 + (mpf(S) - bs) / (2 * (2 * sqrt(2) - bs))))


def chsh_negativity_cap(n0) -> float:
    return float(2 + 4 * (sqrt(2) - 1) * mpf(n0))


# ---------------------------------------------------------------- polytopes

def deterministic_behaviors(settings, outcomes):
    """All deterministic tables as arrays of shape ``settings + outcomes``."""
    parties = len(settings)
    local = [list(itertools.product(range(outcomes[p]), repeat=settings[p])) for p in range(parties)]
    out = []
    for choice in itertools.product(*local):
        t = np.zeros(tuple(settings) + tuple(outcomes))
        for xs in itertools.product(*(range(m) for m in settings)):
            t[xs + tuple(choice[p][xs[p]] for p in range(parties))] = 1.0
        out.append(t)
    return out


def chsh_coefficients():
    beta = np.zeros((2, 2, 2, 2))
    for x, y, a, b in itertools.product(range(2), repeat=4):
        beta[x, y, a, b] = (-1) ** (x * y + a + b)
    return beta


def mermin_coefficients():
    beta = np.zeros((2,) * 6)
    for x, y, z, a, b, c in itertools.product(range(2), repeat=6):
        if (x + y + z) % 2 == 1:
            beta[x, y, z, a, b, c] = (-1) ** (x * y * z + a + b + c)
    return beta


def local_max(beta, settings, outcomes) -> float:
    return max(float(np.sum(beta * d)) for d in deterministic_behaviors(settings, outcomes))


def kl_to_polytope_em(P, weights, vertices, iters=20000, tol=1e-14) -> float:
    """min_q sum w f log(f / sum_l q_l D_l) by expectation-maximization, in bits.

    ``weights`` has the settings shape; the update is the standard mixture
    EM step ``q_l <- q_l * sum_cells w f D_l / M``.
    """
    P = np.asarray(P, float)
    k = len(weights.shape)
    wf = (np.asarray(weights, float).reshape(weights.shape + (1,) * (P.ndim - k)) * P).ravel()
    D = np.array([v.ravel() for v in vertices])
    keep = wf > 0
    wf, D = wf[keep], D[:, keep]
    q = np.full(len(D), 1.0 / len(D))
    total = wf.sum()
    prev = np.inf
    for _ in range(iters):
        M = q @ D
        val = -float(np.sum(wf * np.log(M)))
        if prev - val < tol:
            break
        prev = val
        q = q * (D @ (wf / M)) / total
    M = q @ D
    return float(np.sum(wf * np.log(P.ravel()[keep] / M))) / math.log(2)


# ---------------------------------------------------------------- quantum

def ideal_chsh_behavior():
    """Born rule for |Phi+> with A0=Z, A1=X, B_y=(Z +- X)/sqrt2, via explicit Pauli algebra."""
    Z = np.diag([1.0, -1.0])
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    A = [Z, X]
    B = [(Z + X) / math.sqrt(2), (Z - X) / math.sqrt(2)]
    phi = np.array([1.0, 0, 0, 1.0]) / math.sqrt(2)
    table = np.zeros((2, 2, 2, 2))
    for x, y, a, b in itertools.product(range(2), repeat=4):
        Pa = (np.eye(2) + (-1) ** a * A[x]) / 2
        Pb = (np.eye(2) + (-1) ** b * B[y]) / 2
        table[x, y, a, b] = phi @ np.kron(Pa, Pb) @ phi
    return table


def ghz_behavior():
    """GHZ with A0=sigma_y, A1=-sigma_x on each site."""
    Y = np.array([[0, -1j], [1j, 0]])
    X = np.array([[0, 1], [1, 0]], dtype=complex)
    obs = [Y, -X]
    ghz = np.zeros(8, dtype=complex)
    ghz[0] = ghz[7] = 1 / math.sqrt(2)
    table = np.zeros((2,) * 6)
    for x, y, z, a, b, c in itertools.product(range(2), repeat=6):
        ops = [(np.eye(2) + (-1) ** o * obs[s]) / 2 for s, o in ((x, a), (y, b), (z, c))]
        M = np.kron(np.kron(ops[0], ops[1]), ops[2])
        table[x, y, z, a, b, c] = np.vdot(ghz, M @ ghz).real
    return table


def negativity_by_loops(psi, d):
    """Negativity of a pure two-qudit state from an index-loop partial transpose."""
    rho = np.outer(psi, np.conj(psi))
    pt = np.zeros_like(rho)
    for i, j, k, l in itertools.product(range(d), repeat=4):
        pt[k * d + j, i * d + l] = rho[i * d + j, k * d + l]
    eig = np.linalg.eigvalsh(pt)
    return float(-eig[eig < 0].sum())


def pure_negativity_schmidt(coeffs) -> float:
    """``((sum_i sqrt(l_i))^2 - 1) / 2`` for Schmidt weights ``l_i``."""
    lam = [mpf(c) for c in coeffs]
    total = sum(lam)
    return float((sum(sqrt(l / total) for l in lam) ** 2 - 1) / 2)


def swap_circuit_fidelity(psi, proj_a, proj_b) -> float:
    """Fidelity of the two SWAP ancillas with |Phi+> from an explicit gate circuit.

    ``proj_a[x]`` / ``proj_b[y]`` are the outcome-0 projectors of the two
    settings. Alice uses Z=A0, X=A1; Bob Z=(B0+B1)/sqrt2, X=(B0-B1)/sqrt2.
    Per party: ancilla |0>, Hadamard, controlled-Z, Hadamard, controlled-X.
    """
    def obs(p):
        return 2 * p - np.eye(p.shape[0])

    A = [obs(p) for p in proj_a]
    B = [obs(p) for p in proj_b]
    ops = [(A[0], A[1]), ((B[0] + B[1]) / math.sqrt(2), (B[0] - B[1]) / math.sqrt(2))]
    H = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
    P0, P1 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    da, db = proj_a[0].shape[0], proj_b[0].shape[0]
    dims = [da, db]
    # ordering: ancilla_a, ancilla_b, system_a, system_b
    state = np.kron(np.kron([1.0, 0.0], [1.0, 0.0]), np.asarray(psi, dtype=complex))

    def embed(anc_op, sys_op, party):
        anc = [np.eye(2), np.eye(2)]
        sys_ = [np.eye(dims[0]), np.eye(dims[1])]
        anc[party] = anc_op
        sys_[party] = sys_op
        return np.kron(np.kron(anc[0], anc[1]), np.kron(sys_[0], sys_[1]))

    for party in range(2):
        Z, X = ops[party]
        I = np.eye(dims[party])
        state = embed(H, I, party) @ state
        state = (embed(P0, I, party) + embed(P1, Z, party)) @ state
        state = embed(H, I, party) @ state
        state = (embed(P0, I, party) + embed(P1, X, party)) @ state
    t = state.reshape(4, da * db)
    rho_anc = t @ t.conj().T
    phi = np.array([1, 0, 0, 1]) / math.sqrt(2)
    return float(np.real(phi @ rho_anc @ phi))
