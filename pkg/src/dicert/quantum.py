"""Explicit quantum strategies, the Born rule, and exact negativity/fidelity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .errors import ScenarioMismatchError, UnsupportedError
from .scenario import Behavior, Scenario

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
NEG_CUTOFF = -1e-12
_TOL = 1e-12

CGLMP_ZETA = (math.sqrt(11) - math.sqrt(3)) / 2


def _check_psd(m: np.ndarray, what: str, tol: float = _TOL) -> None:
    if not np.allclose(m, m.conj().T, atol=tol):
        raise ValueError(f"{what} is not Hermitian")
    if np.linalg.eigvalsh(m).min() < -tol:
        raise ValueError(f"{what} is not positive semidefinite")


def projectors_from_observable(obs: np.ndarray) -> list[np.ndarray]:
    """Outcome-0 and outcome-1 projectors ``(1 +- A)/2`` of a +-1 observable."""
    eye = np.eye(obs.shape[0], dtype=complex)
    return [(eye + obs) / 2, (eye - obs) / 2]


@dataclass(frozen=True)
class QuantumStrategy:
    """Shared state and local projective/POVM measurements.

    ``povms[p][x][a]`` is the element for outcome ``a`` of setting ``x`` of party ``p``.
    """

    state: np.ndarray = field(repr=False)
    povms: tuple = field(repr=False)
    name: str = ""

    def __post_init__(self):
        rho = np.asarray(self.state, dtype=complex)
        if rho.ndim == 1:
            rho = np.outer(rho, rho.conj()) / np.vdot(rho, rho).real
        povms = tuple(tuple(tuple(np.asarray(m, dtype=complex) for m in setting) for setting in party)
                      for party in self.povms)
        dims = [party[0][0].shape[0] for party in povms]
        if rho.shape != (math.prod(dims),) * 2:
            raise ValueError(f"state dimension {rho.shape} does not match local dimensions {dims}")
        _check_psd(rho, "state")
        if abs(np.trace(rho).real - 1) > _TOL:
            raise ValueError("state must have unit trace")
        for p, party in enumerate(povms):
            for x, setting in enumerate(party):
                for m in setting:
                    _check_psd(m, f"POVM element of party {p}, setting {x}")
                if not np.allclose(sum(setting), np.eye(dims[p]), atol=_TOL):
                    raise ValueError(f"POVM of party {p}, setting {x} does not sum to identity")
        object.__setattr__(self, "state", rho)
        object.__setattr__(self, "povms", povms)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(party[0][0].shape[0] for party in self.povms)

    @property
    def scenario(self) -> Scenario:
        return Scenario(tuple(len(party) for party in self.povms),
                        tuple(len(party[0]) for party in self.povms))

    def with_state(self, state: np.ndarray, name: str = "") -> "QuantumStrategy":
        return QuantumStrategy(state, self.povms, name or self.name)


def born_behavior(strat: QuantumStrategy, s: Scenario | None = None) -> Behavior:
    """``P(a..|x..) = tr(rho M_a|x (x) M_b|y (x) ...)``."""
    own = strat.scenario
    if s is not None and s != own:
        raise ScenarioMismatchError(f"strategy scenario {own} does not match {s}")
    s = own
    table = np.empty(s.shape)
    rho_t = strat.state.T  # tr(rho M) = sum(rho.T * M)
    for xs in s.setting_tuples():
        for outs in s.outcome_tuples():
            op = reduce(np.kron, (strat.povms[p][x][a] for p, (x, a) in enumerate(zip(xs, outs))))
            table[xs + outs] = np.sum(rho_t * op).real
    return Behavior(s, table, strat.name)


def chsh_strategy(theta: float = math.pi / 4) -> QuantumStrategy:
    """``cos t|00> + sin t|11>`` measured with the CHSH/tilted-CHSH optimal observables.

    Alice measures ``sigma_z`` and ``sigma_x``; Bob measures
    ``cos(mu) sigma_z +- sin(mu) sigma_x`` with ``tan(mu) = sin(2 theta)``.
    """
    if not 0 < theta <= math.pi / 4 + 1e-15:
        raise ValueError("theta must lie in (0, pi/4]")
    psi = np.zeros(4, dtype=complex)
    psi[0], psi[3] = math.cos(theta), math.sin(theta)
    mu = math.atan(math.sin(2 * theta))
    alice = [projectors_from_observable(SIGMA_Z), projectors_from_observable(SIGMA_X)]
    bob = [projectors_from_observable(math.cos(mu) * SIGMA_Z + (-1) ** y * math.sin(mu) * SIGMA_X)
           for y in range(2)]
    return QuantumStrategy(psi, (alice, bob), f"chsh(theta={theta:.6g})")


def product_strategy_00() -> QuantumStrategy:
    """``|00>`` measured with the ideal CHSH observables (no entanglement)."""
    ideal = chsh_strategy()
    psi = np.zeros(4, dtype=complex)
    psi[0] = 1
    return ideal.with_state(psi, "product|00>")


def cglmp_state(zeta: float) -> np.ndarray:
    psi = np.zeros(9, dtype=complex)
    psi[0], psi[4], psi[8] = 1, zeta, 1
    return psi / math.sqrt(2 + zeta**2)


def cglmp_strategy(zeta: float = CGLMP_ZETA, phases: tuple | None = None) -> QuantumStrategy:
    """Two-qutrit state ``|00> + zeta|11> + |22>`` with Fourier-basis measurements.

    ``phases = ((phiA_0, phiA_1), (phiB_0, phiB_1))`` overrides the default
    ``phiA_x = x/2`` and ``phiB_y = (-1)^y / 4``.
    """
    if zeta < 0:
        raise ValueError("zeta must be nonnegative")
    if phases is None:
        phases = ((0.0, 0.5), (0.25, -0.25))
    omega = np.exp(2j * math.pi / 3)
    j = np.arange(3)

    def proj(phi, sign, out):
        ket = omega ** (j * (phi + sign * out)) / math.sqrt(3)
        return np.outer(ket, ket.conj())

    alice = [[proj(phases[0][x], +1, a) for a in range(3)] for x in range(2)]
    bob = [[proj(phases[1][y], -1, b) for b in range(3)] for y in range(2)]
    return QuantumStrategy(cglmp_state(zeta), (alice, bob), f"cglmp3(zeta={zeta:.6g})")


def ghz_strategy() -> QuantumStrategy:
    """GHZ state with ``A_0 = sigma_y`` and ``A_1 = -sigma_x`` for every party."""
    psi = np.zeros(8, dtype=complex)
    psi[0] = psi[7] = 1 / math.sqrt(2)
    local = [projectors_from_observable(SIGMA_Y), projectors_from_observable(-SIGMA_X)]
    return QuantumStrategy(psi, (local, local, local), "ghz")


def partial_transpose(rho: np.ndarray, dims: tuple[int, ...], party: int = 0) -> np.ndarray:
    n = len(dims)
    t = rho.reshape(tuple(dims) * 2)
    axes = list(range(2 * n))
    axes[party], axes[n + party] = axes[n + party], axes[party]
    return t.transpose(axes).reshape(rho.shape)


def negativity_exact(rho: np.ndarray, dims: tuple[int, ...] = (2, 2), party: int = 0) -> float:
    """Sum of |negative eigenvalues| of the partial transpose on ``party``.

    ``dims`` lists the local dimensions; for three or more parties the
    transpose on ``party`` gives the negativity across the ``party | rest`` cut.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim == 1:
        rho = np.outer(rho, rho.conj())
    if not np.allclose(rho, rho.conj().T, atol=1e-10):
        raise ValueError("density matrix must be Hermitian")
    if rho.shape[0] != math.prod(dims):
        raise ValueError("dims do not match the density matrix")
    eig = np.linalg.eigvalsh(partial_transpose(rho, dims, party))
    return float(-eig[eig < NEG_CUTOFF].sum())


def fidelity_exact(rho: np.ndarray, psi: np.ndarray) -> float:
    """``<psi|rho|psi>`` for a normalized pure target."""
    rho = np.asarray(rho, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    if rho.ndim == 1:
        rho = np.outer(rho, rho.conj())
    if rho.shape != (psi.size, psi.size):
        raise ValueError("state and target dimensions differ")
    psi = psi / np.linalg.norm(psi)
    return float(np.vdot(psi, rho @ psi).real)


def mes(d: int = 2) -> np.ndarray:
    psi = np.zeros(d * d, dtype=complex)
    psi[[i * d + i for i in range(d)]] = 1 / math.sqrt(d)
    return psi


def psi_theta(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), 0, 0, math.sin(theta)], dtype=complex)


def strategy_by_name(name: str, **params) -> QuantumStrategy:
    """Named constructors used by the CLI: chsh, tilted, cglmp3, ghz, product00."""
    name = name.lower()
    if name in ("chsh", "tilted"):
        theta = params.get("theta")
        return chsh_strategy(math.pi / 4 if theta is None else theta)
    if name == "cglmp3":
        zeta = params.get("zeta")
        return cglmp_strategy(CGLMP_ZETA if zeta is None else zeta)
    if name == "ghz":
        return ghz_strategy()
    if name == "product00":
        return product_strategy_00()
    raise UnsupportedError(f"unknown strategy {name!r}")


def local_operator_words(strat: QuantumStrategy, party: int):
    """Return a function mapping a projector word to its explicit operator."""
    dim = strat.dims[party]
    povm = strat.povms[party]

    def op(word):
        m = np.eye(dim, dtype=complex)
        for x, a in word:
            m = m @ povm[x][a]
        return m

    return op
