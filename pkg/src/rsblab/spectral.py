"""Dense exact diagonalization of the quantum Hamiltonian.

Basis states are products of S^3 eigenstates; site 0 is the most significant
bit and bit value 0 means sigma = +1. With this choice the Hamiltonian is real
symmetric, so eigenvectors are real and ``S^2`` enters only through the real
antisymmetric matrix ``a`` with ``S^2 = i a``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import DisorderRealization, ModelParams, build_lattice
from .errors import ConfigError, ResourceCapError, ShapeMismatchError

DEFAULT_CAP = 4096
QUADRATURE_NODES = 64

_PAULI_HALF = {
    1: np.array([[0.0, 0.5], [0.5, 0.0]]),
    2: np.array([[0.0, -0.5j], [0.5j, 0.0]]),
    3: np.array([[0.5, 0.0], [0.0, -0.5]]),
}
# S^2 = i * _S2_REAL
_S2_REAL = np.array([[0.0, -0.5], [0.5, 0.0]])


def _check_cap(dim: int, cap: int):
    if dim > cap:
        raise ResourceCapError(f"Hilbert space dimension {dim} exceeds cap {cap}")


def site_spins(n_sites: int) -> np.ndarray:
    """Array ``s[k, x]`` of sigma values (+-1) of basis state k."""
    k = np.arange(2 ** n_sites)[:, None]
    shifts = np.arange(n_sites - 1, -1, -1)[None, :]
    return 1 - 2 * ((k >> shifts) & 1)


def _embed(local: np.ndarray, x: int, n_sites: int) -> np.ndarray:
    left = np.eye(2 ** x)
    right = np.eye(2 ** (n_sites - x - 1))
    return np.kron(np.kron(left, local), right)


def spin_operator(n_sites: int, x: int, i: int, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Dense ``S^i_x`` (real for i = 1, 3; complex for i = 2)."""
    if i not in (1, 2, 3):
        raise ValueError(f"spin component must be 1, 2 or 3, got {i}")
    if not 0 <= x < n_sites:
        raise IndexError(f"site {x} outside 0..{n_sites - 1}")
    _check_cap(2 ** n_sites, cap)
    return _embed(_PAULI_HALF[i], x, n_sites)


def _real_spin_factor(n_sites: int, x: int, i: int) -> np.ndarray:
    # real matrix Y with S^i_x = Y (i = 1, 3) or S^2_x = i Y
    return _embed(_S2_REAL if i == 2 else _PAULI_HALF[i], x, n_sites)


def magnetization(n_sites: int, i: int, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Order parameter ``m^i_L = (1/N) sum_x S^i_x``."""
    return sum(spin_operator(n_sites, x, i, cap) for x in range(n_sites)) / n_sites


def overlap_operator(n_sites: int, i: int, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Two-replica overlap ``R^i_{1,2} = (1/N) sum_x S^i_x (x) S^i_x``."""
    _check_cap(4 ** n_sites, cap)
    ops = [spin_operator(n_sites, x, i, cap) for x in range(n_sites)]
    R = sum(np.kron(s, s) for s in ops) / n_sites
    return R.real.copy() if i == 2 else R  # S2 (x) S2 is real


def replicated_hamiltonian(H: np.ndarray, cap: int = DEFAULT_CAP) -> np.ndarray:
    """``H (x) 1 + 1 (x) H`` for two independent replicas sharing disorder."""
    dim = H.shape[0]
    _check_cap(dim * dim, cap)
    eye = np.eye(dim)
    return np.kron(H, eye) + np.kron(eye, H)


def check_hermitian(O: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    O = np.asarray(O)
    if O.ndim != 2 or O.shape[0] != O.shape[1]:
        raise ShapeMismatchError(f"operator must be square, got shape {O.shape}")
    if O.shape[0] & (O.shape[0] - 1):
        raise ShapeMismatchError(f"operator dimension {O.shape[0]} is not a power of two")
    if np.max(np.abs(O - O.conj().T), initial=0.0) > tol:
        raise ValueError("operator is not Hermitian")
    return O


def transverse_coefficients(params: ModelParams, disorder: DisorderRealization,
                            perturbation_mode: str = "none") -> np.ndarray:
    """Per-site coefficient of S^1 (before the overall minus sign)."""
    coeff = params.J1 * disorder.g1
    if perturbation_mode == "transverse_b1_only" and params.b1 != 0.0:
        if disorder.h1.shape[1] == 0:
            raise ConfigError("transverse_b1_only needs h1 fields, i.e. a realization drawn with M")
        coeff = coeff + params.b1 * disorder.h1.mean(axis=1)
    return coeff


def build_hamiltonian(params: ModelParams, disorder: DisorderRealization,
                      perturbation_mode: str = "none", cap: int = DEFAULT_CAP) -> np.ndarray:
    """Dense real-symmetric H = A + B.

    ``perturbation_mode="transverse_b1_only"`` adds ``b1 * mean_t h1[x, t]`` to
    each transverse coefficient, the slice average being the only uniform
    operator the per-slice perturbation reduces to.
    """
    if perturbation_mode not in ("none", "transverse_b1_only"):
        raise ValueError(f"unknown perturbation_mode {perturbation_mode!r}")
    if params.b3 != 0.0:
        raise ConfigError("b3 perturbation has no quantum operator form; use the classical model")
    disorder.check_compatible(params)
    lat = build_lattice(params)
    n = lat.n_sites
    dim = 2 ** n
    _check_cap(dim, cap)

    s = site_spins(n)
    longitudinal = params.J3 * disorder.g3 + params.c
    diag = -0.5 * s @ longitudinal
    for x, y in lat.bonds:
        diag -= 0.25 * s[:, x] * s[:, y]
    H = np.diag(diag.astype(float))

    transverse = transverse_coefficients(params, disorder, perturbation_mode)
    k = np.arange(dim)
    for x in range(n):
        flipped = k ^ (1 << (n - 1 - x))
        H[flipped, k] += -0.5 * transverse[x]
    return H


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigen-data of H at fixed beta. ``logZ = log sum exp(-beta E_n)``."""

    energies: np.ndarray
    basis: np.ndarray
    beta: float
    logZ: float

    @property
    def dim(self) -> int:
        return self.energies.shape[0]

    @cached_property
    def weights(self) -> np.ndarray:
        """Boltzmann probabilities p_n = exp(-beta E_n) / Z."""
        a = self.beta * (self.energies - self.energies[0])
        w = np.exp(-a)
        return w / w.sum()

    @cached_property
    def reduced_energies(self) -> np.ndarray:
        return self.beta * (self.energies - self.energies[0])

    def to_eigenbasis(self, O: np.ndarray) -> np.ndarray:
        if O.shape != (self.dim, self.dim):
            raise ShapeMismatchError(f"operator shape {O.shape} does not match dimension {self.dim}")
        U = self.basis
        return U.conj().T @ O @ U

    @cached_property
    def basis_probabilities(self) -> np.ndarray:
        """Diagonal of the density matrix in the product basis."""
        return (np.abs(self.basis) ** 2) @ self.weights

    def reconstruct(self) -> np.ndarray:
        U = self.basis
        return (U * self.energies) @ U.conj().T


def diagonalize(H: np.ndarray, beta: float) -> SpectralDecomposition:
    if not beta > 0:
        raise ConfigError("beta must be > 0")
    E, U = np.linalg.eigh(H)
    a = -beta * E
    amax = a.max()
    logZ = float(amax + np.log(np.exp(a - amax).sum()))
    return SpectralDecomposition(energies=E, basis=U, beta=float(beta), logZ=logZ)


def solve(params: ModelParams, disorder: DisorderRealization,
          perturbation_mode: str = "none", cap: int = DEFAULT_CAP) -> SpectralDecomposition:
    return diagonalize(build_hamiltonian(params, disorder, perturbation_mode, cap), params.beta)


def gibbs_expectation(spec: SpectralDecomposition, O: np.ndarray) -> float:
    """(1/Z) Tr O exp(-beta H)."""
    Oe = spec.to_eigenbasis(np.asarray(O))
    value = np.dot(spec.weights, np.diag(Oe))
    if abs(np.imag(value)) > 1e-10 * max(1.0, abs(value)):
        raise ValueError("expectation has a non-negligible imaginary part; operator not Hermitian?")
    return float(np.real(value))


def _phi(delta: np.ndarray) -> np.ndarray:
    # (1 - exp(-delta)) / delta for delta >= 0, continuous at 0
    out = np.ones_like(delta)
    big = delta > 1e-8
    out[big] = -np.expm1(-delta[big]) / delta[big]
    small = ~big
    ds = delta[small]
    out[small] = 1.0 - ds / 2.0 + ds * ds / 6.0
    return out


def duhamel_kernel(Em, En, beta: float) -> np.ndarray:
    """W(E_m, E_n) = (exp(-beta E_m) - exp(-beta E_n)) / (beta (E_n - E_m)).

    Equal to exp(-beta E_m) at degeneracy. Evaluated as
    ``exp(-beta min) * (1 - exp(-d)) / d`` with ``d = beta |E_n - E_m|``.
    """
    a = beta * np.asarray(Em, dtype=float)
    b = beta * np.asarray(En, dtype=float)
    return np.exp(-np.minimum(a, b)) * _phi(np.abs(b - a))


def _duhamel_matrix(spec: SpectralDecomposition) -> np.ndarray:
    a = spec.reduced_energies
    W = duhamel_kernel(a[:, None], a[None, :], 1.0)
    return W / np.exp(-a).sum()


def duhamel_product(spec: SpectralDecomposition, O1: np.ndarray, O2: np.ndarray) -> float:
    """Duhamel two-point function (O1, O2)_D.

    Time evolution uses beta*H, so beta^2 (O1, O2)_D is the mixed second
    derivative of Z under H -> H - x1 O1 - x2 O2, divided by Z.
    """
    A = spec.to_eigenbasis(np.asarray(O1))
    B = spec.to_eigenbasis(np.asarray(O2))
    value = np.sum(A * B.T * _duhamel_matrix(spec))
    if abs(np.imag(value)) > 1e-10 * max(1.0, abs(value)):
        raise ValueError("Duhamel product has a non-negligible imaginary part")
    return float(np.real(value))


def double_commutator_expectation(spec: SpectralDecomposition, O: np.ndarray) -> float:
    """<[O, [H, O]]> = 2 sum_{mn} p_m |O_mn|^2 (E_n - E_m), always >= 0."""
    Oe = spec.to_eigenbasis(np.asarray(O))
    E = spec.energies
    gap = E[None, :] - E[:, None]
    return float(2.0 * np.sum(spec.weights[:, None] * np.abs(Oe) ** 2 * gap))


@dataclass(frozen=True)
class HarrisTriple:
    lower: float
    middle: float
    upper: float

    def ordered(self, slack: float = 1e-10) -> bool:
        return self.lower <= self.middle + slack and self.middle <= self.upper + slack


def harris_check(spec: SpectralDecomposition, O: np.ndarray) -> HarrisTriple:
    """Return ((O,O)_D, <O^2>, (O,O)_D + beta/12 <[O,[H,O]]>)."""
    O = np.asarray(O)
    lower = duhamel_product(spec, O, O)
    middle = gibbs_expectation(spec, O @ O)
    upper = lower + spec.beta / 12.0 * double_commutator_expectation(spec, O)
    return HarrisTriple(lower=lower, middle=middle, upper=upper)


def free_energy_density(spec: SpectralDecomposition, params: ModelParams) -> float:
    return spec.logZ / params.n_sites


def longitudinal_correlations(spec: SpectralDecomposition, n_sites: int):
    """One- and two-point functions of S^3 from the density-matrix diagonal.

    Returns ``(m, C)`` with ``m[x] = <S^3_x>`` and ``C[x, y] = <S^3_x S^3_y>``.
    """
    P = spec.basis_probabilities
    s = site_spins(n_sites) / 2.0
    return P @ s, (s * P[:, None]).T @ s


@dataclass(frozen=True)
class OverlapMoments:
    mean: float
    second_gibbs: float
    second_duhamel: float
    direct_duhamel: float | None = None


def _eigen_factors(spec: SpectralDecomposition, n_sites: int, i: int) -> np.ndarray:
    U = spec.basis
    rows = []
    for x in range(n_sites):
        Y = U.T @ _real_spin_factor(n_sites, x, i) @ U
        rows.append(Y.reshape(-1))
    return np.array(rows)


def overlap_moments(spec: SpectralDecomposition, params: ModelParams, i: int,
                    cross_check: bool = False, cap: int = DEFAULT_CAP,
                    H: np.ndarray | None = None) -> OverlapMoments:
    """Two-replica overlap moments from one replica's spectrum.

    Replicas are independent, so
    <R> = (1/N) sum_x <S_x>^2, <R^2> = (1/N^2) sum_{xy} <S_x S_y>^2 and
    (R,R)_D = (1/N^2) sum_{xy} int_0^1 2 (1 - tau) f_xy(tau)^2 dtau, with
    f_xy(tau) the single-replica imaginary-time correlator. The tau integral
    uses Gauss-Legendre quadrature.

    With ``cross_check=True`` the Duhamel moment is also computed by direct
    diagonalization of the replicated Hamiltonian ``H`` (skipped, leaving
    ``direct_duhamel=None``, when 4^N exceeds ``cap``).
    """
    if spec.basis.dtype.kind == "c":
        raise ValueError("overlap_moments expects the real eigenbasis of build_hamiltonian")
    n = params.n_sites
    if spec.dim != 2 ** n:
        raise ShapeMismatchError("spectrum dimension does not match the lattice")
    V = _eigen_factors(spec, n, i)
    dim = spec.dim
    p = spec.weights

    diag_idx = np.arange(dim) * (dim + 1)
    one_point = V[:, diag_idx] @ p
    mean = float(np.sum(one_point ** 2) / n)

    w_gibbs = np.repeat(p, dim)
    G = (V * w_gibbs) @ V.T
    second_gibbs = float(np.sum(G ** 2) / n ** 2)

    a = spec.reduced_energies
    Zr = np.exp(-a).sum()
    nodes, wts = np.polynomial.legendre.leggauss(QUADRATURE_NODES)
    taus = 0.5 * (nodes + 1.0)
    wts = 0.5 * wts
    total = 0.0
    for tau, wt in zip(taus, wts):
        w = np.exp(-(1.0 - tau) * a[:, None] - tau * a[None, :]).reshape(-1) / Zr
        F = (V * w) @ V.T
        total += wt * 2.0 * (1.0 - tau) * np.sum(F ** 2)
    second_duhamel = float(total / n ** 2)

    direct = None
    if cross_check and 4 ** n <= cap:
        if H is None:
            raise ValueError("cross_check needs the single-replica Hamiltonian H")
        spec2 = diagonalize(replicated_hamiltonian(H, cap), spec.beta)
        R = overlap_operator(n, i, cap)
        direct = duhamel_product(spec2, R, R)
    return OverlapMoments(mean=mean, second_gibbs=second_gibbs,
                          second_duhamel=second_duhamel, direct_duhamel=direct)
