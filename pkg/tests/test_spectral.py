import math

import numpy as np
import pytest
from scipy import integrate, linalg

from rsblab import spectral
from rsblab.core import ModelParams, build_lattice
from rsblab.errors import ConfigError, ResourceCapError

from conftest import instance, random_couplings

X = np.array([[0.0, 1.0], [1.0, 0.0]])
Z = np.array([[1.0, 0.0], [0.0, -1.0]])


def kron_site(op, x, n):
    out = np.eye(1)
    for k in range(n):
        out = np.kron(out, op if k == x else np.eye(2))
    return out


def reference_hamiltonian(params, dis):
    """H assembled from Kronecker products of Pauli matrices."""
    n = params.n_sites
    H = np.zeros((2 ** n, 2 ** n))
    for x in range(n):
        H -= params.J1 * dis.g1[x] * kron_site(X / 2, x, n)
        H -= (params.J3 * dis.g3[x] + params.c) * kron_site(Z / 2, x, n)
    for x, y in build_lattice(params).bonds:
        H -= kron_site(Z / 2, x, n) @ kron_site(Z / 2, y, n)
    return H


def gibbs_by_expm(H, O, beta):
    rho = linalg.expm(-beta * H)
    return np.trace(O @ rho).real / np.trace(rho).real


def duhamel_by_quadrature(H, A, B, beta):
    Zs = np.trace(linalg.expm(-beta * H)).real

    def f(s):
        return np.trace(linalg.expm(-s * beta * H) @ A @ linalg.expm(-(1 - s) * beta * H) @ B).real
    return integrate.quad(f, 0, 1, epsabs=1e-13, epsrel=1e-12)[0] / Zs


@pytest.mark.parametrize("seed,L,d", [(0, 1, 1), (1, 3, 1), (2, 2, 2), (3, 4, 1)])
def test_hamiltonian_matches_kronecker_construction(seed, L, d, rng):
    p, dis = instance(seed, L=L, d=d, **random_couplings(rng))
    H = spectral.build_hamiltonian(p, dis)
    np.testing.assert_allclose(H, reference_hamiltonian(p, dis), atol=1e-14)
    assert H.dtype == np.float64
    np.testing.assert_array_equal(H, H.T)


def test_cap_and_unsupported_perturbation():
    p, dis = instance(0, L=5)
    with pytest.raises(ResourceCapError):
        spectral.build_hamiltonian(p, dis, cap=16)
    with pytest.raises(ConfigError):
        spectral.build_hamiltonian(p.with_(b3=0.5), dis)
    with pytest.raises(ValueError):
        spectral.build_hamiltonian(p, dis, perturbation_mode="bogus")


def test_b1_mode_adds_slice_averaged_field():
    p, dis = instance(3, L=2, M=4, b1=0.7)
    H = spectral.build_hamiltonian(p, dis, perturbation_mode="transverse_b1_only")
    shifted = dis.replace_fields(g1=dis.g1 + 0.7 * dis.h1.mean(axis=1))
    np.testing.assert_allclose(H, spectral.build_hamiltonian(p.with_(b1=0.0), shifted), atol=1e-15)
    np.testing.assert_array_equal(spectral.build_hamiltonian(p, dis), spectral.build_hamiltonian(p.with_(b1=0.0), dis))


def test_spin_operators_algebra():
    n = 2
    S = {i: spectral.spin_operator(n, 1, i) for i in (1, 2, 3)}
    np.testing.assert_allclose(S[1] @ S[2] - S[2] @ S[1], 1j * S[3], atol=1e-15)
    np.testing.assert_allclose(sum(S[i] @ S[i] for i in (1, 2, 3)), 0.75 * np.eye(4), atol=1e-15)
    spectral.check_hermitian(S[2])
    with pytest.raises(ValueError):
        spectral.check_hermitian(1j * S[1])
    with pytest.raises(ValueError):
        spectral.spin_operator(n, 0, 4)


def test_single_spin_closed_forms(rng):
    for k in range(30):
        kw = random_couplings(rng)
        p, dis = instance(k, L=1, **kw)
        h1 = p.J1 * dis.g1[0]
        h3 = p.J3 * dis.g3[0] + p.c
        h = math.hypot(h1, h3)
        spec = spectral.solve(p, dis)
        np.testing.assert_allclose(spec.energies, [-h / 2, h / 2], rtol=1e-13, atol=1e-15)
        beta = p.beta
        assert spec.logZ == pytest.approx(math.log(2 * math.cosh(beta * h / 2)), rel=1e-12)
        s3 = spectral.longitudinal_correlations(spec, 1)[0][0]
        assert s3 == pytest.approx(h3 / (2 * h) * math.tanh(beta * h / 2), rel=1e-11, abs=1e-14)
        n1 = h1 / h
        expected = n1 ** 2 / 4 + (1 - n1 ** 2) * math.tanh(beta * h / 2) / (2 * beta * h)
        S1 = spectral.spin_operator(1, 0, 1)
        assert spectral.duhamel_product(spec, S1, S1) == pytest.approx(expected, rel=1e-11)


def test_pure_longitudinal_spin_duhamel():
    p, dis = instance(0, L=1, J1=0.0, beta=1.3)
    h = abs(p.J3 * dis.g3[0] + p.c)
    spec = spectral.solve(p, dis)
    S1 = spectral.spin_operator(1, 0, 1)
    assert spectral.duhamel_product(spec, S1, S1) == pytest.approx(math.tanh(1.3 * h / 2) / (2 * 1.3 * h), rel=1e-12)


def test_kernel_continuity_and_symmetry():
    E = 0.37
    for beta in (0.5, 2.0):
        lim = math.exp(-beta * E)
        assert spectral.duhamel_kernel(E, E, beta) == pytest.approx(lim, rel=1e-15)
        for delta in (1e-12, 1e-9, 1e-7, 1e-5):
            v = spectral.duhamel_kernel(E, E + delta, beta)
            direct = (math.exp(-beta * E) - math.exp(-beta * (E + delta))) / (beta * delta)
            assert v == pytest.approx(spectral.duhamel_kernel(E + delta, E, beta), rel=1e-15)
            assert v == pytest.approx(lim, rel=2 * beta * delta)
            if delta >= 1e-5:
                assert v == pytest.approx(direct, rel=1e-9)
    # a huge gap above the ground state: (1 - e^{-1600}) / 1600
    assert spectral.duhamel_kernel(0.0, 800.0, 2.0) == pytest.approx(1 / 1600, rel=1e-15)


@pytest.mark.parametrize("seed", range(4))
def test_gibbs_and_duhamel_against_expm(seed, rng):
    p, dis = instance(seed, L=3, **random_couplings(rng))
    H = spectral.build_hamiltonian(p, dis)
    spec = spectral.diagonalize(H, p.beta)
    m1, m3 = spectral.magnetization(3, 1), spectral.magnetization(3, 3)
    assert spectral.gibbs_expectation(spec, m1 @ m3 + m3 @ m1) == pytest.approx(
        gibbs_by_expm(H, m1 @ m3 + m3 @ m1, p.beta), rel=1e-10, abs=1e-13)
    assert spec.logZ == pytest.approx(math.log(np.trace(linalg.expm(-p.beta * H))), rel=1e-12)
    d = spectral.duhamel_product(spec, m1, m3)
    assert d == pytest.approx(duhamel_by_quadrature(H, m1, m3, p.beta), rel=1e-9)
    assert d == pytest.approx(spectral.duhamel_product(spec, m3, m1), rel=1e-12)
    assert spectral.duhamel_product(spec, m1, m1) > 0


def test_reconstruct_and_probabilities():
    p, dis = instance(5, L=3)
    H = spectral.build_hamiltonian(p, dis)
    spec = spectral.diagonalize(H, p.beta)
    np.testing.assert_allclose(spec.reconstruct(), H, atol=1e-13)
    assert spec.weights.sum() == pytest.approx(1.0)
    rho = linalg.expm(-p.beta * H)
    np.testing.assert_allclose(spec.basis_probabilities, np.diag(rho) / np.trace(rho), atol=1e-13)


def test_longitudinal_correlations_match_operators():
    p, dis = instance(6, L=3)
    spec = spectral.solve(p, dis)
    m, C = spectral.longitudinal_correlations(spec, 3)
    for x in range(3):
        Sx = spectral.spin_operator(3, x, 3)
        assert m[x] == pytest.approx(spectral.gibbs_expectation(spec, Sx), abs=1e-14)
        for y in range(3):
            Sy = spectral.spin_operator(3, y, 3)
            assert C[x, y] == pytest.approx(spectral.gibbs_expectation(spec, Sx @ Sy), abs=1e-14)


def test_double_commutator_matches_explicit():
    p, dis = instance(8, L=3)
    H = spectral.build_hamiltonian(p, dis)
    spec = spectral.diagonalize(H, p.beta)
    for i in (1, 3):
        O = spectral.magnetization(3, i)
        explicit = O @ (H @ O - O @ H) - (H @ O - O @ H) @ O
        v = spectral.double_commutator_expectation(spec, O)
        assert v == pytest.approx(spectral.gibbs_expectation(spec, explicit), rel=1e-10)
        assert v >= 0


def test_harris_commuting_case_is_equality():
    p, dis = instance(2, L=3, J1=0.0)
    spec = spectral.solve(p, dis)
    tr = spectral.harris_check(spec, spectral.magnetization(3, 3))
    assert tr.lower == pytest.approx(tr.middle, abs=1e-12)
    assert tr.upper == pytest.approx(tr.lower, abs=1e-12)


def test_harris_ordered_generic(rng):
    for k in range(5):
        p, dis = instance(k, L=3, **random_couplings(rng))
        spec = spectral.solve(p, dis)
        for i in (1, 2, 3):
            O = spectral.magnetization(3, i)
            assert spectral.harris_check(spec, O).ordered(1e-10)


def test_replicated_spectrum_is_pairwise_sum():
    p, dis = instance(1, L=2)
    H = spectral.build_hamiltonian(p, dis)
    E = np.linalg.eigvalsh(H)
    E2 = np.linalg.eigvalsh(spectral.replicated_hamiltonian(H))
    np.testing.assert_allclose(np.sort(E2), np.sort((E[:, None] + E[None, :]).ravel()), atol=1e-13)


@pytest.mark.parametrize("i", [1, 2, 3])
def test_overlap_moments_factorized_vs_two_replica(i, rng):
    for k in range(3):
        p, dis = instance(k, L=3, **random_couplings(rng))
        H = spectral.build_hamiltonian(p, dis)
        spec = spectral.diagonalize(H, p.beta)
        om = spectral.overlap_moments(spec, p, i, cross_check=True, H=H)
        assert om.second_duhamel == pytest.approx(om.direct_duhamel, abs=1e-12)
        spec2 = spectral.diagonalize(spectral.replicated_hamiltonian(H), p.beta)
        R = spectral.overlap_operator(3, i)
        assert om.mean == pytest.approx(spectral.gibbs_expectation(spec2, R), abs=1e-13)
        assert om.second_gibbs == pytest.approx(spectral.gibbs_expectation(spec2, R @ R), abs=1e-13)


def test_overlap_cross_check_skipped_beyond_cap():
    p, dis = instance(0, L=4)
    H = spectral.build_hamiltonian(p, dis)
    om = spectral.overlap_moments(spectral.diagonalize(H, 1.0), p, 3, cross_check=True, H=H, cap=64)
    assert om.direct_duhamel is None


def test_s2_identities_that_hold_exactly(rng):
    for k in range(4):
        p, dis = instance(k, L=3, **random_couplings(rng))
        spec = spectral.solve(p, dis)
        for x in range(3):
            S2 = spectral.spin_operator(3, x, 2)
            assert abs(spectral.gibbs_expectation(spec, S2)) < 1e-12
            assert spectral.gibbs_expectation(spec, S2 @ S2) == pytest.approx(0.25, abs=1e-12)
        assert abs(spectral.overlap_moments(spec, p, 2).mean) < 1e-12


def test_s2_cross_correlation_nonzero_on_a_bond():
    # the transverse field makes S^2 on neighbouring sites correlated at finite size
    p, dis = instance(0, L=2)
    spec = spectral.solve(p, dis)
    S2a, S2b = spectral.spin_operator(2, 0, 2), spectral.spin_operator(2, 1, 2)
    assert abs(spectral.gibbs_expectation(spec, S2a @ S2b)) > 1e-8


def test_s2_overlap_single_site_value():
    p, dis = instance(4, L=1)
    om = spectral.overlap_moments(spectral.solve(p, dis), p, 2)
    assert om.second_gibbs == pytest.approx(1 / 16, abs=1e-13)
