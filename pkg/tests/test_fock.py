import itertools
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from gpbose.entropy import von_neumann_entropy
from gpbose.fock import (
    FockBasis,
    Poly,
    TruncatedFock,
    TruncationError,
    build_operators,
    coherent_resolution,
    coherent_state,
    commutator_norm,
    dimension_formula,
    entropy_decomposition,
    free_energy_functional,
    gibbs_state,
    hermiticity_defect,
    husimi_decompose,
    lower_symbol_direct,
    number_poly,
    plane_quadrature,
    random_density_matrix,
    reduced_densities,
    sector_gibbs,
    symbol_difference_formula,
    symbols,
    upper_symbol_reconstruction,
    z1_bound_check,
    zero_vhat,
)
from gpbose.potential import hard_sphere, square_well, zero_potential
from gpbose.fock import jastrow_norm_check_n2

LOW2 = [(0, 0, 0), (1, 0, 0)]
HIGH2 = [(0, 1, 0), (-1, 0, 0)]


def gaussian_vhat(g=3.0, width=4.0):
    return lambda p: g * math.exp(-float(np.dot(p, p)) / width**2)


def momentum_ops(space):
    ops = []
    for c in range(3):
        P = Poly()
        for i, n in enumerate(space.modes):
            P.add((i,), (i,), float(n[c]))
        ops.append(space.matrix(P))
    return ops


# --------------------------------------------------------------------------
# basis and operators

@pytest.mark.parametrize("m,cap", [(1, 5), (2, 4), (3, 3), (4, 6)])
def test_basis_dimension_matches_enumeration(m, cap):
    basis = FockBasis(m, cap)
    brute = [n for n in itertools.product(range(cap + 1), repeat=m) if sum(n) <= cap]
    assert len(basis) == len(brute) == dimension_formula(m, cap)
    assert len({tuple(r) for r in basis.occ}) == len(basis)


def test_basis_index_roundtrip():
    basis = FockBasis(3, 4)
    assert np.array_equal(basis.index(basis.occ), np.arange(len(basis)))
    assert basis.index(np.array([5, 0, 0]))[0] == -1
    assert basis.index(np.array([-1, 0, 0]))[0] == -1


def test_product_space_dimension():
    space = TruncatedFock(LOW2, HIGH2, n_max=3, low_cap=4)
    assert space.dim == dimension_formula(2, 4) * dimension_formula(2, 3)


def test_modes_must_be_distinct():
    with pytest.raises(ValueError):
        TruncatedFock([(0, 0, 0)], [(0, 0, 0)], n_max=2)


def test_zero_potential_gives_zero_interaction():
    space = TruncatedFock(LOW2, HIGH2, n_max=4)
    ops = build_operators(space, zero_vhat, mu=-1.0)
    assert space.matrix(ops.V).nnz == 0


def test_single_zero_mode_interaction_closed_form():
    g, L = 2.5, 1.7
    space = TruncatedFock([(0, 0, 0)], [], n_max=8, L=L)
    V = space.matrix(build_operators(space, lambda p: g).V).toarray()
    n = space.basis.occ[:, 0]
    assert np.allclose(V, np.diag(g / (2 * L**3) * n * (n - 1)), atol=1e-14)


def test_kinetic_operator_diagonal():
    space = TruncatedFock(LOW2, HIGH2, n_max=3, L=2.0)
    T = space.matrix(build_operators(space, zero_vhat, mu=-0.5, lam=0.3).T).toarray()
    e = np.array([0.3 + 0.5] + [np.pi**2 + 0.5] * 3)
    assert np.allclose(np.diag(T), space.basis.occ @ e)
    assert np.count_nonzero(T - np.diag(np.diag(T))) == 0


@pytest.mark.parametrize("cap", [3, 5])
def test_operators_hermitian_and_conserving(cap):
    space = TruncatedFock(LOW2, HIGH2 + [(0, -1, 0)], n_max=cap)
    ops = build_operators(space, gaussian_vhat(), mu=-1.0, lam=0.2)
    T, V, N = (space.matrix(p) for p in (ops.T, ops.V, ops.N))
    assert hermiticity_defect(T) <= 1e-12
    assert hermiticity_defect(V) <= 1e-12
    scale = np.abs(V.data).max() * cap**2
    assert commutator_norm(V, N) <= 1e-12 * scale
    assert commutator_norm(T, N) <= 1e-12 * scale
    for P in momentum_ops(space):
        assert commutator_norm(V, P) <= 1e-12 * scale


def test_vhat_above_zero_value_warns():
    space = TruncatedFock([(0, 0, 0)], [(1, 0, 0)], n_max=2)
    with pytest.warns(UserWarning):
        build_operators(space, lambda p: 1.0 + float(np.dot(p, p)))


# --------------------------------------------------------------------------
# Gibbs states

def test_two_level_gibbs_closed_form():
    beta, e = 0.8, 1.5
    g = gibbs_state(np.diag([0.0, e]), beta)
    p1 = math.exp(-beta * e) / (1 + math.exp(-beta * e))
    assert np.allclose(g.rho, np.diag([1 - p1, p1]), atol=1e-15)
    assert g.free_energy == pytest.approx(-math.log1p(math.exp(-beta * e)) / beta, rel=1e-14)
    assert g.entropy == pytest.approx(-(p1 * math.log(p1) + (1 - p1) * math.log(1 - p1)), rel=1e-13)


def test_gibbs_zero_temperature_limit():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((6, 6))
    H = A + A.T
    w, U = np.linalg.eigh(H)
    g = gibbs_state(H, 1e4)
    assert np.allclose(g.rho, np.outer(U[:, 0], U[:, 0]), atol=1e-10)


def test_gibbs_free_energy_is_functional_value():
    space = TruncatedFock([(0, 0, 0)], [(1, 0, 0), (-1, 0, 0)], n_max=5)
    H = space.matrix(build_operators(space, gaussian_vhat(), mu=1.0).H)
    g = gibbs_state(H, 0.3)
    assert free_energy_functional(H, g.rho, 0.3) == pytest.approx(g.free_energy, rel=1e-10)


def test_gibbs_variational_principle():
    space = TruncatedFock([(0, 0, 0)], [(1, 0, 0), (-1, 0, 0)], n_max=6)
    H = space.matrix(build_operators(space, gaussian_vhat(), mu=2.0).H)
    beta = 0.2
    g = gibbs_state(H, beta)
    rng = np.random.default_rng(11)
    for k in range(100):
        rho = random_density_matrix(space.dim, rng, rank=1 + k % space.dim)
        assert g.free_energy <= free_energy_functional(H, rho, beta) + 1e-10


def test_dense_limit_enforced():
    big = sp.identity(5000, format="csr")
    with pytest.raises(ValueError):
        gibbs_state(big, 1.0)


# --------------------------------------------------------------------------
# coherent states

def test_coherent_state_at_origin_is_vacuum():
    space = TruncatedFock([(0, 0, 0)], [], n_max=5, low_cap=5)
    v = coherent_state(space, [0.0]).vector
    assert v[0] == 1.0 and np.all(v[1:] == 0)


def test_coherent_state_mean_number():
    space = TruncatedFock([(0, 0, 0)], [], n_max=20, low_cap=20)
    cs = coherent_state(space, [1.0])
    Nm = space.low.matrix(number_poly([0])).toarray()
    assert float(np.real(cs.vector.conj() @ Nm @ cs.vector)) == pytest.approx(1.0, abs=cs.norm_deficit + 1e-14)


def test_coherent_state_refuses_large_deficit():
    space = TruncatedFock([(0, 0, 0)], [], n_max=3, low_cap=3)
    with pytest.raises(TruncationError):
        coherent_state(space, [2.0])


@settings(max_examples=30, deadline=None)
@given(re=st.floats(-1.5, 1.5), im=st.floats(-1.5, 1.5), re2=st.floats(-1, 1))
def test_coherent_eigenvector_of_annihilation(re, im, re2):
    space = TruncatedFock(LOW2, [], n_max=30, low_cap=30)
    z = np.array([complex(re, im), complex(re2, 0.3)])
    cs = coherent_state(space, z, max_deficit=1e-6)
    # the cap only removes the image of the top shell: a_j|z> - z_j|z> = -z_j P_cap|z>
    top = np.linalg.norm(cs.vector[space.low.occ.sum(axis=1) == 30])
    for j in range(2):
        a = space.low.matrix(Poly().add((), (j,), 1.0))
        err = np.linalg.norm(a @ cs.vector - z[j] * cs.vector)
        assert err == pytest.approx(abs(z[j]) * top, rel=1e-6, abs=1e-15)


def test_coherent_resolution_of_identity():
    assert coherent_resolution(4) <= 1e-6


def test_plane_quadrature_integrates_gaussian():
    q = plane_quadrature()
    assert float(np.sum(q.w * np.exp(-np.abs(q.z) ** 2))) == pytest.approx(1.0, rel=1e-12)


# --------------------------------------------------------------------------
# symbols

def test_number_operator_symbols():
    space = TruncatedFock([(0, 0, 0)], [(1, 0, 0)], n_max=3, low_cap=6)
    z = np.array([0.7 - 0.4j])
    s = symbols(space, number_poly([0]), z)
    assert s.lower[((), ())] == pytest.approx(abs(z[0]) ** 2)
    assert s.upper[((), ())] == pytest.approx(abs(z[0]) ** 2 - 1)


def test_identity_symbols():
    space = TruncatedFock([(0, 0, 0)], [(1, 0, 0)], n_max=3, low_cap=6)
    s = symbols(space, Poly.identity(), [0.3])
    assert s.lower == s.upper == Poly.identity()


@pytest.mark.parametrize("m,n", [(1, 1), (2, 1), (2, 2), (0, 3)])
def test_upper_symbol_reconstructs_operator(m, n):
    assert upper_symbol_reconstruction(m, n, cap=4) <= 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_lower_symbol_matches_direct_matrix(seed):
    rng = np.random.default_rng(seed)
    space = TruncatedFock(LOW2, HIGH2, n_max=3, low_cap=24)
    z = 0.5 * (rng.standard_normal(2) + 1j * rng.standard_normal(2))
    H = build_operators(space, gaussian_vhat(), mu=-1.0, lam=0.5).H
    direct = lower_symbol_direct(space, H, z, max_deficit=1e-13)
    formal = space.high_matrix(symbols(space, H, z).lower).toarray()
    assert np.abs(direct - formal).max() <= 1e-10


@pytest.mark.parametrize("seed", range(4))
def test_symbol_difference_formula(seed):
    rng = np.random.default_rng(seed)
    space = TruncatedFock(LOW2, HIGH2, n_max=6, low_cap=6)
    z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    vhat = gaussian_vhat(g=rng.uniform(0.5, 5.0), width=rng.uniform(3.0, 12.0))
    mu, lam = -rng.uniform(0, 3), rng.uniform(0, 2)
    H = build_operators(space, vhat, mu, lam).H
    s = symbols(space, H, z)
    D = (space.high_matrix(s.lower) - space.high_matrix(s.upper)).toarray()
    closed = symbol_difference_formula(space, z, vhat, mu, lam)
    assert np.abs(D - closed).max() <= 1e-10


def test_z1_bound_kinetic_only():
    space = TruncatedFock(LOW2, HIGH2, n_max=3, low_cap=3)
    p_c, mu = 2 * math.pi * 1.01, -0.4
    chk = z1_bound_check(space, [0.5, 0.2j], zero_vhat, mu=mu, lam=0.0, p_c=p_c, phi=1.0, N=10)
    kin = sum(float(space.momentum(i) @ space.momentum(i)) - mu for i in space.low_indices())
    assert np.allclose(chk.delta_H, kin * np.eye(len(space.high)), atol=1e-12)
    assert kin <= space.M * (p_c**2 - mu)
    assert chk.holds


@pytest.mark.parametrize("seed", range(2))
def test_z1_bound_random_profiles(seed):
    rng = np.random.default_rng(seed)
    space = TruncatedFock(LOW2, HIGH2, n_max=4, low_cap=4)
    phi, N = 1.0, 20.0
    cap = 8 * math.pi * phi * space.L / N
    vhat = gaussian_vhat(g=cap * rng.uniform(0.2, 1.0), width=rng.uniform(2.0, 20.0))
    z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    chk = z1_bound_check(space, z, vhat, mu=-1.0, lam=0.3, p_c=7.0, phi=phi, N=N)
    assert chk.holds


def test_z1_bound_at_origin_uses_high_number():
    space = TruncatedFock(LOW2, HIGH2, n_max=3, low_cap=3)
    chk = z1_bound_check(space, [0.0, 0.0], gaussian_vhat(g=0.5), mu=-1.0, lam=0.0,
                         p_c=7.0, phi=1.0, N=10)
    Nhigh = space.high_matrix(number_poly(space.high_indices())).toarray()
    const = space.M * (49.0 + 1.0)
    slope = 16 * math.pi / 10 * space.M
    assert np.allclose(chk.bound, const * np.eye(len(space.high)) + slope * Nhigh)
    assert chk.holds


def test_z1_bound_rejects_large_vhat():
    space = TruncatedFock(LOW2, HIGH2, n_max=2, low_cap=2)
    with pytest.raises(ValueError):
        z1_bound_check(space, [0, 0], lambda p: 100.0, mu=0.0, lam=0.0, p_c=7.0, phi=1.0, N=10)


# --------------------------------------------------------------------------
# Husimi decomposition

def husimi_space(n_max=3, low_cap=6):
    return TruncatedFock([(0, 0, 0)], [(1, 0, 0), (-1, 0, 0)], n_max=n_max, low_cap=low_cap)


def test_husimi_product_state():
    space = husimi_space()
    dl, dh = len(space.low), len(space.high)
    rho = random_density_matrix(dh, np.random.default_rng(0))
    vac = np.zeros((dl, dl))
    vac[0, 0] = 1.0
    h = husimi_decompose(space, np.kron(vac, rho))
    assert h.mass == pytest.approx(1.0, abs=1e-12)
    for s in h.slices[::37]:
        assert s.weight == pytest.approx(math.exp(-abs(s.z) ** 2), rel=1e-12)
        assert np.allclose(s.conditional, rho, atol=1e-12)


def test_husimi_refuses_several_low_modes():
    space = TruncatedFock(LOW2, HIGH2, n_max=2, low_cap=2)
    with pytest.raises(ValueError):
        husimi_decompose(space, np.eye(space.dim) / space.dim)


@pytest.mark.parametrize("seed", range(5))
def test_husimi_mass_and_conditionals(seed):
    space = husimi_space()
    G = random_density_matrix(space.dim, np.random.default_rng(seed))
    h = husimi_decompose(space, G)
    assert h.mass == pytest.approx(1.0, abs=1e-4)
    for s in h.slices[::53]:
        assert np.trace(s.conditional).real == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.eigvalsh(s.conditional).min() >= -1e-12


@pytest.mark.parametrize("seed", range(50))
def test_entropy_decomposition(seed):
    space = husimi_space(n_max=2, low_cap=5)
    rng = np.random.default_rng(seed)
    G = random_density_matrix(space.dim, rng, rank=int(rng.integers(1, space.dim + 1)))
    split = entropy_decomposition(space, G)
    assert split.S == pytest.approx(von_neumann_entropy(G))
    assert split.margin >= -1e-4


# --------------------------------------------------------------------------
# reduced densities on canonical ideal-gas states

@pytest.mark.parametrize("N,beta", [(2, 0.05), (3, 0.02), (4, 0.1)])
def test_fixed_N_identities(N, beta):
    space = TruncatedFock([(0, 0, 0)], [(1, 0, 0), (-1, 0, 0), (0, 1, 0)], n_max=N)
    T = build_operators(space, zero_vhat).T
    G = sector_gibbs(space, T, beta, N)
    rd = reduced_densities(space, G)
    vol = space.volume
    assert rd.N == N
    assert rd.sup_exact
    assert rd.fixed_N_identity <= 1e-10
    assert np.trace(rd.one_pdm).real == pytest.approx(N, abs=1e-10)
    assert rd.rho2_max <= rd.rho2_bound(vol) + 1e-10
    assert rd.rho3_max <= (N / vol) ** 3 + 1e-10


def test_two_body_sup_for_condensed_pair():
    # both particles in p = 0: rho2 = N(N-1)/(2|Lambda|^2) = 1/|Lambda|^2
    space = TruncatedFock([(0, 0, 0)], [(1, 0, 0)], n_max=2, L=1.3)
    G = np.zeros((space.dim, space.dim))
    i = space.basis.index(np.array([2, 0]))[0]
    G[i, i] = 1.0
    rd = reduced_densities(space, G)
    assert rd.rho2_max == pytest.approx(1 / space.volume**2, rel=1e-12)
    assert rd.rho3_max == 0.0


def test_reduced_densities_reject_mixed_sectors():
    space = TruncatedFock([(0, 0, 0)], [(1, 0, 0)], n_max=2)
    with pytest.raises(ValueError):
        reduced_densities(space, np.eye(space.dim) / space.dim)


# --------------------------------------------------------------------------
# two-particle Jastrow norm

def hard_sphere_norm_oracle(a, b, L):
    # b <= L/2: the ball of radius b sits inside the cell
    fb = lambda r: (1 - a / r) / (1 - a / b)
    deficit = 4 * math.pi * (a**3 / 3 + quad(lambda r: (1 - fb(r) ** 2) * r * r, a, b, epsabs=1e-14)[0])
    return 1 - deficit / L**3


def test_jastrow_norm_zero_potential():
    chk = jastrow_norm_check_n2(zero_potential(), 0.2, 1.0)
    assert chk.norm_sq == 1.0


@pytest.mark.parametrize("b", [0.02, 0.05, 0.1, 0.3, 0.45])
def test_jastrow_norm_hard_sphere(b):
    a, L = 0.01, 1.0
    chk = jastrow_norm_check_n2(hard_sphere(a), b, L)
    assert chk.norm_sq == pytest.approx(hard_sphere_norm_oracle(a, b, L), abs=1e-12)
    assert chk.holds


def test_jastrow_norm_monotone_in_b():
    a, L = 0.01, 1.0
    bs = np.linspace(0.011, 0.6, 25)
    vals = [jastrow_norm_check_n2(hard_sphere(a), b, L).norm_sq for b in bs]
    assert np.all(np.diff(vals) < 0)


def test_jastrow_norm_square_well():
    chk = jastrow_norm_check_n2(square_well(0.05, 40.0), 0.2, 1.0)
    assert chk.holds
    assert chk.norm_sq < 1


def test_jastrow_norm_rejects_large_b():
    with pytest.raises(ValueError):
        jastrow_norm_check_n2(hard_sphere(0.01), 0.8, 1.0)
