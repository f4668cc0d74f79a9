import numpy as np
import pytest
import scipy.sparse.linalg as sla
from hypothesis import given, settings, strategies as st

from mplab.fields import Grid3, ScalarField, SpinorField, VectorField
from mplab.hamiltonian import (
    HamiltonianSpec, LinkPhases, apply, dirichlet_sine_eigenvalue, dirichlet_sine_mode,
    hermiticity_check, lattice_field,
)
from mplab.maxwell import constant_field_potential, random_smooth_field


def _zero_V(g):
    return ScalarField(g, np.zeros(g.shape))


@pytest.mark.parametrize("modes", [(1, 1, 1), (2, 1, 3), (4, 2, 1)])
def test_sine_modes_are_exact_eigenvectors(modes):
    g = Grid3(12, 1.5)
    spec = HamiltonianSpec("S", 0.7, _zero_V(g))
    psi = dirichlet_sine_mode(g, modes).astype(complex)
    lam = dirichlet_sine_eigenvalue(g, modes, 0.7)
    res = np.max(np.abs(apply(spec, psi) - lam * psi)) / np.max(np.abs(psi))
    assert res <= 1e-10


def test_sine_eigenvalue_matches_symbol():
    g = Grid3(10, 1.0)
    h, m = 0.5, (1, 2, 3)
    Lp = (g.n + 1) * g.a  # Dirichlet box including the two ghost layers
    symbol = h * h * 2 / g.a**2 * sum(1 - np.cos(np.pi * mj * g.a / Lp) for mj in m)
    assert dirichlet_sine_eigenvalue(g, m, h) == pytest.approx(symbol, rel=1e-12)


def test_matrix_and_matrix_free_apply_agree():
    g = Grid3(8, 1.0)
    A = random_smooth_field(g, 0.7, seed=2)
    spec = HamiltonianSpec("P", 0.8, ScalarField(g, g.radius()), A=A)
    rng = np.random.default_rng(0)
    psi = rng.normal(size=(2,) + g.shape) + 1j * rng.normal(size=(2,) + g.shape)
    assert np.allclose(spec.matrix @ psi.ravel(), apply(spec, psi).ravel(), atol=1e-12)


@pytest.mark.parametrize("kind", ["S", "P"])
def test_hermiticity_for_zero_constant_and_random_fields(kind):
    g = Grid3(10, 2.0)
    V = ScalarField(g, 1 - g.radius() ** 2)
    for A in (None, constant_field_potential(g, (0.0, 0.0, 1.0)), random_smooth_field(g, 1.0, seed=4)):
        assert hermiticity_check(HamiltonianSpec(kind, 0.9, V, A=A)) <= 1e-12


def test_hermiticity_against_dense_transpose():
    g = Grid3(8, 1.0)
    spec = HamiltonianSpec("P", 1.0, _zero_V(g), A=random_smooth_field(g, 1.0, seed=9))
    M = spec.matrix.toarray()
    assert np.max(np.abs(M - M.conj().T)) <= 1e-12


def test_kinetic_part_is_positive_semidefinite():
    g = Grid3(8, 1.0)
    spec = HamiltonianSpec("S", 1.0, _zero_V(g), A=random_smooth_field(g, 2.0, seed=1))
    assert np.linalg.eigvalsh(spec.matrix.toarray()).min() >= -1e-10


@settings(max_examples=6)
@given(seed=st.integers(0, 2**20), h=st.floats(0.3, 2.0))
def test_gauge_covariance_of_spectra(seed, h):
    g = Grid3(8, 1.0)
    rng = np.random.default_rng(seed)
    V = ScalarField(g, 3 - g.radius() ** 2)
    spec = HamiltonianSpec("P", h, V, A=random_smooth_field(g, 0.8, seed=seed))
    eta = ScalarField(g, rng.uniform(-np.pi, np.pi, g.shape))
    a = np.linalg.eigvalsh(spec.matrix.toarray())
    b = np.linalg.eigvalsh(spec.gauge_transformed(eta).matrix.toarray())
    assert np.max(np.abs(a - b)) <= 1e-10


def test_gauge_transform_conjugates_the_operator():
    g = Grid3(8, 1.0)
    h = 0.6
    rng = np.random.default_rng(3)
    eta = ScalarField(g, rng.normal(size=g.shape))
    spec = HamiltonianSpec("S", h, ScalarField(g, g.radius()), A=random_smooth_field(g, 0.5, seed=3))
    psi = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    U = np.exp(-1j * eta.values / h)
    lhs = apply(spec.gauge_transformed(eta), U * psi)
    assert np.max(np.abs(lhs - U * apply(spec, psi))) <= 1e-11


def test_link_phases_reconstruct_from_potential():
    g = Grid3(9, 1.0)
    A = random_smooth_field(g, 1.0, seed=5)
    a = LinkPhases.from_vector_potential(A, 0.5)
    b = LinkPhases.from_vector_potential(A, 0.5)
    assert all(np.array_equal(x, y) for x, y in zip(a.theta, b.theta))
    assert all(np.all(np.isfinite(t)) for t in a.theta)


def test_lattice_field_of_constant_field_is_exact():
    g = Grid3(10, 2.0)
    links = LinkPhases.from_vector_potential(constant_field_potential(g, (0.3, -0.2, 1.0)), 0.7)
    B = lattice_field(links, 0.7)
    assert np.allclose(B.values, np.array([0.3, -0.2, 1.0])[:, None, None, None], atol=1e-12)


def test_pauli_reduces_to_doubled_schroedinger_without_field():
    g = Grid3(8, 1.0)
    V = ScalarField(g, 2 - g.radius() ** 2)
    s = np.linalg.eigvalsh(HamiltonianSpec("S", 1.0, V).matrix.toarray())
    p = np.linalg.eigvalsh(HamiltonianSpec("P", 1.0, V).matrix.toarray())
    assert np.allclose(np.sort(np.repeat(s, 2)), p, atol=1e-10)


def test_pauli_minus_schroedinger_is_bounded_by_zeeman():
    g = Grid3(8, 1.0)
    h = 0.8
    A = random_smooth_field(g, 0.4, seed=8)
    V = _zero_V(g)
    P = HamiltonianSpec("P", h, V, A=A)
    S = HamiltonianSpec("S", h, V, A=A).matrix
    import scipy.sparse as sp
    D = (P.matrix - sp.kron(sp.identity(2), S)).toarray()
    bmax = np.max(np.sqrt(np.sum(P.zeeman.values**2, axis=0)))
    assert np.linalg.norm(D, 2) <= h * bmax * (1 + 1e-12)


def test_oscillator_ground_level_in_constant_field():
    g = Grid3(32, 6.0)
    V = ScalarField(g, -0.25 * g.radius() ** 2)
    spec = HamiltonianSpec("S", 1.0, V, A=constant_field_potential(g, (0.0, 0.0, 1.0)))
    lam = sla.eigsh(spec.matrix, k=1, which="SA", v0=np.ones(g.size, dtype=complex))[0][0]
    assert lam == pytest.approx(np.sqrt(2) + 0.5, rel=0.02)


def test_shape_mismatch_and_bad_h_rejected():
    g = Grid3(8, 1.0)
    spec = HamiltonianSpec("P", 1.0, _zero_V(g))
    with pytest.raises(ValueError):
        apply(spec, np.zeros(g.shape, dtype=complex))
    with pytest.raises(ValueError):
        HamiltonianSpec("S", 0.0, _zero_V(g))
    with pytest.raises(ValueError):
        HamiltonianSpec("S", 1.0, _zero_V(g), A=VectorField.zeros(Grid3(9, 1.0)))


def test_spinor_field_input_returns_spinor_field():
    g = Grid3(8, 1.0)
    spec = HamiltonianSpec("P", 1.0, _zero_V(g))
    out = apply(spec, SpinorField(g, np.ones((2,) + g.shape)))
    assert isinstance(out, SpinorField)
