import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mplab.fields import Grid3, ScalarField, divergence, interior_mask
from mplab.hamiltonian import HamiltonianSpec, _axis_slices, dirichlet_sine_mode
from mplab.maxwell import constant_field_potential, random_smooth_field
from mplab.spectrum import (
    SpectralProjector, current, density, link_currents, negative_spectrum, spin_density,
    weyl_count_estimate,
)


def _well(g, depth=3.0):
    return ScalarField(g, depth - g.radius() ** 2)


def test_confining_shift_has_no_negative_eigenvalues():
    g = Grid3(10, 1.0)
    ns = negative_spectrum(HamiltonianSpec("P", 1.0, ScalarField(g, -np.ones(g.shape))))
    assert ns.count == 0 and ns.sum_negative == 0.0 and ns.converged


@pytest.mark.parametrize("kind", ["S", "P"])
def test_sparse_and_dense_paths_agree(kind):
    g = Grid3(10, 1.5)
    spec = HamiltonianSpec(kind, 0.6, _well(g), A=random_smooth_field(g, 0.5, seed=1))
    dense = negative_spectrum(spec, tol=1e-10, dense_limit=10**5)
    sparse = negative_spectrum(spec, tol=1e-10, dense_limit=0)
    assert dense.count == sparse.count >= 1
    assert np.max(np.abs(dense.eigenvalues - sparse.eigenvalues)) <= 1e-8
    assert dense.method == "dense"


def test_sum_is_the_shifted_eigenvalue_sum():
    g = Grid3(10, 1.5)
    spec = HamiltonianSpec("S", 0.6, _well(g))
    full = np.linalg.eigvalsh(spec.matrix.toarray())
    mu = 0.4
    ns = negative_spectrum(spec, threshold=mu)
    assert ns.sum_negative == pytest.approx(np.sum(np.minimum(full - mu, 0.0)), abs=1e-10)
    assert ns.count == np.sum(full < mu)


def test_projector_is_orthonormal_with_small_residuals():
    g = Grid3(14, 1.5)
    spec = HamiltonianSpec("P", 0.5, _well(g), A=random_smooth_field(g, 0.4, seed=7))
    ns = negative_spectrum(spec, tol=1e-10, dense_limit=0)
    P = ns.projector
    assert np.max(np.abs(P.gram() - np.eye(P.count))) <= 1e-10
    assert ns.converged and ns.residual_max <= 1e-10 * (np.abs(ns.eigenvalues).max() + 1)


def test_pauli_without_field_is_spin_degenerate():
    g = Grid3(16, 1.5)
    ns = negative_spectrum(HamiltonianSpec("P", 0.5, _well(g)), dense_limit=0)
    assert ns.count % 2 == 0 and ns.count > 0
    assert np.max(np.abs(ns.eigenvalues[0::2] - ns.eigenvalues[1::2])) <= 1e-8


@settings(max_examples=5)
@given(seed=st.integers(0, 2**20))
def test_sum_negative_is_gauge_invariant(seed):
    g = Grid3(8, 1.5)
    spec = HamiltonianSpec("P", 0.6, _well(g), A=random_smooth_field(g, 0.5, seed=seed))
    eta = ScalarField(g, np.random.default_rng(seed).uniform(-np.pi, np.pi, g.shape))
    a = negative_spectrum(spec, tol=1e-12)
    b = negative_spectrum(spec.gauge_transformed(eta), tol=1e-12)
    assert abs(a.sum_negative - b.sum_negative) <= 1e-10


def test_enlarging_the_box_never_raises_eigenvalues():
    small, big = Grid3(9, 1.0), Grid3(17, 2.0)
    assert small.a == pytest.approx(big.a)
    V = lambda g: ScalarField(g, np.where(g.radius() < 1.0, 20.0, 0.0))
    a = negative_spectrum(HamiltonianSpec("S", 0.5, V(small)), tol=1e-11).eigenvalues
    b = negative_spectrum(HamiltonianSpec("S", 0.5, V(big)), tol=1e-11).eigenvalues
    assert len(b) >= len(a)
    assert np.all(b[: len(a)] <= a + 1e-9)


def test_ambiguity_flag_near_the_cut():
    g = Grid3(10, 1.0)
    spec = HamiltonianSpec("S", 0.5, _well(g))
    lam0 = negative_spectrum(spec, threshold=5.0).eigenvalues[0]
    assert negative_spectrum(spec, threshold=lam0 + 1e-12, tol=1e-9).ambiguous
    assert not negative_spectrum(spec, threshold=lam0 + 1e-3, tol=1e-9).ambiguous


def test_weyl_estimate_counts_phase_space_volume():
    g = Grid3(16, 2.0)
    V = ScalarField(g, np.ones(g.shape))
    spec = HamiltonianSpec("S", 0.5, V)
    vol = g.size * g.cell_volume
    assert weyl_count_estimate(spec) == pytest.approx(vol / (6 * np.pi**2 * 0.125), rel=0.05)


def test_density_integrates_to_the_occupation():
    g = Grid3(12, 1.0)
    modes = [(1, 1, 1), (2, 1, 1), (1, 3, 2)]
    states = [dirichlet_sine_mode(g, m) for m in modes]
    states = [s / np.sqrt(np.sum(s * s) * g.cell_volume) for s in states]
    rho1 = density(SpectralProjector.from_states(g, "S", states[:1]))
    rho3 = density(SpectralProjector.from_states(g, "S", states))
    total = lambda r: float(np.sum(r.values) * g.cell_volume)
    assert total(rho1) == pytest.approx(1.0, abs=1e-10)
    assert total(rho3) == pytest.approx(3.0, abs=1e-10)


def test_oscillator_ground_density_is_gaussian():
    g = Grid3(48, 6.0)
    spec = HamiltonianSpec("S", 1.0, ScalarField(g, -0.25 * g.radius() ** 2))
    ns = negative_spectrum(spec, threshold=2.0, tol=1e-9)
    assert ns.count == 1
    rho = density(ns.projector).values
    exact = np.exp(-0.5 * g.radius() ** 2) / (2 * np.pi) ** 1.5
    err = np.sqrt(np.sum((rho - exact) ** 2)) / np.sqrt(np.sum(exact**2))
    assert err <= 0.02


def test_real_state_without_field_carries_no_current():
    g = Grid3(12, 1.5)
    spec = HamiltonianSpec("S", 0.5, _well(g))
    P = negative_spectrum(spec).projector
    assert np.max(np.abs(current(P, spec).values)) <= 1e-10


def test_plane_wave_current():
    errs = []
    k, h = np.array([0.4, -0.3, 0.2]), 0.5
    for n in (16, 31):
        g = Grid3(n, 2.0)
        X, Y, Z = g.mesh()
        env = np.exp(-(X * X + Y * Y + Z * Z))
        psi = env * np.exp(1j * (k[0] * X + k[1] * Y + k[2] * Z) / h)
        psi /= np.sqrt(np.sum(np.abs(psi) ** 2) * g.cell_volume)
        spec = HamiltonianSpec("S", h, ScalarField(g, np.zeros(g.shape)))
        J = current(SpectralProjector.from_states(g, "S", [psi]), spec).values
        exact = -k[:, None, None, None] * np.abs(psi) ** 2
        m = interior_mask(g, 2)
        errs.append(np.max(np.abs(J - exact)[:, m]) / np.max(np.abs(exact)))
    assert errs[1] < errs[0] / 3
    assert errs[1] <= 2e-2


def _link_divergence(q, grid):
    out = np.zeros(grid.shape)
    for j in range(3):
        lo, hi = _axis_slices(j)
        out[lo] += q[j]
        out[hi] -= q[j]
    return out


def test_stationary_link_current_is_conserved_exactly():
    g = Grid3(14, 5.0)
    spec = HamiltonianSpec("S", 1.0, ScalarField(g, 2.5 - 0.25 * g.radius() ** 2),
                           A=constant_field_potential(g, (0.0, 0.0, 1.0)))
    P = negative_spectrum(spec, tol=1e-12).projector
    assert P.count >= 2
    for k in range(P.count):
        single = SpectralProjector(g, "S", P.eigenvalues[k:k + 1], P.vectors[k:k + 1])
        q = link_currents(single, spec.links)
        scale = max(np.max(np.abs(x)) for x in q)
        assert scale > 1e-6
        assert np.max(np.abs(_link_divergence(q, g))) <= 1e-9 * scale


def test_nodal_current_divergence_shrinks_under_refinement():
    errs = []
    for n in (16, 24):
        g = Grid3(n, 5.0)
        spec = HamiltonianSpec("S", 1.0, ScalarField(g, 2.5 - 0.25 * g.radius() ** 2),
                               A=constant_field_potential(g, (0.0, 0.0, 1.0)))
        P = negative_spectrum(spec, tol=1e-11).projector
        J = current(P, spec)
        m = interior_mask(g, 2)
        errs.append(np.max(np.abs(divergence(J).values[m])) / np.max(np.abs(J.values)))
    assert errs[1] < errs[0]


def test_spin_density_requires_pauli():
    g = Grid3(8, 1.0)
    with pytest.raises(ValueError):
        spin_density(SpectralProjector.from_states(g, "S", [np.ones(g.shape)]))
