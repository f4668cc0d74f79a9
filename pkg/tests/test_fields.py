import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate as quad

from mplab.fields import (
    Grid3, ScalarField, SpinorField, VectorField, curl, divergence, field_energy, gradient,
    grad_tensor_norm2, header_fields, integrate, interior_mask, lp_norm_power, load_checkpoint,
    save_checkpoint,
)


def _trig(grid):
    X, Y, Z = grid.mesh()
    A = np.stack([np.sin(Y) * np.cos(Z), np.sin(Z) * np.cos(X), np.sin(X) * np.cos(Y)])
    return VectorField(grid, A)


def _trig_curl(grid):
    X, Y, Z = grid.mesh()
    # A = (sin y cos z, sin z cos x, sin x cos y)
    cx = -np.sin(X) * np.sin(Y) - np.cos(Z) * np.cos(X)
    cy = -np.sin(Y) * np.sin(Z) - np.cos(X) * np.cos(Y)
    cz = -np.sin(Z) * np.sin(X) - np.cos(Y) * np.cos(Z)
    return np.stack([cx, cy, cz])


def _interior_max(values, grid, margin=1):
    m = interior_mask(grid, margin)
    return float(np.max(np.abs(values[..., m]) if values.ndim == 4 else np.abs(values[m])))


def test_grid_coordinates_and_validation():
    g = Grid3(9, 2.0)
    assert g.a == pytest.approx(0.5)
    assert g.size == 729
    assert np.array_equal(g.axis, -2.0 + 0.5 * np.arange(9))
    X, _, _ = g.mesh()
    assert X[3, 0, 0] == -2.0 + 3 * g.a
    with pytest.raises(ValueError):
        Grid3(4, 1.0)
    with pytest.raises(ValueError):
        Grid3(10, -1.0)


def test_fields_reject_nonfinite_and_are_immutable():
    g = Grid3(8, 1.0)
    with pytest.raises(ValueError):
        ScalarField(g, np.full(g.shape, np.nan))
    f = ScalarField(g, np.ones(g.shape))
    with pytest.raises(ValueError):
        f.values[0, 0, 0] = 2.0


def test_curl_of_linear_field_is_exact():
    g = Grid3(12, 2.0)
    X, Y, Z = g.mesh()
    B = curl(VectorField(g, np.stack([-Y / 2, X / 2, 0 * Z])))
    assert np.max(np.abs(B.values - np.array([0, 0, 1.0])[:, None, None, None])) <= 1e-12


def test_curl_of_gradient_is_second_order_small():
    errs = []
    for n in (24, 48):
        g = Grid3(n, 3.0)
        X, _, _ = g.mesh()
        errs.append(_interior_max(curl(gradient(ScalarField(g, np.sin(X)))).values, g))
    assert errs[-1] <= 10 * Grid3(48, 3.0).a ** 2


def test_curl_converges_at_second_order():
    errs = []
    for n in (16, 31):
        g = Grid3(n, 2.0)
        errs.append(_interior_max(curl(_trig(g)).values - _trig_curl(g), g))
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_divergence_examples():
    g = Grid3(16, 2.0)
    X, Y, Z = g.mesh()
    d = divergence(VectorField(g, np.stack([X, Y, Z])))
    assert np.max(np.abs(d.values - 3.0)) <= 1e-12
    # central differences along different axes commute, so div curl vanishes to rounding
    F = VectorField(g, np.stack([np.sin(Y) * Z, np.cos(Z) * X, np.sin(X * Y)]))
    assert _interior_max(divergence(curl(F)).values, g, margin=2) <= 1e-12


def test_trig_divergence_against_analytic():
    errs = []
    for n in (16, 31):
        g = Grid3(n, 2.0)
        X, Y, Z = g.mesh()
        F = VectorField(g, np.stack([np.sin(X), np.cos(Y), np.sin(2 * Z)]))
        exact = np.cos(X) - np.sin(Y) + 2 * np.cos(2 * Z)
        errs.append(_interior_max(divergence(F).values - exact, g))
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_field_energy_examples():
    g = Grid3(16, 1.5)
    assert field_energy(VectorField.zeros(g), 3.0) == 0.0
    B = VectorField(g, np.broadcast_to(np.array([0, 0, 1.0])[:, None, None, None], (3,) + g.shape))
    assert field_energy(B, 1.0) == pytest.approx((2 * g.L) ** 3, rel=1e-2)
    with pytest.raises(ValueError):
        field_energy(B, -1.0)


def test_field_energy_gaussian_against_quadrature():
    g = Grid3(64, 4.0)
    r2 = g.radius() ** 2
    B = VectorField(g, np.stack([np.exp(-r2), 0 * r2, 0.5 * np.exp(-r2)]))
    # 1.25 * int exp(-2 r^2) over the box, one axis at a time
    one, _ = quad.quad(lambda x: np.exp(-2 * x * x), -4.0, 4.0)
    exact = 1.25 * one**3
    assert field_energy(B, 1.0) == pytest.approx(exact, rel=1e-3)


def test_lp_norm_power_examples():
    g = Grid3(64, 1.2)
    assert lp_norm_power(ScalarField(g, -np.ones(g.shape)), 2.5) == 0.0
    assert lp_norm_power(ScalarField(g, np.ones(g.shape)), 4.0) == pytest.approx((2 * g.L) ** 3)
    f = ScalarField(g, np.maximum(1 - g.radius() ** 2, 0.0))
    radial, _ = quad.quad(lambda r: 4 * np.pi * r * r * (1 - r * r) ** 2.5, 0.0, 1.0)
    assert lp_norm_power(f, 2.5) == pytest.approx(radial, rel=1e-3)
    with pytest.raises(ValueError):
        lp_norm_power(f, 0.0)


@given(beta=st.floats(0.0, 1e3), seed=st.integers(0, 2**16))
def test_field_energy_is_linear_in_beta(beta, seed):
    g = Grid3(8, 1.0)
    B = VectorField(g, np.random.default_rng(seed).normal(size=(3,) + g.shape))
    assert field_energy(B, beta) == pytest.approx(beta * field_energy(B, 1.0), rel=1e-14, abs=0)


def test_reductions_are_deterministic():
    g = Grid3(20, 1.0)
    v = np.random.default_rng(0).normal(size=g.shape)
    assert integrate(v, g) == integrate(v.copy(), g)


def test_grad_tensor_identity_on_compact_field():
    # compactly supported smooth field: the identity holds to discretization error
    g = Grid3(40, 2.0)
    X, Y, Z = g.mesh()
    bump = np.exp(-4 * (X * X + Y * Y + Z * Z))
    A = VectorField(g, np.stack([Y * bump, -X * Z * bump, np.sin(X) * bump]))
    lhs = grad_tensor_norm2(A)
    rhs = integrate(curl(A).magnitude2(), g) + integrate(divergence(A).values ** 2, g)
    assert lhs == pytest.approx(rhs, rel=1e-2)


@pytest.mark.parametrize("kind", ["scalar", "vector", "spinor"])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, kind):
    g = Grid3(9, 1.25)
    rng = np.random.default_rng(5)
    if kind == "scalar":
        f = ScalarField(g, rng.normal(size=g.shape))
    elif kind == "vector":
        f = VectorField(g, rng.normal(size=(3,) + g.shape))
    else:
        f = SpinorField(g, rng.normal(size=(2,) + g.shape) + 1j * rng.normal(size=(2,) + g.shape))
    p = tmp_path / "f.bin"
    save_checkpoint(f, p)
    back = load_checkpoint(p)
    assert back.kind == kind and back.grid == g
    assert np.array_equal(back.values, f.values)
    assert header_fields(p) == (kind, 9, 1.25)
    assert p.read_bytes().startswith(f"MPLAB1 {kind} 9 1.25\n".encode())


def test_spinor_normalization():
    g = Grid3(8, 1.0)
    psi = SpinorField(g, np.ones((2,) + g.shape, dtype=complex)).normalized()
    assert psi.norm() == pytest.approx(1.0, abs=1e-14)
