import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as quad

from mplab.fields import Grid3, ScalarField, VectorField
from mplab.bounds import (
    BoundReport, check_lt_constant, fit_power, lieb_thirring_rhs, oscillator_levels, oscillator_trace,
    oscillator_trace_closed_form, stability_lower, weyl_value, write_reports,
)

G = Grid3(64, 1.2)
BUMP = ScalarField(G, np.maximum(1 - G.radius() ** 2, 0.0))


def _radial(p):
    return quad.quad(lambda r: 4 * np.pi * r * r * (1 - r * r) ** p, 0, 1)[0]


def test_weyl_value_examples():
    assert weyl_value(ScalarField(G, -np.ones(G.shape)), "P") == 0.0
    assert weyl_value(BUMP, "P") == 2 * weyl_value(BUMP, "S")
    assert weyl_value(BUMP, "S") == pytest.approx(-_radial(2.5) / (15 * np.pi**2), rel=1e-3)


@settings(max_examples=10)
@given(shift=st.floats(0.0, 2.0), seed=st.integers(0, 1000))
def test_weyl_value_is_monotone(shift, seed):
    g = Grid3(8, 1.0)
    v1 = np.random.default_rng(seed).normal(size=g.shape)
    lo, hi = ScalarField(g, v1), ScalarField(g, v1 + shift)
    assert weyl_value(lo) >= weyl_value(hi)


def test_weyl_value_homogeneity():
    assert weyl_value(BUMP * 3.0) == pytest.approx(3.0**2.5 * weyl_value(BUMP), rel=1e-12)


def test_lieb_thirring_terms():
    zero = lieb_thirring_rhs(BUMP, VectorField.zeros(G), 0.5)
    assert zero.second == 0.0
    assert zero.first == pytest.approx(-_radial(2.5) / 0.125, rel=1e-3)
    B = VectorField(G, np.stack([np.exp(-G.radius() ** 2), 0 * BUMP.values, 0 * BUMP.values]))
    one = lieb_thirring_rhs(BUMP, B, 0.5)
    two = lieb_thirring_rhs(BUMP, B * 2.0, 0.5)
    assert two.second == pytest.approx(2.0**1.5 * one.second, rel=1e-12)
    with pytest.raises(ValueError):
        lieb_thirring_rhs(BUMP, B, 0.0)


@given(t=st.floats(0.1, 10.0))
def test_lieb_thirring_second_term_homogeneity(t):
    g = Grid3(8, 1.0)
    V = ScalarField(g, 1 - g.radius() ** 2)
    B = VectorField(g, np.ones((3,) + g.shape))
    assert lieb_thirring_rhs(V, B * t, 0.7).second == pytest.approx(
        t**1.5 * lieb_thirring_rhs(V, B, 0.7).second, rel=1e-12)


def test_lieb_thirring_terms_against_quadrature():
    h = 0.6
    B = VectorField(G, np.stack([np.exp(-G.radius() ** 2)] * 3))
    terms = lieb_thirring_rhs(BUMP, B, h)
    one = quad.quad(lambda x: np.exp(-2 * x * x), -1.2, 1.2)[0]
    b2 = 3 * one**3
    expected = -((b2 / h**2) ** 0.75) * _radial(4.0) ** 0.25
    assert terms.second == pytest.approx(expected, rel=2e-3)


def test_stability_lower_examples():
    a = stability_lower(BUMP, 1.0, 1.0)
    assert a.first == pytest.approx(-_radial(2.5), rel=1e-3)
    assert a.second == pytest.approx(-_radial(4.0), rel=1e-3)
    half = stability_lower(BUMP, 0.5, 1.0)
    assert half.second == pytest.approx(8 * a.second, rel=1e-14)
    big = stability_lower(BUMP, 1e8, 1.0)
    assert big.total == pytest.approx(big.first, rel=1e-12)


def test_oscillator_levels_examples():
    lv = oscillator_levels(0.0, 20)
    assert lv[0] == 1.5
    assert np.allclose(lv[1:4], 2.5) and np.allclose(lv[4:10], 3.5)
    assert oscillator_levels(1.0, 1)[0] == pytest.approx(np.sqrt(2) + 0.5, abs=1e-15)
    assert oscillator_trace(1.0) == pytest.approx(3 * np.sqrt(2) - 5, abs=1e-14)
    with pytest.raises(ValueError):
        oscillator_levels(-1.0, 3)


def test_oscillator_degeneracies_at_zero_field():
    lv = oscillator_levels(0.0, 56)
    for k in range(5):
        assert np.sum(np.isclose(lv, k + 1.5)) == (k + 1) * (k + 2) // 2


@given(B=st.floats(0.0, 4.0 / 3.0))
def test_closed_form_matches_level_sum_in_window(B):
    assert oscillator_trace_closed_form(B) == pytest.approx(oscillator_trace(B), abs=1e-12)


def test_closed_form_window_is_sharp():
    # just above 4/3 the second level leaves the window below 5/2
    B = 4.0 / 3.0 + 0.05
    lv = oscillator_levels(B, 4)
    assert np.sum(lv < 2.5) == 1
    assert np.sum(oscillator_levels(4.0 / 3.0 - 0.05, 4) < 2.5) == 2
    assert oscillator_trace_closed_form(B) == oscillator_trace(B)
    assert oscillator_trace_closed_form(B) != pytest.approx(3 * np.sqrt(1 + B * B) - 4 - B)


@given(B=st.floats(0.0, 3.0))
def test_levels_sorted_and_above_ground(B):
    lv = oscillator_levels(B, 30)
    assert np.all(np.diff(lv) >= 0)
    assert lv[0] == pytest.approx(np.sqrt(1 + B * B) + 0.5, abs=1e-12)


def test_check_lt_constant_extracts_the_smallest_constant():
    g = Grid3(8, 1.0)
    V = ScalarField(g, 1 - g.radius() ** 2)
    B0 = VectorField.zeros(g)
    samples = [(V, B0, 1.0), (V * 2.0, B0, 1.0), (V * -1.0, B0, 1.0)]
    rhs = [lieb_thirring_rhs(*s).total for s in samples[:2]]
    traces = [0.3 * rhs[0], 0.5 * rhs[1], 0.0]
    rep = check_lt_constant(samples, traces)
    assert rep.empirical_C == pytest.approx(0.5)
    assert rep.satisfied
    assert "trivial" in rep.details[2].flags
    with pytest.raises(ValueError):
        check_lt_constant(samples, traces[:2])


def test_fit_power_recovers_exponent():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    slope, r2 = fit_power(x, 3 * x**0.75)
    assert slope == pytest.approx(0.75) and r2 == pytest.approx(1.0)


def test_bound_report_csv(tmp_path):
    reps = [BoundReport("a", 1.0, 0.5, 2.0), BoundReport("b", -1.0, 0.0)]
    p = tmp_path / "r.csv"
    write_reports(reps, p)
    rows = list(csv.DictReader(open(p)))
    assert list(rows[0]) == ["name", "lhs", "rhs", "empirical_C", "satisfied"]
    assert [r["satisfied"] for r in rows] == ["true", "false"]
