import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from densmatch.density import Density, fisher_rao_sphere, hellinger_sq, mass, pullback, pushforward
from densmatch.errors import GeometryMismatch, NonPositiveJacobian, ZeroMass
from densmatch.grid import GridGeometry, ScalarGrid, VectorGrid
from densmatch.matching import InverseTransform
from densmatch.phantom import RadialBump, bump_phantom, gaussian_blob, radial_map
from densmatch.validate import naive_fisher_rao_sphere, naive_hellinger_sq


def unit_geom(n):
    return GridGeometry((n,) * 3, (1.0 / (n - 1),) * 3)


def random_density(geom, seed, offset=0.05):
    rng = np.random.default_rng(seed)
    return Density(geom, offset + rng.uniform(size=geom.shape))


def test_density_rejects_negative_values():
    with pytest.raises(ValueError):
        Density(unit_geom(4), -np.ones((4, 4, 4)))


def test_mass_examples():
    g = GridGeometry((10, 10, 10), (1, 1, 1))
    assert mass(Density(g, np.full(g.shape, 2.0))) == 2000.0
    assert mass(Density.zeros(g)) == 0.0


def test_mass_of_gaussian_blob_against_analytic_integral():
    geom = unit_geom(64)
    d = gaussian_blob(geom, geom.center, 0.1, 1.5)
    exact = 1.5 * (np.pi * 0.1**2) ** 1.5
    assert abs(mass(d) - exact) / exact <= 1e-3


# --------------------------------------------------------------------------
# actions


def test_pushforward_identity_is_bitwise():
    d = random_density(unit_geom(12), 0)
    out = pushforward(d, InverseTransform.identity(d.geometry))
    np.testing.assert_array_equal(out.values, d.values)


def test_pushforward_by_doubling_map_on_a_ball():
    n = 33
    geom = unit_geom(n)
    X, c = geom.coordinates(), geom.center.reshape(3, 1, 1, 1)
    r = np.sqrt(((X - c) ** 2).sum(axis=0))
    R, h = 0.15, geom.spacing[0]
    d = Density(geom, np.where(r <= R, 2.0, 0.0))
    # phi(x) = c + 2(x - c): phi^-1(y) = c + (y - c)/2, |D phi^-1| = 1/8
    t = InverseTransform(VectorGrid(geom, c + (X - c) / 2), ScalarGrid.full(geom, 1.0 / 8))
    out = pushforward(d, t)
    assert np.all(out.values[r <= 2 * R - 2 * h] == 2.0 / 8)
    assert np.all(out.values[r >= 2 * R + 2 * h] == 0.0)
    assert abs(mass(out) - mass(d)) / mass(d) <= 1e-12


def test_pushforward_rejects_nonpositive_jacobian():
    geom = unit_geom(5)
    d = Density.zeros(geom)
    t = InverseTransform.identity(geom)
    bad = object.__new__(InverseTransform)
    object.__setattr__(bad, "map", t.map)
    object.__setattr__(bad, "jacdet", ScalarGrid.full(geom, -1.0))
    with pytest.raises(NonPositiveJacobian):
        pushforward(d, bad)


def test_pushforward_conserves_mass_under_phantom_map():
    geom = unit_geom(64)
    i0, _, truth = bump_phantom(geom)
    assert abs(mass(pushforward(i0, truth)) - mass(i0)) / mass(i0) <= 1e-3


def test_pushforward_mass_error_shrinks_under_refinement():
    errs = []
    for n in (24, 48):
        geom = unit_geom(n)
        i0, _, truth = bump_phantom(geom)
        errs.append(abs(mass(pushforward(i0, truth)) / mass(i0) - 1))
    assert errs[1] < errs[0]


def test_pullback_examples():
    geom = unit_geom(9)
    d = random_density(geom, 1)
    np.testing.assert_array_equal(pullback(d, VectorGrid.identity(geom)).values, d.values)
    ones = Density(geom, np.ones(geom.shape))
    np.testing.assert_allclose(pullback(ones, VectorGrid(geom, 2.0 * geom.coordinates())).values, 8.0)


def _round_trip_error(n):
    geom = unit_geom(n)
    b = RadialBump(tuple(geom.center), 0.3, 0.25)
    d = gaussian_blob(geom, geom.center + 0.03, 0.15, 1.0)
    fwd, inv, jac = radial_map(b, geom)
    back = pushforward(pullback(d, fwd), InverseTransform(inv, jac))
    return np.abs(back.values - d.values).max() / d.values.max()


def test_pullback_then_pushforward_round_trip_is_second_order():
    e1, e2 = _round_trip_error(48), _round_trip_error(96)
    assert e2 < 2e-2
    assert 3.0 < e1 / e2 < 5.0


# --------------------------------------------------------------------------
# distances


def test_hellinger_examples():
    geom = GridGeometry((4, 4, 4), (0.25, 0.25, 0.25))
    a = Density(geom, np.ones(geom.shape))
    assert hellinger_sq(a, a) == 0.0
    b = Density(geom, np.full(geom.shape, 4.0))
    assert hellinger_sq(a, b) == pytest.approx(1.0, rel=1e-14)


def test_hellinger_geometry_mismatch():
    with pytest.raises(GeometryMismatch):
        hellinger_sq(Density.zeros(unit_geom(4)), Density.zeros(unit_geom(5)))


def test_hellinger_matches_loop_oracle():
    geom = GridGeometry((16, 16, 16), (0.1, 0.2, 0.15))
    a, b = random_density(geom, 2, 0.0), random_density(geom, 3, 0.0)
    assert hellinger_sq(a, b) == pytest.approx(naive_hellinger_sq(a, b), rel=1e-12)


densities = st.integers(0, 2**31 - 1).map(lambda s: random_density(unit_geom(5), s, 0.0))


@settings(max_examples=40, deadline=None)
@given(densities, densities, densities)
def test_hellinger_metric_properties(a, b, c):
    ab, ba = hellinger_sq(a, b), hellinger_sq(b, a)
    assert ab == ba
    assert ab >= 0.0
    assert hellinger_sq(a, a) == 0.0
    assert np.sqrt(ab) <= np.sqrt(hellinger_sq(a, c)) + np.sqrt(hellinger_sq(c, b)) + 1e-12


def test_fisher_rao_examples():
    geom = GridGeometry((6, 6, 6), (0.2, 0.2, 0.2))
    a = random_density(geom, 4)
    assert fisher_rao_sphere(a, a) == 0.0
    left = np.zeros(geom.shape)
    left[:3] = 1.0
    d = fisher_rao_sphere(Density(geom, left), Density(geom, 1.0 - left))
    assert d == pytest.approx(np.sqrt(geom.volume) * np.pi / 2, rel=1e-14)


def test_fisher_rao_zero_mass():
    geom = unit_geom(4)
    with pytest.raises(ZeroMass):
        fisher_rao_sphere(Density.zeros(geom), random_density(geom, 0))


def test_fisher_rao_matches_loop_oracle():
    geom = GridGeometry((16, 16, 16), (0.1, 0.2, 0.15))
    a, b = random_density(geom, 5), random_density(geom, 6)
    assert fisher_rao_sphere(a, b) == pytest.approx(naive_fisher_rao_sphere(a, b), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(densities, densities, st.floats(0.01, 100.0), st.floats(0.01, 100.0))
def test_fisher_rao_ignores_total_mass(a, b, s, t):
    # inputs are normalised, so only their shapes matter
    scaled = fisher_rao_sphere(Density(a.geometry, s * a.values), Density(b.geometry, t * b.values))
    assert scaled == pytest.approx(fisher_rao_sphere(a, b), rel=1e-9, abs=1e-12)
