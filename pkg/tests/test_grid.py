import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from densmatch.errors import GeometryMismatch
from densmatch.grid import (
    GridGeometry,
    ScalarGrid,
    VectorGrid,
    check_geometry,
    divergence,
    divergence_transpose,
    gradient,
    interpolate,
    jacobian_determinant_fd,
    sample_trilinear,
    sample_trilinear_vec,
)

GEOM = GridGeometry((9, 7, 6), (0.5, 0.25, 0.4), (-1.0, 2.0, 0.5))


def affine_field(geom, coef=(2.0, 3.0, -1.0), const=0.7):
    X = geom.coordinates()
    return sum(c * X[a] for a, c in enumerate(coef)) + const


# --------------------------------------------------------------------------
# geometry and containers


def test_geometry_rejects_bad_dims_and_spacing():
    with pytest.raises(ValueError):
        GridGeometry((1, 4, 4), (1, 1, 1))
    with pytest.raises(ValueError):
        GridGeometry((4, 4, 4), (1, 0, 1))
    with pytest.raises(ValueError):
        GridGeometry((4, 4), (1, 1, 1))


def test_voxel_volume_and_volume():
    g = GridGeometry((10, 10, 10), (1.0, 2.0, 0.5))
    assert g.voxel_volume == 1.0
    assert g.volume == 1000.0


def test_flat_values_are_x_fastest():
    g = GridGeometry((3, 2, 2), (1, 1, 1))
    s = ScalarGrid(g, np.arange(12.0))
    assert s.values[1, 0, 0] == 1.0
    assert s.values[0, 1, 0] == 3.0
    assert s.values[0, 0, 1] == 6.0
    np.testing.assert_array_equal(s.flat(), np.arange(12.0))


def test_scalar_grid_rejects_wrong_length_and_nonfinite():
    g = GridGeometry((3, 3, 3), (1, 1, 1))
    with pytest.raises(ValueError):
        ScalarGrid(g, np.zeros(26))
    bad = np.zeros(27)
    bad[4] = np.nan
    with pytest.raises(ValueError):
        ScalarGrid(g, bad)
    with pytest.raises(ValueError):
        VectorGrid(g, np.full((3, 3, 3, 3), np.inf))


def test_grids_are_immutable_copies():
    g = GridGeometry((3, 3, 3), (1, 1, 1))
    src = np.ones((3, 3, 3))
    s = ScalarGrid(g, src)
    src[0, 0, 0] = 5.0
    assert s.values[0, 0, 0] == 1.0
    with pytest.raises(ValueError):
        s.values[0, 0, 0] = 2.0


def test_check_geometry_mismatch():
    a = ScalarGrid.zeros(GridGeometry((4, 4, 4), (1, 1, 1)))
    b = ScalarGrid.zeros(GridGeometry((4, 4, 4), (1, 1, 2)))
    with pytest.raises(GeometryMismatch):
        check_geometry(a, b)


# --------------------------------------------------------------------------
# interpolation


def test_node_points_reproduce_values_bitwise():
    rng = np.random.default_rng(0)
    g = ScalarGrid(GEOM, rng.normal(size=GEOM.shape))
    out = interpolate(g.values, GEOM, GEOM.coordinates())
    np.testing.assert_array_equal(out, g.values)


def test_midpoint_between_x_neighbours():
    geom = GridGeometry((2, 2, 2), (1, 1, 1))
    vals = np.zeros((2, 2, 2))
    vals[0] = 1.0
    vals[1] = 3.0
    assert sample_trilinear(ScalarGrid(geom, vals), (0.5, 0.0, 0.0)) == 2.0


def test_affine_field_exact_at_random_interior_points():
    rng = np.random.default_rng(1)
    g = ScalarGrid(GEOM, affine_field(GEOM))
    lo, hi = np.asarray(GEOM.origin), GEOM.upper
    for _ in range(50):
        p = lo + rng.uniform(size=3) * (hi - lo)
        expected = 2 * p[0] + 3 * p[1] - p[2] + 0.7
        assert abs(sample_trilinear(g, p) - expected) <= 1e-12


def test_identity_map_vector_sampling():
    ident = VectorGrid.identity(GEOM)
    p = np.array([0.3, 2.6, 1.1])
    np.testing.assert_allclose(sample_trilinear_vec(ident, p), p, atol=1e-13)
    node = GEOM.coordinates()[:, 2, 3, 1]
    np.testing.assert_array_equal(sample_trilinear_vec(ident, node), node)


def test_affine_map_field_sampling():
    A = np.array([[1.1, 0.2, 0.0], [-0.1, 0.9, 0.3], [0.0, 0.05, 1.2]])
    b = np.array([0.1, -0.2, 0.3])
    X = GEOM.coordinates()
    field = VectorGrid(GEOM, np.einsum("ij,j...->i...", A, X) + b.reshape(3, 1, 1, 1))
    p = np.array([0.7, 2.9, 1.3])
    np.testing.assert_allclose(sample_trilinear_vec(field, p), A @ p + b, atol=1e-12)


def test_out_of_domain_points_clamp_to_boundary():
    g = ScalarGrid(GEOM, affine_field(GEOM))
    inside = np.array([GEOM.origin[0], 2.5, 1.0])
    outside = inside - np.array([3.0, 0.0, 0.0])
    assert sample_trilinear(g, outside) == sample_trilinear(g, inside)


def test_interpolation_gradient_of_affine_field():
    g = affine_field(GEOM)
    pts = np.array([[0.3, 0.9], [2.6, 3.1], [1.1, 2.0]])
    _, grad = interpolate(g, GEOM, pts, gradient=True)
    np.testing.assert_allclose(grad, np.array([[2, 2], [3, 3], [-1, -1]]), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3), st.integers(0, 2**31 - 1))
def test_interpolant_bounded_by_cell_corners(frac, seed):
    # trilinear weights are a partition of unity: no overshoot
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=GEOM.shape)
    p = np.asarray(GEOM.origin) + np.asarray(frac) * (GEOM.upper - np.asarray(GEOM.origin))
    v = sample_trilinear(ScalarGrid(GEOM, vals), p)
    assert vals.min() - 1e-12 <= v <= vals.max() + 1e-12


@settings(max_examples=40, deadline=None)
@given(
    st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2),
    st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3),
)
def test_affine_reproduction_property(a, b, c, d, frac):
    g = ScalarGrid(GEOM, affine_field(GEOM, (a, b, c), d))
    p = np.asarray(GEOM.origin) + np.asarray(frac) * (GEOM.upper - np.asarray(GEOM.origin))
    assert sample_trilinear(g, p) == pytest.approx(a * p[0] + b * p[1] + c * p[2] + d, abs=1e-11)


# --------------------------------------------------------------------------
# differences


def test_gradient_of_constant_is_zero():
    assert not gradient(ScalarGrid.full(GEOM, 3.0)).components.any()


def test_gradient_of_linear_field():
    X = GEOM.coordinates()
    grad = gradient(ScalarGrid(GEOM, 5.0 * X[0])).components
    np.testing.assert_allclose(grad[0], 5.0, rtol=1e-12)
    np.testing.assert_allclose(grad[1:], 0.0, atol=1e-12)


def _sin_gradient_error(n):
    geom = GridGeometry((n, 4, 4), (1.0 / n, 1.0, 1.0))
    X = geom.coordinates()
    L = n * geom.spacing[0]
    g = ScalarGrid(geom, np.sin(2 * np.pi * X[0] / L))
    exact = 2 * np.pi / L * np.cos(2 * np.pi * X[0] / L)
    err = np.abs(gradient(g).components[0] - exact)[1:-1]
    return err.max()


def test_gradient_second_order_on_sine():
    e1, e2 = _sin_gradient_error(32), _sin_gradient_error(64)
    assert 3.5 < e1 / e2 < 4.5


def test_divergence_examples():
    assert not divergence(VectorGrid(GEOM, np.ones((3,) + GEOM.shape))).values.any()
    np.testing.assert_allclose(divergence(VectorGrid.identity(GEOM)).values, 3.0, rtol=1e-12)


def _compact(geom, rng, margin=2):
    w = np.zeros(geom.shape)
    w[margin:-margin, margin:-margin, margin:-margin] = 1.0
    return rng.normal(size=(3,) + geom.shape) * w


def test_summation_by_parts_for_compact_fields():
    rng = np.random.default_rng(3)
    geom = GridGeometry((12, 10, 11), (0.3, 0.5, 0.2))
    a = ScalarGrid(geom, np.sin(geom.coordinates()).sum(axis=0))
    v = VectorGrid(geom, _compact(geom, rng))
    dv = geom.voxel_volume
    lhs = np.sum(gradient(a).components * v.components) * dv
    rhs = np.sum(a.values * divergence(v).values) * dv
    norm = np.sqrt(np.sum(a.values**2) * dv) * np.sqrt(np.sum(v.components**2) * dv)
    assert abs(lhs + rhs) <= 1e-10 * norm


def test_divergence_transpose_is_exact_adjoint():
    rng = np.random.default_rng(4)
    c = rng.normal(size=GEOM.shape)
    w = VectorGrid(GEOM, rng.normal(size=(3,) + GEOM.shape))
    lhs = np.sum(c * divergence(w).values)
    rhs = np.sum(divergence_transpose(c, GEOM) * w.components)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_jacobian_determinant_examples():
    assert np.allclose(jacobian_determinant_fd(VectorGrid.identity(GEOM)).values, 1.0)
    doubled = VectorGrid(GEOM, 2.0 * GEOM.coordinates())
    np.testing.assert_allclose(jacobian_determinant_fd(doubled).values[1:-1, 1:-1, 1:-1], 8.0)


def test_operations_do_not_mutate_inputs():
    rng = np.random.default_rng(5)
    vals = rng.normal(size=GEOM.shape)
    g = ScalarGrid(GEOM, vals)
    before = g.values.copy()
    gradient(g)
    interpolate(g.values, GEOM, GEOM.coordinates() + 0.1)
    np.testing.assert_array_equal(g.values, before)
