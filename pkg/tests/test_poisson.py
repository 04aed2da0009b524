import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from densmatch.errors import GeometryMismatch
from densmatch.grid import GridGeometry, VectorGrid
from densmatch.poisson import SpectralSolver, apply_neg_laplacian, inv_neg_laplacian

GEOM = GridGeometry((16, 12, 10), (0.1, 0.15, 0.2))


def zero_mean_field(geom, seed):
    u = np.random.default_rng(seed).normal(size=(3,) + geom.shape)
    return VectorGrid(geom, u - u.mean(axis=(1, 2, 3), keepdims=True))


def stencil_oracle(v, spacing):
    # periodic 7-point -Δ by explicit wrapped index arithmetic
    out = np.zeros_like(v)
    nx, ny, nz = v.shape
    h = spacing
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                c = 2.0 * v[i, j, k]
                out[i, j, k] = (
                    (c - v[(i - 1) % nx, j, k] - v[(i + 1) % nx, j, k]) / h[0] ** 2
                    + (c - v[i, (j - 1) % ny, k] - v[i, (j + 1) % ny, k]) / h[1] ** 2
                    + (c - v[i, j, (k - 1) % nz] - v[i, j, (k + 1) % nz]) / h[2] ** 2
                )
    return out


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_eigenvalues_nonnegative_with_single_zero():
    lam = SpectralSolver(GEOM).eigenvalues
    assert (lam >= 0).all()
    assert np.count_nonzero(lam == 0) == 1
    assert lam[0, 0, 0] == 0.0


def test_rejects_negative_gamma():
    with pytest.raises(ValueError):
        SpectralSolver(GEOM, gamma=-1.0)


def test_single_fourier_mode_is_scaled_by_symbol():
    s = SpectralSolver(GEOM)
    nx = GEOM.dims[0]
    x = np.arange(nx)[:, None, None] * np.ones(GEOM.shape)
    mode = np.sin(2 * np.pi * x / nx)
    u = VectorGrid(GEOM, np.stack([mode, 0 * mode, 0 * mode]))
    lam = (2 - 2 * np.cos(2 * np.pi / nx)) / GEOM.spacing[0] ** 2
    v = inv_neg_laplacian(s, u).components
    np.testing.assert_allclose(v[0], mode / lam, atol=1e-13 / lam)
    np.testing.assert_allclose(v[1:], 0.0, atol=1e-14)
    np.testing.assert_allclose(apply_neg_laplacian(s, u).components[0], lam * mode, atol=1e-10 * lam)


def test_constant_field_maps_to_zero():
    s = SpectralSolver(GEOM)
    c = VectorGrid(GEOM, np.ones((3,) + GEOM.shape) * np.array([1.0, -2.0, 3.0])[:, None, None, None])
    assert np.abs(inv_neg_laplacian(s, c).components).max() <= 1e-12
    assert np.abs(apply_neg_laplacian(s, c).components).max() <= 1e-9


def test_residual_against_independent_stencil():
    s = SpectralSolver(GEOM)
    u = zero_mean_field(GEOM, 0)
    v = inv_neg_laplacian(s, u).components
    for a in range(3):
        assert rel(stencil_oracle(v[a], GEOM.spacing), u.components[a]) <= 1e-10


def test_apply_matches_independent_stencil():
    v = np.random.default_rng(1).normal(size=(3,) + GEOM.shape)
    out = apply_neg_laplacian(SpectralSolver(GEOM), VectorGrid(GEOM, v)).components
    assert rel(out[2], stencil_oracle(v[2], GEOM.spacing)) <= 1e-13


def test_round_trips_both_ways():
    s = SpectralSolver(GEOM)
    u = zero_mean_field(GEOM, 2)
    assert rel(apply_neg_laplacian(s, inv_neg_laplacian(s, u)).components, u.components) <= 1e-10
    assert rel(inv_neg_laplacian(s, apply_neg_laplacian(s, u)).components, u.components) <= 1e-10


def test_metric_identity():
    s = SpectralSolver(GEOM)
    u = zero_mean_field(GEOM, 3)
    v = inv_neg_laplacian(s, u)
    lhs = np.sum(apply_neg_laplacian(s, v).components * v.components)
    rhs = np.sum(u.components * v.components)
    assert lhs == pytest.approx(rhs, rel=1e-8)
    assert rhs > 0


def test_gamma_makes_operator_invertible_on_means():
    s = SpectralSolver(GEOM, gamma=2.0)
    c = VectorGrid(GEOM, np.ones((3,) + GEOM.shape))
    np.testing.assert_allclose(s.solve(c).components, 0.5, rtol=1e-12)
    u = VectorGrid(GEOM, np.random.default_rng(4).normal(size=(3,) + GEOM.shape))
    assert rel(s.apply(s.solve(u)).components, u.components) <= 1e-10


def test_geometry_mismatch():
    s = SpectralSolver(GEOM)
    with pytest.raises(GeometryMismatch):
        s.solve(VectorGrid.identity(GridGeometry((4, 4, 4), (1, 1, 1))))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-5, 5), st.floats(-5, 5))
def test_solver_is_linear(seed, a, b):
    s = SpectralSolver(GEOM)
    u1, u2 = zero_mean_field(GEOM, seed), zero_mean_field(GEOM, seed + 1)
    lhs = s.solve(VectorGrid(GEOM, a * u1.components + b * u2.components)).components
    rhs = a * s.solve(u1).components + b * s.solve(u2).components
    scale = np.abs(s.solve(u1).components).max() + np.abs(s.solve(u2).components).max()
    assert np.abs(lhs - rhs).max() <= 1e-12 * (abs(a) + abs(b) + 1) * scale
