"""Spectral inverse of the negative vector Laplacian on a periodic grid.

On a flat torus the vector Laplacian acts componentwise, so each Cartesian
component is solved as a scalar Poisson problem.  The symbol used is the exact
eigenvalue of the 7-point stencil,

    lambda(k) = sum_a (2 - 2 cos(2 pi k_a / n_a)) / h_a**2,

so that :meth:`SpectralSolver.apply` and :meth:`SpectralSolver.solve` are
mutual inverses up to round-off on zero-mean fields.
"""
from __future__ import annotations

import numpy as np

from densmatch.errors import GeometryMismatch
from densmatch.grid import GridGeometry, VectorGrid


class SpectralSolver:
    """Solves ``(-Δ + gamma) v = u`` with periodic boundary conditions.

    Parameters
    ----------
    geometry : GridGeometry
    gamma : float, optional
        Tikhonov shift.  With ``gamma == 0`` the constant mode of the solution
        is set to zero, which also removes any net translation from a
        velocity field.
    """

    def __init__(self, geometry: GridGeometry, gamma: float = 0.0):
        if gamma < 0:
            raise ValueError("gamma must be >= 0")
        self.geometry = geometry
        self.gamma = float(gamma)
        nx, ny, nz = geometry.dims
        hx, hy, hz = geometry.spacing
        kx = np.arange(nx)[:, None, None]
        ky = np.arange(ny)[None, :, None]
        kz = np.arange(nz // 2 + 1)[None, None, :]
        lam = (
            (2.0 - 2.0 * np.cos(2.0 * np.pi * kx / nx)) / hx**2
            + (2.0 - 2.0 * np.cos(2.0 * np.pi * ky / ny)) / hy**2
            + (2.0 - 2.0 * np.cos(2.0 * np.pi * kz / nz)) / hz**2
        )
        # cos(0) is exact, so the zero frequency is exactly 0
        self.eigenvalues = lam
        denom = lam + self.gamma
        if self.gamma == 0.0:
            denom = denom.copy()
            denom[0, 0, 0] = np.inf
        self._inv_symbol = 1.0 / denom
        self.eigenvalues.flags.writeable = False

    def _check(self, u: VectorGrid):
        if not self.geometry.matches(u.geometry):
            raise GeometryMismatch("field geometry does not match the solver")

    def solve_scalar(self, u: np.ndarray) -> np.ndarray:
        uh = np.fft.rfftn(u)
        uh *= self._inv_symbol
        return np.fft.irfftn(uh, s=u.shape, axes=(0, 1, 2))

    def solve(self, u: VectorGrid) -> VectorGrid:
        """Return ``v`` with ``(-Δ + gamma) v = u``."""
        self._check(u)
        return VectorGrid(u.geometry, np.stack([self.solve_scalar(c) for c in u.components]))

    def apply_scalar(self, v: np.ndarray) -> np.ndarray:
        out = self.gamma * v
        for a, h in enumerate(self.geometry.spacing):
            out = out + (2.0 * v - np.roll(v, 1, axis=a) - np.roll(v, -1, axis=a)) / h**2
        return out

    def apply(self, v: VectorGrid) -> VectorGrid:
        """``(-Δ + gamma) v`` by the periodic 7-point stencil."""
        self._check(v)
        return VectorGrid(v.geometry, np.stack([self.apply_scalar(c) for c in v.components]))


def inv_neg_laplacian(s: SpectralSolver, u: VectorGrid) -> VectorGrid:
    return s.solve(u)


def apply_neg_laplacian(s: SpectralSolver, v: VectorGrid) -> VectorGrid:
    return s.apply(v)
