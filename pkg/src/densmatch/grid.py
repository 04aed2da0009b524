"""Regular-grid field containers, trilinear sampling and finite differences.

Every field lives on the nodes of a regular grid described by a
:class:`GridGeometry`.  Node ``(i, j, k)`` sits at the physical position
``origin + (i*hx, j*hy, k*hz)``.  Arrays are stored with shape
``(nx, ny, nz)``; the canonical flat order used for file I/O is x-fastest,
i.e. ``values.ravel(order="F")``.

All functions here take and return physical coordinates.  Points outside the
grid's bounding box are clamped to the nearest boundary point before
sampling.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from densmatch.errors import GeometryMismatch

# fractional offsets closer than this (in index units) to a node are snapped to it
NODE_TOL = 1e-12


def _triple(x, kind):
    t = tuple(kind(v) for v in np.broadcast_to(np.asarray(x), (3,)))
    return t


@dataclass(frozen=True)
class GridGeometry:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "dims", _triple(self.dims, int))
        object.__setattr__(self, "spacing", _triple(self.spacing, float))
        object.__setattr__(self, "origin", _triple(self.origin, float))
        if any(n < 2 for n in self.dims):
            raise ValueError(f"every grid dimension must be >= 2, got {self.dims}")
        if not all(np.isfinite(self.spacing)) or any(h <= 0 for h in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if not all(np.isfinite(self.origin)):
            raise ValueError(f"origin must be finite, got {self.origin}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def voxel_volume(self) -> float:
        hx, hy, hz = self.spacing
        return hx * hy * hz

    @property
    def volume(self) -> float:
        """Total volume of the domain as seen by midpoint quadrature (N voxels)."""
        return self.size * self.voxel_volume

    @property
    def upper(self) -> np.ndarray:
        """Physical position of the last node."""
        return np.asarray(self.origin) + (np.asarray(self.dims) - 1) * np.asarray(self.spacing)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.origin) + self.upper)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - np.asarray(self.origin)))

    def axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.dims)]

    def coordinates(self) -> np.ndarray:
        """Node positions as an array of shape ``(3, nx, ny, nz)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def matches(self, other: GridGeometry) -> bool:
        if self.dims != other.dims:
            return False
        scale = max(self.spacing)
        return bool(
            np.allclose(self.spacing, other.spacing, rtol=1e-12, atol=0)
            and np.allclose(self.origin, other.origin, rtol=0, atol=1e-9 * scale)
        )

    def padded(self, margin: int) -> GridGeometry:
        """Geometry grown by ``margin`` nodes on every face."""
        o = np.asarray(self.origin) - margin * np.asarray(self.spacing)
        return GridGeometry(tuple(n + 2 * margin for n in self.dims), self.spacing, tuple(o))


def check_geometry(*fields) -> GridGeometry:
    """Return the common geometry of ``fields`` or raise :class:`GeometryMismatch`."""
    geoms = [f if isinstance(f, GridGeometry) else f.geometry for f in fields]
    first = geoms[0]
    for g in geoms[1:]:
        if g is not first and not first.matches(g):
            raise GeometryMismatch(f"grid {g} does not match {first}")
    return first


def _frozen(arr, shape) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    if out.shape != shape:
        if out.size == int(np.prod(shape)) and out.ndim == 1:
            # flat input is taken to be in canonical x-fastest order
            out = out.reshape(shape, order="F").copy()
        else:
            raise ValueError(f"expected array of shape {shape}, got {out.shape}")
    if not np.isfinite(out).all():
        raise ValueError("field values must be finite")
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class ScalarGrid:
    """A scalar field sampled on the nodes of ``geometry``."""

    geometry: GridGeometry
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, self.geometry.dims))

    @classmethod
    def zeros(cls, geometry: GridGeometry):
        return cls(geometry, np.zeros(geometry.dims))

    @classmethod
    def full(cls, geometry: GridGeometry, value: float):
        return cls(geometry, np.full(geometry.dims, float(value)))

    def flat(self) -> np.ndarray:
        """Values in canonical x-fastest order."""
        return self.values.ravel(order="F")

    def with_values(self, values):
        return type(self)(self.geometry, values)


@dataclass(frozen=True, eq=False)
class VectorGrid:
    """A 3-vector field; ``components`` has shape ``(3, nx, ny, nz)``."""

    geometry: GridGeometry
    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "components", _frozen(self.components, (3,) + self.geometry.dims)
        )

    @classmethod
    def zeros(cls, geometry: GridGeometry):
        return cls(geometry, np.zeros((3,) + geometry.dims))

    @classmethod
    def identity(cls, geometry: GridGeometry):
        """The identity map: every node stores its own position."""
        return cls(geometry, geometry.coordinates())

    def component(self, axis: int) -> ScalarGrid:
        return ScalarGrid(self.geometry, self.components[axis])

    def norm(self) -> np.ndarray:
        return np.sqrt((self.components ** 2).sum(axis=0))


# --------------------------------------------------------------------------
# trilinear sampling


@numba.njit(cache=True, inline="always")
def _locate(x, origin, h, n):
    """Lower node index, snapped fraction and out-of-box flag along one axis."""
    t = (x - origin) / h
    outside = t < -NODE_TOL or t > n - 1 + NODE_TOL
    if t < 0.0:
        t = 0.0
    elif t > n - 1:
        t = float(n - 1)
    i = int(np.floor(t))
    if i > n - 2:
        i = n - 2
    f = t - i
    if f < NODE_TOL:
        f = 0.0
    elif f > 1.0 - NODE_TOL:
        f = 1.0
    return i, f, outside


@numba.njit(cache=True, inline="always")
def _plane(vals, q, axis, j, idx, frac):
    """Bilinear interpolation at axis-index ``j`` across the two other axes."""
    if axis == 0:
        i1, f1, i2, f2 = idx[1], frac[1], idx[2], frac[2]
        return ((1 - f1) * ((1 - f2) * vals[q, j, i1, i2] + f2 * vals[q, j, i1, i2 + 1])
                + f1 * ((1 - f2) * vals[q, j, i1 + 1, i2] + f2 * vals[q, j, i1 + 1, i2 + 1]))
    if axis == 1:
        i1, f1, i2, f2 = idx[0], frac[0], idx[2], frac[2]
        return ((1 - f1) * ((1 - f2) * vals[q, i1, j, i2] + f2 * vals[q, i1, j, i2 + 1])
                + f1 * ((1 - f2) * vals[q, i1 + 1, j, i2] + f2 * vals[q, i1 + 1, j, i2 + 1]))
    i1, f1, i2, f2 = idx[0], frac[0], idx[1], frac[1]
    return ((1 - f1) * ((1 - f2) * vals[q, i1, i2, j] + f2 * vals[q, i1, i2 + 1, j])
            + f1 * ((1 - f2) * vals[q, i1 + 1, i2, j] + f2 * vals[q, i1 + 1, i2 + 1, j]))


@numba.njit(cache=True)
def _trilinear(vals, origin, spacing, pts, out, grad, want_grad):
    nq = vals.shape[0]
    dims = vals.shape[1:]
    idx = np.empty(3, np.int64)
    frac = np.empty(3)
    outside = np.empty(3, np.bool_)
    for p in range(pts.shape[1]):
        for a in range(3):
            i, f, o = _locate(pts[a, p], origin[a], spacing[a], dims[a])
            idx[a] = i
            frac[a] = f
            outside[a] = o
        fx = frac[0]
        ix = idx[0]
        for q in range(nq):
            lo = _plane(vals, q, 0, ix, idx, frac)
            hi = _plane(vals, q, 0, ix + 1, idx, frac)
            out[q, p] = (1.0 - fx) * lo + fx * hi
            if not want_grad:
                continue
            for a in range(3):
                n = dims[a]
                i = idx[a]
                f = frac[a]
                if outside[a]:
                    grad[q, a, p] = 0.0
                elif f == 0.0:
                    up = _plane(vals, q, a, min(i + 1, n - 1), idx, frac)
                    dn = _plane(vals, q, a, max(i - 1, 0), idx, frac)
                    grad[q, a, p] = (up - dn) / (2.0 * spacing[a])
                elif f == 1.0:
                    up = _plane(vals, q, a, min(i + 2, n - 1), idx, frac)
                    dn = _plane(vals, q, a, i, idx, frac)
                    grad[q, a, p] = (up - dn) / (2.0 * spacing[a])
                else:
                    up = _plane(vals, q, a, i + 1, idx, frac)
                    dn = _plane(vals, q, a, i, idx, frac)
                    grad[q, a, p] = (up - dn) / spacing[a]


def interpolate(values: np.ndarray, geometry: GridGeometry, points, gradient: bool = False):
    """Trilinear interpolation of node ``values`` at physical ``points``.

    Parameters
    ----------
    values : ndarray, shape ``geometry.dims`` or ``(k,) + geometry.dims``
        A single field or a stack of ``k`` fields sampled at the same points.
    geometry : GridGeometry
    points : array_like, shape ``(3, ...)``
    gradient : bool
        Also return the spatial derivative of the interpolant.

    Returns
    -------
    value : ndarray, shape ``[k,] + points.shape[1:]``
    grad : ndarray, shape ``[k,] (3,) + points.shape[1:]``, only if ``gradient``

    Notes
    -----
    The interpolant is only piecewise smooth.  On a cell face (a fractional
    offset of 0 or 1 along some axis) the derivative along that axis is taken
    as the mean of the two one-sided slopes, which is what a symmetric
    finite difference of the sampled values converges to.  Along axes where
    the point was clamped from outside the box the derivative is 0.
    """
    points = np.asarray(points, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    single = values.ndim == 3
    vals = np.ascontiguousarray(values[None] if single else values)
    pshape = points.shape[1:]
    pts = np.ascontiguousarray(points.reshape(3, -1))
    k, m = vals.shape[0], pts.shape[1]
    out = np.empty((k, m))
    grad = np.empty((k, 3, m) if gradient else (1, 3, 1))
    _trilinear(vals, np.asarray(geometry.origin), np.asarray(geometry.spacing), pts, out, grad, gradient)

    value = out.reshape((k,) + pshape)
    if single:
        value = value[0]
    if not gradient:
        return value
    grad = grad.reshape((k, 3) + pshape)
    return value, (grad[0] if single else grad)


def sample_trilinear(g: ScalarGrid, p: Sequence[float]) -> float:
    """Value of ``g`` at a single physical point ``p``."""
    pts = np.asarray(p, dtype=np.float64).reshape(3, 1)
    return float(interpolate(g.values, g.geometry, pts)[0])


def sample_trilinear_vec(g: VectorGrid, p: Sequence[float]) -> np.ndarray:
    pts = np.asarray(p, dtype=np.float64).reshape(3, 1)
    return interpolate(g.components, g.geometry, pts)[:, 0]


def compose(g: ScalarGrid, mapping: VectorGrid) -> ScalarGrid:
    """``g ∘ mapping`` sampled on the grid of ``mapping``."""
    vals = interpolate(g.values, g.geometry, mapping.components)
    return ScalarGrid(mapping.geometry, vals)


def compose_vec(g: VectorGrid, mapping: VectorGrid) -> VectorGrid:
    return VectorGrid(mapping.geometry, interpolate(g.components, g.geometry, mapping.components))


# --------------------------------------------------------------------------
# finite differences


def gradient(g: ScalarGrid) -> VectorGrid:
    """Central differences inside, one-sided differences on the boundary slabs."""
    comps = [np.gradient(g.values, h, axis=a) for a, h in enumerate(g.geometry.spacing)]
    return VectorGrid(g.geometry, np.stack(comps))


def divergence(v: VectorGrid) -> ScalarGrid:
    """Sum of per-axis differences, same stencil as :func:`gradient`."""
    out = np.zeros(v.geometry.dims)
    for a, h in enumerate(v.geometry.spacing):
        out += np.gradient(v.components[a], h, axis=a)
    return ScalarGrid(v.geometry, out)


def divergence_transpose(c: np.ndarray, geometry: GridGeometry) -> np.ndarray:
    """Exact matrix transpose of :func:`divergence` applied to scalar ``c``.

    Satisfies ``sum(c * div(w)) == sum(divergence_transpose(c) * w)`` for every
    vector field ``w``.  Equals ``-gradient(c)`` away from the boundary.
    """
    out = np.zeros((3,) + c.shape)
    for a, h in enumerate(geometry.spacing):
        cm = np.moveaxis(c, a, 0)
        o = np.moveaxis(out[a], a, 0)
        # boundary rows of np.gradient(edge_order=1) are one-sided
        o[0] -= cm[0] / h
        o[1] += cm[0] / h
        o[-2] -= cm[-1] / h
        o[-1] += cm[-1] / h
        o[:-2] -= cm[1:-1] / (2.0 * h)
        o[2:] += cm[1:-1] / (2.0 * h)
    return out


def node_derivative(values: np.ndarray, spacing) -> np.ndarray:
    """Symmetric derivative of the clamped trilinear interpolant at the nodes.

    ``(X[i+1] - X[i-1]) / 2h`` with indices clamped into the grid, so it is
    half the one-sided slope on the boundary.
    """
    out = []
    for a, h in enumerate(spacing):
        n = values.shape[a]
        up = np.take(values, np.minimum(np.arange(n) + 1, n - 1), axis=a)
        dn = np.take(values, np.maximum(np.arange(n) - 1, 0), axis=a)
        out.append((up - dn) / (2.0 * h))
    return np.stack(out)


def _det3(m) -> np.ndarray:
    return (
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    )


def jacobian_matrix_fd(mapping: VectorGrid) -> np.ndarray:
    """``D[i][j] = d map_i / d x_j`` by the :func:`gradient` stencil."""
    sp = mapping.geometry.spacing
    return np.array(
        [[np.gradient(mapping.components[i], sp[j], axis=j) for j in range(3)] for i in range(3)]
    )


def jacobian_determinant_fd(mapping: VectorGrid) -> ScalarGrid:
    """Determinant of the finite-difference Jacobian of a map of positions."""
    return ScalarGrid(mapping.geometry, _det3(jacobian_matrix_fd(mapping)))
