"""Synthetic densities and closed-form diffeomorphisms with known Jacobians.

Everything here is ground truth for tests: the radial bump map has an inverse
computable to ~1e-12 and an analytic Jacobian, and the two-compartment
phantom has an exact radial solution whose volume change is confined to the
compressible core.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from densmatch.density import Density, pushforward
from densmatch.errors import NonInvertibleParameters
from densmatch.grid import GridGeometry, ScalarGrid, VectorGrid
from densmatch.matching import InverseTransform, Penalty, support_mean

MIN_JACOBIAN = 0.1


def _gaussian(points, center, width, peak):
    c = np.asarray(center, dtype=float).reshape((3,) + (1,) * (np.ndim(points) - 1))
    r2 = ((np.asarray(points) - c) ** 2).sum(axis=0)
    return peak * np.exp(-r2 / width**2)


def gaussian_blob(geom: GridGeometry, center, width: float, peak: float) -> Density:
    """``peak * exp(-|x - center|^2 / width^2)`` sampled on the grid (not truncated)."""
    if peak < 0:
        raise ValueError("peak must be >= 0")
    return Density(geom, _gaussian(geom.coordinates(), center, width, peak))


def gaussian_function(center, width: float, peak: float) -> Callable[[np.ndarray], np.ndarray]:
    """The same Gaussian as a callable on ``(3, ...)`` point arrays."""
    return lambda pts: _gaussian(pts, center, width, peak)


@dataclass(frozen=True)
class RadialBump:
    """Radial map ``x -> c + (x - c)(1 + a exp(-|x - c|^2 / s^2))``."""

    center: tuple[float, float, float]
    amplitude: float
    width: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(x) for x in self.center))
        if not self.width > 0:
            raise NonInvertibleParameters("width must be > 0")
        if self.min_jacobian() < MIN_JACOBIAN:
            raise NonInvertibleParameters(
                f"amplitude {self.amplitude} gives a Jacobian below {MIN_JACOBIAN}"
            )

    def profile(self, r):
        """Radial image ``R(r)`` and its derivative ``R'(r)``."""
        e = np.exp(-((r / self.width) ** 2))
        R = r * (1.0 + self.amplitude * e)
        dR = 1.0 + self.amplitude * e * (1.0 - 2.0 * (r / self.width) ** 2)
        return R, dR

    def jacobian_at_radius(self, r):
        e = np.exp(-((r / self.width) ** 2))
        _, dR = self.profile(r)
        return dR * (1.0 + self.amplitude * e) ** 2

    def min_jacobian(self) -> float:
        # J depends on r/s only; its extrema lie well inside r/s < 6
        r = np.linspace(0.0, 6.0 * self.width, 20001)
        return float(self.jacobian_at_radius(r).min())

    def inverse_radius(self, rho: np.ndarray) -> np.ndarray:
        """Solve ``R(r) = rho`` by safeguarded Newton iteration."""
        rho = np.asarray(rho, dtype=float)
        a = self.amplitude
        lo = np.zeros_like(rho)
        hi = rho / min(1.0, 1.0 + a) if a < 0 else rho.copy()
        r = 0.5 * (lo + hi)
        tol = 1e-13 * max(self.width, float(rho.max(initial=0.0)))
        for _ in range(200):
            R, dR = self.profile(r)
            res = R - rho
            lo = np.where(res < 0, r, lo)
            hi = np.where(res > 0, r, hi)
            if np.abs(res).max(initial=0.0) <= tol:
                break
            r_new = r - res / dR
            bad = (r_new <= lo) | (r_new >= hi) | ~np.isfinite(r_new)
            r = np.where(bad, 0.5 * (lo + hi), r_new)
        return r

    def forward(self, pts: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center).reshape((3,) + (1,) * (pts.ndim - 1))
        d = pts - c
        r = np.sqrt((d**2).sum(axis=0))
        e = np.exp(-((r / self.width) ** 2))
        return c + d * (1.0 + self.amplitude * e)

    def inverse(self, pts: np.ndarray) -> np.ndarray:
        if self.amplitude == 0.0:
            return np.array(pts, dtype=float)
        c = np.asarray(self.center).reshape((3,) + (1,) * (pts.ndim - 1))
        d = pts - c
        rho = np.sqrt((d**2).sum(axis=0))
        r = self.inverse_radius(rho)
        scale = np.divide(r, rho, out=np.ones_like(rho), where=rho > 0)
        if self.amplitude > -1:
            # at the center R(r)/r -> 1 + a
            scale = np.where(rho > 0, scale, 1.0 / (1.0 + self.amplitude))
        return c + d * scale


def radial_map(b: RadialBump, geom: GridGeometry):
    """Sample the bump map, its inverse and the inverse's Jacobian on ``geom``.

    Returns
    -------
    mapping, inverse_map : VectorGrid
    jacdet_of_inverse : ScalarGrid
        ``|D phi^-1|(y) = 1 / |D phi|(phi^-1(y))``, evaluated in closed form.
    """
    X = geom.coordinates()
    fwd = b.forward(X)
    inv = b.inverse(X)
    c = np.asarray(b.center).reshape(3, 1, 1, 1)
    r_inv = np.sqrt(((inv - c) ** 2).sum(axis=0))
    jac_inv = 1.0 / b.jacobian_at_radius(r_inv)
    return VectorGrid(geom, fwd), VectorGrid(geom, inv), ScalarGrid(geom, jac_inv)


def truth_transform(b: RadialBump, geom: GridGeometry) -> InverseTransform:
    _, inv, jac = radial_map(b, geom)
    return InverseTransform(inv, jac)


def make_pair(
    i0: Density,
    b: RadialBump,
    exact: Callable[[np.ndarray], np.ndarray] | None = None,
):
    """Build a target by pushing ``i0`` forward along the bump map.

    With ``exact`` (a callable giving the source density at arbitrary points)
    the target is evaluated analytically; otherwise ``i0`` is resampled
    trilinearly.

    Returns
    -------
    i0, i1 : Density
    truth : InverseTransform
    """
    truth = truth_transform(b, i0.geometry)
    if exact is None:
        i1 = pushforward(i0, truth)
    else:
        i1 = Density(i0.geometry, exact(truth.map.components) * truth.jacdet.values)
    return i0, i1, truth


def bump_phantom(
    geom: GridGeometry, width: float = 0.16, amplitude: float = 0.3, bump_width: float = 0.25, peak: float = 1.0
):
    """Centered Gaussian blob and its analytic pushforward by a centered radial bump.

    ``width`` and ``bump_width`` are fractions of the shortest box side.

    Returns
    -------
    i0, i1 : Density
    truth : InverseTransform
    """
    L = float(np.min(geom.upper - np.asarray(geom.origin)))
    c = tuple(geom.center)
    blob = gaussian_function(c, width * L, peak)
    i0 = Density(geom, blob(geom.coordinates()))
    return make_pair(i0, RadialBump(c, amplitude, bump_width * L), exact=blob)


# --------------------------------------------------------------------------
# two compartments: compressible core inside an incompressible shell


@dataclass(frozen=True)
class TwoCompartment:
    """Radii (fractions of the shortest box side) and densities of the phantom.

    The exact inverse map redistributes the core radially,
    ``rho -> rho (1 + a w(rho / r_core))`` with ``w(s) = (1 - s^2)^3`` on
    ``s < 1``, and is the identity from the core boundary outward.  The core
    keeps its extent and mass while its density changes, so every volume
    change of the true match lies inside the core.
    """

    r_core: float = 0.2
    r_shell: float = 0.34
    amplitude: float = -0.3
    core_density: float = 0.4
    shell_density: float = 1.0
    air_density: float = 0.05
    edge: float = 1.0  # edge softness in voxels

    def __post_init__(self):
        if not 0 < self.r_core < self.r_shell:
            raise NonInvertibleParameters("radii must satisfy 0 < r_core < r_shell")
        s = np.linspace(0.0, 1.0, 20001)
        if self._jacobian(s).min() < MIN_JACOBIAN:
            raise NonInvertibleParameters(f"amplitude {self.amplitude} folds the core")

    def radii(self, geom: GridGeometry):
        L = float(np.min(geom.upper - np.asarray(geom.origin)))
        return L * self.r_core, L * self.r_shell

    def _jacobian(self, s):
        # Jacobian of rho -> rho (1 + a w(rho / r1)) in units-free form
        s = np.minimum(np.asarray(s, dtype=float), 1.0)
        w = (1.0 - s * s) ** 3
        dw = -6.0 * s * (1.0 - s * s) ** 2
        return (1.0 + self.amplitude * (w + s * dw)) * (1.0 + self.amplitude * w) ** 2

    def source_profile(self, r, geom: GridGeometry):
        r1, r2 = self.radii(geom)
        w = self.edge * max(geom.spacing)
        core = 0.5 * (1.0 - np.tanh((r - r1) / w))
        body = 0.5 * (1.0 - np.tanh((r - r2) / w))
        return (
            self.air_density
            + (self.shell_density - self.air_density) * body
            + (self.core_density - self.shell_density) * core
        )

    def inverse_radius(self, rho, geom: GridGeometry):
        r1, _ = self.radii(geom)
        s = np.minimum(np.asarray(rho, dtype=float) / r1, 1.0)
        return rho * (1.0 + self.amplitude * (1.0 - s * s) ** 3)

    def inverse_jacobian(self, rho, geom: GridGeometry):
        r1, _ = self.radii(geom)
        return self._jacobian(np.asarray(rho, dtype=float) / r1)


def _radius(geom: GridGeometry):
    X = geom.coordinates()
    c = geom.center.reshape(3, 1, 1, 1)
    return X, c, np.sqrt(((X - c) ** 2).sum(axis=0))


def two_compartment_phantom(
    geom: GridGeometry, params: TwoCompartment | None = None, low: float = 0.1, high: float = 10.0
):
    """Source/target pair whose exact match changes volume only in the core.

    Returns
    -------
    i0, i1 : Density
    penalty : Penalty
        ``high * sigma`` on the shell nodes of the source and ``low * sigma``
        elsewhere, with ``sigma`` the mean of ``i0`` over its support.
    """
    p = params or TwoCompartment()
    _, _, rho = _radius(geom)
    i0 = Density(geom, p.source_profile(rho, geom))
    i1 = Density(geom, p.source_profile(p.inverse_radius(rho, geom), geom) * p.inverse_jacobian(rho, geom))
    sigma = support_mean(i0)
    shell, _ = shell_core_masks(geom, p)
    f = Penalty(geom, np.where(shell, high * sigma, low * sigma))
    return i0, i1, f


def two_compartment_truth(geom: GridGeometry, params: TwoCompartment | None = None) -> InverseTransform:
    """The exact radial inverse map of :func:`two_compartment_phantom`."""
    p = params or TwoCompartment()
    X, c, rho = _radius(geom)
    # inverse_radius(rho) / rho extends continuously to 1 + a at the center
    scale = 1.0 + p.amplitude * (1.0 - np.minimum(rho / p.radii(geom)[0], 1.0) ** 2) ** 3
    return InverseTransform(VectorGrid(geom, c + (X - c) * scale), ScalarGrid(geom, p.inverse_jacobian(rho, geom)))


def shell_core_masks(geom: GridGeometry, params: TwoCompartment | None = None, margin: float = 0.0):
    """Boolean masks of shell and core nodes of the source phantom.

    ``margin`` (in voxels) erodes both regions away from their interfaces.
    """
    p = params or TwoCompartment()
    _, _, rho = _radius(geom)
    r1, r2 = p.radii(geom)
    m = margin * max(geom.spacing)
    shell = (rho > r1 + m) & (rho <= r2 - m)
    core = rho <= r1 - m
    return shell, core
