"""Weighted Fisher-Rao density matching by Sobolev gradient flow.

Given densities ``I0 dx``, ``I1 dx`` and a non-negative penalty ``f dx`` the
energy of an inverse map ``phi^-1`` (with tracked Jacobian ``J = |D phi^-1|``)
is

    E1 = ∫ (sqrt(J) - 1)^2  f∘phi^-1          (weighted volume change)
    E2 = ∫ (sqrt(J I0∘phi^-1) - sqrt(I1))^2   (Hellinger mismatch)

The flow only ever stores ``phi^-1`` and ``J``.  One iteration computes the
L2 gradient ``u`` of E with respect to the inner update
``phi^-1(y) -> phi^-1(y + eps w(y))``, smooths it with the inverse of ``-Δ``
(the H1 / information metric), and composes the map with ``y + eps v``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from densmatch.density import Density, as_density
from densmatch.errors import DivergedError, NonPositiveJacobian, StepTooLarge
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
    node_derivative,
    _det3,
)
from densmatch.poisson import SpectralSolver

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class InverseTransform:
    """The inverse map ``phi^-1`` as node positions plus its Jacobian determinant."""

    map: VectorGrid
    jacdet: ScalarGrid

    def __post_init__(self):
        check_geometry(self.map, self.jacdet)
        if (self.jacdet.values <= 0).any():
            raise NonPositiveJacobian("jacdet must be strictly positive")

    @property
    def geometry(self) -> GridGeometry:
        return self.map.geometry

    @classmethod
    def identity(cls, geometry: GridGeometry) -> InverseTransform:
        return cls(VectorGrid.identity(geometry), ScalarGrid.full(geometry, 1.0))

    def displacement(self) -> np.ndarray:
        return self.map.components - self.geometry.coordinates()


@dataclass(frozen=True, eq=False)
class Penalty(ScalarGrid):
    """Weight ``f`` on volume change; must be non-negative."""

    def __post_init__(self):
        super().__post_init__()
        if (self.values < 0).any():
            raise ValueError("penalty values must be non-negative")


class EnergyBreakdown(NamedTuple):
    e1: float
    e2: float
    total: float


@dataclass
class RegistrationConfig:
    """Controls for :func:`register`.

    ``step_size`` is the Euler step ``eps``.  With ``backtracking`` each
    iteration starts from ``min(step_size, 2 * last_accepted)`` and shrinks by
    ``shrink`` until the energy strictly decreases or the step falls below
    ``min_step`` (default ``1e-10 * step_size``).

    ``max_displacement`` caps every step so that no node moves by more than
    that many voxels; the tracked Jacobian is resampled each step and long
    steps smear it.  ``None`` removes the cap.
    """

    step_size: float = 1.0
    max_iters: int = 200
    backtracking: bool = True
    shrink: float = 0.5
    min_step: float | None = None
    stop_tol: float = 1e-6
    stop_window: int = 10
    jacdet_refresh_period: int = 0
    gamma: float = 0.0
    trace_every: int = 1
    pad: int = 8
    gradient: str = "discrete"
    max_displacement: float | None = 0.25
    jacobian_update: str = "det"

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if self.stop_tol < 0 or self.jacdet_refresh_period < 0 or self.gamma < 0:
            raise ValueError("stop_tol, jacdet_refresh_period and gamma must be >= 0")
        if self.trace_every < 1 or self.pad < 0 or self.stop_window < 1:
            raise ValueError("trace_every and stop_window must be >= 1, pad >= 0")
        if self.gradient not in ("discrete", "closed_form"):
            raise ValueError("gradient must be 'discrete' or 'closed_form'")
        if self.jacobian_update not in ("det", "exp"):
            raise ValueError("jacobian_update must be 'det' or 'exp'")

    @property
    def min_step_value(self) -> float:
        return self.min_step if self.min_step is not None else 1e-10 * self.step_size


class TraceRow(NamedTuple):
    iter: int
    e1: float
    e2: float
    total: float
    step: float


# --------------------------------------------------------------------------
# energy and its variation


def _sampled(t: InverseTransform, f: ScalarGrid, i0: ScalarGrid, gradient: bool = False):
    stack = np.stack([f.values, i0.values])
    return interpolate(stack, i0.geometry, t.map.components, gradient=gradient)


def energy_density(t: InverseTransform, f: ScalarGrid, i0: ScalarGrid, i1: ScalarGrid):
    """Per-voxel integrands ``(e1, e2)`` of the two energy terms (no ``dV``)."""
    check_geometry(t.map, f, i0, i1)
    F, P = _sampled(t, f, i0)
    J = t.jacdet.values
    e1 = (np.sqrt(J) - 1.0) ** 2 * F
    e2 = (np.sqrt(J * P) - np.sqrt(i1.values)) ** 2
    return e1, e2


def energy(t: InverseTransform, f: ScalarGrid, i0: ScalarGrid, i1: ScalarGrid) -> EnergyBreakdown:
    """Both energy terms by midpoint quadrature, compositions sampled trilinearly."""
    e1, e2 = energy_density(t, f, i0, i1)
    dv = t.geometry.voxel_volume
    e1 = float(np.sum(e1) * dv)
    e2 = float(np.sum(e2) * dv)
    return EnergyBreakdown(e1, e2, e1 + e2)


def update_field(
    t: InverseTransform,
    f: ScalarGrid,
    i0: ScalarGrid,
    i1: ScalarGrid,
    sqrt_i1: np.ndarray | None = None,
) -> VectorGrid:
    """L2 gradient ``u`` of the energy, ``dE = -<u, w>`` along ``phi^-1(y + eps w)``.

    This is the variation of the discretised energy itself: compositions are
    differentiated through the trilinear interpolant and the divergence term
    uses the exact transpose of :func:`densmatch.grid.divergence`.  In the
    continuum limit it equals

        u = -grad(f∘phi^-1 (1 - sqrt(J))) - sqrt(rho) grad sqrt(I1) + sqrt(I1) grad sqrt(rho)

    with ``rho = J I0∘phi^-1`` (see :func:`update_field_closed_form`).
    ``sqrt_i1`` may be passed to reuse a precomputed ``sqrt(I1)``.
    """
    geom = check_geometry(t.map, f, i0, i1)
    (F, P), grads = _sampled(t, f, i0, gradient=True)
    J = t.jacdet.values
    s1 = np.sqrt(i1.values) if sqrt_i1 is None else sqrt_i1
    g = np.sqrt(J)
    sqP = np.sqrt(P)
    r = g * sqP

    # chain rule through the map: d/deps X(map(y + eps w)) = (DM^T grad X)(y) . w
    dm = np.stack([node_derivative(c, geom.spacing) for c in t.map.components])
    gF = np.einsum("ij...,i...->j...", dm, grads[0])
    gP = np.einsum("ij...,i...->j...", dm, grads[1])
    dJ = node_derivative(J, geom.spacing)

    mis = r - s1
    cJ = (g - 1.0) * F / g + mis * sqP / g
    cF = (g - 1.0) ** 2
    pos = sqP > 0
    cP = np.zeros_like(P)
    # sqrt(I0 o phi^-1) has no derivative where the sampled density vanishes
    np.divide(mis * g, sqP, out=cP, where=pos)

    u = cJ * dJ + cP * gP + cF * gF + divergence_transpose(cJ * J, geom)
    return VectorGrid(geom, -u)


def update_field_closed_form(
    t: InverseTransform, f: ScalarGrid, i0: ScalarGrid, i1: ScalarGrid
) -> VectorGrid:
    """The closed-form gradient with every ``grad`` taken by central differences.

    ``u = -grad(F (1 - sqrt J)) - sqrt(rho) grad sqrt(I1) + sqrt(I1) grad sqrt(rho)``

    where ``F = f∘phi^-1`` and ``rho = J I0∘phi^-1`` are first resampled onto
    the grid.  Agrees with :func:`update_field` up to discretisation error.
    """
    geom = check_geometry(t.map, f, i0, i1)
    F, P = _sampled(t, f, i0)
    J = t.jacdet.values
    r = np.sqrt(J * P)
    s1 = np.sqrt(i1.values)
    reg = gradient(ScalarGrid(geom, F * (1.0 - np.sqrt(J)))).components
    gs1 = gradient(ScalarGrid(geom, s1)).components
    gr = gradient(ScalarGrid(geom, r)).components
    return VectorGrid(geom, -reg - r * gs1 + s1 * gr)


def l2_inner(u: VectorGrid, w: VectorGrid) -> float:
    return float(np.sum(u.components * w.components) * u.geometry.voxel_volume)


# --------------------------------------------------------------------------
# one Euler step


def _increment_jacobian(v: np.ndarray, eps: float, spacing) -> np.ndarray:
    """Finite-difference determinant of ``y -> y + eps v(y)``."""
    m = [
        [(1.0 if i == j else 0.0) + eps * np.gradient(v[i], spacing[j], axis=j) for j in range(3)]
        for i in range(3)
    ]
    return _det3(m)


def step(t: InverseTransform, v: VectorGrid, eps: float, jacobian_update: str = "det") -> InverseTransform:
    """Compose ``phi^-1`` with ``y -> y + eps v(y)`` and update ``J`` to match.

    ``map'(y) = map(y + eps v(y))`` and ``J'(y) = J(y + eps v(y)) * j(y)`` where
    ``j`` is the Jacobian factor of the increment: by default the
    finite-difference determinant ``det(I + eps Dv)``, or with
    ``jacobian_update="exp"`` its first-order form ``exp(eps div v)``.  Both
    have the same first variation in ``eps``.

    Raises
    ------
    StepTooLarge
        If the increment's finite-difference Jacobian is not positive everywhere.
    """
    geom = check_geometry(t.map, v)
    if eps == 0.0 or not v.components.any():
        return t
    inc = _increment_jacobian(v.components, eps, geom.spacing)
    if (inc <= 0).any():
        raise StepTooLarge(f"step {eps:g} folds the incremental map")
    if jacobian_update == "exp":
        inc = np.exp(eps * divergence(v).values)
    elif jacobian_update != "det":
        raise ValueError("jacobian_update must be 'det' or 'exp'")
    pts = geom.coordinates() + eps * v.components
    stack = np.concatenate([t.map.components, t.jacdet.values[None]])
    sampled = interpolate(stack, geom, pts)
    return InverseTransform(VectorGrid(geom, sampled[:3]), ScalarGrid(geom, sampled[3] * inc))


# --------------------------------------------------------------------------
# penalty construction


def sigmoid_penalty(
    i0: ScalarGrid, low: float, high: float, midpoint: float, steepness: float
) -> Penalty:
    """Logistic soft threshold ``low + (high - low) * sig(steepness (i0 - midpoint))``."""
    if low < 0 or high < 0:
        raise ValueError("low and high must be >= 0")
    if not steepness > 0:
        raise ValueError("steepness must be > 0")
    x = steepness * (i0.values - midpoint)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return Penalty(i0.geometry, low + (high - low) * sig)


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Threshold maximising the between-class variance of the histogram."""
    v = np.asarray(values, dtype=float).ravel()
    lo, hi = v.min(), v.max()
    if hi == lo:
        return float(lo)
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    mids = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(counts)
    w1 = w0[-1] - w0
    s0 = np.cumsum(counts * mids)
    m0 = s0 / np.maximum(w0, 1)
    m1 = (s0[-1] - s0) / np.maximum(w1, 1)
    between = w0 * w1 * (m0 - m1) ** 2
    return float(edges[np.argmax(between[:-1]) + 1])


def support_mean(i0: ScalarGrid) -> float:
    """Mean of ``i0`` over voxels where it is positive (the scale ``sigma``)."""
    pos = i0.values[i0.values > 0]
    return float(pos.mean()) if pos.size else 0.0


def default_sigmoid_params(i0: ScalarGrid, low_factor: float = 0.1, high_factor: float = 10.0):
    """Data-driven ``(low, high, midpoint, steepness)`` for :func:`sigmoid_penalty`.

    ``sigma`` is the mean of ``i0`` over its support, the midpoint is the Otsu
    threshold and the steepness is ``10 / (max - min)``.
    """
    sigma = support_mean(i0)
    rng = float(i0.values.max() - i0.values.min())
    steep = 10.0 / rng if rng > 0 else 1.0
    return low_factor * sigma, high_factor * sigma, otsu_threshold(i0.values), steep


# --------------------------------------------------------------------------
# the gradient flow


def pad_field(values: np.ndarray, margin: int) -> np.ndarray:
    if margin == 0:
        return values
    return np.pad(values, margin, mode="constant")


def crop_transform(t: InverseTransform, geometry: GridGeometry, margin: int) -> InverseTransform:
    if margin == 0:
        return t
    sl = (slice(margin, -margin),) * 3
    # crop the displacement: padded node coordinates differ from the
    # unpadded ones in the last bit
    disp = t.displacement()[(slice(None),) + sl]
    return InverseTransform(
        VectorGrid(geometry, geometry.coordinates() + disp),
        ScalarGrid(geometry, t.jacdet.values[sl]),
    )


@dataclass
class RegistrationResult:
    transform: InverseTransform
    trace: list[TraceRow]
    iterations: int
    converged: bool
    energies: list[EnergyBreakdown] = field(default_factory=list)

    def __iter__(self):
        # allows ``transform, trace = register(...)``
        return iter((self.transform, self.trace))


def register(
    i0: ScalarGrid,
    i1: ScalarGrid,
    f: ScalarGrid,
    cfg: RegistrationConfig | None = None,
    callback: Callable[[int, InverseTransform, EnergyBreakdown], None] | None = None,
) -> RegistrationResult:
    """Estimate ``phi^-1`` such that ``phi_*(I0 dx)`` matches ``I1 dx``.

    Parameters
    ----------
    i0, i1 : Density
        Source and target densities on the same grid.
    f : Penalty
        Non-negative weight on volume change.
    cfg : RegistrationConfig
    callback : callable, optional
        Called as ``callback(iteration, transform, energy)`` after every
        accepted step with the transform cropped to the input grid.

    Returns
    -------
    RegistrationResult
        Unpacks as ``(transform, trace)``.  ``energies`` holds every accepted
        energy, ``trace`` every ``trace_every``-th one.
    """
    cfg = cfg or RegistrationConfig()
    geom0 = check_geometry(i0, i1, f)
    i0, i1 = as_density(i0), as_density(i1)
    if (f.values < 0).any():
        raise ValueError("penalty must be non-negative")

    margin = cfg.pad
    geom = geom0.padded(margin) if margin else geom0
    i0p = Density(geom, pad_field(i0.values, margin))
    i1p = Density(geom, pad_field(i1.values, margin))
    fp = Penalty(geom, pad_field(f.values, margin))
    sqrt_i1 = np.sqrt(i1p.values)

    solver = SpectralSolver(geom, cfg.gamma)
    t = InverseTransform.identity(geom)
    e = energy(t, fp, i0p, i1p)
    trace = [TraceRow(0, e.e1, e.e2, e.total, 0.0)]
    energies = [e]
    eps = cfg.step_size
    converged = False
    it = 0

    for it in range(1, cfg.max_iters + 1):
        if cfg.gradient == "discrete":
            u = update_field(t, fp, i0p, i1p, sqrt_i1=sqrt_i1)
        else:
            u = update_field_closed_form(t, fp, i0p, i1p)
        v = solver.solve(u)
        slope = l2_inner(u, v)
        if not slope > 0:
            # stationary point: nothing to descend along
            converged = True
            it -= 1
            break

        cap = np.inf
        if cfg.max_displacement is not None:
            vmax = float(v.norm().max())
            cap = cfg.max_displacement * min(geom.spacing) / vmax
        if cfg.backtracking:
            eps = min(cfg.step_size, 2.0 * eps, cap)
            accepted = None
            while eps >= cfg.min_step_value:
                try:
                    trial = step(t, v, eps, cfg.jacobian_update)
                except StepTooLarge:
                    eps *= cfg.shrink
                    continue
                e_trial = energy(trial, fp, i0p, i1p)
                if e_trial.total < e.total:
                    accepted = (trial, e_trial)
                    break
                eps *= cfg.shrink
            if accepted is None:
                if it == 1:
                    raise DivergedError(
                        "no energy decrease down to the minimum step on the first iteration"
                    )
                converged = True
                it -= 1
                break
            t, e = accepted
        else:
            eps = min(cfg.step_size, cap)
            t = step(t, v, eps, cfg.jacobian_update)
            e = energy(t, fp, i0p, i1p)

        if cfg.jacdet_refresh_period and it % cfg.jacdet_refresh_period == 0:
            fresh = jacobian_determinant_fd(t.map)
            if (fresh.values > 0).all():
                t = InverseTransform(t.map, fresh)
                e = energy(t, fp, i0p, i1p)

        energies.append(e)
        if it % cfg.trace_every == 0:
            trace.append(TraceRow(it, e.e1, e.e2, e.total, eps))
        if callback is not None:
            callback(it, crop_transform(t, geom0, margin), e)
        log.debug("iter %d  E1=%.6g  E2=%.6g  E=%.6g  eps=%.3g", it, e.e1, e.e2, e.total, eps)

        w = cfg.stop_window
        if len(energies) > w:
            old = energies[-1 - w].total
            if old - e.total < cfg.stop_tol * abs(old):
                converged = True
                break

    return RegistrationResult(crop_transform(t, geom0, margin), trace, it, converged, energies)


def write_trace(path, rows) -> None:
    """Write trace rows as CSV with header ``iter,e1,e2,total,step``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TraceRow._fields)
        for row in rows:
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


def read_trace(path) -> list[TraceRow]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        return [
            TraceRow(int(r["iter"]), float(r["e1"]), float(r["e2"]), float(r["total"]), float(r["step"]))
            for r in rd
        ]
