"""Independent checks of the analytic machinery.

The finite-difference gradient check, the conservation and invariance audits
and the naive quadrature oracles below are written without the vectorised
kernels they check: the oracles use plain Python loops and their own
trilinear sampler.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from densmatch.density import hellinger_sq, mass, pushforward
from densmatch.errors import ZeroDistance
from densmatch.grid import GridGeometry, ScalarGrid, VectorGrid, jacobian_determinant_fd
from densmatch.matching import InverseTransform, energy_density, l2_inner, step, update_field


@dataclass(frozen=True)
class GradientCheckReport:
    """Analytic pairing ``-<u, w>`` against central differences of the energy.

    ``rel_error[k] = |analytic[k] - numeric[k]| / max(|numeric[k]|, floor)``;
    ``eps_fd[k]`` is the step that gave the best agreement for direction k.
    """

    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    eps_fd: np.ndarray
    floor: float

    @property
    def worst(self) -> float:
        return float(self.rel_error.max(initial=0.0))


# --------------------------------------------------------------------------
# smooth random fields


def boundary_window(geom: GridGeometry, margin: int = 3) -> np.ndarray:
    """Smooth product window, exactly zero within ``margin`` voxels of the faces."""
    out = np.ones(geom.shape)
    for a, n in enumerate(geom.dims):
        s = np.arange(n, dtype=float)
        u = np.clip((s - margin) / max(n - 1 - 2 * margin, 1), 0.0, 1.0)
        shape = [1, 1, 1]
        shape[a] = n
        out = out * np.sin(np.pi * u).reshape(shape) ** 2
    return out


def smooth_noise(geom: GridGeometry, rng: np.random.Generator, modes: int = 6, kmax: int = 3) -> np.ndarray:
    """Sum of a few random low-frequency cosines over the box, max-abs scaled to 1."""
    X = geom.coordinates()
    L = geom.upper - np.asarray(geom.origin)
    out = np.zeros(geom.shape)
    for _ in range(modes):
        k = rng.integers(-kmax, kmax + 1, size=3)
        phase = rng.uniform(0, 2 * np.pi)
        arg = sum(2 * np.pi * k[a] * (X[a] - geom.origin[a]) / L[a] for a in range(3))
        out += rng.normal() * np.cos(arg + phase)
    m = np.abs(out).max()
    return out / m if m > 0 else out


def random_direction(geom: GridGeometry, rng: np.random.Generator, margin: int = 3) -> VectorGrid:
    """Bandlimited vector field vanishing near the boundary, max norm 1."""
    w = boundary_window(geom, margin)
    comps = np.stack([smooth_noise(geom, rng) * w for _ in range(3)])
    m = np.sqrt((comps**2).sum(axis=0)).max()
    return VectorGrid(geom, comps / m if m > 0 else comps)


def random_state(geom: GridGeometry, seed: int = 0, displacement: float = 1.5, max_strain: float = 0.25):
    """A random smooth ``(t, f, i0, i1)`` for gradient checks.

    The map is the identity shifted by a fraction of a voxel plus a smooth
    random displacement of at most ``displacement`` voxels (less if needed to
    keep ``|D disp| <= max_strain``), so mapped points sit at generic
    positions inside the cells.  ``jacdet`` is the map's finite-difference
    Jacobian times a mild smooth perturbation; the energy is defined for any
    positive pair, consistent or not.
    """
    rng = np.random.default_rng(seed)
    h = np.asarray(geom.spacing).reshape(3, 1, 1, 1)
    noise = np.stack([smooth_noise(geom, rng) for _ in range(3)])
    strain = max(np.abs(np.gradient(noise[a], geom.spacing[b], axis=b)).max() for a in range(3) for b in range(3))
    amp = min(displacement * min(geom.spacing), max_strain / strain)
    shift = rng.uniform(0.2, 0.4, size=3).reshape(3, 1, 1, 1) * h
    mapping = VectorGrid(geom, geom.coordinates() + shift + amp * noise)
    jac = jacobian_determinant_fd(mapping).values * np.exp(0.1 * smooth_noise(geom, rng))
    t = InverseTransform(mapping, ScalarGrid(geom, jac))
    i0 = ScalarGrid(geom, 0.2 + np.exp(smooth_noise(geom, rng, kmax=2)))
    i1 = ScalarGrid(geom, 0.2 + np.exp(smooth_noise(geom, rng, kmax=2)))
    f = ScalarGrid(geom, 0.5 + 0.4 * smooth_noise(geom, rng))
    return t, f, i0, i1


# --------------------------------------------------------------------------
# audits


def check_gradient(
    t: InverseTransform,
    f: ScalarGrid,
    i0: ScalarGrid,
    i1: ScalarGrid,
    directions: int = 10,
    eps_fd: float | None = None,
    seed: int = 0,
    floor: float = 1e-15,
    sweep: int = 4,
    direction_fields=None,
) -> GradientCheckReport:
    """Compare ``-<update_field, w>`` with ``(E(+eps) - E(-eps)) / 2 eps`` along ``step``.

    Parameters
    ----------
    directions : int
        Number of random smooth directions (ignored if ``direction_fields``).
    eps_fd : float, optional
        Largest finite-difference step, in physical displacement units since
        every direction has max norm 1.  Default ``1e-5 * diameter``.  The
        step is swept over one decade downward in ``sweep`` geometric stages
        and the best agreement is kept.
    direction_fields : sequence of VectorGrid, optional
        Explicit directions instead of random ones.

    Raises
    ------
    StepTooLarge
        Propagated from :func:`densmatch.matching.step`.
    """
    geom = t.geometry
    if eps_fd is None:
        eps_fd = 1e-5 * geom.diameter
    if direction_fields is None:
        rng = np.random.default_rng(seed)
        direction_fields = [random_direction(geom, rng) for _ in range(directions)]
    u = update_field(t, f, i0, i1)
    steps = eps_fd * 10.0 ** (-np.arange(sweep) / max(sweep - 1, 1))

    analytic, numeric, rel, used = [], [], [], []
    for w in direction_fields:
        a = -l2_inner(u, w)
        best = None
        for eps in steps:
            # difference pointwise before summing to limit cancellation
            ep = sum(energy_density(step(t, w, eps), f, i0, i1))
            em = sum(energy_density(step(t, w, -eps), f, i0, i1))
            n = float(np.sum(ep - em)) * geom.voxel_volume / (2.0 * eps)
            r = abs(a - n) / max(abs(n), floor)
            if best is None or r < best[1]:
                best = (n, r, eps)
        analytic.append(a)
        numeric.append(best[0])
        rel.append(best[1])
        used.append(best[2])
    return GradientCheckReport(np.array(analytic), np.array(numeric), np.array(rel), np.array(used), floor)


def audit_jacdet_drift(t: InverseTransform, margin: int = 1) -> float:
    """Max relative gap between tracked ``jacdet`` and the map's FD Jacobian, interior only."""
    fd = jacobian_determinant_fd(t.map).values
    sl = (slice(margin, -margin or None),) * 3
    return float(np.abs(t.jacdet.values[sl] / fd[sl] - 1.0).max())


def audit_invariance(a: ScalarGrid, b: ScalarGrid, t: InverseTransform) -> float:
    """Relative change of the Hellinger distance when both densities are pushed forward.

    Raises
    ------
    ZeroDistance
        If ``hellinger_sq(a, b) == 0``.
    """
    d0 = hellinger_sq(a, b)
    if d0 == 0.0:
        raise ZeroDistance("the two densities coincide; relative change is undefined")
    d1 = hellinger_sq(pushforward(a, t), pushforward(b, t))
    return abs(d1 - d0) / d0


def audit_mass(d: ScalarGrid, t: InverseTransform) -> float:
    """Relative mass change ``|mass(phi_* d) - mass(d)| / mass(d)``."""
    m0 = mass(d)
    return abs(mass(pushforward(d, t)) - m0) / m0


# --------------------------------------------------------------------------
# naive loop oracles


def _naive_sample(vals, geom: GridGeometry, p) -> float:
    idx, frac = [], []
    for a in range(3):
        n = geom.dims[a]
        s = (p[a] - geom.origin[a]) / geom.spacing[a]
        s = min(max(s, 0.0), n - 1.0)
        i = min(int(math.floor(s)), n - 2)
        idx.append(i)
        frac.append(s - i)
    total = 0.0
    for di in (0, 1):
        for dj in (0, 1):
            for dk in (0, 1):
                w = (
                    (frac[0] if di else 1.0 - frac[0])
                    * (frac[1] if dj else 1.0 - frac[1])
                    * (frac[2] if dk else 1.0 - frac[2])
                )
                if w:
                    total += w * vals[idx[0] + di, idx[1] + dj, idx[2] + dk]
    return total


def _voxels(geom: GridGeometry):
    nx, ny, nz = geom.dims
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                yield i, j, k


def naive_hellinger_sq(a: ScalarGrid, b: ScalarGrid) -> float:
    geom = a.geometry
    dv = geom.spacing[0] * geom.spacing[1] * geom.spacing[2]
    total = 0.0
    for ijk in _voxels(geom):
        d = math.sqrt(a.values[ijk]) - math.sqrt(b.values[ijk])
        total += d * d * dv
    return total


def naive_fisher_rao_sphere(a: ScalarGrid, b: ScalarGrid) -> float:
    geom = a.geometry
    dv = geom.spacing[0] * geom.spacing[1] * geom.spacing[2]
    ma = mb = overlap = 0.0
    for ijk in _voxels(geom):
        ma += a.values[ijk] * dv
        mb += b.values[ijk] * dv
        overlap += math.sqrt(a.values[ijk] * b.values[ijk]) * dv
    vol = geom.dims[0] * geom.dims[1] * geom.dims[2] * dv
    c = min(1.0, max(-1.0, overlap / math.sqrt(ma * mb)))
    return math.sqrt(vol) * math.acos(c)


def naive_energy(t: InverseTransform, f: ScalarGrid, i0: ScalarGrid, i1: ScalarGrid):
    """Loop quadrature of both energy terms with a scalar trilinear sampler."""
    geom = t.geometry
    dv = geom.spacing[0] * geom.spacing[1] * geom.spacing[2]
    M = t.map.components
    e1 = e2 = 0.0
    for i, j, k in _voxels(geom):
        p = (M[0, i, j, k], M[1, i, j, k], M[2, i, j, k])
        J = t.jacdet.values[i, j, k]
        F = _naive_sample(f.values, geom, p)
        P = _naive_sample(i0.values, geom, p)
        e1 += (math.sqrt(J) - 1.0) ** 2 * F * dv
        e2 += (math.sqrt(J * P) - math.sqrt(i1.values[i, j, k])) ** 2 * dv
    return e1, e2, e1 + e2


# --------------------------------------------------------------------------
# quick self-check


class CheckRow(NamedTuple):
    name: str
    value: float
    bound: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.bound)


def selfcheck(n: int = 32, seed: int = 0) -> list[CheckRow]:
    """Run every audit on small synthetic problems.

    Bounds at ``n`` are the 64³ acceptance bounds scaled by ``(64 / n)**2``
    where the quantity is a second-order discretisation error.
    """
    from densmatch.phantom import bump_phantom, gaussian_blob
    from densmatch.poisson import SpectralSolver

    scale = (64.0 / n) ** 2
    geom = GridGeometry((n,) * 3, (1.0 / (n - 1),) * 3)
    rows = []

    t, f, i0, i1 = random_state(geom, seed)
    rows.append(CheckRow("gradient check (worst rel. error)", check_gradient(t, f, i0, i1, seed=seed).worst, 1e-3))

    c = geom.center
    a = gaussian_blob(geom, c + np.array([0.04, 0.0, 0.0]), 0.16, 1.0)
    b = gaussian_blob(geom, c - np.array([0.0, 0.05, 0.02]), 0.176, 0.8)
    s0, _, truth = bump_phantom(geom)
    rows.append(CheckRow("Hellinger invariance (rel.)", audit_invariance(a, b, truth), 1e-2 * scale))
    rows.append(CheckRow("mass of truth pushforward (rel.)", audit_mass(s0, truth), 1e-3 * scale))
    rows.append(CheckRow("truth jacdet vs FD Jacobian", audit_jacdet_drift(truth), 5e-2))

    solver = SpectralSolver(geom)
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(3,) + geom.shape)
    u -= u.mean(axis=(1, 2, 3), keepdims=True)
    back = solver.apply(solver.solve(VectorGrid(geom, u))).components
    rows.append(CheckRow("Poisson round trip (rel.)", float(np.linalg.norm(back - u) / np.linalg.norm(u)), 1e-10))

    small = GridGeometry((16,) * 3, (1.0 / 15,) * 3)
    t, f, i0, i1 = random_state(small, seed + 1)
    ref = naive_energy(t, f, i0, i1)[2]
    got = sum(float(np.sum(x)) for x in energy_density(t, f, i0, i1)) * small.voxel_volume
    rows.append(CheckRow("energy vs loop oracle (rel.)", abs(got - ref) / abs(ref), 1e-12))
    return rows


def format_table(rows) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'check':<{width}}  {'value':>10}  {'bound':>10}  result"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.value:10.3e}  {r.bound:10.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
