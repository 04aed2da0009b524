"""Diffeomorphic registration of densities under a weighted Fisher-Rao energy.

Densities ``I dx`` are matched by a Sobolev gradient flow on the inverse map,
with a penalty density ``f`` controlling where volume may change.
"""
from densmatch.density import Density, fisher_rao_sphere, hellinger_sq, mass, pullback, pushforward
from densmatch.errors import (
    DensMatchError,
    DivergedError,
    GeometryMismatch,
    NonInvertibleParameters,
    NonPositiveJacobian,
    ParseError,
    SizeMismatch,
    StepTooLarge,
    UnsupportedElementType,
    ZeroDistance,
    ZeroMass,
)
from densmatch.grid import (
    GridGeometry,
    ScalarGrid,
    VectorGrid,
    divergence,
    gradient,
    jacobian_determinant_fd,
    sample_trilinear,
    sample_trilinear_vec,
)
from densmatch.io import read_volume, write_volume
from densmatch.matching import (
    EnergyBreakdown,
    InverseTransform,
    Penalty,
    RegistrationConfig,
    energy,
    register,
    sigmoid_penalty,
    step,
    support_mean,
    update_field,
)
from densmatch.phantom import RadialBump, bump_phantom, gaussian_blob, two_compartment_phantom
from densmatch.poisson import SpectralSolver, apply_neg_laplacian, inv_neg_laplacian

__version__ = "0.1.0"
