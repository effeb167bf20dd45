"""Layer potentials, Calderón operators and skeleton equations computed with finite elements.

Acoustic transmission problems ``-div(A grad u) + s^2 p u = 0`` with complex
frequency ``Re s > 0`` are reduced to the interfaces between subdomains
without a fundamental solution: every layer potential is the solution of a
coercive variational problem on a truncated box.
"""

__version__ = "0.1.0"

from .calderon import CalderonSystem, MultiTrace, estimate_constants, x_pairing
from .coefficients import CoefficientField, Extension, Frequency, validate_frequency
from .geometry import PartitionedMesh, SkeletonIndex, build_box_mesh, extract_skeleton, load_mesh, save_mesh
from .potentials import BrokenField, Bump, PotentialSolver, uwvp_residual
from .skeleton import (
    ExcitationData,
    SingleTraceBasis,
    beta_from_incident_wave,
    build_single_trace_basis,
    direct_solve,
    reconstruct_volume,
    recover_multitrace,
    skeleton_solve,
)

__all__ = [
    "BrokenField",
    "Bump",
    "CalderonSystem",
    "CoefficientField",
    "ExcitationData",
    "Extension",
    "Frequency",
    "MultiTrace",
    "PartitionedMesh",
    "PotentialSolver",
    "SingleTraceBasis",
    "SkeletonIndex",
    "beta_from_incident_wave",
    "build_box_mesh",
    "build_single_trace_basis",
    "direct_solve",
    "estimate_constants",
    "extract_skeleton",
    "load_mesh",
    "reconstruct_volume",
    "recover_multitrace",
    "save_mesh",
    "skeleton_solve",
    "uwvp_residual",
    "validate_frequency",
    "x_pairing",
]
