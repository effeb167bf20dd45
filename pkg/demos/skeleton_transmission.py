"""Solve a transmission problem on the skeleton and compare with direct FEM.

An incident plane wave exp(-s d.x) drives the interior square of a box split
into three subdomains. The skeleton unknowns are solved with the
single-trace Galerkin system, volume fields are rebuilt with the Green
representation, and the result is compared with the direct FEM solution and
with the exact plane wave.
"""

import numpy as np

from skelpot.calderon import CalderonSystem
from skelpot.coefficients import CoefficientField
from skelpot.geometry import build_box_mesh, extract_skeleton, inner_box
from skelpot.skeleton import (
    beta_from_incident_wave,
    build_single_trace_basis,
    direct_solve,
    incident_wave,
    l2_distance,
    l2_error_to_function,
    reconstruct_volume,
    recover_multitrace,
    skeleton_solve,
)

s = 2 * np.exp(1j * np.pi / 6)
direction = (0.6, 0.8)
for n in (16, 32, 64):
    mesh = build_box_mesh(1.0, n, inner_box(0.5, split=True))
    skeleton = extract_skeleton(mesh)
    coeffs = CoefficientField.constant(mesh)
    system = CalderonSystem(coeffs, skeleton)
    beta = beta_from_incident_wave(mesh, skeleton, direction, s, coeffs)
    basis = build_single_trace_basis(mesh, skeleton)
    u, _ = skeleton_solve(system, s, beta, basis)
    fields = reconstruct_volume(system, s, recover_multitrace(u, beta))
    diff, ref = l2_distance(mesh, fields, direct_solve(coeffs, skeleton, s, beta))
    err, norm = l2_error_to_function(mesh, fields, incident_wave(s, direction)[0])
    print(f"resolution {n:3d}: {basis.dim:5d} skeleton unknowns, "
          f"skeleton vs direct {diff / ref:.1e}, error to plane wave {err / norm:.2e}")
