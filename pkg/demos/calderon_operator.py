"""The Calderon operator of one subdomain and its frequency behaviour.

Materialises the four boundary operators on the left half of a square,
checks that the Calderon operator is a projector on Cauchy data of
homogeneous solutions, and prints estimated coercivity and continuity
constants for a few frequencies on the ray arg s = pi/6.
"""

import numpy as np

from skelpot.calderon import CalderonSystem, calderon_projection_residual, estimate_constants
from skelpot.coefficients import CoefficientField, checkerboard, matrix_from_scalar
from skelpot.geometry import build_box_mesh, extract_skeleton, half_split

mesh = build_box_mesh(1.0, 24, half_split())
A = matrix_from_scalar(checkerboard(1.0, 4.0, 0.25)(mesh.barycenters), 2)
system = CalderonSystem(CoefficientField(mesh, A, 1.0), extract_skeleton(mesh))

rng = np.random.default_rng(7)
s = 2 * np.exp(1j * np.pi / 3)
solver = system.solvers(1, s)
for trial in range(3):
    data = rng.standard_normal(solver.trace.n) + 1j * rng.standard_normal(solver.trace.n)
    u = solver.homogeneous_solution(data, "-")
    print(f"trial {trial}: projection residual {calderon_projection_residual(system, 1, s, u):.2e}")

print()
print(f"{'|s|':>5} {'V-coer':>10} {'W-coer':>10} {'C-coer':>10} {'C-cont':>10}")
for modulus in (1, 2, 4, 8):
    est = estimate_constants(system, modulus * np.exp(1j * np.pi / 6), ("V-coer", "W-coer", "C-coer", "C-cont"))
    print(f"{modulus:5d} {est['V-coer']:10.4f} {est['W-coer']:10.4f} {est['C-coer']:10.4f} {est['C-cont']:10.4f}")
print("for |s| >= 2, C-coer decays like 1/|s| and C-cont grows like |s|")
