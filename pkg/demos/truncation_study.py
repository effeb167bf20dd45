"""How far the truncation box has to reach.

The single layer potential of a density on a small interior square is
computed on boxes of half-width 1, 2 and 4 at fixed mesh size. For Re s large
the potential decays fast and the box size stops mattering; for small Re s it
does not.
"""

import numpy as np

from skelpot.coefficients import CoefficientField
from skelpot.geometry import build_box_mesh, extract_skeleton, inner_box
from skelpot.potentials import PotentialSolver

h = 1 / 16
rng = np.random.default_rng(3)
for s in (4.0, 1.0, 0.3):
    values, reference = [], None
    for R in (1.0, 2.0, 4.0):
        mesh = build_box_mesh(R, int(round(2 * R / h)), inner_box(0.5))
        solver = PotentialSolver(CoefficientField.constant(mesh), extract_skeleton(mesh), 1, s)
        if reference is None:
            reference = solver.trace.coordinates
            phi = rng.standard_normal(solver.trace.n)
        index = [int(np.flatnonzero(np.all(np.isclose(solver.trace.coordinates, x), axis=1))[0]) for x in reference]
        density = np.zeros(solver.trace.n)
        density[index] = phi
        trace = solver.sqrt_s * solver.single_layer(density)[solver.space.trace_dofs("-")]
        values.append(trace[index])
    changes = [np.linalg.norm(a - b) / np.linalg.norm(b) for a, b in zip(values, values[1:])]
    print(f"s = {s:4.1f}: relative change R=1->2 {changes[0]:.1e}, R=2->4 {changes[1]:.1e}")
