"""Write the excitation file used by ``configs/solve_checkerboard.cfg``.

The excitation is seeded random data on every subdomain boundary of the
resolution-16 inner-half mesh, stored in the ``j,node_index,component,re,im``
format that ``skelpot solve`` reads.
"""

from pathlib import Path

import numpy as np

from skelpot.calderon import MultiTrace
from skelpot.config import RunConfig
from skelpot.geometry import extract_skeleton
from skelpot.skeleton import ExcitationData, trace_spaces, write_beta_csv

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "solve_checkerboard.cfg"

cfg = RunConfig.load(CONFIG)
mesh = cfg.build_mesh()
skeleton = extract_skeleton(mesh)
sizes = [t.n for t in trace_spaces(mesh, skeleton).values()]
rng = np.random.default_rng(20261019)
flat = rng.standard_normal(2 * sum(sizes)) + 1j * rng.standard_normal(2 * sum(sizes))
beta = ExcitationData(MultiTrace.from_flat(sizes, np.round(flat, 6)))
target = CONFIG.parent / "beta_checkerboard.csv"
write_beta_csv(beta, mesh, skeleton, target)
print(f"wrote {sum(sizes)} nodes x 2 components to {target}")
