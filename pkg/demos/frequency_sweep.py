"""Run the bench sweep from a config file and print the table.

This is the library route to what ``skelpot sweep --config configs/sweep.cfg``
does; the checks and per-frequency constants land in a temporary directory.
"""

import tempfile
from pathlib import Path

from skelpot.bench import cmd_sweep
from skelpot.config import RunConfig

config = Path(__file__).resolve().parents[1] / "configs" / "sweep.cfg"
cfg = RunConfig.load(config).with_overrides(resolution=16)
with tempfile.TemporaryDirectory() as out:
    rows = cmd_sweep(cfg, Path(out))
    for name in sorted(p.name for p in Path(out).iterdir()):
        print("wrote", name)
for row in rows:
    print(f"{'PASS' if row.passed else 'FAIL'}  {row.check:40s} {row.value:.4g}  (limit {row.threshold:.4g}) {row.note}")
