"""Run configuration: a flat ``key = value`` text file.

Lines starting with ``#`` are comments. Keys may carry a ``.<j>`` suffix to
address subdomain ``j`` (for ``A``, ``p``, ``A_expr``, ``p_expr`` and
``extension``). The recognised keys and their defaults are listed in
``DEFAULTS``; the README documents the schema.

Frequencies are written either as Python complex literals (``1.5+0.3j``) or
in polar form ``<modulus>@<degrees>`` (``2@30``).
"""

from __future__ import annotations

import ast
import hashlib
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coefficients import (
    DEFAULT_S0,
    CoefficientError,
    CoefficientField,
    Extension,
    catalog_field,
    validate_frequency,
)
from .geometry import PartitionedMesh, build_box_mesh, load_mesh, named_partition


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, str] = {
    "mesh": "box",
    "dim": "2",
    "box_half_width": "1.0",
    "resolution": "32",
    "partition": "half",
    "partition_size": "0.5",
    "strips": "3",
    "neumann": "none",
    "A": "identity",
    "p": "1.0",
    "extension": "global",
    "s": "1, 2@30",
    "sweep_abs": "1, 2, 4, 8, 16",
    "sweep_arg_deg": "15, 30, 60",
    "s0": str(DEFAULT_S0),
    "samples": "20",
    "beta": "incident",
    "direction": "1, 0",
    "refine": "64",
    "truncation_s": "4",
    "truncation_R": "2",
    "seed": "0",
    "threads": "1",
}

_SUBDOMAIN_KEYS = ("A", "p", "A_expr", "p_expr", "extension")
_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*(?:\.\d+)?)\s*=\s*(.*?)\s*$")


def parse_frequency(text: str) -> complex:
    text = text.strip()
    if "@" in text:
        r, deg = text.split("@", 1)
        try:
            return float(r) * complex(math.cos(math.radians(float(deg))), math.sin(math.radians(float(deg))))
        except ValueError:
            raise ConfigError(f"malformed polar frequency {text!r}") from None
    try:
        return complex(text.replace(" ", ""))
    except ValueError:
        raise ConfigError(f"malformed frequency {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _call(text: str) -> tuple[str, dict[str, float]]:
    """Parse ``name`` or ``name(key=value, ...)`` into a name and keyword numbers."""
    try:
        node = ast.parse(text.strip().strip('"'), mode="eval").body
    except SyntaxError:
        raise ConfigError(f"malformed field expression {text!r}") from None
    if isinstance(node, ast.Name):
        return node.id, {}
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.args:
        try:
            return node.func.id, {kw.arg: float(ast.literal_eval(kw.value)) for kw in node.keywords}
        except ValueError:
            raise ConfigError(f"field parameters must be numbers in {text!r}") from None
    raise ConfigError(f"malformed field expression {text!r}")


@dataclass
class RunConfig:
    """Parsed configuration; ``raw`` keeps the text values used for hashing."""

    raw: dict[str, str]
    path: Path | None = None

    # ------------------------------------------------------------------
    @classmethod
    def from_text(cls, text: str, path: Path | None = None) -> "RunConfig":
        raw = dict(DEFAULTS)
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            m = _LINE.match(stripped)
            if not m:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = m.groups()
            base = key.split(".", 1)[0]
            if base not in DEFAULTS and base not in _SUBDOMAIN_KEYS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if "." in key and base not in _SUBDOMAIN_KEYS:
                raise ConfigError(f"line {lineno}: key {base!r} has no per-subdomain form")
            raw[key] = value
        cfg = cls(raw, path)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_text(path.read_text(encoding="utf-8"), path)

    def with_overrides(self, **values) -> "RunConfig":
        raw = dict(self.raw)
        raw.update({k: str(v) for k, v in values.items()})
        cfg = RunConfig(raw, self.path)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.dim not in (2, 3):
            raise ConfigError("dim must be 2 or 3")
        # touch every typed key once so that malformed values fail at load time
        for key in ("resolution", "samples", "refine", "box_half_width", "truncation_R", "s0", "direction"):
            getattr(self, key)
        for s in self.frequencies + self.sweep + [self.truncation_s]:
            validate_frequency(s, self.s0)
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def hash(self) -> str:
        """Short digest of the effective key/value pairs."""
        canon = "\n".join(f"{k}={self.raw[k]}" for k in sorted(self.raw))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]

    # ------------------------------------------------------------------
    def _int(self, key: str) -> int:
        try:
            return int(self.raw[key])
        except ValueError:
            raise ConfigError(f"{key} must be an integer") from None

    def _float(self, key: str) -> float:
        try:
            return float(self.raw[key])
        except ValueError:
            raise ConfigError(f"{key} must be a number") from None

    @property
    def dim(self) -> int:
        return self._int("dim")

    @property
    def resolution(self) -> int:
        return self._int("resolution")

    @property
    def seed(self) -> int:
        return self._int("seed")

    @property
    def threads(self) -> int:
        return self._int("threads")

    @property
    def samples(self) -> int:
        return self._int("samples")

    @property
    def refine(self) -> int:
        return self._int("refine")

    @property
    def box_half_width(self) -> float:
        return self._float("box_half_width")

    @property
    def s0(self) -> float:
        return self._float("s0")

    @property
    def frequencies(self) -> list[complex]:
        return [parse_frequency(t) for t in self.raw["s"].split(",") if t.strip()]

    @property
    def sweep_abs(self) -> list[float]:
        return _floats(self.raw["sweep_abs"])

    @property
    def sweep_args(self) -> list[float]:
        return [math.radians(a) for a in _floats(self.raw["sweep_arg_deg"])]

    @property
    def sweep(self) -> list[complex]:
        return [r * complex(math.cos(t), math.sin(t)) for t in self.sweep_args for r in self.sweep_abs]

    @property
    def direction(self) -> np.ndarray:
        d = np.array(_floats(self.raw["direction"]))
        if d.shape != (self.dim,) or not np.linalg.norm(d) > 0:
            raise ConfigError(f"direction must be a nonzero vector with {self.dim} components")
        return d / np.linalg.norm(d)

    @property
    def truncation_s(self) -> complex:
        return parse_frequency(self.raw["truncation_s"])

    @property
    def truncation_R(self) -> float:
        return self._float("truncation_R")

    # ------------------------------------------------------------------
    def neumann_rule(self):
        kind = self.raw["neumann"].strip()
        if kind == "none":
            return None
        if kind == "all":
            return lambda x: "N"
        if kind == "top":
            return lambda x: "N" if x[-1] > 0 else "D"
        raise ConfigError(f"neumann must be none, all or top; got {kind!r}")

    def build_mesh(self, resolution: int | None = None, box_half_width: float | None = None) -> PartitionedMesh:
        if self.raw["mesh"].strip() != "box":
            path = Path(self.raw["mesh"].strip())
            if not path.is_absolute() and self.path is not None:
                path = self.path.parent / path
            return load_mesh(path)
        name = self.raw["partition"].strip()
        params: dict[str, float] = {}
        if name in ("inner_box", "inner_half"):
            params["a"] = self._float("partition_size")
        elif name == "ball":
            params["radius"] = self._float("partition_size")
        elif name == "strips":
            params["count"] = self._int("strips")
            params["half_width"] = box_half_width or self.box_half_width
        return build_box_mesh(
            box_half_width or self.box_half_width,
            resolution or self.resolution,
            named_partition(name, **params),
            dim=self.dim,
            boundary_rule=self.neumann_rule(),
        )

    def _field(self, mesh: PartitionedMesh, key: str, matrix: bool, cells: np.ndarray) -> np.ndarray | None:
        x = mesh.barycenters[cells]
        if f"{key}_expr" in self.raw:
            name, params = _call(self.raw[f"{key}_expr"])
            return catalog_field(name, x, matrix=matrix, **params)
        if key not in self.raw:
            return None
        text = self.raw[key].strip().strip('"')
        if text == "identity":
            return catalog_field("identity", x, matrix=matrix)
        try:
            value = np.array(ast.literal_eval(text), dtype=float)
        except (ValueError, SyntaxError):
            raise ConfigError(f"malformed coefficient value {key} = {text!r}") from None
        d = mesh.dim
        if matrix:
            if value.ndim == 0:
                value = value * np.eye(d)
            if value.shape != (d, d):
                raise ConfigError(f"{key} must be a {d}x{d} matrix")
            return np.broadcast_to(value, (len(cells), d, d))
        if value.ndim != 0:
            raise ConfigError(f"{key} must be a scalar")
        return np.full(len(cells), float(value))

    def coefficients(self, mesh: PartitionedMesh) -> CoefficientField:
        d = mesh.dim
        A = np.empty((mesh.n_cells, d, d))
        p = np.empty(mesh.n_cells)
        everything = np.arange(mesh.n_cells)
        A[:] = self._field(mesh, "A", True, everything)
        p[:] = self._field(mesh, "p", False, everything)
        for j in range(1, mesh.n_subdomains + 1):
            cells = np.flatnonzero(mesh.tags == j)
            for key, target, matrix in (("A", A, True), ("p", p, False)):
                sub = RunConfig({k[: -len(f".{j}")]: v for k, v in self.raw.items() if k.endswith(f".{j}")})
                vals = sub._field(mesh, key, matrix, cells)
                if vals is not None:
                    target[cells] = vals
        modes = {}
        for j in range(1, mesh.n_subdomains + 1):
            text = self.raw.get(f"extension.{j}", self.raw["extension"]).strip()
            try:
                modes[j] = Extension(text)
            except ValueError:
                raise ConfigError(f"extension must be 'global' or 'constant'; got {text!r}") from None
        try:
            return CoefficientField(mesh, A, p, modes)
        except CoefficientError as exc:
            raise ConfigError(str(exc)) from None
