"""Cellwise coefficients, their per-subdomain extensions, spectral bounds and frequencies."""

from __future__ import annotations

import cmath
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping

import numpy as np

from .geometry import PartitionedMesh


class CoefficientError(ValueError):
    pass


class FrequencyError(ValueError):
    pass


class Extension(str, Enum):
    """How the coefficients of subdomain ``j`` are continued to the whole box.

    ``GLOBAL`` keeps the given coefficients everywhere. ``CONSTANT_FREEZE``
    continues the (necessarily constant) subdomain value to every cell.
    """

    GLOBAL = "global"
    CONSTANT_FREEZE = "constant"


DEFAULT_S0 = 0.1


@dataclass(frozen=True)
class Frequency:
    """Complex frequency with positive real part, bounded away from zero."""

    s: complex
    s0: float = DEFAULT_S0

    @property
    def mu(self) -> complex:
        return self.s / abs(self.s)

    @property
    def sqrt(self) -> complex:
        """Principal square root ``s^{1/2}``."""
        return cmath.sqrt(self.s)


def validate_frequency(s: complex, s0: float = DEFAULT_S0) -> Frequency:
    s = complex(s)
    if not s0 > 0:
        raise FrequencyError("s0 floor must be positive")
    if not s.real > 0:
        raise FrequencyError(f"frequency not in right half-plane: s = {s}")
    if abs(s) < s0:
        raise FrequencyError(f"frequency below s0 floor: |s| = {abs(s)} < {s0}")
    return Frequency(s, s0)


def as_frequency(s: complex | Frequency) -> Frequency:
    return s if isinstance(s, Frequency) else validate_frequency(s)


@dataclass(frozen=True)
class SpectralBounds:
    lam_A: float
    Lam_A: float
    lam_p: float
    Lam_p: float

    @property
    def lower(self) -> float:
        return min(self.lam_A, self.lam_p)

    @property
    def upper(self) -> float:
        return max(self.Lam_A, self.Lam_p)


def _check_spd(A: np.ndarray, cells: np.ndarray) -> np.ndarray:
    asym = np.abs(A - np.swapaxes(A, 1, 2)).max(axis=(1, 2)) if len(A) else np.zeros(0)
    bad = np.flatnonzero(asym > 1e-14)
    if bad.size:
        raise CoefficientError(f"coefficient matrix not symmetric on cell {int(cells[bad[0]])}")
    eig = np.linalg.eigvalsh(A)
    bad = np.flatnonzero(eig[:, 0] <= 0)
    if bad.size:
        raise CoefficientError(f"coefficient matrix not positive definite on cell {int(cells[bad[0]])}")
    return eig


class CoefficientField:
    """Cellwise SPD matrix field ``A`` and positive scalar field ``p``.

    ``modes`` maps subdomain indices to an :class:`Extension`; missing
    entries default to ``Extension.GLOBAL``.
    """

    def __init__(
        self,
        mesh: PartitionedMesh,
        A: np.ndarray,
        p: np.ndarray,
        modes: Mapping[int, Extension | str] | None = None,
    ) -> None:
        d = mesh.dim
        A = np.array(np.broadcast_to(A, (mesh.n_cells, d, d)), dtype=float)
        p = np.array(np.broadcast_to(p, (mesh.n_cells,)), dtype=float)
        cells = np.arange(mesh.n_cells)
        self._eig = _check_spd(A, cells)
        bad = np.flatnonzero(~(p > 0))
        if bad.size:
            raise CoefficientError(f"p must be positive; violated on cell {int(bad[0])}")
        A.setflags(write=False)
        p.setflags(write=False)
        self.mesh = mesh
        self.A = A
        self.p = p
        self.modes = {j: Extension(m) for j, m in (modes or {}).items()}
        for j in self.modes:
            self.extension(j)  # fail early on illegal freezes

    @classmethod
    def constant(cls, mesh: PartitionedMesh, A=None, p: float = 1.0, modes=None) -> "CoefficientField":
        A = np.eye(mesh.dim) if A is None else np.asarray(A, dtype=float)
        return cls(mesh, A, p, modes)

    def with_modes(self, modes: Mapping[int, Extension | str]) -> "CoefficientField":
        return CoefficientField(self.mesh, self.A, self.p, modes)

    def mode(self, j: int) -> Extension:
        return self.modes.get(j, Extension.GLOBAL)

    def extension(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """``(A_j^ext, p_j^ext)`` on every cell of the mesh."""
        if self.mode(j) is Extension.GLOBAL:
            return self.A, self.p
        cells = np.flatnonzero(self.mesh.tags == j)
        if cells.size == 0:
            raise CoefficientError(f"subdomain {j} has no cells")
        A0, p0 = self.A[cells[0]], self.p[cells[0]]
        if np.any(self.A[cells] != A0) or np.any(self.p[cells] != p0):
            raise CoefficientError(f"constant freeze requested but A or p varies on subdomain {j}")
        A = np.broadcast_to(A0, self.A.shape)
        p = np.broadcast_to(p0, self.p.shape)
        return A, p

    def bounds(self, j: int) -> SpectralBounds:
        """λ_j and Λ_j of the extension used for subdomain ``j``."""
        A, p = self.extension(j)
        return spectral_bounds(A, p)

    def global_bounds(self) -> tuple[float, float]:
        """``(λ, Λ)`` taken over all subdomains."""
        b = [self.bounds(j) for j in range(1, self.mesh.n_subdomains + 1)]
        if not b:
            raise CoefficientError("mesh has no subdomains")
        return min(x.lower for x in b), max(x.upper for x in b)


def spectral_bounds(A: np.ndarray, p: np.ndarray, region: np.ndarray | None = None) -> SpectralBounds:
    """Extreme eigenvalues of ``A`` and extreme values of ``p`` over ``region``."""
    cells = np.arange(len(p)) if region is None else np.asarray(region)
    if cells.size == 0:
        raise CoefficientError("region is empty")
    Ar = np.asarray(A)[cells]
    pr = np.asarray(p)[cells]
    eig = _check_spd(Ar, cells)
    bad = np.flatnonzero(~(pr > 0))
    if bad.size:
        raise CoefficientError(f"p must be positive; violated on cell {int(cells[bad[0]])}")
    return SpectralBounds(float(eig[:, 0].min()), float(eig[:, -1].max()), float(pr.min()), float(pr.max()))


# ----------------------------------------------------------------------
# Catalogue of analytic fields evaluated at cell barycenters


def identity_field(x: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1])).copy()


def radial_ramp(base: float = 1.0, slope: float = 1.0) -> Callable[[np.ndarray], np.ndarray]:
    """Scalar field ``base + slope*|x|``."""
    if base <= 0 or slope < 0:
        raise CoefficientError("radial ramp needs base > 0 and slope >= 0")
    return lambda x: base + slope * np.linalg.norm(x, axis=1)


def checkerboard(low: float = 1.0, high: float = 3.0, size: float = 0.5) -> Callable[[np.ndarray], np.ndarray]:
    """Scalar field alternating between ``low`` and ``high`` on cubes of side ``size``."""
    if low <= 0 or high <= 0 or size <= 0:
        raise CoefficientError("checkerboard values and block size must be positive")

    def field(x: np.ndarray) -> np.ndarray:
        parity = np.floor(x / size).astype(np.int64).sum(axis=1) % 2
        return np.where(parity == 0, low, high)

    return field


SCALAR_CATALOG: dict[str, Callable[..., Callable[[np.ndarray], np.ndarray]]] = {
    "constant": lambda value=1.0: (lambda x: np.full(len(x), float(value))),
    "radial_ramp": radial_ramp,
    "checkerboard": checkerboard,
}


def matrix_from_scalar(values: np.ndarray, d: int) -> np.ndarray:
    return values[:, None, None] * np.eye(d)[None]


def catalog_field(name: str, x: np.ndarray, *, matrix: bool, **params: float) -> np.ndarray:
    """Evaluate a named catalogue field at points ``x``.

    Matrix-valued requests for scalar catalogue entries return the scalar
    times the identity; ``identity`` is the constant identity matrix.
    """
    if name == "identity":
        return identity_field(x) if matrix else np.ones(len(x))
    if name not in SCALAR_CATALOG:
        raise CoefficientError(f"unknown coefficient field {name!r}")
    vals = SCALAR_CATALOG[name](**params)(x)
    return matrix_from_scalar(vals, x.shape[1]) if matrix else vals
