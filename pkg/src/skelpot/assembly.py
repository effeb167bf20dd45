"""P1 element matrices and global assembly of the frequency-dependent forms.

The form of subdomain ``j`` at frequency ``s`` is

    ell_j(s)(u, w) = <A_j^ext grad u, grad w> + s^2 <p_j^ext u, w>

with a bilinear pairing, so its matrix is complex symmetric. Coefficients
are constant per cell, which makes exact P1 integration cheap: gradients
are constant and the consistent mass matrix has a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
import scipy.sparse as sp

from .coefficients import CoefficientField, Frequency, as_frequency


def p1_gradients(mesh) -> np.ndarray:
    """Gradients of the barycentric shape functions, shape ``(nc, d+1, d)``."""
    x = mesh.vertices[mesh.cells]
    jac = np.swapaxes(x[:, 1:, :] - x[:, :1, :], 1, 2)  # columns are edge vectors
    inv = np.linalg.inv(jac)  # rows are gradients of lambda_1..lambda_d
    return np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)


def local_stiffness(mesh, A: np.ndarray) -> np.ndarray:
    g = p1_gradients(mesh)
    return mesh.volumes[:, None, None] * np.einsum("cak,ckl,cbl->cab", g, A, g)


def local_mass(mesh, p: np.ndarray) -> np.ndarray:
    d = mesh.dim
    ref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    return (mesh.volumes * p)[:, None, None] * ref[None]


def assemble(local: np.ndarray, cell_dofs: np.ndarray, n: int, cells: np.ndarray | None = None) -> sp.csr_matrix:
    """Sum element matrices into an ``n x n`` CSR matrix.

    Entries whose row or column dof is ``-1`` (pinned) are dropped. The COO
    to CSR conversion sums duplicates in a fixed order, so the result does
    not depend on how the element loop is scheduled.
    """
    if cells is not None:
        local = local[cells]
        cell_dofs = cell_dofs[cells]
    k = cell_dofs.shape[1]
    rows = np.repeat(cell_dofs, k, axis=1).ravel()
    cols = np.tile(cell_dofs, (1, k)).ravel()
    vals = local.reshape(local.shape[0], -1).ravel()
    keep = (rows >= 0) & (cols >= 0)
    m = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


@dataclass(frozen=True)
class FormMatrix:
    """An assembled ``ell_j(s)`` matrix with its provenance."""

    matrix: sp.csr_matrix
    s: Frequency | None
    j: int | None
    space: str


class FormPieces:
    """Element matrices of one coefficient extension, reusable across ``s``."""

    def __init__(self, mesh, A: np.ndarray, p: np.ndarray) -> None:
        self.mesh = mesh
        self.stiffness = local_stiffness(mesh, A)
        self.mass = local_mass(mesh, p)

    @classmethod
    def for_subdomain(cls, coeffs: CoefficientField, j: int) -> "FormPieces":
        A, p = coeffs.extension(j)
        return cls(coeffs.mesh, A, p)

    @classmethod
    def unit(cls, mesh) -> "FormPieces":
        """Pieces for ``A = I``, ``p = 1``: the frequency-norm matrices."""
        return cls(mesh, np.broadcast_to(np.eye(mesh.dim), (mesh.n_cells, mesh.dim, mesh.dim)), np.ones(mesh.n_cells))

    def local(self, s: complex) -> np.ndarray:
        return self.stiffness + complex(s) ** 2 * self.mass

    def matrix(self, s: complex, cell_dofs: np.ndarray, n: int, cells=None) -> sp.csr_matrix:
        return assemble(self.local(s), cell_dofs, n, cells)


def assemble_ell(j: int, s, coeffs: CoefficientField, space):
    """Assemble ``ell_j(s)`` on a conforming or broken space.

    On a :class:`~skelpot.femspace.BrokenSpace` the two side blocks
    ``(a_minus, a_plus)`` are returned separately.
    """
    from .femspace import BrokenSpace, ConformingSpace

    freq = as_frequency(s)
    pieces = FormPieces.for_subdomain(coeffs, j)
    if isinstance(space, BrokenSpace):
        return tuple(
            FormMatrix(pieces.matrix(freq.s, space.cell_dofs, space.n, cells), freq, j, f"broken{side}")
            for side, cells in (("-", space.minus_cells), ("+", space.plus_cells))
        )
    if isinstance(space, ConformingSpace):
        return FormMatrix(pieces.matrix(freq.s, space.cell_dofs, space.n), freq, j, "conforming")
    raise TypeError("space must be a ConformingSpace or BrokenSpace")


def trace_rhs(phi: np.ndarray, s, trace, conforming) -> np.ndarray:
    """Functional ``w -> <phi, gamma_D(s) w>`` on the conforming space.

    ``phi`` is a dual vector on the trace nodes, so pairing it with the trace
    of a hat function just picks the entry of that hat's node.
    """
    freq = as_frequency(s)
    phi = np.asarray(phi)
    if phi.shape != (trace.n,):
        raise ValueError("space mismatch: Neumann data length differs from trace space")
    out = np.zeros(conforming.n, dtype=complex)
    out[conforming.dof_of_vertex[trace.nodes]] = freq.sqrt * phi
    return out


def weak_conormal(u: np.ndarray, side: str, s, a_side: sp.spmatrix, space, *, check: bool = False,
                  rtol: float = 1e-8) -> np.ndarray:
    """Scaled co-normal trace of a broken field on one side of Γ_j.

    Returns the dual vector ``g`` with ``g[i] = s^{-1/2} a_side(u, Z chi_i)``
    where ``Z chi_i`` is the side copy of the hat function at trace node
    ``i``. By the first Green identity this is the outward co-normal
    derivative of that side, scaled by ``s^{-1/2}``.
    """
    freq = as_frequency(s)
    r = a_side @ u
    dofs = space.trace_dofs(side)
    if check:
        interior = space.side_interior_dofs(side)
        res = np.linalg.norm(r[interior])
        scale = max(np.linalg.norm(r), np.finfo(float).tiny)
        if res > rtol * scale:
            import warnings

            warnings.warn(f"field is not discretely homogeneous on side {side}: residual {res / scale:.2e}",
                          stacklevel=2)
    return r[dofs] / freq.sqrt


def simplex_volume_factor(d: int) -> float:
    return 1.0 / factorial(d)
