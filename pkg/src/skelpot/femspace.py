"""Discrete function spaces: conforming P1, broken P1 across Γ_j, and trace spaces.

Dirichlet traces are nodal coefficient vectors on the non-truncation
vertices of Γ_j. Neumann traces are dual vectors on the same nodes: entry
``i`` is the pairing of the Neumann datum with the trace hat function of
node ``i``. Pairing the two kinds is therefore a plain dot product, and the
facet mass matrix converts a nodal function into its dual vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .assembly import FormPieces, assemble
from .coefficients import as_frequency
from .geometry import PartitionedMesh, SkeletonIndex, extract_skeleton
from .quadrature import barycentric, map_points, simplex_rule


class SpaceMismatch(ValueError):
    pass


class ConformingSpace:
    """Continuous P1 functions vanishing on the truncation boundary."""

    kind = "conforming"

    def __init__(self, mesh: PartitionedMesh) -> None:
        self.mesh = mesh
        self.vertex_of_dof = np.flatnonzero(~mesh.truncation_vertices)
        self.dof_of_vertex = np.full(mesh.n_vertices, -1, dtype=np.int64)
        self.dof_of_vertex[self.vertex_of_dof] = np.arange(self.vertex_of_dof.size)
        self.cell_dofs = self.dof_of_vertex[mesh.cells]
        self.n = int(self.vertex_of_dof.size)

    @cached_property
    def norm_matrices(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Unweighted stiffness and mass matrices for the frequency norm."""
        unit = FormPieces.unit(self.mesh)
        return assemble(unit.stiffness, self.cell_dofs, self.n), assemble(unit.mass, self.cell_dofs, self.n)

    def to_vertices(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros(self.mesh.n_vertices, dtype=np.result_type(u, float))
        out[self.vertex_of_dof] = u
        return out


class TraceSpace:
    """P1 nodal space on the non-truncation vertices of Γ_j."""

    def __init__(self, mesh: PartitionedMesh, skeleton: SkeletonIndex, j: int) -> None:
        if j not in skeleton.boundaries:
            raise SpaceMismatch(f"no subdomain {j}")
        b = skeleton.boundaries[j]
        self.mesh = mesh
        self.j = j
        self.nodes = b.nodes
        self.n = int(self.nodes.size)
        self.local_of_vertex = np.full(mesh.n_vertices, -1, dtype=np.int64)
        self.local_of_vertex[self.nodes] = np.arange(self.n)
        self.facet_ids = b.facets
        self.facets = skeleton.facets[b.facets]
        self.facet_local = self.local_of_vertex[self.facets]
        self.normals = skeleton.normals[b.facets] * b.orientation[:, None]
        self.areas = skeleton.areas[b.facets]
        self.kinds = skeleton.kinds[b.facets]

    @property
    def coordinates(self) -> np.ndarray:
        return self.mesh.vertices[self.nodes]

    @cached_property
    def mass(self) -> sp.csr_matrix:
        """Facet mass matrix: ``mass @ f`` is the dual vector of nodal ``f``."""
        d = self.mesh.dim
        ref = (np.ones((d, d)) + np.eye(d)) / (d * (d + 1))
        local = self.areas[:, None, None] * ref[None]
        return assemble(local, self.facet_local, self.n)

    def local_indices(self, vertices: np.ndarray) -> np.ndarray:
        idx = self.local_of_vertex[np.asarray(vertices)]
        if np.any(idx < 0):
            raise SpaceMismatch("vertex is not a trace node of this space")
        return idx


class BrokenSpace:
    """P1 functions allowed to jump across Γ_j.

    Dofs ``0..nc-1`` are the conforming dofs; on Γ_j nodes they hold the
    minus-side (inside Ω_j) copy. Dofs ``nc..nc+nt-1`` are the plus-side
    copies of the trace nodes.
    """

    kind = "broken"

    def __init__(self, mesh: PartitionedMesh, skeleton: SkeletonIndex, j: int,
                 conforming: ConformingSpace | None = None, trace: TraceSpace | None = None) -> None:
        self.mesh = mesh
        self.j = j
        self.conforming = conforming or ConformingSpace(mesh)
        self.trace = trace or TraceSpace(mesh, skeleton, j)
        nc, nt = self.conforming.n, self.trace.n
        self.n = nc + nt
        self.minus_cells = np.flatnonzero(mesh.tags == j)
        self.plus_cells = np.flatnonzero(mesh.tags != j)
        cd = self.conforming.cell_dofs.copy()
        plus_local = self.trace.local_of_vertex[mesh.cells[self.plus_cells]]
        block = cd[self.plus_cells]
        cd[self.plus_cells] = np.where(plus_local >= 0, nc + plus_local, block)
        self.cell_dofs = cd
        self._minus_trace = self.conforming.dof_of_vertex[self.trace.nodes]
        self._plus_trace = nc + np.arange(nt)

    def trace_dofs(self, side: str) -> np.ndarray:
        if side == "-":
            return self._minus_trace
        if side == "+":
            return self._plus_trace
        raise ValueError("side must be '+' or '-'")

    @cached_property
    def _side_dofs(self) -> dict[str, np.ndarray]:
        out = {}
        for side, cells in (("-", self.minus_cells), ("+", self.plus_cells)):
            d = np.unique(self.cell_dofs[cells].ravel())
            out[side] = d[d >= 0]
        return out

    def side_dofs(self, side: str) -> np.ndarray:
        return self._side_dofs[side]

    def side_interior_dofs(self, side: str) -> np.ndarray:
        return np.setdiff1d(self.side_dofs(side), self.trace_dofs(side), assume_unique=True)

    @cached_property
    def embedding(self) -> sp.csr_matrix:
        """Matrix mapping conforming coefficients to broken coefficients."""
        nc, nt = self.conforming.n, self.trace.n
        rows = np.concatenate([np.arange(nc), nc + np.arange(nt)])
        cols = np.concatenate([np.arange(nc), self._minus_trace])
        return sp.csr_matrix((np.ones(nc + nt), (rows, cols)), shape=(self.n, nc))

    def embed(self, u: np.ndarray) -> np.ndarray:
        return np.concatenate([u, u[self._minus_trace]])

    def is_conforming(self, w: np.ndarray) -> bool:
        return bool(np.array_equal(w[self._minus_trace], w[self._plus_trace]))

    @cached_property
    def norm_matrices(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        unit = FormPieces.unit(self.mesh)
        return assemble(unit.stiffness, self.cell_dofs, self.n), assemble(unit.mass, self.cell_dofs, self.n)

    def side_vertex_values(self, w: np.ndarray, side: str) -> np.ndarray:
        """Vertex-indexed values of the given side copy (zero off that side)."""
        mesh = self.mesh
        cells = self.minus_cells if side == "-" else self.plus_cells
        out = np.zeros(mesh.n_vertices, dtype=np.result_type(w, float))
        dofs = self.cell_dofs[cells]
        verts = mesh.cells[cells]
        keep = dofs >= 0
        out[verts[keep]] = w[dofs[keep]]
        return out


def freq_norm(v: np.ndarray, s, space) -> float:
    """``(|grad v|^2 + |s|^2 |v|^2)^{1/2}`` with piecewise gradients on broken spaces."""
    freq = as_frequency(s)
    v = np.asarray(v)
    if v.shape != (space.n,):
        raise SpaceMismatch("field length does not match the space")
    K, M = space.norm_matrices
    val = np.real(np.vdot(v, K @ v)) + abs(freq.s) ** 2 * np.real(np.vdot(v, M @ v))
    return float(np.sqrt(max(val, 0.0)))


def l2_norm(v: np.ndarray, space) -> float:
    _, M = space.norm_matrices
    return float(np.sqrt(max(np.real(np.vdot(v, M @ v)), 0.0)))


def dirichlet_trace(v: np.ndarray, side: str, space, s, trace: TraceSpace | None = None) -> np.ndarray:
    """Scaled nodal trace ``s^{1/2} v|_{Γ_j}`` from one side."""
    freq = as_frequency(s)
    v = np.asarray(v)
    if v.shape != (space.n,):
        raise SpaceMismatch("field length does not match the space")
    if isinstance(space, BrokenSpace):
        return freq.sqrt * v[space.trace_dofs(side)]
    if side not in ("+", "-"):
        raise ValueError("side must be '+' or '-'")
    if trace is None:
        raise SpaceMismatch("a trace space is needed for conforming fields")
    return freq.sqrt * v[space.dof_of_vertex[trace.nodes]]


def nodal_zero_extension(psi: np.ndarray, side: str, space: BrokenSpace) -> np.ndarray:
    """Broken field equal to ``psi`` on the given side copies of Γ_j, zero elsewhere."""
    psi = np.asarray(psi)
    if psi.shape != (space.trace.n,):
        raise SpaceMismatch("trace length does not match Γ_j")
    out = np.zeros(space.n, dtype=np.result_type(psi, float))
    out[space.trace_dofs(side)] = psi
    return out


def lifting_E(psi: np.ndarray, s, space: BrokenSpace) -> np.ndarray:
    """Screened-Laplace lifting with scaled trace ``psi``.

    On both sides of Γ_j the result solves ``(grad E, grad w) + |s|^2 (E, w) = 0``
    with nodal values ``s^{-1/2} psi`` on Γ_j; it is continuous across Γ_j.
    """
    from .linsolve import factorize

    freq = as_frequency(s)
    psi = np.asarray(psi)
    if psi.shape != (space.trace.n,):
        raise SpaceMismatch("trace length does not match Γ_j")
    conf = space.conforming
    K, M = conf.norm_matrices
    L = (K + abs(freq.s) ** 2 * M).tocsr()
    fixed = conf.dof_of_vertex[space.trace.nodes]
    free = np.setdiff1d(np.arange(conf.n), fixed)
    u = np.zeros(conf.n, dtype=complex)
    u[fixed] = psi / freq.sqrt
    if free.size:
        rhs = -(L[free][:, fixed] @ u[fixed])
        u[free] = factorize(L[free][:, free]).solve(rhs)
    return space.embed(u)


def facet_dual(trace: TraceSpace, integrand, order: int = 4) -> np.ndarray:
    """Dual vector ``i -> int_{Γ_j} integrand(x, n) chi_i`` by facet quadrature.

    ``integrand`` receives points of shape ``(m, q, d)`` and outward normals
    of shape ``(m, d)`` and returns values of shape ``(m, q)``.
    """
    d = trace.mesh.dim
    pts, wts = simplex_rule(d - 1, order)
    x = map_points(trace.mesh.vertices[trace.facets], pts)
    vals = integrand(x, trace.normals)
    jac = trace.areas * float(np.prod(np.arange(1, d)))
    lam = barycentric(pts)
    local = np.einsum("mq,q,qa,m->ma", vals, wts, lam, jac)
    out = np.zeros(trace.n, dtype=complex)
    keep = trace.facet_local >= 0
    np.add.at(out, trace.facet_local[keep], local[keep])
    return out


# ----------------------------------------------------------------------
# Exports


@dataclass(frozen=True)
class Field:
    """A coefficient vector tagged with the space it lives on."""

    values: np.ndarray
    space: object

    def __post_init__(self) -> None:
        if np.asarray(self.values).shape != (self.space.n,):
            raise SpaceMismatch("field length does not match the space")


def write_vtk(mesh: PartitionedMesh, vertex_values: np.ndarray, path, title: str = "skelpot field") -> None:
    """Legacy VTK ASCII unstructured grid with point data ``re`` and ``im``."""
    d = mesh.dim
    values = np.asarray(vertex_values, dtype=complex)
    if values.shape != (mesh.n_vertices,):
        raise SpaceMismatch("one value per vertex is required")
    pts = np.zeros((mesh.n_vertices, 3))
    pts[:, :d] = mesh.vertices
    cell_type = 5 if d == 2 else 10
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double"]
    lines += [" ".join(repr(float(c)) for c in p) for p in pts]
    lines.append(f"CELLS {mesh.n_cells} {mesh.n_cells * (d + 2)}")
    lines += [f"{d + 1} " + " ".join(str(int(i)) for i in c) for c in mesh.cells]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += [str(cell_type)] * mesh.n_cells
    lines.append(f"CELL_DATA {mesh.n_cells}")
    lines += ["SCALARS region int 1", "LOOKUP_TABLE default"]
    lines += [str(int(t)) for t in mesh.tags]
    lines.append(f"POINT_DATA {mesh.n_vertices}")
    for name, part in (("re", values.real), ("im", values.imag)):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [repr(float(v)) for v in part]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trace_csv(trace: TraceSpace, values: np.ndarray, path) -> None:
    """CSV rows ``node_index,x,y[,z],re,im`` for a trace vector."""
    import csv

    values = np.asarray(values, dtype=complex)
    if values.shape != (trace.n,):
        raise SpaceMismatch("trace length does not match Γ_j")
    axes = ["x", "y", "z"][: trace.mesh.dim]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["node_index", *axes, "re", "im"])
        for node, xyz, v in zip(trace.nodes, trace.coordinates, values):
            w.writerow([int(node), *(repr(float(c)) for c in xyz), repr(float(v.real)), repr(float(v.imag))])


def spaces_for(mesh: PartitionedMesh, skeleton: SkeletonIndex | None = None):
    """Convenience: conforming space plus per-subdomain broken spaces."""
    skeleton = skeleton or extract_skeleton(mesh)
    conf = ConformingSpace(mesh)
    return conf, {j: BrokenSpace(mesh, skeleton, j, conf) for j in skeleton.boundaries}
