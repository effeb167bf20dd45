"""Single-trace spaces, excitation data, the skeleton Galerkin solve and a direct reference solver.

Single-trace Neumann data are dual vectors, so the condition that the
Neumann parts come from one flux field is a condition per skeleton node:
the dual entries of all subdomains meeting at a node must sum to zero
whenever no unconstrained boundary flux enters there. At an ordinary
interface node this is ``psi_N;j = -psi_N;k``; at cross points it leaves
``m - 1`` free values for ``m`` subdomains. Nodes where the Dirichlet value
is fixed (Dirichlet boundary) or where an outer flux is free (no boundary
conditions imposed) get one free Neumann value per subdomain.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import FormPieces, assemble
from .calderon import CalderonError, CalderonSystem, MultiTrace, x_pairing_matrix
from .coefficients import CoefficientField, as_frequency
from .femspace import TraceSpace, facet_dual
from .geometry import PartitionedMesh, SkeletonIndex
from .linsolve import factorize
from .quadrature import barycentric, map_points, simplex_rule

DOF_CLASSES = ("interface-D", "interface-N", "boundary-D", "boundary-N")


class SkeletonError(RuntimeError):
    pass


def trace_spaces(mesh: PartitionedMesh, skeleton: SkeletonIndex) -> dict[int, TraceSpace]:
    return {j: TraceSpace(mesh, skeleton, j) for j in sorted(skeleton.boundaries)}


@dataclass(frozen=True)
class SingleTraceBasis:
    """Embedding of single-trace dofs into multi-trace coordinates."""

    matrix: sp.csr_matrix
    classes: tuple[str, ...]
    sizes: tuple[int, ...]
    with_bc: bool

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def embed(self, x: np.ndarray) -> MultiTrace:
        return MultiTrace.from_flat(self.sizes, self.matrix @ x)


def build_single_trace_basis(mesh: PartitionedMesh, skeleton: SkeletonIndex, with_bc: bool = True) -> SingleTraceBasis:
    """Basis of the single-trace space (``with_bc``: the variant with boundary conditions).

    Dirichlet/Neumann boundary parts are read from the skeleton facet kinds.
    """
    traces = trace_spaces(mesh, skeleton)
    subs = sorted(traces)
    sizes = tuple(traces[j].n for j in subs)
    offsets, pos = {}, 0
    for j, n in zip(subs, sizes):
        offsets[j] = (pos, pos + n)
        pos += 2 * n
    on_D = np.zeros(mesh.n_vertices, dtype=bool)
    on_N = np.zeros(mesh.n_vertices, dtype=bool)
    for j in subs:
        on_D[skeleton.boundaries[j].dirichlet_nodes] = True
        on_N[skeleton.boundaries[j].neumann_nodes] = True
    owners: dict[int, list[int]] = {}
    for j in subs:
        for v in traces[j].nodes:
            owners.setdefault(int(v), []).append(j)

    rows, cols, vals, classes = [], [], [], []

    def add(entries, cls):
        col = len(classes)
        for r, v in entries:
            rows.append(r)
            cols.append(col)
            vals.append(v)
        classes.append(cls)

    for v in sorted(owners):
        js = owners[v]
        boundary = on_D[v] or on_N[v]
        loc = {j: int(traces[j].local_of_vertex[v]) for j in js}
        if not (with_bc and on_D[v]):
            add([(offsets[j][0] + loc[j], 1.0) for j in js], "boundary-D" if boundary else "interface-D")
        free_flux = (with_bc and on_D[v]) or (not with_bc and boundary)
        if free_flux:
            for j in js:
                add([(offsets[j][1] + loc[j], 1.0)], "boundary-N")
        else:
            for k in js[1:]:
                add([(offsets[js[0]][1] + loc[js[0]], 1.0), (offsets[k][1] + loc[k], -1.0)], "interface-N")
    E = sp.csr_matrix((vals, (rows, cols)), shape=(2 * sum(sizes), len(classes)))
    return SingleTraceBasis(E, tuple(classes), sizes, with_bc)


# ----------------------------------------------------------------------
# Excitation data


@dataclass(frozen=True)
class ExcitationData:
    """Given scaled Cauchy data ``beta_j = (beta_D;j, beta_N;j)`` per subdomain."""

    beta: MultiTrace

    def jumps(self, skeleton: SkeletonIndex, traces: dict[int, TraceSpace], j: int, k: int):
        """``([beta]_D, [beta]_N)`` on the nodes of Γ_{j,k}."""
        from .calderon import partial_jump_traces

        subs = sorted(traces)
        return partial_jump_traces(skeleton, traces[j], self.beta.parts[subs.index(j)],
                                   traces[k], self.beta.parts[subs.index(k)])


def incident_wave(s, direction):
    """``u(x) = exp(-s <d, x>)`` and its gradient, for unit ``d``."""
    freq = as_frequency(s)
    d = np.asarray(direction, dtype=float)

    def value(x):
        return np.exp(-freq.s * (x @ d))

    def grad(x):
        return -freq.s * value(x)[..., None] * d

    return value, grad


def beta_from_incident_wave(mesh: PartitionedMesh, skeleton: SkeletonIndex, direction, s,
                            coeffs: CoefficientField | None = None) -> ExcitationData:
    """Scaled Cauchy data of the incident wave ``exp(-s <d, x>)`` on every Γ_j.

    The Dirichlet part is the scaled nodal interpolant; the Neumann part pairs
    the exact scaled co-normal derivative ``-s^{1/2} <d, n> u`` with the trace
    hat functions.
    """
    d = np.asarray(direction, dtype=float)
    if d.shape != (mesh.dim,) or abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise SkeletonError("incident direction must be a unit vector")
    if coeffs is not None:
        for j in range(1, mesh.n_subdomains + 1):
            A, p = coeffs.extension(j)
            if np.any(A != np.eye(mesh.dim)) or np.any(p != 1.0):
                raise SkeletonError(f"incident wave needs A = I and p = 1; subdomain {j} differs")
    freq = as_frequency(s)
    value, grad = incident_wave(freq, d)
    parts = []
    for j, tr in trace_spaces(mesh, skeleton).items():
        bD = freq.sqrt * value(tr.coordinates)
        bN = facet_dual(tr, lambda x, n: np.einsum("mqd,md->mq", grad(x), n)) / freq.sqrt
        parts.append((bD, bN))
    return ExcitationData(MultiTrace(tuple(parts)))


def read_beta_csv(path, mesh: PartitionedMesh, skeleton: SkeletonIndex) -> ExcitationData:
    """Read rows ``j,node_index,component,re,im``; absent entries are zero."""
    traces = trace_spaces(mesh, skeleton)
    subs = sorted(traces)
    data = {j: (np.zeros(traces[j].n, dtype=complex), np.zeros(traces[j].n, dtype=complex)) for j in subs}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for line, row in enumerate(reader, start=1):
            if not row or (line == 1 and row[0].strip() == "j"):
                continue
            if len(row) != 5:
                raise SkeletonError(f"line {line}: expected 5 columns")
            try:
                j, node = int(row[0]), int(row[1])
                val = complex(float(row[3]), float(row[4]))
            except ValueError:
                raise SkeletonError(f"line {line}: malformed number") from None
            comp = row[2].strip()
            if j not in data or comp not in ("D", "N"):
                raise SkeletonError(f"line {line}: unknown subdomain or component")
            loc = traces[j].local_of_vertex[node] if 0 <= node < mesh.n_vertices else -1
            if loc < 0:
                raise SkeletonError(f"line {line}: node {node} is not on Γ_{j}")
            data[j][0 if comp == "D" else 1][loc] = val
    return ExcitationData(MultiTrace(tuple(data[j] for j in subs)))


def write_beta_csv(beta: ExcitationData, mesh: PartitionedMesh, skeleton: SkeletonIndex, path) -> None:
    traces = trace_spaces(mesh, skeleton)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["j", "node_index", "component", "re", "im"])
        for (j, tr), (bd, bn) in zip(traces.items(), beta.beta.parts):
            for comp, vec in (("D", bd), ("N", bn)):
                for node, v in zip(tr.nodes, vec):
                    w.writerow([j, int(node), comp, repr(float(v.real)), repr(float(v.imag))])


# ----------------------------------------------------------------------
# Skeleton solve and reconstruction


@dataclass(frozen=True)
class SkeletonReport:
    residual: float
    min_hermitian_eigenvalue: float
    dimension: int


def galerkin_matrix(system: CalderonSystem, s, basis: SingleTraceBasis) -> np.ndarray:
    """``E^T J (C(s) - I/2) E``: the skeleton form tested with the basis."""
    C = system.matrix(s)
    J = x_pairing_matrix(basis.sizes)
    shifted = C - 0.5 * np.eye(C.shape[0])
    E = basis.matrix.toarray()
    return E.T @ (J @ (shifted @ E))


def skeleton_solve(system: CalderonSystem, s, beta: ExcitationData, basis: SingleTraceBasis
                   ) -> tuple[MultiTrace, SkeletonReport]:
    """Solve for the single-trace part ``u_single`` of the multi-trace solution.

    Finds ``u_single`` in the span of the basis with
    ``c(s)(u_single + beta, psi) - <u_single + beta, psi>_X / 2 = 0`` for all
    basis vectors ``psi``.
    """
    if basis.sizes != system.sizes:
        raise SkeletonError("basis and Calderón system describe different partitions")
    C = system.matrix(s)
    J = x_pairing_matrix(basis.sizes)
    E = basis.matrix.toarray()
    G = galerkin_matrix(system, s, basis)
    b = beta.beta.flat()
    rhs = -(E.T @ (J @ (C @ b - 0.5 * b)))
    if G.shape[0] == 0:
        return MultiTrace.zeros(basis.sizes), SkeletonReport(0.0, float("inf"), 0)
    herm = np.linalg.eigvalsh(0.5 * (G + G.conj().T))[0]
    if not herm > 0:
        raise SkeletonError(f"skeleton form is not coercive (smallest Hermitian eigenvalue {herm:.3e})")
    x = sla.solve(G, rhs)
    scale = max(np.linalg.norm(rhs), 1e-300)
    res = float(np.linalg.norm(G @ x - rhs) / scale) if np.linalg.norm(rhs) > 0 else 0.0
    return basis.embed(x), SkeletonReport(res, float(herm), G.shape[0])


def recover_multitrace(u_single: MultiTrace, beta: ExcitationData) -> MultiTrace:
    """Multi-trace solution ``u_single + beta``."""
    return u_single + beta.beta


def reconstruct_volume(system: CalderonSystem, s, u_mult: MultiTrace, *, with_leak: bool = False):
    """Per-subdomain volume fields ``(S u_N;j - D u_D;j)`` restricted to Ω_j.

    Returns a dict ``j -> vertex values`` (meaningful on the cells of Ω_j).
    With ``with_leak`` also returns the frequency norms of the parts outside
    and inside each Ω_j.
    """
    from .femspace import freq_norm

    if u_mult.sizes != system.sizes:
        raise CalderonError("partition mismatch")
    fields, leaks = {}, {}
    for j, (d, n) in zip(system.subdomains, u_mult.parts):
        solver = system.solvers(j, s)
        w = solver.green(d, n)
        fields[j] = w.side_vertex_values("-")
        if with_leak:
            vals = w.values()
            sp_ = solver.space
            inner = np.zeros_like(vals)
            outer = np.zeros_like(vals)
            inner[sp_.side_dofs("-")] = vals[sp_.side_dofs("-")]
            outer[sp_.side_dofs("+")] = vals[sp_.side_dofs("+")]
            leaks[j] = (freq_norm(outer, s, sp_), freq_norm(inner, s, sp_))
    return (fields, leaks) if with_leak else fields


def direct_solve(coeffs: CoefficientField, skeleton: SkeletonIndex, s, beta: ExcitationData) -> dict[int, np.ndarray]:
    """Reference FEM solve of the transmission problem with data ``beta``.

    The unknown is ``u_j = v + s^{-1/2} g_j`` on Ω_j, where ``v`` is continuous
    on the domain and vanishes on the Dirichlet boundary and the truncation
    boundary, and ``g_j`` is the nodal extension of ``beta_D;j`` by zero. This
    enforces all Dirichlet jumps and Dirichlet values exactly; the co-normal
    data enter as the load ``s^{1/2} sum_j beta_N;j``. The global
    coefficients are used (no extensions).
    """
    mesh = coeffs.mesh
    freq = as_frequency(s)
    traces = trace_spaces(mesh, skeleton)
    subs = sorted(traces)
    if beta.beta.sizes != tuple(traces[j].n for j in subs):
        raise SkeletonError("excitation does not match the partition")
    local = FormPieces(mesh, coeffs.A, coeffs.p).local(freq.s)
    nv = mesh.n_vertices
    domain = np.flatnonzero(mesh.tags > 0)
    K = assemble(local, mesh.cells, nv, domain)
    pinned = mesh.truncation_vertices.copy()
    for j in subs:
        pinned[skeleton.boundaries[j].dirichlet_nodes] = True
    in_domain = np.zeros(nv, dtype=bool)
    in_domain[mesh.cells[domain].ravel()] = True
    free = np.flatnonzero(in_domain & ~pinned)
    load = np.zeros(nv, dtype=complex)
    lifts = {}
    for j, (bD, bN) in zip(subs, beta.beta.parts):
        g = np.zeros(nv, dtype=complex)
        g[traces[j].nodes] = bD / freq.sqrt
        lifts[j] = g
        Kj = assemble(local, mesh.cells, nv, np.flatnonzero(mesh.tags == j))
        load -= Kj @ g
        np.add.at(load, traces[j].nodes, freq.sqrt * bN)
    v = np.zeros(nv, dtype=complex)
    if free.size:
        v[free] = factorize(K[free][:, free], rotation=freq.mu).solve(load[free])
    return {j: v + lifts[j] for j in subs}


def subdomain_mass(mesh: PartitionedMesh, j: int) -> sp.csr_matrix:
    pieces = FormPieces(mesh, np.broadcast_to(np.eye(mesh.dim), (mesh.n_cells, mesh.dim, mesh.dim)),
                        np.ones(mesh.n_cells))
    return assemble(pieces.mass, mesh.cells, mesh.n_vertices, np.flatnonzero(mesh.tags == j))


def l2_distance(mesh: PartitionedMesh, a: dict[int, np.ndarray], b: dict[int, np.ndarray]) -> tuple[float, float]:
    """``(|a - b|, |b|)`` in the broken L2 norm over the subdomains."""
    num = den = 0.0
    for j in a:
        M = subdomain_mass(mesh, j)
        e = a[j] - b[j]
        num += float(np.real(np.vdot(e, M @ e)))
        den += float(np.real(np.vdot(b[j], M @ b[j])))
    return float(np.sqrt(num)), float(np.sqrt(den))


def l2_error_to_function(mesh: PartitionedMesh, fields: dict[int, np.ndarray], func, order: int = 4) -> tuple[float, float]:
    """``(|u_h - u|, |u|)`` over the subdomains with element quadrature."""
    pts, wts = simplex_rule(mesh.dim, order)
    lam = barycentric(pts)
    fac = float(np.prod(np.arange(1, mesh.dim + 1)))
    num = den = 0.0
    for j, vals in fields.items():
        cells = np.flatnonzero(mesh.tags == j)
        x = map_points(mesh.vertices[mesh.cells[cells]], pts)
        uh = np.einsum("qa,ma->mq", lam, vals[mesh.cells[cells]])
        ue = func(x)
        w = wts[None, :] * (mesh.volumes[cells] * fac)[:, None]
        num += float(np.sum(w * np.abs(uh - ue) ** 2))
        den += float(np.sum(w * np.abs(ue) ** 2))
    return float(np.sqrt(num)), float(np.sqrt(den))
