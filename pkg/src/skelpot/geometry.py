"""Partitioned simplicial meshes of a truncation box and their skeleton.

A :class:`PartitionedMesh` carries cellwise region tags: ``0`` marks the
complement of the domain inside the box, ``j >= 1`` marks subdomain ``j``.
Facets on the outer box boundary are the truncation boundary; they carry a
homogeneous Dirichlet condition and never belong to a subdomain boundary.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

PartitionRule = Callable[[np.ndarray], np.ndarray]
BoundaryRule = Callable[[np.ndarray], str]

FACET_KINDS = ("D", "N", "TRUNCATION")


class MeshError(ValueError):
    """Raised for invalid meshes or partitions."""


def _facet_key(vertices: Iterable[int]) -> tuple[int, ...]:
    return tuple(sorted(int(v) for v in vertices))


def signed_volumes(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    x = vertices[cells]
    jac = x[:, 1:, :] - x[:, :1, :]
    d = vertices.shape[1]
    return np.linalg.det(jac) / float(np.prod(np.arange(1, d + 1)))


def facet_normals_and_areas(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalised orientation-free normals and areas of facets.

    ``points`` has shape ``(m, d, d)``: the ``d`` vertices of each
    ``(d-1)``-simplex in ``d`` space dimensions.
    """
    d = points.shape[-1]
    if d == 2:
        t = points[:, 1] - points[:, 0]
        nrm = np.column_stack([t[:, 1], -t[:, 0]])
        area = np.linalg.norm(t, axis=1)
    elif d == 3:
        c = np.cross(points[:, 1] - points[:, 0], points[:, 2] - points[:, 0])
        area = 0.5 * np.linalg.norm(c, axis=1)
        nrm = c
    else:
        raise MeshError(f"unsupported dimension {d}")
    return nrm / np.linalg.norm(nrm, axis=1)[:, None], area


class PartitionedMesh:
    """Simplicial mesh with region tags and Dirichlet/Neumann facet marks.

    Parameters
    ----------
    vertices : (nv, d) array of coordinates.
    cells : (nc, d+1) array of vertex indices.
    tags : (nc,) region tags.
    neumann_facets : facets (as vertex tuples) of the domain boundary that
        belong to the Neumann part; every other domain-boundary facet is
        Dirichlet.
    """

    def __init__(
        self,
        vertices: np.ndarray,
        cells: np.ndarray,
        tags: np.ndarray,
        neumann_facets: Iterable[Iterable[int]] = (),
        *,
        check_connectivity: bool = True,
    ) -> None:
        vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = np.ascontiguousarray(cells, dtype=np.int64)
        tags = np.ascontiguousarray(tags, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
            raise MeshError("vertices must have shape (n, 2) or (n, 3)")
        d = vertices.shape[1]
        if cells.ndim != 2 or cells.shape[1] != d + 1:
            raise MeshError(f"cells must have {d + 1} vertices each")
        if tags.shape != (cells.shape[0],):
            raise MeshError("one region tag per cell is required")
        if cells.size and (cells.min() < 0 or cells.max() >= vertices.shape[0]):
            raise MeshError("cell references a vertex index out of range")
        if tags.size and tags.min() < 0:
            raise MeshError("region tags must be nonnegative")
        keys = np.sort(cells, axis=1)
        if np.unique(keys, axis=0).shape[0] != cells.shape[0]:
            raise MeshError("duplicate cell")

        vol = signed_volumes(vertices, cells)
        if np.any(vol == 0.0):
            raise MeshError(f"degenerate cell {int(np.flatnonzero(vol == 0.0)[0])}")
        flip = vol < 0
        if np.any(flip):
            cells = cells.copy()
            cells[flip, 1], cells[flip, 2] = cells[flip, 2].copy(), cells[flip, 1].copy()

        self.dim = d
        self.vertices = vertices
        self.cells = cells
        self.tags = tags
        self.neumann_facets = frozenset(_facet_key(f) for f in neumann_facets)
        for arr in (self.vertices, self.cells, self.tags):
            arr.setflags(write=False)
        present = set(np.unique(tags).tolist()) - {0}
        self.n_subdomains = max(present) if present else 0
        if check_connectivity:
            self._check_connectivity()

    # ------------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @cached_property
    def volumes(self) -> np.ndarray:
        return signed_volumes(self.vertices, self.cells)

    @cached_property
    def barycenters(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @cached_property
    def _facet_table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unique facets, and for each the (up to two) owning cells."""
        d = self.dim
        local = [np.delete(np.arange(d + 1), a) for a in range(d + 1)]
        all_f = np.concatenate([np.sort(self.cells[:, loc], axis=1) for loc in local])
        owner = np.tile(np.arange(self.n_cells), d + 1)
        facets, inverse = np.unique(all_f, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        order = np.argsort(inverse, kind="stable")
        counts = np.bincount(inverse, minlength=facets.shape[0])
        if counts.max(initial=0) > 2:
            raise MeshError("non-manifold mesh: a facet is shared by more than two cells")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        first = owner[order[starts]]
        second = np.where(counts == 2, owner[order[np.minimum(starts + 1, len(order) - 1)]], -1)
        return facets, first, second

    @property
    def facets(self) -> np.ndarray:
        return self._facet_table[0]

    @cached_property
    def truncation_facets(self) -> np.ndarray:
        facets, _, second = self._facet_table
        return facets[second < 0]

    @cached_property
    def truncation_vertices(self) -> np.ndarray:
        """Boolean mask of vertices on the truncation boundary."""
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.truncation_facets.ravel()] = True
        return mask

    def _check_connectivity(self) -> None:
        facets, first, second = self._facet_table
        inner = second >= 0
        a, b = first[inner], second[inner]
        same = self.tags[a] == self.tags[b]
        graph = sp.coo_matrix(
            (np.ones(int(same.sum())), (a[same], b[same])), shape=(self.n_cells, self.n_cells)
        )
        _, labels = connected_components(graph, directed=False)
        for j in range(1, self.n_subdomains + 1):
            sel = self.tags == j
            if sel.any() and np.unique(labels[sel]).size > 1:
                warnings.warn(f"subdomain {j} is not face-connected", stacklevel=3)

    def with_neumann(self, rule: BoundaryRule) -> "PartitionedMesh":
        """Copy of the mesh with domain-boundary facets reclassified by ``rule``.

        ``rule`` receives a facet barycenter and returns ``"D"`` or ``"N"``.
        """
        skel = extract_skeleton(self)
        neumann = []
        for f in np.flatnonzero(skel.pairs[:, 1] == 0):
            kind = rule(self.vertices[skel.facets[f]].mean(axis=0))
            if kind not in ("D", "N"):
                raise MeshError(f"boundary rule returned {kind!r}; expected 'D' or 'N'")
            if kind == "N":
                neumann.append(skel.facets[f])
        return PartitionedMesh(self.vertices, self.cells, self.tags, neumann, check_connectivity=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PartitionedMesh):
            return NotImplemented
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.cells, other.cells)
            and np.array_equal(self.tags, other.tags)
            and self.neumann_facets == other.neumann_facets
        )

    __hash__ = None  # type: ignore[assignment]


# ----------------------------------------------------------------------
# Structured box meshes and partition rules


def _box_cells(resolution: int, dim: int) -> np.ndarray:
    n = resolution
    shape = (n + 1,) * dim
    idx = np.arange((n + 1) ** dim).reshape(shape, order="F")
    corner = np.stack(np.meshgrid(*[np.arange(n)] * dim, indexing="ij"), axis=-1).reshape(-1, dim)
    corner = corner[np.lexsort(corner.T[::-1])] if dim > 1 else corner
    cells = []
    for perm in itertools.permutations(range(dim)):
        path = [corner.copy()]
        cur = corner.copy()
        for axis in perm:
            cur = cur.copy()
            cur[:, axis] += 1
            path.append(cur)
        cells.append(np.stack([idx[tuple(p.T)] for p in path], axis=1))
    return np.stack(cells, axis=1).reshape(-1, dim + 1)


def build_box_mesh(
    box_half_width: float,
    resolution: int,
    partition: PartitionRule,
    *,
    dim: int = 2,
    boundary_rule: BoundaryRule | None = None,
) -> PartitionedMesh:
    """Structured simplicial mesh of ``[-R, R]^dim`` with region tags.

    Each of the ``resolution^dim`` cubes is split into ``dim!`` simplices
    (two triangles in 2D, six Kuhn tetrahedra in 3D). ``partition`` maps an
    array of cell barycenters to integer tags. When the rule exposes an
    ``n_subdomains`` attribute every tag ``1..n_subdomains`` must be hit;
    otherwise the tags present must form a contiguous range ``1..max``.
    """
    if not box_half_width > 0:
        raise MeshError("box half width must be positive")
    if int(resolution) != resolution or resolution < 2:
        raise MeshError("resolution must be an integer >= 2")
    if dim not in (2, 3):
        raise MeshError("dimension must be 2 or 3")
    n = int(resolution)
    axis = np.linspace(-box_half_width, box_half_width, n + 1)
    grid = np.meshgrid(*[axis] * dim, indexing="ij")
    vertices = np.stack([g.ravel(order="F") for g in grid], axis=1)
    cells = _box_cells(n, dim)
    bary = vertices[cells].mean(axis=1)
    tags = np.asarray(partition(bary), dtype=np.int64)
    if tags.shape != (cells.shape[0],):
        raise MeshError("partition rule must return one tag per cell")
    expected = getattr(partition, "n_subdomains", None)
    if expected is None:
        expected = int(tags.max(initial=0))
    for j in range(1, expected + 1):
        if not np.any(tags == j):
            raise MeshError(f"degenerate partition: subdomain {j} has no cells")
    mesh = PartitionedMesh(vertices, cells, tags)
    if boundary_rule is not None:
        mesh = mesh.with_neumann(boundary_rule)
    return mesh


@dataclass(frozen=True)
class Partition:
    """A named region rule with a declared subdomain count."""

    name: str
    n_subdomains: int
    rule: PartitionRule = field(repr=False)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.rule(np.asarray(x))


def single_region() -> Partition:
    return Partition("single", 1, lambda x: np.ones(len(x), dtype=np.int64))


def half_split() -> Partition:
    """Tag 1 for ``x < 0`` and tag 2 otherwise."""
    return Partition("half", 2, lambda x: np.where(x[:, 0] < 0, 1, 2))


def quadrants() -> Partition:
    """Four subdomains split by the first two coordinate signs."""

    def rule(x: np.ndarray) -> np.ndarray:
        return 1 + (x[:, 0] >= 0).astype(np.int64) + 2 * (x[:, 1] >= 0).astype(np.int64)

    return Partition("quadrant", 4, rule)


def strips(count: int = 3, half_width: float = 1.0) -> Partition:
    """``count`` strips of equal width along the first axis."""

    def rule(x: np.ndarray) -> np.ndarray:
        k = np.floor((x[:, 0] + half_width) / (2 * half_width) * count).astype(np.int64)
        return 1 + np.clip(k, 0, count - 1)

    return Partition(f"strips{count}", count, rule)


def inner_box(a: float, split: bool = False) -> Partition:
    """Cells with ``max|x_i| < a`` form the domain, the rest is complement.

    With ``split`` the inner box is halved at ``x = 0`` into tags 1 and 2.
    """

    def rule(x: np.ndarray) -> np.ndarray:
        inside = np.max(np.abs(x), axis=1) < a
        if split:
            return np.where(inside, np.where(x[:, 0] < 0, 1, 2), 0)
        return inside.astype(np.int64)

    return Partition("inner_half" if split else "inner_box", 2 if split else 1, rule)


def ball(radius: float) -> Partition:
    """Tag 1 inside the ball of the given radius, complement elsewhere."""
    return Partition("ball", 1, lambda x: (np.linalg.norm(x, axis=1) < radius).astype(np.int64))


def named_partition(name: str, **params: float) -> Partition:
    """Look up a partition rule by its configuration name."""
    builders: Mapping[str, Callable[..., Partition]] = {
        "single": single_region,
        "half": half_split,
        "quadrant": quadrants,
        "strips": lambda count=3, half_width=1.0: strips(int(count), half_width),
        "inner_box": lambda a=0.5: inner_box(a),
        "inner_half": lambda a=0.5: inner_box(a, split=True),
        "ball": lambda radius=0.5: ball(radius),
    }
    if name not in builders:
        raise MeshError(f"unknown partition {name!r}; choose from {sorted(builders)}")
    return builders[name](**params)


# ----------------------------------------------------------------------
# Skeleton


@dataclass(frozen=True)
class SubdomainBoundary:
    """Index data for one subdomain boundary Γ_j.

    ``orientation[f]`` is +1 when the stored facet normal points out of
    subdomain ``j`` and -1 otherwise. ``nodes`` lists the non-truncation
    vertices of Γ_j in ascending order; the trace spaces are built on them.
    """

    j: int
    facets: np.ndarray
    orientation: np.ndarray
    nodes: np.ndarray
    dirichlet_nodes: np.ndarray
    neumann_nodes: np.ndarray
    interior_cells: np.ndarray


@dataclass(frozen=True)
class SkeletonIndex:
    """Skeleton facets with their subdomain pairs, normals and kinds.

    ``pairs[f] = (j, k)`` with ``j < k`` for interfaces and ``k = 0`` for
    facets on the domain boundary; ``normals[f]`` points from the ``j`` cell
    into the ``k`` cell. ``kinds[f]`` is ``"I"`` (interface), ``"D"`` or
    ``"N"``.
    """

    facets: np.ndarray
    pairs: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    kinds: np.ndarray
    cell_minus: np.ndarray
    cell_plus: np.ndarray
    boundaries: dict[int, SubdomainBoundary]

    @property
    def n_facets(self) -> int:
        return self.facets.shape[0]

    def interface(self, j: int, k: int) -> np.ndarray:
        """Facet indices of Γ_{j,k}; empty when the two parts do not meet."""
        if j == k:
            return np.zeros(0, dtype=np.int64)
        if j == 0 or k == 0:
            key = (max(j, k), 0)
        else:
            key = (min(j, k), max(j, k))
        return np.flatnonzero((self.pairs[:, 0] == key[0]) & (self.pairs[:, 1] == key[1]))

    def interface_nodes(self, j: int, k: int, truncation: np.ndarray) -> np.ndarray:
        f = self.interface(j, k)
        nodes = np.unique(self.facets[f].ravel())
        return nodes[~truncation[nodes]]


def extract_skeleton(mesh: PartitionedMesh) -> SkeletonIndex:
    """Collect the skeleton facets of a partitioned mesh."""
    facets, first, second = mesh._facet_table
    inner = second >= 0
    ta = np.where(inner, mesh.tags[first], -1)
    tb = np.where(inner, mesh.tags[np.maximum(second, 0)], -1)
    skel = inner & (ta != tb) & ((ta > 0) | (tb > 0))
    sel = np.flatnonzero(skel)
    a, b = first[sel], second[sel]
    tag_a, tag_b = mesh.tags[a], mesh.tags[b]
    swap = (tag_a == 0) | ((tag_b > 0) & (tag_b < tag_a))
    c_minus = np.where(swap, b, a)
    c_plus = np.where(swap, a, b)
    pairs = np.column_stack([mesh.tags[c_minus], mesh.tags[c_plus]])
    fac = facets[sel]
    normals, areas = facet_normals_and_areas(mesh.vertices[fac])
    direction = mesh.barycenters[c_plus] - mesh.barycenters[c_minus]
    dots = np.einsum("ij,ij->i", normals, direction)
    if np.any(dots == 0.0):
        raise MeshError("inconsistent facet orientation")
    normals = normals * np.sign(dots)[:, None]

    kinds = np.full(len(sel), "I", dtype="<U1")
    boundary = pairs[:, 1] == 0
    for f in np.flatnonzero(boundary):
        kinds[f] = "N" if _facet_key(fac[f]) in mesh.neumann_facets else "D"

    trunc = mesh.truncation_vertices
    bounds: dict[int, SubdomainBoundary] = {}
    for j in range(1, mesh.n_subdomains + 1):
        on_minus = pairs[:, 0] == j
        on_plus = pairs[:, 1] == j
        fj = np.flatnonzero(on_minus | on_plus)
        orient = np.where(on_minus[fj], 1, -1)

        def nodes_of(mask: np.ndarray) -> np.ndarray:
            v = np.unique(fac[mask].ravel())
            return v[~trunc[v]]

        bounds[j] = SubdomainBoundary(
            j=j,
            facets=fj,
            orientation=orient,
            nodes=nodes_of(on_minus | on_plus),
            dirichlet_nodes=nodes_of(on_minus & (kinds == "D")),
            neumann_nodes=nodes_of(on_minus & (kinds == "N")),
            interior_cells=np.flatnonzero(mesh.tags == j),
        )
    return SkeletonIndex(
        facets=fac,
        pairs=pairs,
        normals=normals,
        areas=areas,
        kinds=kinds,
        cell_minus=c_minus,
        cell_plus=c_plus,
        boundaries=bounds,
    )


# ----------------------------------------------------------------------
# ASCII mesh files


class MeshParseError(MeshError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


def save_mesh(mesh: PartitionedMesh, path) -> None:
    """Write the ``skelmesh`` ASCII format."""
    d = mesh.dim
    lines = [f"skelmesh {d} {mesh.n_vertices} {mesh.n_cells}"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [" ".join(str(int(i)) for i in c) + f" {int(t)}" for c, t in zip(mesh.cells, mesh.tags)]
    skel = extract_skeleton(mesh)
    tagged = [(skel.facets[f], skel.kinds[f]) for f in np.flatnonzero(skel.pairs[:, 1] == 0)]
    tagged += [(f, "TRUNCATION") for f in mesh.truncation_facets]
    if tagged:
        lines.append(f"facets {len(tagged)}")
        lines += [" ".join(str(int(i)) for i in f) + f" {kind}" for f, kind in tagged]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path) -> PartitionedMesh:
    """Read the ``skelmesh`` ASCII format, reporting errors by line number."""
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().split("\n")
    rows = [(i + 1, ln.split()) for i, ln in enumerate(raw) if ln.strip()]
    if not rows:
        raise MeshParseError(1, "empty file")
    pos = 0

    def take() -> tuple[int, list[str]]:
        nonlocal pos
        if pos >= len(rows):
            last = rows[-1][0] if rows else 0
            raise MeshParseError(last + 1, "unexpected end of file")
        item = rows[pos]
        pos += 1
        return item

    ln, head = take()
    if len(head) != 4 or head[0] != "skelmesh":
        raise MeshParseError(ln, "expected header 'skelmesh <d> <n_vertices> <n_cells>'")
    try:
        d, nv, nc = (int(t) for t in head[1:])
    except ValueError:
        raise MeshParseError(ln, "header counts must be integers") from None
    if d not in (2, 3) or nv < 0 or nc < 0:
        raise MeshParseError(ln, "invalid header values")
    verts = np.empty((nv, d))
    for i in range(nv):
        ln, tok = take()
        if len(tok) != d:
            raise MeshParseError(ln, f"expected {d} coordinates")
        try:
            verts[i] = [float(t) for t in tok]
        except ValueError:
            raise MeshParseError(ln, "invalid coordinate") from None
    cells = np.empty((nc, d + 1), dtype=np.int64)
    tags = np.empty(nc, dtype=np.int64)
    seen: dict[tuple[int, ...], int] = {}
    for i in range(nc):
        ln, tok = take()
        if len(tok) != d + 2:
            raise MeshParseError(ln, f"expected {d + 1} vertex indices and a tag")
        try:
            vals = [int(t) for t in tok]
        except ValueError:
            raise MeshParseError(ln, "invalid integer in cell line") from None
        if any(v < 0 or v >= nv for v in vals[:-1]):
            raise MeshParseError(ln, "vertex index out of range")
        if vals[-1] < 0:
            raise MeshParseError(ln, "negative region tag")
        key = _facet_key(vals[:-1])
        if key in seen:
            raise MeshParseError(ln, "duplicate cell")
        seen[key] = i
        cells[i], tags[i] = vals[:-1], vals[-1]
    neumann = []
    if pos < len(rows):
        ln, tok = take()
        if len(tok) != 2 or tok[0] != "facets":
            raise MeshParseError(ln, "expected 'facets <n>' section")
        try:
            nf = int(tok[1])
        except ValueError:
            raise MeshParseError(ln, "facet count must be an integer") from None
        for _ in range(nf):
            ln, tok = take()
            if len(tok) != d + 1 or tok[-1] not in FACET_KINDS:
                raise MeshParseError(ln, f"expected {d} vertex indices and one of {FACET_KINDS}")
            try:
                fv = [int(t) for t in tok[:-1]]
            except ValueError:
                raise MeshParseError(ln, "invalid facet vertex index") from None
            if any(v < 0 or v >= nv for v in fv):
                raise MeshParseError(ln, "vertex index out of range")
            if tok[-1] == "N":
                neumann.append(fv)
    if pos < len(rows):
        raise MeshParseError(rows[pos][0], "trailing content")
    return PartitionedMesh(verts, cells, tags, neumann)
