"""Newton, single layer and double layer potentials as variational solves.

Everything for one subdomain ``j`` and one frequency ``s`` lives in a
:class:`PotentialSolver`. It assembles ``ell_j(s)`` once on the conforming
space, splits it into its two side blocks on the broken space, and factors
the conforming matrix a single time. All potentials reuse that factorization.

Trace data conventions follow :mod:`skelpot.femspace`: Dirichlet data are
scaled nodal vectors, Neumann data are scaled dual vectors. Every method
accepts a single vector or a matrix whose columns are independent data.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .assembly import FormPieces, assemble
from .coefficients import CoefficientField, Frequency, as_frequency
from .femspace import BrokenSpace, ConformingSpace, SpaceMismatch, TraceSpace, facet_dual, lifting_E
from .geometry import PartitionedMesh, SkeletonIndex
from .linsolve import Factorization, factorize
from .quadrature import barycentric, map_points, simplex_rule


class BrokenField:
    """A field on the broken space stored as conforming part plus scaled jump.

    The plus-side copy at trace node ``i`` equals ``conforming`` there plus
    ``jump[i] / s^{1/2}``; the minus-side copy equals ``conforming``. Keeping
    the scaled Dirichlet jump as data makes jump relations that hold by
    construction hold bit for bit.
    """

    __slots__ = ("conforming", "jump", "space", "freq")

    def __init__(self, conforming: np.ndarray, jump: np.ndarray, space: BrokenSpace, freq: Frequency) -> None:
        self.conforming = conforming
        self.jump = jump
        self.space = space
        self.freq = freq

    @classmethod
    def from_values(cls, values: np.ndarray, space: BrokenSpace, freq: Frequency) -> "BrokenField":
        nc = space.conforming.n
        conf = np.array(values[:nc], dtype=complex)
        jump = freq.sqrt * (values[space.trace_dofs("+")] - values[space.trace_dofs("-")])
        return cls(conf, jump, space, freq)

    def values(self) -> np.ndarray:
        """Absolute coefficients on the broken space (minus copies first)."""
        minus = self.conforming[self.space.trace_dofs("-")]
        return np.concatenate([self.conforming, minus + self.jump / self.freq.sqrt], axis=0)

    def dirichlet(self, side: str) -> np.ndarray:
        minus = self.freq.sqrt * self.conforming[self.space.trace_dofs("-")]
        if side == "-":
            return minus
        if side == "+":
            return minus + self.jump
        raise ValueError("side must be '+' or '-'")

    def side_vertex_values(self, side: str) -> np.ndarray:
        return self.space.side_vertex_values(self.values(), side)

    def column(self, c: int) -> "BrokenField":
        return BrokenField(self.conforming[:, c], self.jump[:, c], self.space, self.freq)

    def _combine(self, other: "BrokenField", sign: float) -> "BrokenField":
        if other.space is not self.space:
            raise SpaceMismatch("fields live on different broken spaces")
        return BrokenField(self.conforming + sign * other.conforming, self.jump + sign * other.jump,
                           self.space, self.freq)

    def __add__(self, other: "BrokenField") -> "BrokenField":
        return self._combine(other, 1.0)

    def __sub__(self, other: "BrokenField") -> "BrokenField":
        return self._combine(other, -1.0)

    def __neg__(self) -> "BrokenField":
        return BrokenField(-self.conforming, -self.jump, self.space, self.freq)

    def __mul__(self, alpha: complex) -> "BrokenField":
        return BrokenField(alpha * self.conforming, alpha * self.jump, self.space, self.freq)

    __rmul__ = __mul__


class PotentialSolver:
    """Layer potentials of subdomain ``j`` at frequency ``s``."""

    def __init__(
        self,
        coeffs: CoefficientField,
        skeleton: SkeletonIndex,
        j: int,
        s: complex | Frequency,
        *,
        space: BrokenSpace | None = None,
        pieces: FormPieces | None = None,
    ) -> None:
        self.mesh: PartitionedMesh = coeffs.mesh
        self.coeffs = coeffs
        self.skeleton = skeleton
        self.j = j
        self.freq = as_frequency(s)
        self.space = space or BrokenSpace(self.mesh, skeleton, j)
        self.conforming: ConformingSpace = self.space.conforming
        self.trace: TraceSpace = self.space.trace
        pieces = pieces or FormPieces.for_subdomain(coeffs, j)
        local = pieces.local(self.freq.s)
        sp_ = self.space
        self.a_minus = assemble(local, sp_.cell_dofs, sp_.n, sp_.minus_cells)
        self.a_plus = assemble(local, sp_.cell_dofs, sp_.n, sp_.plus_cells)
        self.ell = assemble(local, self.conforming.cell_dofs, self.conforming.n)
        self.factor: Factorization = factorize(self.ell, rotation=self.freq.mu)

    # ------------------------------------------------------------------
    @property
    def sqrt_s(self) -> complex:
        return self.freq.sqrt

    @cached_property
    def broken_form(self) -> sp.csr_matrix:
        return (self.a_minus + self.a_plus).tocsr()

    def _check(self, data: np.ndarray, n: int, what: str) -> np.ndarray:
        data = np.asarray(data)
        if data.shape[0] != n:
            raise SpaceMismatch(f"{what} has length {data.shape[0]}, expected {n}")
        return data

    def _trace_rhs(self, phi: np.ndarray) -> np.ndarray:
        out = np.zeros((self.conforming.n,) + phi.shape[1:], dtype=complex)
        out[self.space.trace_dofs("-")] = self.sqrt_s * phi
        return out

    def embed(self, u: np.ndarray) -> np.ndarray:
        """Conforming coefficients viewed as a broken field."""
        return np.concatenate([u, u[self.space.trace_dofs("-")]], axis=0)

    # ------------------------------------------------------------------
    def newton(self, f: np.ndarray) -> np.ndarray:
        """Solve ``ell_j(s)(N f, w) = <f, conj w>`` for all conforming ``w``."""
        f = self._check(f, self.conforming.n, "load")
        return self.factor.solve(f)

    def single_layer(self, phi: np.ndarray) -> np.ndarray:
        """Conforming field ``S_j(s) phi`` for Neumann dual data ``phi``."""
        phi = self._check(phi, self.trace.n, "Neumann data")
        return self.newton(self._trace_rhs(phi))

    def plus_lift(self, psi: np.ndarray, lifting: str = "zero") -> BrokenField:
        """Broken field vanishing on the minus side with scaled Dirichlet jump ``psi``.

        ``"zero"`` puts ``s^{-1/2} psi`` on the plus-side copies of Γ_j only;
        ``"screened"`` uses the plus-side part of :func:`lifting_E`.
        """
        psi = self._check(psi, self.trace.n, "Dirichlet data")
        conf = np.zeros((self.conforming.n,) + psi.shape[1:], dtype=complex)
        if lifting == "screened":
            cols = psi.reshape(self.trace.n, -1)
            E = np.stack([lifting_E(cols[:, c], self.freq, self.space) for c in range(cols.shape[1])], axis=1)
            E = E.reshape((self.space.n,) + psi.shape[1:])
            plus_interior = self.space.side_interior_dofs("+")
            conf[plus_interior] = E[plus_interior]
        elif lifting != "zero":
            raise ValueError("lifting must be 'zero' or 'screened'")
        return BrokenField(conf, psi.astype(complex), self.space, self.freq)

    def double_layer(self, psi: np.ndarray, lifting: str = "zero") -> BrokenField:
        """Broken field ``D_j(s) psi``: a plus-side lift plus a conforming correction.

        The correction ``v`` solves ``sum_sides a(w_lift + v, t) = 0`` for all
        conforming ``t``, which is the weak statement that the Neumann jump
        vanishes. The Dirichlet jump is carried exactly as ``psi``.
        """
        w = self.plus_lift(psi, lifting)
        E = self.space.embedding
        v = self.factor.solve(-(E.T @ (self.broken_form @ w.values())))
        return BrokenField(w.conforming + v, w.jump, self.space, self.freq)

    def green(self, psi_D: np.ndarray, psi_N: np.ndarray) -> BrokenField:
        """``S_j(s) psi_N - D_j(s) psi_D`` as a broken field, with a single solve."""
        psi_D = self._check(psi_D, self.trace.n, "Dirichlet data")
        psi_N = self._check(psi_N, self.trace.n, "Neumann data")
        w = self.plus_lift(psi_D)
        E = self.space.embedding
        rhs = self._trace_rhs(psi_N) + E.T @ (self.broken_form @ w.values())
        return BrokenField(self.factor.solve(rhs), -w.jump, self.space, self.freq)

    def as_broken(self, u: np.ndarray) -> BrokenField:
        """View a conforming field as a broken field with zero jump."""
        u = self._check(u, self.conforming.n, "conforming field")
        return BrokenField(u.astype(complex), np.zeros((self.trace.n,) + u.shape[1:], dtype=complex),
                           self.space, self.freq)

    # ------------------------------------------------------------------
    def side_form(self, side: str) -> sp.csr_matrix:
        if side == "-":
            return self.a_minus
        if side == "+":
            return self.a_plus
        raise ValueError("side must be '+' or '-'")

    def _values(self, u) -> np.ndarray:
        if isinstance(u, BrokenField):
            return u.values()
        u = np.asarray(u)
        if u.shape[0] == self.conforming.n:
            return self.embed(u)
        return self._check(u, self.space.n, "broken field")

    def conormal(self, u, side: str) -> np.ndarray:
        """Scaled outward co-normal trace (dual vector) of a field on one side.

        Entry ``i`` is ``s^{-1/2} a_side(u, Z chi_i)`` where ``Z chi_i`` is the
        side copy of the hat function of trace node ``i``; by the first Green
        identity this is the co-normal derivative along the outward normal of
        that side.
        """
        return (self.side_form(side) @ self._values(u))[self.space.trace_dofs(side)] / self.sqrt_s

    def dirichlet(self, u, side: str) -> np.ndarray:
        """Scaled nodal trace ``s^{1/2} u|_{Γ_j}`` from one side."""
        if isinstance(u, BrokenField):
            return u.dirichlet(side)
        return self.sqrt_s * self._values(u)[self.space.trace_dofs(side)]

    def homogeneous_residual(self, u) -> float:
        """Relative residual of ``u`` against test functions away from Γ_j."""
        u = self._values(u)
        r = self.broken_form @ u
        interior = np.setdiff1d(np.arange(self.space.n),
                                np.concatenate([self.space.trace_dofs("-"), self.space.trace_dofs("+")]))
        scale = max(np.linalg.norm(r), np.linalg.norm(self.broken_form.data) * np.linalg.norm(u), 1e-300)
        return float(np.linalg.norm(r[interior]) / scale)

    @cached_property
    def _side_interior(self) -> dict[str, tuple[np.ndarray, Factorization | None]]:
        out = {}
        for side in ("-", "+"):
            dofs = self.space.side_interior_dofs(side)
            A = self.side_form(side)[dofs][:, dofs]
            out[side] = (dofs, factorize(A, rotation=self.freq.mu) if dofs.size else None)
        return out

    def homogeneous_solution(self, values: np.ndarray, side: str = "-") -> BrokenField:
        """Discrete solution on one side of Γ_j with given nodal values on Γ_j.

        ``values`` are unscaled nodal values; the returned broken field is zero
        on the other side.
        """
        values = self._check(values, self.trace.n, "Dirichlet values").astype(complex)
        u = np.zeros((self.space.n,) + values.shape[1:], dtype=complex)
        td = self.space.trace_dofs(side)
        u[td] = values
        dofs, fac = self._side_interior[side]
        if fac is not None:
            rhs = -(self.side_form(side)[dofs][:, td] @ values)
            u[dofs] = fac.solve(rhs)
        return BrokenField.from_values(u, self.space, self.freq)


class SolverCache:
    """Lazily built :class:`PotentialSolver` objects keyed by ``(j, s)``."""

    def __init__(self, coeffs: CoefficientField, skeleton: SkeletonIndex) -> None:
        self.coeffs = coeffs
        self.skeleton = skeleton
        self.conforming = ConformingSpace(coeffs.mesh)
        self._spaces: dict[int, BrokenSpace] = {}
        self._pieces: dict[int, FormPieces] = {}
        self._solvers: dict[tuple[int, complex], PotentialSolver] = {}

    def space(self, j: int) -> BrokenSpace:
        if j not in self._spaces:
            self._spaces[j] = BrokenSpace(self.coeffs.mesh, self.skeleton, j, self.conforming)
        return self._spaces[j]

    def __call__(self, j: int, s) -> PotentialSolver:
        freq = as_frequency(s)
        key = (j, freq.s)
        if key not in self._solvers:
            if j not in self._pieces:
                self._pieces[j] = FormPieces.for_subdomain(self.coeffs, j)
            self._solvers[key] = PotentialSolver(self.coeffs, self.skeleton, j, freq,
                                                 space=self.space(j), pieces=self._pieces[j])
        return self._solvers[key]


# ----------------------------------------------------------------------
# Ultra-weak residual of the double layer potential


class Bump:
    """Compactly supported test function ``(1 - |x - c|^2 / rho^2)^k`` on the ball of radius ``rho``."""

    def __init__(self, center, radius: float, power: int = 4) -> None:
        if radius <= 0 or power < 3:
            raise ValueError("bump needs radius > 0 and power >= 3")
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.power = int(power)

    def _q(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y = x - self.center
        q = np.clip(1.0 - np.einsum("...d,...d->...", y, y) / self.radius**2, 0.0, None)
        return y, q

    def value(self, x: np.ndarray) -> np.ndarray:
        return self._q(x)[1] ** self.power

    def gradient(self, x: np.ndarray) -> np.ndarray:
        y, q = self._q(x)
        k, r2 = self.power, self.radius**2
        return (-2.0 * k / r2) * (q ** (k - 1))[..., None] * y

    def divergence_flux(self, x: np.ndarray, A: np.ndarray) -> np.ndarray:
        """``div(A grad v)`` for a constant matrix ``A``."""
        y, q = self._q(x)
        k, r2 = self.power, self.radius**2
        yAy = np.einsum("...d,de,...e->...", y, A, y)
        return 4.0 * k * (k - 1) * q ** (k - 2) * yAy / r2**2 - 2.0 * k * q ** (k - 1) * np.trace(A) / r2

    def support_cells(self, mesh: PartitionedMesh) -> np.ndarray:
        """Cells whose closure meets the open support ball."""
        pts = mesh.vertices[mesh.cells]
        lo, hi = pts.min(axis=1), pts.max(axis=1)
        nearest = np.clip(self.center, lo, hi)
        return np.flatnonzero(np.linalg.norm(nearest - self.center, axis=1) < self.radius)


def uwvp_residual(solver: PotentialSolver, psi: np.ndarray, bump: Bump, *, order: int = 6
                  ) -> tuple[complex, complex, complex]:
    """Ultra-weak residual of ``w = D_j(s) psi`` against a smooth test function.

    Returns ``(volume - boundary, volume, boundary)`` where ``volume`` is the
    integral of ``w`` times ``L_j(s) v`` over the mesh and ``boundary`` pairs
    ``psi`` with the scaled co-normal derivative ``s^{-1/2} <A grad v, n_j>``
    on Γ_j. The pairings are bilinear; for the exact double layer potential
    the two terms coincide. The extended coefficients must be constant on
    the support of ``v`` so that ``L_j(s) v`` is known in closed form.
    """
    mesh = solver.mesh
    A_ext, p_ext = solver.coeffs.extension(solver.j)
    support = bump.support_cells(mesh)
    if support.size == 0:
        return 0j, 0j, 0j
    A0, p0 = A_ext[support[0]], p_ext[support[0]]
    if np.any(A_ext[support] != A0) or np.any(p_ext[support] != p0):
        raise ValueError("coefficients must be constant on the support of the test function")
    psi = solver._check(psi, solver.trace.n, "Dirichlet data")
    w = solver.double_layer(psi).values()
    space = solver.space
    pts, wts = simplex_rule(mesh.dim, order)
    lam = barycentric(pts)
    x = map_points(mesh.vertices[mesh.cells[support]], pts)
    Lv = -bump.divergence_flux(x, A0) + solver.freq.s**2 * p0 * bump.value(x)
    dofs = space.cell_dofs[support]
    local = np.where(dofs >= 0, w[np.maximum(dofs, 0)], 0.0)
    wq = np.einsum("qa,ma->mq", lam, local)
    jac = mesh.volumes[support] * float(np.prod(np.arange(1, mesh.dim + 1)))
    volume = complex(np.einsum("mq,mq,q,m->", wq, Lv, wts, jac))
    conormal = facet_dual(solver.trace, lambda y, n: np.einsum("mqd,de,me->mq", bump.gradient(y), A0, n), order)
    boundary = complex(psi @ conormal) / solver.freq.sqrt
    return volume - boundary, volume, boundary
