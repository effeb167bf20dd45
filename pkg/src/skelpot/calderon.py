"""Jumps and means, boundary operators, the Calderón operator and its estimates.

For a field ``u`` on the broken space of Γ_j the scaled jumps and means are

    [u]_D(s)   = s^{1/2} (u^+ - u^-)          {{u}}_D(s) = s^{1/2} (u^+ + u^-) / 2
    [u]_N(s)   = -g^+ - g^-                   {{u}}_N(s) = (g^- - g^+) / 2

where ``g^-`` and ``g^+`` are the scaled outward co-normal traces of the two
sides (see :meth:`PotentialSolver.conormal`). The boundary operators are
V = {{S}}_D, K = {{D}}_D, K' = {{S}}_N and W = -{{D}}_N, and the Calderón
block is ``C_j = [[-K, V], [W, K']]`` acting on ``(Dirichlet, Neumann)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla

from .coefficients import CoefficientField, as_frequency
from .geometry import SkeletonIndex
from .potentials import BrokenField, PotentialSolver, SolverCache

#: Sign applied to the co-normal mean. Only verification runs change it, to
#: check that a wrong sign is caught by the projection test.
NEUMANN_MEAN_SIGN = 1.0


class CalderonError(ValueError):
    pass


@dataclass(frozen=True)
class JumpsAndMeans:
    jump_D: np.ndarray
    jump_N: np.ndarray
    mean_D: np.ndarray
    mean_N: np.ndarray


def jump_and_mean(solver: PotentialSolver, u, *, neumann_mean_sign: float | None = None) -> JumpsAndMeans:
    """Scaled Dirichlet and co-normal jumps and means of ``u`` across Γ_j.

    ``u`` may be conforming coefficients, absolute broken coefficients or a
    :class:`BrokenField`. The co-normal quantities assume ``u`` solves the
    homogeneous equation on both sides.
    """
    sign = NEUMANN_MEAN_SIGN if neumann_mean_sign is None else neumann_mean_sign
    if not isinstance(u, BrokenField):
        u = np.asarray(u)
        if u.shape[0] == solver.conforming.n:
            u = solver.as_broken(u)
        else:
            u = BrokenField.from_values(u, solver.space, solver.freq)
    d_minus = u.dirichlet("-")
    g_minus = solver.conormal(u, "-")
    g_plus = solver.conormal(u, "+")
    jump_D = u.jump.copy()
    mean_D = d_minus + 0.5 * u.jump
    return JumpsAndMeans(jump_D, -g_plus - g_minus, mean_D, sign * 0.5 * (g_minus - g_plus))


def cauchy_trace(solver: PotentialSolver, u, side: str = "-") -> tuple[np.ndarray, np.ndarray]:
    """Scaled Cauchy data ``(gamma_D(s) u, gamma_N(s) u)`` from one side."""
    return solver.dirichlet(u, side), solver.conormal(u, side)


# ----------------------------------------------------------------------
# Partial jumps on Γ_{j,k}


def partial_jump(solver_j: PotentialSolver, u_j, solver_k: PotentialSolver, u_k) -> tuple[np.ndarray, np.ndarray]:
    """Jumps of per-subdomain fields across Γ_{j,k}, listed by vertex.

    Each ``u`` is a field whose minus side (the inside of its subdomain) is
    meaningful. Returns ``(gamma_D,j u_j - gamma_D,k u_k,
    -gamma_N,j u_j - gamma_N,k u_k)`` restricted to the nodes of Γ_{j,k}
    in ascending vertex order; both are empty if the two parts do not meet.
    """
    dj, nj = cauchy_trace(solver_j, u_j, "-")
    dk, nk = cauchy_trace(solver_k, u_k, "-")
    return partial_jump_traces(solver_j.skeleton, solver_j.trace, (dj, nj), solver_k.trace, (dk, nk))


def partial_jump_traces(skeleton: SkeletonIndex, trace_j, data_j, trace_k, data_k) -> tuple[np.ndarray, np.ndarray]:
    """:func:`partial_jump` for trace data that is already available."""
    nodes = skeleton.interface_nodes(trace_j.j, trace_k.j, trace_j.mesh.truncation_vertices)
    if nodes.size == 0:
        return np.zeros(0, dtype=complex), np.zeros(0, dtype=complex)
    ij = trace_j.local_indices(nodes)
    ik = trace_k.local_indices(nodes)
    return data_j[0][ij] - data_k[0][ik], -data_j[1][ij] - data_k[1][ik]


# ----------------------------------------------------------------------
# Boundary operators


def apply_V(solver: PotentialSolver, phi: np.ndarray) -> np.ndarray:
    """Single layer operator: the (two-sided) scaled trace of ``S phi``."""
    return solver.sqrt_s * solver.single_layer(phi)[solver.space.trace_dofs("-")]


def apply_K(solver: PotentialSolver, psi: np.ndarray) -> np.ndarray:
    return jump_and_mean(solver, solver.double_layer(psi)).mean_D


def apply_Kp(solver: PotentialSolver, phi: np.ndarray) -> np.ndarray:
    return jump_and_mean(solver, solver.single_layer(phi)).mean_N


def apply_W(solver: PotentialSolver, psi: np.ndarray) -> np.ndarray:
    return -jump_and_mean(solver, solver.double_layer(psi)).mean_N


class SkeletonOperators:
    """V, K, K' and W of one subdomain and frequency, applied or materialized."""

    def __init__(self, solver: PotentialSolver) -> None:
        self.solver = solver
        self.n = solver.trace.n

    def apply_V(self, phi):
        return apply_V(self.solver, phi)

    def apply_K(self, psi):
        return apply_K(self.solver, psi)

    def apply_Kp(self, phi):
        return apply_Kp(self.solver, phi)

    def apply_W(self, psi):
        return apply_W(self.solver, psi)

    def apply_C(self, psi_D: np.ndarray, psi_N: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``C_j (psi_D, psi_N)`` through one Green-formula solve.

        With ``u = S psi_N - D psi_D`` one has ``C_j psi = ({{u}}_D, {{u}}_N)``.
        """
        jm = jump_and_mean(self.solver, self.solver.green(psi_D, psi_N))
        return jm.mean_D, jm.mean_N

    @cached_property
    def calderon_matrix(self) -> np.ndarray:
        """Dense ``2n x 2n`` matrix of ``C_j`` in (Dirichlet, Neumann) order."""
        n = self.n
        eye = np.eye(n)
        zero = np.zeros((n, n))
        top = self.apply_C(np.hstack([eye, zero]), np.hstack([zero, eye]))
        return np.vstack([top[0], top[1]])

    def blocks(self) -> dict[str, np.ndarray]:
        """Materialized ``V, K, Kp, W`` read off the Calderón matrix."""
        n = self.n
        C = self.calderon_matrix
        return {"V": C[:n, n:], "K": -C[:n, :n], "W": C[n:, :n], "Kp": C[n:, n:]}


def write_operator_csv(matrix: np.ndarray, path) -> None:
    """CSV rows ``row,col,re,im`` for every entry of a dense operator."""
    matrix = np.asarray(matrix, dtype=complex)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["row", "col", "re", "im"])
        for (r, c), v in np.ndenumerate(matrix):
            w.writerow([r, c, repr(float(v.real)), repr(float(v.imag))])


# ----------------------------------------------------------------------
# Multi-trace vectors and the X pairing


@dataclass(frozen=True)
class MultiTrace:
    """Per-subdomain Cauchy data ``(psi_D;j, psi_N;j)`` for ``j = 1..n``."""

    parts: tuple[tuple[np.ndarray, np.ndarray], ...]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(d.shape[0] for d, _ in self.parts)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([d, n]) for d, n in self.parts]) if self.parts else np.zeros(0)

    @classmethod
    def from_flat(cls, sizes: Sequence[int], vec: np.ndarray) -> "MultiTrace":
        parts, pos = [], 0
        vec = np.asarray(vec)
        if vec.shape[0] != 2 * sum(sizes):
            raise CalderonError("partition mismatch: vector length does not match the trace sizes")
        for n in sizes:
            parts.append((vec[pos:pos + n], vec[pos + n:pos + 2 * n]))
            pos += 2 * n
        return cls(tuple(parts))

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "MultiTrace":
        return cls.from_flat(sizes, np.zeros(2 * sum(sizes), dtype=complex))

    def __add__(self, other: "MultiTrace") -> "MultiTrace":
        _same(self, other)
        return MultiTrace(tuple((a + c, b + d) for (a, b), (c, d) in zip(self.parts, other.parts)))

    def __sub__(self, other: "MultiTrace") -> "MultiTrace":
        _same(self, other)
        return MultiTrace(tuple((a - c, b - d) for (a, b), (c, d) in zip(self.parts, other.parts)))


def _same(a: MultiTrace, b: MultiTrace) -> None:
    if a.sizes != b.sizes:
        raise CalderonError("partition mismatch between multi-trace vectors")


def x_pairing(phi: MultiTrace, psi: MultiTrace) -> complex:
    """Bilinear skew pairing ``sum_j <phi_D, psi_N> + <psi_D, phi_N>`` (no conjugation)."""
    _same(phi, psi)
    return complex(sum(np.dot(pd, qn) + np.dot(qd, pn) for (pd, pn), (qd, qn) in zip(phi.parts, psi.parts)))


def x_pairing_matrix(sizes: Sequence[int]) -> np.ndarray:
    """Matrix ``J`` with ``x_pairing(phi, psi) = phi.flat() @ J @ psi.flat()``."""
    blocks = []
    for n in sizes:
        eye, zero = np.eye(n), np.zeros((n, n))
        blocks.append(np.block([[zero, eye], [eye, zero]]))
    return sla.block_diag(*blocks) if blocks else np.zeros((0, 0))


# ----------------------------------------------------------------------
# Reference Grams


@dataclass(frozen=True)
class SobolevGrams:
    """Discrete H^{1/2} and H^{-1/2} Grams of one Γ_j.

    ``half`` is the Hermitian part of W and ``minus_half`` that of V, both
    at ``s = 1`` with ``A = I`` and ``p = 1``.
    """

    half: np.ndarray
    minus_half: np.ndarray

    @property
    def x_gram(self) -> np.ndarray:
        return sla.block_diag(self.half, self.minus_half)

    def norm_D(self, psi: np.ndarray) -> float:
        return float(np.sqrt(max(np.real(np.vdot(psi, self.half @ psi)), 0.0)))

    def norm_N(self, phi: np.ndarray) -> float:
        return float(np.sqrt(max(np.real(np.vdot(phi, self.minus_half @ phi)), 0.0)))


def hermitian_part(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.conj().T)


def sobolev_grams(mesh, skeleton: SkeletonIndex, j: int, space=None) -> SobolevGrams:
    """Reference Grams of Γ_j from V and W at ``s = 1``, ``A = I``, ``p = 1``."""
    unit = CoefficientField.constant(mesh)
    solver = PotentialSolver(unit, skeleton, j, 1.0, space=space)
    eye = np.eye(solver.trace.n)
    V = apply_V(solver, eye)
    # the reference Grams always use the true co-normal mean, whatever the fault hook says
    W = -jump_and_mean(solver, solver.double_layer(eye), neumann_mean_sign=1.0).mean_N
    grams = SobolevGrams(hermitian_part(W), hermitian_part(V))
    for name, g in (("H^1/2", grams.half), ("H^-1/2", grams.minus_half)):
        if g.size and np.linalg.eigvalsh(g)[0] <= 0:
            raise CalderonError(f"{name} Gram of subdomain {j} is not positive definite")
    return grams


class CalderonSystem:
    """Calderón operators of all subdomains, sharing solvers and Grams.

    ``coeffs`` supplies the physical coefficients and their extensions; the
    Grams always use the reference coefficients ``A = I``, ``p = 1``.
    """

    def __init__(self, coeffs: CoefficientField, skeleton: SkeletonIndex | None = None) -> None:
        from .geometry import extract_skeleton

        self.coeffs = coeffs
        self.mesh = coeffs.mesh
        self.skeleton = skeleton or extract_skeleton(self.mesh)
        self.solvers = SolverCache(coeffs, self.skeleton)
        self._ops: dict[tuple[int, complex], SkeletonOperators] = {}
        self._grams: dict[int, SobolevGrams] = {}

    @property
    def subdomains(self) -> list[int]:
        return sorted(self.skeleton.boundaries)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(self.solvers.space(j).trace.n for j in self.subdomains)

    def operators(self, j: int, s) -> SkeletonOperators:
        freq = as_frequency(s)
        key = (j, freq.s)
        if key not in self._ops:
            self._ops[key] = SkeletonOperators(self.solvers(j, freq))
        return self._ops[key]

    def grams(self, j: int) -> SobolevGrams:
        if j not in self._grams:
            self._grams[j] = sobolev_grams(self.mesh, self.skeleton, j, self.solvers.space(j))
        return self._grams[j]

    def x_gram(self) -> np.ndarray:
        return sla.block_diag(*[self.grams(j).x_gram for j in self.subdomains])

    def x_norm(self, m: MultiTrace) -> float:
        v = m.flat()
        return float(np.sqrt(max(np.real(np.vdot(v, self.x_gram() @ v)), 0.0)))

    def apply(self, s, m: MultiTrace) -> MultiTrace:
        """Block-diagonal application of ``C(s)`` to a multi-trace vector."""
        if m.sizes != self.sizes:
            raise CalderonError("partition mismatch")
        return MultiTrace(tuple(self.operators(j, s).apply_C(d, n) for j, (d, n) in zip(self.subdomains, m.parts)))

    def matrix(self, s) -> np.ndarray:
        return sla.block_diag(*[self.operators(j, s).calderon_matrix for j in self.subdomains])


def calderon_apply(system: CalderonSystem, s, m: MultiTrace) -> MultiTrace:
    return system.apply(s, m)


def projection_residual(ops: SkeletonOperators, gram: np.ndarray, data: tuple[np.ndarray, np.ndarray]) -> float:
    """``|(C_j - I/2) data|_G / |data|_G`` for Cauchy data ``data``."""
    d, n = data
    v = np.concatenate([d, n])
    nrm = np.sqrt(max(np.real(np.vdot(v, gram @ v)), 0.0))
    if nrm == 0.0:
        raise CalderonError("degenerate input: Cauchy data is zero")
    cd, cn = ops.apply_C(d, n)
    r = np.concatenate([cd, cn]) - 0.5 * v
    return float(np.sqrt(max(np.real(np.vdot(r, gram @ r)), 0.0)) / nrm)


def calderon_projection_residual(system: CalderonSystem, j: int, s, u_minus: BrokenField) -> float:
    """Projection residual for a discrete homogeneous solution inside Ω_j."""
    ops = system.operators(j, s)
    data = cauchy_trace(ops.solver, u_minus, "-")
    return projection_residual(ops, system.grams(j).x_gram, data)


# ----------------------------------------------------------------------
# Constants


CONSTANTS = ("V-coer", "V-cont", "W-coer", "W-cont", "K-norm", "Kp-norm", "C-coer", "C-cont")


def _coercivity(pairing: np.ndarray, gram: np.ndarray) -> float:
    return float(sla.eigh(hermitian_part(pairing), gram, eigvals_only=True)[0])


def _continuity(pairing: np.ndarray, gram_row: np.ndarray, gram_col: np.ndarray | None = None) -> float:
    """Largest ``|y^H P x| / (|x|_col |y|_row)``."""
    gram_col = gram_row if gram_col is None else gram_col
    Lr = np.linalg.cholesky(gram_row)
    Lc = np.linalg.cholesky(gram_col)
    X = sla.solve_triangular(Lr, pairing, lower=True)
    X = sla.solve_triangular(Lc.conj(), X.T, lower=True).T
    return float(np.linalg.norm(X, 2))


def _operator_norm(op: np.ndarray, gram: np.ndarray) -> float:
    """``sup |op x|_G / |x|_G``."""
    L = np.linalg.cholesky(gram)
    X = L.conj().T @ op
    X = sla.solve_triangular(L.conj(), X.T, lower=True).T
    return float(np.linalg.norm(X, 2))


def estimate_constants(system: CalderonSystem, s, which: Iterable[str] = CONSTANTS,
                       subdomains: Iterable[int] | None = None) -> dict[str, float]:
    """Measured coercivity and continuity constants against the reference Grams.

    Per-subdomain values are combined into global ones: the minimum for
    coercivity-type quantities and the maximum for bounds.
    """
    which = list(which)
    unknown = set(which) - set(CONSTANTS)
    if unknown:
        raise CalderonError(f"unknown constants {sorted(unknown)}")
    subs = list(subdomains) if subdomains is not None else system.subdomains
    out: dict[str, list[float]] = {w: [] for w in which}
    for j in subs:
        g = system.grams(j)
        ops = system.operators(j, s)
        b = ops.blocks()
        n = ops.n
        for w in which:
            if w == "V-coer":
                val = _coercivity(b["V"], g.minus_half)
            elif w == "V-cont":
                val = _continuity(b["V"], g.minus_half)
            elif w == "W-coer":
                val = _coercivity(b["W"], g.half)
            elif w == "W-cont":
                val = _continuity(b["W"], g.half)
            elif w == "K-norm":
                val = _operator_norm(b["K"], g.half)
            elif w == "Kp-norm":
                val = _operator_norm(b["Kp"], g.minus_half)
            else:
                P = x_pairing_matrix([n]) @ ops.calderon_matrix
                val = _coercivity(P, g.x_gram) if w == "C-coer" else _continuity(P, g.x_gram)
            out[w].append(val)
    return {w: (min(v) if w.endswith("coer") else max(v)) for w, v in out.items()}
