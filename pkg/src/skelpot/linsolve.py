"""Factorize-once, solve-many wrapper for complex symmetric sparse systems.

Systems up to ``DIRECT_LIMIT`` unknowns use a sparse LU factorization with
iterative refinement. Larger systems fall back to restarted GMRES on the
system rotated by ``conj(mu)``, whose Hermitian part is positive definite
for the coercive forms used here, with a Jacobi preconditioner.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DIRECT_LIMIT = 200_000
_ids = itertools.count(1)


class SolveError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None) -> None:
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SolveReport:
    residual: float
    iterations: int | str
    factorization_id: int


class Factorization:
    """Reusable solver handle for one square sparse matrix."""

    def __init__(self, matrix, *, rotation: complex = 1.0, backend: str | None = None) -> None:
        M = sp.csc_matrix(matrix)
        if M.shape[0] != M.shape[1]:
            raise ValueError("matrix must be square")
        self.matrix = M
        self.n = M.shape[0]
        self.id = next(_ids)
        self.rotation = rotation
        self.backend = backend or ("direct" if self.n <= DIRECT_LIMIT else "gmres")
        self._lu = None
        if self.n == 0:
            return
        if self.backend == "direct":
            dtype = np.complex128 if np.iscomplexobj(M.data) else np.float64
            with warnings.catch_warnings():
                warnings.simplefilter("error", spla.MatrixRankWarning)
                try:
                    self._lu = spla.splu(M.astype(dtype), permc_spec="COLAMD")
                except (RuntimeError, spla.MatrixRankWarning) as exc:
                    raise SolveError(f"matrix is singular to working precision: {exc}") from None
            diag = np.abs(self._lu.U.diagonal())
            if diag.size and (diag.min() <= diag.max() * 1e-15 or not np.all(np.isfinite(diag))):
                raise SolveError("matrix is singular to working precision")
        else:
            rot = np.conj(rotation)
            self._rotated = (rot * M).tocsr()
            d = self._rotated.diagonal()
            d = np.where(np.abs(d) > 0, d, 1.0)
            self._precond = spla.LinearOperator(M.shape, matvec=lambda x: x / d, dtype=complex)

    def _direct(self, b: np.ndarray) -> np.ndarray:
        dtype = np.result_type(b, self._lu.U.dtype)
        if np.iscomplexobj(b) and not np.iscomplexobj(self._lu.U.data):
            return self._lu.solve(np.ascontiguousarray(b.real)) + 1j * self._lu.solve(np.ascontiguousarray(b.imag))
        return self._lu.solve(np.ascontiguousarray(b, dtype=dtype))

    def solve_with_report(self, b, tol: float = 1e-12) -> tuple[np.ndarray, SolveReport]:
        b = np.asarray(b)
        if b.shape[0] != self.n:
            raise ValueError("right-hand side length does not match the matrix")
        if self.n == 0:
            return b.astype(complex), SolveReport(0.0, "direct", self.id)
        bnorm = np.linalg.norm(b, axis=0)
        if np.all(bnorm == 0):
            return np.zeros(b.shape, dtype=np.result_type(b, self.matrix.dtype)), SolveReport(0.0, "direct", self.id)
        safe = np.where(bnorm > 0, bnorm, 1.0)
        if self.backend == "direct":
            x = self._direct(b)
            res = np.max(np.linalg.norm(b - self.matrix @ x, axis=0) / safe)
            steps = 0
            while res > tol and steps < 3:
                x = x + self._direct(b - self.matrix @ x)
                res = np.max(np.linalg.norm(b - self.matrix @ x, axis=0) / safe)
                steps += 1
            if res > tol:
                raise SolveError(f"direct solve residual {res:.2e} above tolerance {tol:.1e}", res)
            return x, SolveReport(float(res), "direct", self.id)
        return self._gmres(b, tol, safe)

    def _gmres(self, b, tol, safe):
        cols = b.reshape(self.n, -1)
        out = np.zeros(cols.shape, dtype=complex)
        total = 0
        rot = np.conj(self.rotation)
        for c in range(cols.shape[1]):
            count = [0]

            def cb(_):
                count[0] += 1

            x, info = spla.gmres(self._rotated, rot * cols[:, c], rtol=tol, restart=200, maxiter=5000,
                                 M=self._precond, callback=cb, callback_type="pr_norm")
            out[:, c] = x
            total += count[0]
        res = np.max(np.linalg.norm(cols - self.matrix @ out, axis=0) / safe.reshape(-1))
        if res > tol * 10:
            raise SolveError(f"iterative solve did not converge; best residual {res:.2e}", res)
        return out.reshape(b.shape), SolveReport(float(res), total, self.id)

    def solve(self, b, tol: float = 1e-12) -> np.ndarray:
        return self.solve_with_report(b, tol)[0]


def factorize(matrix, **kwargs) -> Factorization:
    return Factorization(matrix, **kwargs)


def solve(handle: Factorization, b, tol: float = 1e-12) -> tuple[np.ndarray, SolveReport]:
    return handle.solve_with_report(b, tol)
