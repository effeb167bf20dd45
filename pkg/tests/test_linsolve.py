import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from conftest import crandn
from skelpot.assembly import assemble_ell
from skelpot.coefficients import CoefficientField
from skelpot.femspace import ConformingSpace
from skelpot.geometry import build_box_mesh, half_split
from skelpot.linsolve import Factorization, SolveError, factorize, solve


@pytest.fixture(scope="module")
def form8():
    mesh = build_box_mesh(1.0, 8, half_split())
    conf = ConformingSpace(mesh)
    return assemble_ell(1, 2 * np.exp(0.5j), CoefficientField.constant(mesh), conf).matrix


def test_identity_returns_the_rhs():
    b = np.array([1.0 + 2j, -3.0, 0.5j])
    x, report = solve(factorize(sp.identity(3, format="csr")), b)
    assert np.array_equal(x, b)
    assert report.residual == 0.0 and report.iterations == "direct"


def test_diagonal_two_by_two():
    x, _ = solve(factorize(sp.csr_matrix([[2.0, 0.0], [0.0, 2.0]])), np.array([2.0, 4.0]))
    assert np.array_equal(x, [1.0, 2.0])


def test_assembled_form_residual(form8, rng):
    b = crandn(rng, form8.shape[0])
    x, report = solve(factorize(form8), b)
    assert np.linalg.norm(form8 @ x - b) / np.linalg.norm(b) <= 1e-12
    assert report.residual <= 1e-12


def test_zero_rhs_gives_zero(form8):
    x, report = solve(factorize(form8), np.zeros(form8.shape[0]))
    assert not np.any(x) and report.residual == 0.0


def test_iterative_backend_meets_the_tolerance(form8, rng):
    mu = 2 * np.exp(0.5j) / 2
    handle = Factorization(form8, rotation=mu, backend="gmres")
    b = crandn(rng, form8.shape[0])
    x, report = solve(handle, b)
    assert np.linalg.norm(form8 @ x - b) / np.linalg.norm(b) <= 1e-11
    assert isinstance(report.iterations, int) and report.iterations > 0


def test_repeated_solves_are_bit_identical(form8, rng):
    handle = factorize(form8)
    b = crandn(rng, form8.shape[0])
    assert np.array_equal(handle.solve(b), handle.solve(b))


def test_handle_is_reused_across_columns(form8, rng):
    handle = factorize(form8)
    B = crandn(rng, form8.shape[0], 3)
    X, report = solve(handle, B)
    for c in range(3):
        assert np.allclose(X[:, c], handle.solve(B[:, c]), rtol=1e-13, atol=0)
    assert report.factorization_id == handle.id


@given(alpha=st.complex_numbers(max_magnitude=1e3, min_magnitude=1e-3),
       beta=st.complex_numbers(max_magnitude=1e3, min_magnitude=1e-3), seed=st.integers(0, 2**32 - 1))
def test_solve_is_linear(form8, alpha, beta, seed):
    handle = factorize(form8)
    rng = np.random.default_rng(seed)
    b1, b2 = crandn(rng, form8.shape[0]), crandn(rng, form8.shape[0])
    lhs = handle.solve(alpha * b1 + beta * b2)
    rhs = alpha * handle.solve(b1) + beta * handle.solve(b2)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(np.linalg.norm(lhs), np.linalg.norm(rhs))


def test_singular_matrix_is_reported():
    with pytest.raises(SolveError, match="singular"):
        factorize(sp.csr_matrix([[1.0, 1.0], [1.0, 1.0]]))


def test_shape_errors():
    with pytest.raises(ValueError, match="square"):
        factorize(sp.csr_matrix(np.ones((2, 3))))
    with pytest.raises(ValueError, match="length"):
        solve(factorize(sp.identity(2)), np.ones(3))


def test_non_convergence_carries_the_best_residual(rng):
    # an ill-conditioned diagonal system cannot reach a residual below rounding
    handle = Factorization(sp.diags(np.logspace(0, 15, 4)), backend="gmres")
    with pytest.raises(SolveError) as info:
        handle.solve(crandn(rng, 4), tol=1e-300)
    assert info.value.residual is not None and info.value.residual > 0
