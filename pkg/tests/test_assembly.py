import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import crandn
from oracles import element_matrices
from skelpot.assembly import (
    assemble,
    FormPieces,
    assemble_ell,
    local_mass,
    local_stiffness,
    trace_rhs,
    weak_conormal,
)
from skelpot.coefficients import CoefficientField, checkerboard, matrix_from_scalar
from skelpot.femspace import BrokenSpace, ConformingSpace, facet_dual, freq_norm
from skelpot.geometry import PartitionedMesh, build_box_mesh, extract_skeleton, half_split
from skelpot.linsolve import factorize


@pytest.fixture(scope="module")
def reference_triangle():
    return PartitionedMesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]], [1])


@pytest.fixture(scope="module")
def checker8():
    mesh = build_box_mesh(1.0, 8, half_split())
    A = matrix_from_scalar(checkerboard(1.0, 3.0, 0.5)(mesh.barycenters), 2)
    p = 1.0 + 0.5 * (mesh.barycenters[:, 1] > 0)
    return CoefficientField(mesh, A, p), ConformingSpace(mesh)


def test_reference_triangle_stiffness_by_hand(reference_triangle):
    K = local_stiffness(reference_triangle, np.eye(2)[None])[0]
    expected = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    assert np.allclose(K, expected, rtol=0, atol=1e-15)


def test_reference_triangle_mass_by_hand(reference_triangle):
    M = local_mass(reference_triangle, np.ones(1))[0]
    expected = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 24
    assert np.allclose(M, expected, rtol=0, atol=1e-16)


def test_reference_triangle_form_at_unit_frequency(reference_triangle):
    pieces = FormPieces.unit(reference_triangle)
    oracle = element_matrices(reference_triangle.vertices, np.eye(2), 1.0, 1.0)
    assert np.allclose(pieces.local(1.0)[0], oracle, rtol=0, atol=1e-15)


def test_element_matrices_agree_with_the_loop_oracle(checker8):
    coeffs, _ = checker8
    mesh = coeffs.mesh
    s = 1.3 + 0.7j
    local = FormPieces(mesh, coeffs.A, coeffs.p).local(s)
    for c in range(0, mesh.n_cells, 17):
        oracle = element_matrices(mesh.vertices[mesh.cells[c]], coeffs.A[c], coeffs.p[c], s)
        assert np.allclose(local[c], oracle, rtol=1e-13, atol=1e-15)


def test_form_depends_affinely_on_s_squared(checker8):
    coeffs, conf = checker8
    s, t = 2.0 + 1.0j, 0.5 + 0.2j
    Ms = assemble_ell(1, s, coeffs, conf).matrix
    Mt = assemble_ell(1, t, coeffs, conf).matrix
    A, p = coeffs.extension(1)
    mass = FormPieces(coeffs.mesh, A, p).mass
    weighted = assemble(mass, conf.cell_dofs, conf.n)
    assert abs((Ms - Mt) - (s**2 - t**2) * weighted).max() < 1e-14


def test_zero_field_gives_zero_quadratic_form(checker8):
    coeffs, conf = checker8
    M = assemble_ell(1, 2.0, coeffs, conf).matrix
    z = np.zeros(conf.n)
    assert z @ M @ z == 0


@pytest.mark.parametrize("s", [1.0, 3.0 + 4.0j, 0.5 + 2.0j])
def test_form_matrix_is_symmetric_not_hermitian(checker8, s):
    coeffs, conf = checker8
    M = assemble_ell(1, s, coeffs, conf).matrix
    assert (M - M.T).count_nonzero() == 0
    if complex(s).imag:
        assert abs(M - M.conj().T).max() > 0


def test_broken_form_returns_two_side_blocks(checker8):
    coeffs, _ = checker8
    mesh = coeffs.mesh
    space = BrokenSpace(mesh, extract_skeleton(mesh), 1)
    minus, plus = assemble_ell(1, 1.0, coeffs, space)
    assert minus.space == "broken-" and plus.space == "broken+"
    # each side block only couples to its own copy of the trace nodes
    assert abs(minus.matrix[:, space.trace_dofs("+")]).max() == 0
    assert abs(plus.matrix[:, space.trace_dofs("-")]).max() == 0
    conf = ConformingSpace(mesh)
    whole = assemble_ell(1, 1.0, coeffs, conf).matrix
    E = space.embedding
    assert abs(E.T @ (minus.matrix + plus.matrix) @ E - whole).max() < 1e-14


@given(seed=st.integers(0, 2**32 - 1), modulus=st.floats(0.5, 20.0), angle=st.floats(-1.4, 1.4))
def test_rotated_coercivity_and_continuity(checker8, seed, modulus, angle):
    coeffs, conf = checker8
    s = modulus * np.exp(1j * angle)
    mu = s / abs(s)
    M = assemble_ell(1, s, coeffs, conf).matrix
    lam, Lam = coeffs.bounds(1).lower, coeffs.bounds(1).upper
    rng = np.random.default_rng(seed)
    v, w = crandn(rng, conf.n), crandn(rng, conf.n)
    nv, nw = freq_norm(v, s, conf), freq_norm(w, s, conf)
    lower = lam * (s.real / abs(s)) * nv**2
    assert (np.conj(mu) * (v.conj() @ M @ v)).real >= lower - 1e-10 * max(1.0, nv**2)
    assert abs(v.conj() @ M @ w) <= Lam * nv * nw + 1e-10 * max(1.0, nv * nw)


def test_trace_rhs_examples(half16):
    mesh, skel = half16
    space = BrokenSpace(mesh, skel, 1)
    conf, trace = space.conforming, space.trace
    assert not np.any(trace_rhs(np.zeros(trace.n), 1.0, trace, conf))
    unit = np.eye(trace.n)[4]
    r1 = trace_rhs(unit, 1.0, trace, conf)
    assert np.flatnonzero(r1).tolist() == [conf.dof_of_vertex[trace.nodes[4]]]
    assert np.array_equal(trace_rhs(unit, 4.0, trace, conf), 2 * r1)
    with pytest.raises(ValueError, match="space mismatch"):
        trace_rhs(np.zeros(trace.n + 1), 1.0, trace, conf)


def test_weak_conormal_of_zero_is_zero(half16):
    mesh, skel = half16
    coeffs = CoefficientField.constant(mesh)
    space = BrokenSpace(mesh, skel, 1)
    minus, _ = assemble_ell(1, 2.0, coeffs, space)
    assert not np.any(weak_conormal(np.zeros(space.n), "-", 2.0, minus.matrix, space))


def test_weak_conormal_sides_flip_sign_for_a_conforming_solution(half16):
    mesh, skel = half16
    coeffs = CoefficientField.constant(mesh)
    space = BrokenSpace(mesh, skel, 1)
    conf = space.conforming
    s = 2.0
    # conforming solution driven by a point load far from Γ_1, on the plus side
    whole = assemble_ell(1, s, coeffs, conf).matrix
    load = np.zeros(conf.n)
    source = np.argmin(np.linalg.norm(mesh.vertices[conf.vertex_of_dof] - [0.5, 0.25], axis=1))
    load[source] = 1.0
    u = factorize(whole).solve(load)
    minus, plus = assemble_ell(1, s, coeffs, space)
    w = space.embed(u)
    gm = weak_conormal(w, "-", s, minus.matrix, space, check=True)
    gp = weak_conormal(w, "+", s, plus.matrix, space)
    assert np.linalg.norm(gm) > 1e-4
    assert np.allclose(gm, -gp, rtol=0, atol=1e-13 * np.linalg.norm(gm))


def test_weak_conormal_balances_an_interface_source(half16):
    mesh, skel = half16
    coeffs = CoefficientField.constant(mesh)
    space = BrokenSpace(mesh, skel, 1)
    s = 2.0
    whole = assemble_ell(1, s, coeffs, space.conforming).matrix
    load = trace_rhs(np.ones(space.trace.n), s, space.trace, space.conforming)
    w = space.embed(factorize(whole).solve(load))
    minus, plus = assemble_ell(1, s, coeffs, space)
    gm = weak_conormal(w, "-", s, minus.matrix, space, check=True)
    gp = weak_conormal(w, "+", s, plus.matrix, space, check=True)
    assert np.allclose(gm + gp, load[space.trace_dofs("-")] / np.sqrt(s), atol=1e-12)
    # the structured mesh is symmetric under the point reflection x -> -x
    assert np.allclose(gm, gp[::-1], atol=1e-12)


def test_weak_conormal_warns_off_the_homogeneous_precondition(half16):
    mesh, skel = half16
    coeffs = CoefficientField.constant(mesh)
    space = BrokenSpace(mesh, skel, 1)
    minus, _ = assemble_ell(1, 1.0, coeffs, space)
    with pytest.warns(UserWarning, match="not discretely homogeneous"):
        weak_conormal(np.ones(space.n), "-", 1.0, minus.matrix, space, check=True)


def exponential_conormal_error(n: int, s: complex) -> float:
    mesh = build_box_mesh(1.0, n, half_split())
    skel = extract_skeleton(mesh)
    coeffs = CoefficientField.constant(mesh)
    space = BrokenSpace(mesh, skel, 1)
    d = np.array([1.0, 0.0])
    values = np.exp(-s * mesh.vertices @ d)
    u = space.embed(values[space.conforming.vertex_of_dof])
    minus, _ = assemble_ell(1, s, coeffs, space)
    g = weak_conormal(u, "-", s, minus.matrix, space)
    exact = facet_dual(space.trace, lambda x, nrm: -s * np.exp(-s * x @ d) * (nrm @ d)[:, None] / np.sqrt(s))
    # nodes next to the truncation box see the homogeneous Dirichlet cut-off, skip them
    keep = np.abs(space.trace.coordinates[:, 1]) <= 0.5
    return np.linalg.norm((g - exact)[keep]) / np.linalg.norm(exact[keep])


def test_weak_conormal_of_an_exponential_converges():
    s = 2.0
    e32, e64 = exponential_conormal_error(32, s), exponential_conormal_error(64, s)
    assert e32 <= 0.1
    assert e64 <= 0.6 * e32
