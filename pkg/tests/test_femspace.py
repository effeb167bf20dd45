import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import crandn
from oracles import element_matrices
from skelpot.calderon import sobolev_grams
from skelpot.femspace import (
    BrokenSpace,
    ConformingSpace,
    Field,
    SpaceMismatch,
    TraceSpace,
    dirichlet_trace,
    freq_norm,
    lifting_E,
    nodal_zero_extension,
    write_trace_csv,
    write_vtk,
)
from skelpot.geometry import build_box_mesh, extract_skeleton, half_split


def quadrature_norm(mesh, vertex_values, modulus):
    """Frequency norm by looping over cells with independently built element matrices."""
    total = 0.0
    for cell in mesh.cells:
        Ke = element_matrices(mesh.vertices[cell], np.eye(mesh.dim), 1.0, modulus)
        v = vertex_values[cell]
        total += np.real(np.conj(v) @ Ke @ v)
    return np.sqrt(total)


@pytest.fixture(scope="module")
def spaces():
    mesh = build_box_mesh(1.0, 8, half_split())
    skel = extract_skeleton(mesh)
    conf = ConformingSpace(mesh)
    return mesh, skel, conf, BrokenSpace(mesh, skel, 1, conf)


def test_conforming_dofs_are_the_interior_vertices(spaces):
    mesh, _, conf, _ = spaces
    assert conf.n == 7 * 7 == np.count_nonzero(~mesh.truncation_vertices)


def test_freq_norm_of_zero_is_zero(spaces):
    _, _, conf, broken = spaces
    assert freq_norm(np.zeros(conf.n), 2.0, conf) == 0.0
    assert freq_norm(np.zeros(broken.n), 2.0, broken) == 0.0


@pytest.mark.parametrize("s", [1.0, 2.0, 2 * np.exp(1j * np.pi / 3)])
def test_freq_norm_matches_cellwise_quadrature(spaces, rng, s):
    mesh, _, conf, _ = spaces
    v = crandn(rng, conf.n)
    expected = quadrature_norm(mesh, conf.to_vertices(v), abs(s))
    assert freq_norm(v, s, conf) == pytest.approx(expected, rel=1e-12)


def test_unit_frequency_norm_is_the_h1_norm(spaces, rng):
    mesh, _, conf, _ = spaces
    v = crandn(rng, conf.n)
    K, M = conf.norm_matrices
    h1 = np.sqrt(np.real(np.vdot(v, K @ v) + np.vdot(v, M @ v)))
    assert freq_norm(v, 1.0, conf) == pytest.approx(h1, rel=1e-13)
    assert freq_norm(v, 1j * 1.0 + 1e-9, conf) == pytest.approx(h1, rel=1e-8)


def test_conforming_embedding_preserves_the_norm(spaces, rng):
    _, _, conf, broken = spaces
    v = crandn(rng, conf.n)
    w = broken.embed(v)
    assert broken.is_conforming(w)
    assert freq_norm(w, 3.0, broken) == pytest.approx(freq_norm(v, 3.0, conf), rel=1e-14)


def test_dirichlet_trace_examples(spaces, rng):
    mesh, skel, conf, broken = spaces
    trace = broken.trace
    v = crandn(rng, conf.n)
    w = broken.embed(v)
    assert np.array_equal(dirichlet_trace(w, "-", broken, 1.0), dirichlet_trace(w, "+", broken, 1.0))
    unit = np.zeros(conf.n)
    unit[conf.dof_of_vertex[trace.nodes[2]]] = 1.0
    e = dirichlet_trace(unit, "-", conf, 1.0, trace)
    assert np.array_equal(e, np.eye(trace.n)[2])
    assert np.allclose(dirichlet_trace(w, "-", broken, 4.0), 2 * dirichlet_trace(w, "-", broken, 1.0), rtol=0,
                       atol=1e-15)


@given(alpha=st.complex_numbers(max_magnitude=10), beta=st.complex_numbers(max_magnitude=10),
       seed=st.integers(0, 2**32 - 1))
def test_dirichlet_trace_is_linear(spaces, alpha, beta, seed):
    _, _, _, broken = spaces
    rng = np.random.default_rng(seed)
    u, v = crandn(rng, broken.n), crandn(rng, broken.n)
    s = 1.5 + 0.5j
    lhs = dirichlet_trace(alpha * u + beta * v, "+", broken, s)
    rhs = alpha * dirichlet_trace(u, "+", broken, s) + beta * dirichlet_trace(v, "+", broken, s)
    assert np.allclose(lhs, rhs, rtol=1e-13, atol=1e-12)


def test_nodal_zero_extension(spaces, rng):
    _, _, _, broken = spaces
    n = broken.trace.n
    assert not np.any(nodal_zero_extension(np.zeros(n), "+", broken))
    w = nodal_zero_extension(np.eye(n)[3], "+", broken)
    assert np.count_nonzero(w) == 1
    psi = crandn(rng, n)
    plus = nodal_zero_extension(psi, "+", broken)
    minus = nodal_zero_extension(psi, "-", broken)
    assert np.array_equal(plus[broken.trace_dofs("+")] - plus[broken.trace_dofs("-")], psi)
    assert np.array_equal(minus[broken.trace_dofs("+")] - minus[broken.trace_dofs("-")], -psi)


def test_lifting_of_zero_is_zero(spaces):
    _, _, _, broken = spaces
    assert not np.any(lifting_E(np.zeros(broken.trace.n), 2.0, broken))


def test_lifting_reproduces_the_trace(spaces, rng):
    _, _, _, broken = spaces
    s = 2 * np.exp(0.4j)
    psi = crandn(rng, broken.trace.n)
    E = lifting_E(psi, s, broken)
    assert broken.is_conforming(E)
    assert np.allclose(dirichlet_trace(E, "-", broken, s), psi, rtol=1e-15, atol=1e-15)


def test_lifting_decays_monotonically_away_from_the_interface():
    mesh = build_box_mesh(1.0, 32, half_split())
    skel = extract_skeleton(mesh)
    broken = BrokenSpace(mesh, skel, 1)
    s = 4.0
    E = lifting_E(np.sqrt(s) * np.ones(broken.trace.n), s, broken)
    values = broken.conforming.to_vertices(E[: broken.conforming.n])
    row = np.flatnonzero(np.isclose(mesh.vertices[:, 1], 0.0))
    row = row[np.argsort(mesh.vertices[row, 0])]
    x = mesh.vertices[row, 0]
    right = values[row][x >= 0].real
    left = values[row][x <= 0].real[::-1]
    assert right[0] == pytest.approx(1.0)
    assert np.all(np.diff(right) < 0) and np.all(np.diff(left) < 0)
    # the decay rate is close to the one-dimensional screened profile exp(-|s| x)
    mid = np.argmin(np.abs(x[x >= 0] - 0.25))
    assert right[mid] == pytest.approx(np.exp(-4.0 * 0.25), rel=0.1)


def test_lifting_stability_is_mesh_independent():
    ratios = []
    for n in (16, 32):
        mesh = build_box_mesh(1.0, n, half_split())
        skel = extract_skeleton(mesh)
        broken = BrokenSpace(mesh, skel, 1)
        grams = sobolev_grams(mesh, skel, 1, broken)
        psi = np.ones(broken.trace.n)
        ratios.append(freq_norm(lifting_E(psi, 1.0, broken), 1.0, broken) / grams.norm_D(psi))
    assert max(ratios) / min(ratios) <= 2.0


def test_facet_mass_integrates_hat_functions():
    mesh = build_box_mesh(1.0, 4, half_split())
    trace = TraceSpace(mesh, extract_skeleton(mesh), 1)
    M = trace.mass.toarray()
    # three interior interface nodes with spacing 1/2: each hat integrates to 1/2
    assert M.shape == (3, 3)
    assert np.allclose(M.sum(axis=1), [0.5 - 0.5 / 6 + 0.0, 0.5, 0.5 - 0.5 / 6 + 0.0], atol=0.1)
    assert np.allclose(M, M.T)


def test_field_checks_its_length(spaces):
    _, _, conf, _ = spaces
    Field(np.zeros(conf.n), conf)
    with pytest.raises(SpaceMismatch):
        Field(np.zeros(conf.n + 1), conf)


def test_exports(tmp_path, spaces):
    mesh, _, conf, broken = spaces
    vals = np.arange(mesh.n_vertices) * (1 + 2j)
    write_vtk(mesh, vals, tmp_path / "f.vtk")
    text = (tmp_path / "f.vtk").read_text()
    assert text.startswith("# vtk DataFile Version") and "SCALARS re" in text and "SCALARS im" in text
    write_trace_csv(broken.trace, np.arange(broken.trace.n) + 0.5j, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "node_index,x,y,re,im"
    assert len(lines) == broken.trace.n + 1
