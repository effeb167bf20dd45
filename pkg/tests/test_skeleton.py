import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import S_POLAR, crandn
from skelpot.calderon import CalderonSystem, MultiTrace, projection_residual, x_pairing
from skelpot.coefficients import CoefficientField, checkerboard, matrix_from_scalar
from skelpot.geometry import build_box_mesh, extract_skeleton, half_split, inner_box, quadrants, strips
from skelpot.skeleton import (
    ExcitationData,
    SkeletonError,
    beta_from_incident_wave,
    build_single_trace_basis,
    direct_solve,
    galerkin_matrix,
    incident_wave,
    l2_distance,
    l2_error_to_function,
    read_beta_csv,
    reconstruct_volume,
    recover_multitrace,
    skeleton_solve,
    subdomain_mass,
    trace_spaces,
    write_beta_csv,
)


def top_is_neumann(x):
    return "N" if x[-1] > 0 else "D"


def setup(partition, n=8, rule=None, coeffs=None):
    mesh = build_box_mesh(1.0, n, partition, boundary_rule=rule)
    skel = extract_skeleton(mesh)
    coeffs = coeffs(mesh) if callable(coeffs) else CoefficientField.constant(mesh)
    return mesh, skel, CalderonSystem(coeffs, skel)


def checker(mesh):
    A = matrix_from_scalar(checkerboard(1.0, 3.0, 0.5)(mesh.barycenters), 2)
    return CoefficientField(mesh, A, 1.0 + (mesh.barycenters[:, 0] > 0.25))


def random_beta(system, rng):
    return ExcitationData(MultiTrace(tuple((crandn(rng, n), crandn(rng, n)) for n in system.sizes)))


def solve_both(mesh, skel, system, s, beta):
    basis = build_single_trace_basis(mesh, skel, with_bc=True)
    u_single, report = skeleton_solve(system, s, beta, basis)
    fields = reconstruct_volume(system, s, recover_multitrace(u_single, beta))
    reference = direct_solve(system.coeffs, skel, s, beta)
    return fields, reference, report


# ---------------------------------------------------------------- single-trace basis


def test_single_dirichlet_subdomain_keeps_only_neumann_dofs():
    mesh = build_box_mesh(1.0, 8, inner_box(0.5))
    basis = build_single_trace_basis(mesh, extract_skeleton(mesh), with_bc=True)
    assert basis.dim == basis.sizes[0] > 0
    assert set(basis.classes) == {"boundary-N"}


def test_half_split_has_one_dirichlet_and_one_neumann_dof_per_node(half16):
    mesh, skel = half16
    basis = build_single_trace_basis(mesh, skel, with_bc=False)
    nodes = basis.sizes[0]
    assert basis.sizes == (nodes, nodes)
    assert basis.classes.count("interface-D") == nodes
    assert basis.classes.count("interface-N") == nodes
    assert basis.dim == 2 * nodes


def test_dimension_count_with_mixed_boundary():
    mesh = build_box_mesh(1.0, 8, inner_box(0.5, split=True), boundary_rule=top_is_neumann)
    skel = extract_skeleton(mesh)
    traces = trace_spaces(mesh, skel)
    skeleton_nodes = np.unique(np.concatenate([t.nodes for t in traces.values()]))
    on_D = np.unique(np.concatenate([skel.boundaries[j].dirichlet_nodes for j in traces]))
    with_bc = build_single_trace_basis(mesh, skel, with_bc=True)
    dirichlet_dofs = sum(c.endswith("-D") for c in with_bc.classes)
    assert dirichlet_dofs == skeleton_nodes.size - on_D.size
    without = build_single_trace_basis(mesh, skel, with_bc=False)
    assert sum(c.endswith("-D") for c in without.classes) == skeleton_nodes.size


@pytest.mark.parametrize("partition", [half_split(), quadrants(), strips(3), inner_box(0.5, split=True)],
                         ids=lambda p: p.name)
def test_basis_columns_respect_the_single_trace_conditions(partition):
    mesh = build_box_mesh(1.0, 8, partition, boundary_rule=top_is_neumann)
    basis = build_single_trace_basis(mesh, extract_skeleton(mesh))
    E = basis.matrix.tocsc()
    for c, cls in enumerate(basis.classes):
        vals = E[:, c].data
        if cls.endswith("-D"):
            assert np.all(vals == 1.0)
        elif cls == "interface-N":
            assert sorted(vals) == [-1.0, 1.0]
        else:
            assert vals.tolist() == [1.0]


# Without boundary conditions the outer Dirichlet and Neumann values are both
# free, so self-polarity is only expected on partitions that fill the box.
@pytest.mark.parametrize("partition, with_bc", [
    (half_split(), True), (half_split(), False), (quadrants(), True), (quadrants(), False),
    (strips(4), True), (strips(4), False), (inner_box(0.5, split=True), True),
], ids=lambda v: getattr(v, "name", str(v)))
def test_single_trace_space_is_self_polar(partition, with_bc, rng):
    mesh = build_box_mesh(1.0, 8, partition, boundary_rule=top_is_neumann)
    basis = build_single_trace_basis(mesh, extract_skeleton(mesh), with_bc=with_bc)
    for _ in range(50):
        alpha = basis.embed(crandn(rng, basis.dim))
        a = alpha.flat()
        assert abs(x_pairing(alpha, alpha)) <= 1e-12 * np.vdot(a, a).real


@given(seed=st.integers(0, 2**32 - 1))
def test_single_trace_pairing_vanishes_between_any_two_vectors(seed):
    mesh = build_box_mesh(1.0, 4, quadrants())
    basis = build_single_trace_basis(mesh, extract_skeleton(mesh))
    rng = np.random.default_rng(seed)
    a, b = basis.embed(crandn(rng, basis.dim)), basis.embed(crandn(rng, basis.dim))
    assert abs(x_pairing(a, b)) <= 1e-12 * np.linalg.norm(a.flat()) * np.linalg.norm(b.flat())


# ---------------------------------------------------------------- excitation data


def test_incident_wave_examples(half16):
    mesh, skel = half16
    beta = beta_from_incident_wave(mesh, skel, [1.0, 0.0], 1.0)
    trace = trace_spaces(mesh, skel)[1]
    origin = int(np.flatnonzero(np.all(trace.coordinates == 0.0, axis=1))[0])
    assert beta.beta.parts[0][0][origin] == 1.0
    s = S_POLAR
    value, grad = incident_wave(s, [0.6, 0.8])
    x = np.array([[0.3, -0.2]])
    # the wave solves the screened equation: its Laplacian is s^2 times itself
    lap = s**2 * value(x)
    assert np.allclose(-lap + s**2 * value(x), 0.0)
    assert np.allclose(grad(x), -s * value(x)[:, None] * [0.6, 0.8])


def test_incident_wave_rejects_bad_input(half16):
    mesh, skel = half16
    with pytest.raises(SkeletonError, match="unit vector"):
        beta_from_incident_wave(mesh, skel, [1.0, 1.0], 1.0)
    with pytest.raises(SkeletonError, match="A = I"):
        beta_from_incident_wave(mesh, skel, [1.0, 0.0], 1.0, checker(mesh))


def incident_projection_residual(n: int) -> float:
    mesh = build_box_mesh(1.0, n, inner_box(0.5))
    skel = extract_skeleton(mesh)
    system = CalderonSystem(CoefficientField.constant(mesh), skel)
    bD, bN = beta_from_incident_wave(mesh, skel, [0.6, 0.8], 1.0).beta.parts[0]
    return projection_residual(system.operators(1, 1.0), system.grams(1).x_gram, (bD, bN))


def test_incident_wave_traces_are_nearly_cauchy_data():
    r16, r32 = incident_projection_residual(16), incident_projection_residual(32)
    assert r32 <= 0.1 and r32 <= 0.5 * r16


def test_beta_csv_round_trip(tmp_path, rng):
    mesh, skel, system = setup(quadrants())
    beta = random_beta(system, rng)
    path = tmp_path / "beta.csv"
    write_beta_csv(beta, mesh, skel, path)
    back = read_beta_csv(path, mesh, skel)
    assert np.array_equal(back.beta.flat(), beta.beta.flat())
    assert path.read_bytes().startswith(b"j,node_index,component,re,im\r\n")


@pytest.mark.parametrize("row, message", [
    ("1,0,D,1.0", "5 columns"),
    ("1,x,D,1.0,0.0", "malformed"),
    ("9,0,D,1.0,0.0", "unknown subdomain"),
    ("1,0,Q,1.0,0.0", "unknown subdomain or component"),
    ("1,0,D,1.0,0.0", "not on"),
])
def test_beta_csv_errors(tmp_path, half16, row, message):
    mesh, skel = half16
    path = tmp_path / "beta.csv"
    path.write_text("j,node_index,component,re,im\n" + row + "\n")
    with pytest.raises(SkeletonError, match=message):
        read_beta_csv(path, mesh, skel)


# ---------------------------------------------------------------- skeleton solve


def test_zero_excitation_gives_zero(half16_system):
    mesh, skel = half16_system.mesh, half16_system.skeleton
    basis = build_single_trace_basis(mesh, skel)
    zero = ExcitationData(MultiTrace.zeros(half16_system.sizes))
    u, report = skeleton_solve(half16_system, 2.0, zero, basis)
    assert not np.any(u.flat()) and report.residual == 0.0
    direct = direct_solve(half16_system.coeffs, skel, 2.0, zero)
    assert all(not np.any(v) for v in direct.values())
    assert all(not np.any(v) for v in reconstruct_volume(half16_system, 2.0, u).values())


@pytest.mark.parametrize("case", [
    ("half, constant", half_split(), None, None),
    ("quadrants, checkerboard", quadrants(), None, checker),
    ("inner half, mixed boundary", inner_box(0.5, split=True), top_is_neumann, checker),
    ("strips, pure Neumann", strips(3), lambda x: "N", None),
    ("inner half, pure Neumann", inner_box(0.5, split=True), lambda x: "N", checker),
], ids=lambda c: c[0])
@pytest.mark.parametrize("s", [1.0, S_POLAR, 3.0 + 0.2j])
def test_skeleton_solution_matches_the_direct_solver(case, s, rng):
    _, partition, rule, coeffs = case
    mesh, skel, system = setup(partition, 8, rule, coeffs)
    fields, reference, report = solve_both(mesh, skel, system, s, random_beta(system, rng))
    err, ref = l2_distance(mesh, fields, reference)
    assert err <= 1e-8 * ref
    assert report.min_hermitian_eigenvalue > 0 and report.residual <= 1e-10


def test_galerkin_matrix_is_coercive_after_rotation(half16_system):
    basis = build_single_trace_basis(half16_system.mesh, half16_system.skeleton)
    for s in (1.0, S_POLAR, 8 * np.exp(1j * np.pi / 3)):
        G = galerkin_matrix(half16_system, s, basis)
        assert np.linalg.eigvalsh(0.5 * (G + G.conj().T))[0] > 0


def test_skeleton_solve_rejects_a_foreign_basis(half16_system):
    mesh = build_box_mesh(1.0, 8, quadrants())
    basis = build_single_trace_basis(mesh, extract_skeleton(mesh))
    beta = ExcitationData(MultiTrace.zeros(half16_system.sizes))
    with pytest.raises(SkeletonError, match="different partitions"):
        skeleton_solve(half16_system, 1.0, beta, basis)


def test_scaled_excitation_would_not_reproduce_the_transmission_problem(rng):
    """Feeding (s^{-1/2} beta_D, s^{1/2} beta_N) instead of beta breaks agreement for s != 1."""
    mesh, skel, system = setup(half_split(), 8)
    s = 4.0
    beta = random_beta(system, rng)
    basis = build_single_trace_basis(mesh, skel)
    reference = direct_solve(system.coeffs, skel, s, beta)
    root = np.sqrt(s)
    scaled = ExcitationData(MultiTrace(tuple((d / root, n * root) for d, n in beta.beta.parts)))
    u, _ = skeleton_solve(system, s, scaled, basis)
    fields = reconstruct_volume(system, s, recover_multitrace(u, scaled))
    err, ref = l2_distance(mesh, fields, reference)
    assert err > 0.1 * ref


def test_extension_mode_does_not_change_the_solution(rng):
    def piecewise(modes):
        def build(mesh):
            A = np.eye(2) * np.where(mesh.tags == 1, 1.0, 2.5)[:, None, None]
            return CoefficientField(mesh, A, np.where(mesh.tags == 1, 1.0, 3.0), modes)
        return build

    s = S_POLAR
    fields = {}
    for name, modes in (("global", None), ("constant", {1: "constant", 2: "constant"})):
        mesh, skel, system = setup(half_split(), 16, None, piecewise(modes))
        rng_local = np.random.default_rng(7)
        beta = random_beta(system, rng_local)
        basis = build_single_trace_basis(mesh, skel)
        u, _ = skeleton_solve(system, s, beta, basis)
        fields[name] = reconstruct_volume(system, s, recover_multitrace(u, beta))
    err, ref = l2_distance(mesh, fields["constant"], fields["global"])
    assert err <= 0.05 * ref


# ---------------------------------------------------------------- recovery and reconstruction


def test_recover_multitrace_examples(half16_system, rng):
    sizes = half16_system.sizes
    beta = random_beta(half16_system, rng)
    u = MultiTrace(tuple((crandn(rng, n), crandn(rng, n)) for n in sizes))
    zero = ExcitationData(MultiTrace.zeros(sizes))
    assert np.array_equal(recover_multitrace(u, zero).flat(), u.flat())
    assert np.array_equal(recover_multitrace(MultiTrace.zeros(sizes), beta).flat(), beta.beta.flat())
    back = recover_multitrace(u, beta) - beta.beta
    assert np.allclose(back.flat(), u.flat(), rtol=0, atol=4 * np.finfo(float).eps * np.abs(u.flat()).max())


def test_reconstruction_of_known_solutions(half16_system, rng):
    s = 2.0
    parts, truth = [], {}
    for j in half16_system.subdomains:
        solver = half16_system.solvers(j, s)
        u = solver.homogeneous_solution(crandn(rng, solver.trace.n), "-")
        parts.append((solver.dirichlet(u, "-"), solver.conormal(u, "-")))
        truth[j] = u.side_vertex_values("-")
    fields, leaks = reconstruct_volume(half16_system, s, MultiTrace(tuple(parts)), with_leak=True)
    mesh = half16_system.mesh
    err, ref = l2_distance(mesh, fields, truth)
    assert err <= 1e-8 * ref
    for outer, inner in leaks.values():
        assert outer <= 1e-6 * inner


def test_direct_solve_energy_is_positive_after_rotation(rng):
    mesh, skel, system = setup(inner_box(0.5, split=True), 8, top_is_neumann, checker)
    s = 3 * np.exp(1.2j)
    fields = direct_solve(system.coeffs, skel, s, random_beta(system, rng))
    from skelpot.assembly import FormPieces, assemble

    pieces = FormPieces(mesh, system.coeffs.A, system.coeffs.p)
    energy = 0j
    for j, u in fields.items():
        cells = np.flatnonzero(mesh.tags == j)
        K = assemble(pieces.stiffness, mesh.cells, mesh.n_vertices, cells)
        M = assemble(pieces.mass, mesh.cells, mesh.n_vertices, cells)
        energy += np.vdot(u, K @ u) + s**2 * np.vdot(u, M @ u)
    assert (np.conj(s / abs(s)) * energy).real > 0


def incident_error(n: int, s=S_POLAR, direction=(0.6, 0.8)):
    mesh = build_box_mesh(1.0, n, inner_box(0.5, split=True))
    skel = extract_skeleton(mesh)
    coeffs = CoefficientField.constant(mesh)
    beta = beta_from_incident_wave(mesh, skel, direction, s, coeffs)
    value, _ = incident_wave(s, direction)
    direct = direct_solve(coeffs, skel, s, beta)
    err, ref = l2_error_to_function(mesh, direct, value)
    return err / ref


def test_direct_solver_reproduces_the_incident_wave():
    e16, e32 = incident_error(16), incident_error(32)
    assert e32 <= 0.05 and e32 <= 0.5 * e16


def test_subdomain_masses_add_up(half16):
    mesh, _ = half16
    ones = np.ones(mesh.n_vertices)
    total = sum(ones @ subdomain_mass(mesh, j) @ ones for j in (1, 2))
    assert total == pytest.approx(4.0, rel=1e-13)


def test_direct_solve_rejects_mismatched_excitation(half16):
    mesh, skel = half16
    with pytest.raises(SkeletonError, match="partition"):
        direct_solve(CoefficientField.constant(mesh), skel, 1.0, ExcitationData(MultiTrace.zeros((1, 1))))
