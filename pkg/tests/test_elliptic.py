import numpy as np
import pytest

from varda import assimilation, elliptic, mesh, problems


def _zero(t, x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _zero_coefficient(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def test_free_dof_counts(ex1i_system):
    dofmap = ex1i_system.dofmap
    # p is pinned at the final time plane, q only at the spatial boundary.
    assert dofmap.n_p == 40 * 39
    assert dofmap.n_q == 41 * 39
    assert ex1i_system.A.shape == (3159, 3159)
    assert ex1i_system.b.shape == (3159,)


def test_coupling_blocks_are_skew(ex1i_system):
    n_p = ex1i_system.dofmap.n_p
    sym = (ex1i_system.A + ex1i_system.A.T).tocsr()
    off_diag = sym[:n_p, n_p:]
    worst = 0.0 if off_diag.nnz == 0 else float(np.abs(off_diag.data).max())
    assert worst <= 1e-11


def test_quadratic_form_is_coercive(ex1i_system):
    A = ex1i_system.A
    n_p = ex1i_system.dofmap.n_p
    rng = np.random.default_rng(17)
    for _ in range(20):
        x = rng.standard_normal(A.shape[0])
        energy = float(x @ (A @ x))
        assert energy > 0.0
        # The skew coupling cancels in the quadratic form, so the energy is
        # carried by the two diagonal blocks alone.
        xp, xq = x[:n_p], x[n_p:]
        block = float(xp @ (A[:n_p, :n_p] @ xp)) + float(xq @ (A[n_p:, n_p:] @ xq))
        assert energy == pytest.approx(block, rel=1e-10)


def test_zero_data_gives_zero_solution():
    spec = problems.ProblemSpec(
        a=lambda x: 0.01 + np.zeros_like(np.asarray(x, dtype=float)),
        a0=_zero_coefficient,
        alpha=1.0,
        T=1.0,
        domain=(0.0, 1.0),
        f=_zero,
        y_d=_zero,
        y_d_t=_zero,
        Ay_d=_zero,
        y_b=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    )
    sm = mesh.build_spatial_mesh(0.0, 1.0, 8)
    tg = mesh.build_uniform_time_grid(1.0, 6)
    system = elliptic.assemble(spec, sm, tg)
    assert not np.any(system.b)
    sol = elliptic.solve_sparse(system)
    assert np.abs(sol.p.values).max() <= 1e-14
    assert np.abs(sol.q.values).max() <= 1e-14


def test_consistent_data_has_vanishing_adjoint():
    spec = problems.consistent_problem()
    sm = mesh.build_spatial_mesh(0.0, 1.0, 20)
    tg = mesh.build_uniform_time_grid(1.0, 20)
    # The load cancels exactly, node by node, so the adjoint pair is zero
    # to rounding rather than merely small.
    sol = elliptic.solve_sparse(elliptic.assemble(spec, sm, tg))
    assert np.abs(sol.p.values).max() <= 1e-12
    assert np.abs(sol.q.values).max() <= 1e-12


def test_manufactured_adjoint_error_decreases_with_refinement():
    spec, exact_p = problems.example3()
    sm = mesh.build_spatial_mesh(0.0, 1.0, 40)
    exact0 = exact_p(0.0, sm.nodes)
    errors = []
    for n in (5, 10, 20, 40):
        tg = mesh.build_uniform_time_grid(1.0, n)
        sol = elliptic.solve_sparse(elliptic.assemble(spec, sm, tg))
        errors.append(assimilation.mse_initial(sol.p.values[0], exact0))
    assert all(a > b for a, b in zip(errors, errors[1:]))
    assert errors[-1] <= 5e-8


def test_solver_residual_contract(ex1i_system, ex1i_solution):
    assert ex1i_solution.solver_residual <= 1e-10
    assert elliptic.residual_check(ex1i_system, ex1i_solution) <= 1e-10


def test_q_boundary_carries_the_data_trace():
    rate = np.pi * np.pi * 0.01

    def y_d(t, x):
        return np.cos(np.pi * np.asarray(x, dtype=float)) * np.exp(-rate * t)

    spec = problems.ProblemSpec(
        a=lambda x: 0.01 + np.zeros_like(np.asarray(x, dtype=float)),
        a0=_zero_coefficient,
        alpha=0.5,
        T=1.0,
        domain=(0.0, 1.0),
        f=_zero,
        y_d=y_d,
        y_d_t=lambda t, x: -rate * y_d(t, x),
        Ay_d=lambda t, x: rate * y_d(t, x),
        y_b=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    )
    sm = mesh.build_spatial_mesh(0.0, 1.0, 10)
    tg = mesh.build_uniform_time_grid(1.0, 7)
    sol = elliptic.solve_sparse(elliptic.assemble(spec, sm, tg))
    np.testing.assert_allclose(sol.q.values[:, 0], -np.exp(-rate * tg.taus), atol=1e-14)
    np.testing.assert_allclose(sol.q.values[:, -1], np.exp(-rate * tg.taus), atol=1e-14)


def test_final_time_plane_of_p_is_pinned(ex1i_solution):
    assert not np.any(ex1i_solution.p.values[-1])


def test_assemble_rejects_degenerate_grids(ex1i):
    with pytest.raises(ValueError):
        elliptic.assemble(ex1i, mesh.build_spatial_mesh(0.0, 1.0, 1),
                          mesh.build_uniform_time_grid(1.0, 4))


def test_dump_system_round_trip(tmp_path, ex1i):
    sm = mesh.build_spatial_mesh(0.0, 1.0, 4)
    tg = mesh.build_uniform_time_grid(1.0, 3)
    system = elliptic.assemble(ex1i, sm, tg)
    matrix_path = tmp_path / "A.txt"
    rhs_path = tmp_path / "b.txt"
    elliptic.dump_system(system, matrix_path, rhs_path)

    dense = np.zeros(system.A.shape)
    for line in matrix_path.read_text().splitlines():
        r, c, v = line.split()
        dense[int(r), int(c)] += float(v)
    np.testing.assert_array_equal(dense, system.A.toarray())
    rhs = np.array([float(v) for v in rhs_path.read_text().split()])
    np.testing.assert_array_equal(rhs, system.b)
