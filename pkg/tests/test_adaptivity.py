import numpy as np
import pytest

from varda import adaptivity, elliptic, fem1d, mesh, problems
from varda.adaptivity import AdaptConfig, AdaptHistory, CycleRecord, ErrorIndicators
from varda.assimilation import ProblemSpec


def _zero(t, x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _zero_coefficient(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _poly_problem():
    """Zero data, forcing t^2 x (1 - x): the indicator has a closed form."""

    def f(t, x):
        x = np.asarray(x, dtype=float)
        return t * t * x * (1.0 - x)

    return ProblemSpec(
        a=lambda x: 0.1 + np.zeros_like(np.asarray(x, dtype=float)),
        a0=_zero_coefficient,
        alpha=1.0,
        T=1.0,
        domain=(0.0, 1.0),
        f=f,
        y_d=_zero,
        y_d_t=_zero,
        Ay_d=_zero,
        y_b=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    )


def test_indicator_matches_closed_form_for_polynomial_forcing():
    # eta_i^2 = dtau_i^2 * int_{I_i} t^4 dt * int_0^1 x^2 (1-x)^2 dx.
    spec = _poly_problem()
    sm = mesh.build_spatial_mesh(0.0, 1.0, 7)
    tg = mesh.build_time_grid([0.0, 0.25, 0.4, 0.9, 1.0])
    ind = adaptivity.compute_indicators(spec, None, sm, tg)
    t5 = tg.taus**5
    exact = tg.deltas**2 * (t5[1:] - t5[:-1]) / 5.0 / 30.0
    np.testing.assert_allclose(ind.per_interval, exact, rtol=1e-13)
    assert ind.total == pytest.approx(exact.sum(), rel=1e-13)


def test_bisecting_every_interval_halves_the_total_indicator():
    # The dtau^2 prefactor makes the quartering of each eta_i^2 exact as
    # long as the quadrature resolves the residual, so the square root of
    # the total halves.
    spec = _poly_problem()
    sm = mesh.build_spatial_mesh(0.0, 1.0, 7)
    tg = mesh.build_uniform_time_grid(1.0, 4)
    coarse = adaptivity.compute_indicators(spec, None, sm, tg)
    fine_grid = mesh.bisect_intervals(tg, range(tg.N))
    fine = adaptivity.compute_indicators(spec, None, sm, fine_grid)
    ratio = np.sqrt(fine.total) / np.sqrt(coarse.total)
    assert abs(ratio - 0.5) <= 1e-12


def test_halving_law_for_the_bump_problem():
    spec, _ = problems.example3()
    sm = mesh.build_spatial_mesh(0.0, 1.0, 10)
    tg = mesh.build_uniform_time_grid(1.0, 6)
    coarse = adaptivity.compute_indicators(spec, None, sm, tg)
    fine = adaptivity.compute_indicators(
        spec, None, sm, mesh.bisect_intervals(tg, range(tg.N))
    )
    ratio = np.sqrt(fine.total) / np.sqrt(coarse.total)
    assert abs(ratio - 0.5) <= 1e-6


def test_solution_terms_drop_out_for_constant_coefficients():
    # With constant diffusion and zero reaction the broken elementwise
    # terms vanish identically, so both routes agree to the last bit.
    spec = problems.example2()
    sm = mesh.build_spatial_mesh(0.0, 1.0, 12)
    tg = mesh.build_uniform_time_grid(1.0, 8)
    sol = elliptic.solve_sparse(elliptic.assemble(spec, sm, tg))
    with_sol = adaptivity.compute_indicators(spec, sol, sm, tg)
    data_only = adaptivity.compute_indicators(spec, None, sm, tg)
    assert np.abs(with_sol.per_interval - data_only.per_interval).max() <= 1e-12
    assert abs(with_sol.total - data_only.total) <= 1e-12


def test_indicator_ranks_the_ramp_interval_first():
    # A narrow ramp at t = 0.5 seen from five coarse intervals: only the
    # middle one carries it, and the flat tail is exactly quiet.
    spec, _ = problems.example3(eps=0.05)
    sm = mesh.build_spatial_mesh(0.0, 1.0, 40)
    tg = mesh.build_uniform_time_grid(1.0, 5)
    ind = adaptivity.compute_indicators(spec, None, sm, tg)
    assert int(np.argmax(ind.per_interval)) == 2
    assert ind.per_interval[2] > 1e3
    np.testing.assert_array_equal(ind.per_interval[3:], 0.0)
    # Before the ramp the residual is constant in time.
    assert ind.per_interval[0] == pytest.approx(ind.per_interval[1], rel=1e-12)


def test_error_indicators_validate_their_inputs():
    with pytest.raises(ValueError):
        ErrorIndicators(per_interval=np.array([1.0, -0.5]), total=0.5)
    with pytest.raises(ValueError):
        ErrorIndicators(per_interval=np.array([1.0, 2.0]), total=4.0)
    with pytest.raises(ValueError):
        ErrorIndicators(per_interval=np.zeros((2, 2)), total=0.0)


def test_max_marking_picks_the_single_worst_interval():
    ind = ErrorIndicators(per_interval=np.array([0.1, 3.0, 0.2, 3.0]), total=6.3)
    marks = adaptivity.mark(ind, AdaptConfig(strategy="MAX"))
    assert marks == {1}


def test_marking_returns_empty_on_zero_indicators():
    ind = ErrorIndicators(per_interval=np.zeros(4), total=0.0)
    assert adaptivity.mark(ind, AdaptConfig(strategy="MAX")) == set()
    assert adaptivity.mark(ind, AdaptConfig(strategy="DOERFLER")) == set()


def test_doerfler_marking_is_minimal_over_many_cases():
    rng = np.random.default_rng(0)
    for case in range(1000):
        size = int(rng.integers(1, 41))
        vals = rng.uniform(0.0, 1.0, size)
        vals[rng.uniform(size=size) < 0.2] = 0.0
        if not np.any(vals > 0.0):
            vals[0] = 1.0
        theta = float(rng.uniform(0.05, 0.95))
        cfg = AdaptConfig(strategy="DOERFLER", theta_mark=theta)
        ind = ErrorIndicators(per_interval=vals, total=float(vals.sum()))
        marked = adaptivity.mark(ind, cfg)
        chosen = vals[sorted(marked)]
        assert chosen.sum() >= theta * ind.total
        # Dropping the weakest marked interval must break the threshold,
        # and no smaller set can reach it.
        assert chosen.sum() - chosen.min() < theta * ind.total
        top = np.sort(vals)[::-1]
        k = int(np.searchsorted(np.cumsum(top), theta * ind.total) + 1)
        assert len(marked) == k


def test_adapt_config_validation():
    with pytest.raises(ValueError):
        AdaptConfig(strategy="GREEDY")
    with pytest.raises(ValueError):
        AdaptConfig(theta_mark=1.0)
    with pytest.raises(ValueError):
        AdaptConfig(n_initial=10, n_max=5)
    with pytest.raises(ValueError):
        AdaptConfig(marks_per_cycle=0)


def test_history_requires_growing_grids():
    history = AdaptHistory()
    record = CycleRecord(
        cycle=0, n_intervals=5, taus=np.linspace(0, 1, 6),
        eta_sq=np.ones(5), eta_total=np.sqrt(5.0), true_error=None,
    )
    history.append(record)
    with pytest.raises(ValueError):
        history.append(record)


def test_adapt_loop_grows_one_interval_per_cycle():
    spec = problems.example2()
    sm = mesh.build_spatial_mesh(0.0, 1.0, 10)
    cfg = AdaptConfig(strategy="MAX", n_initial=5, n_max=12)
    tgrid, history = adaptivity.adapt_loop(spec, sm, cfg)
    counts = [rec.n_intervals for rec in history.cycles]
    assert counts == list(range(5, 13))
    assert tgrid.N == 12
    # Bisection only inserts nodes, never moves them.
    assert set(np.round(np.linspace(0.0, 1.0, 6), 12)) <= set(np.round(tgrid.taus, 12))


def test_adapt_loop_stops_immediately_on_consistent_data():
    spec = problems.consistent_problem()
    sm = mesh.build_spatial_mesh(0.0, 1.0, 10)
    tgrid, history = adaptivity.adapt_loop(spec, sm, AdaptConfig(n_initial=5, n_max=40))
    assert len(history.cycles) == 1
    assert history.cycles[0].eta_total == 0.0
    assert tgrid.N == 5


def test_adapt_loop_records_reference_errors():
    spec = problems.example2()
    sm = mesh.build_spatial_mesh(0.0, 1.0, 8)
    cfg = AdaptConfig(strategy="MAX", n_initial=4, n_max=8, record_reference_error=True)
    _, history = adaptivity.adapt_loop(spec, sm, cfg)
    errors = [rec.true_error for rec in history.cycles]
    assert all(err is not None and err >= 0.0 for err in errors)
    assert errors[-1] < errors[0]


def test_doerfler_cap_limits_growth():
    spec = problems.example2()
    sm = mesh.build_spatial_mesh(0.0, 1.0, 8)
    cfg = AdaptConfig(
        strategy="DOERFLER", theta_mark=0.9, n_initial=4, n_max=8, marks_per_cycle=1
    )
    _, history = adaptivity.adapt_loop(spec, sm, cfg)
    counts = [rec.n_intervals for rec in history.cycles]
    assert counts == list(range(4, 9))


def test_uniform_initial_errors_match_direct_solves():
    spec = problems.example2()
    sm = mesh.build_spatial_mesh(0.0, 1.0, 8)
    gaps = adaptivity.uniform_initial_errors(spec, sm, (4, 8), 32)
    mass = fem1d.assemble_spatial_matrices(sm, spec.a, spec.a0).M
    ref = elliptic.solve_sparse(
        elliptic.assemble(spec, sm, mesh.build_uniform_time_grid(1.0, 32))
    ).p.values[0]
    for n, gap in zip((4, 8), gaps):
        sol = elliptic.solve_sparse(
            elliptic.assemble(spec, sm, mesh.build_uniform_time_grid(1.0, n))
        )
        diff = ref - sol.p.values[0]
        assert gap == pytest.approx(float(np.sqrt(diff @ (mass @ diff))), abs=1e-15)


def test_history_csv_shape(tmp_path):
    spec = problems.example2()
    sm = mesh.build_spatial_mesh(0.0, 1.0, 8)
    _, history = adaptivity.adapt_loop(spec, sm, AdaptConfig(n_initial=4, n_max=6))
    text = adaptivity.format_history_csv(history)
    lines = text.strip().splitlines()
    assert lines[0] == "cycle,N,eta_total,true_error"
    assert len(lines) == len(history.cycles) + 1
    # Without reference recording the error column stays empty.
    assert all(line.endswith(",") for line in lines[1:])
    path = tmp_path / "history.csv"
    adaptivity.write_history_csv(history, path)
    assert path.read_text() == text
