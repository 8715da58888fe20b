import dataclasses

import numpy as np
import pytest
from _oracles import (
    example_4_1_mc_rel_error,
    example_4_1_value,
    example_4_2_mc_rel_error,
    example_4_2_value,
    gaussian_lq_expectation,
    sec_5_1_closed_forms,
)
from hypothesis import given, settings
from hypothesis import strategies as st

from mfis import (
    AbsOfMean,
    EmpiricalMeasure,
    LQModel,
    Quadratic,
    RiccatiBlowupError,
    exact_mc_relative_error,
    exact_value,
    get_experiment,
    hjb_residual,
    log_exact_value,
    psi_value,
    solve_riccati,
)


def quad(P2=0.0, p1=0.0, Pbar2=0.0, p2=0.0):
    return Quadratic(np.array([[P2]]), np.array([p1]), np.array([[Pbar2]]), p2)


class TestClosedForms:
    def test_example_4_1(self, ex41):
        e, _, sol = ex41
        np.testing.assert_allclose(sol.Lambda[:, 0, 0], 0.0, atol=1e-10)
        np.testing.assert_allclose(sol.Gamma[:, 0, 0], 0.0, atol=1e-10)
        np.testing.assert_allclose(sol.gamma[:, 0], 1.0, atol=1e-10)
        np.testing.assert_allclose(sol.chi, 0.25 * (sol.t_grid - 1.0) / 2, atol=1e-10)

    def test_example_4_1_psi(self, ex41):
        _, _, sol = ex41
        mu = EmpiricalMeasure([0.3, -0.1, 0.5])
        for t in (0.0, 0.37, 1.0):
            assert psi_value(sol, t, mu) == pytest.approx(mu.mean()[0] + 0.25 * (t - 1) / 2, abs=1e-10)

    def test_sec_5_1_coefficients(self, sec51):
        _, _, sol = sec51
        ts = np.linspace(0, 1, 100)
        L, G, g, chi = sec_5_1_closed_forms(ts)
        got = np.array([sol.coefficients(t)[:4] for t in ts], dtype=object)
        np.testing.assert_allclose([c[0][0, 0] for c in got], L, atol=1e-8)
        np.testing.assert_allclose([c[1][0, 0] for c in got], G, atol=1e-8)
        np.testing.assert_allclose([c[2][0] for c in got], g, atol=1e-8)
        np.testing.assert_allclose([c[3] for c in got], chi, atol=1e-8)

    def test_terminal_conditions(self):
        g = Quadratic(np.array([[1.0, 0.1], [0.1, 2.0]]), np.array([0.3, -0.2]), np.eye(2) * 0.5, 0.7)
        lq = LQModel(np.array([0.1, 0.0]), -np.eye(2), 0.2 * np.ones((2, 2)), np.array([0.5, 0.3]))
        sol = solve_riccati(lq, g, n_steps=200)
        np.testing.assert_allclose(sol.Lambda[-1], g.P2)
        np.testing.assert_allclose(sol.Gamma[-1], g.P2 + g.Pbar2)
        np.testing.assert_allclose(sol.gamma[-1], g.p1)
        assert sol.chi[-1] == 0.7 and sol.chi_correction[-1] == 0.0


class TestExactValue:
    @pytest.mark.parametrize("N", [1, 4, 10])
    def test_example_4_1(self, ex41, N):
        _, _, sol = ex41
        assert exact_value(sol, N, 0.0, 0.1) == pytest.approx(example_4_1_value(N, 0.1, 0.5), rel=1e-8)

    @pytest.mark.parametrize("N", [1, 4, 10])
    def test_example_4_2(self, N):
        e = get_experiment("example_4_2")
        sol = solve_riccati(e.lq, e.g)
        assert exact_value(sol, N, 0.0, 0.5) == pytest.approx(example_4_2_value(N, 0.5), rel=1e-8)

    def test_example_4_2_n4_number(self):
        e = get_experiment("example_4_2")
        assert exact_value(solve_riccati(e.lq, e.g), 4, 0.0, 0.5) == pytest.approx(0.26747, abs=5e-6)

    def test_example_4_1_n10_number(self, ex41):
        assert exact_value(ex41[2], 10, 0.0, 0.1) == pytest.approx(np.exp(0.25), rel=1e-10)

    @pytest.mark.parametrize("N", [1, 5, 10, 20])
    def test_sec_5_1_against_gaussian_law(self, sec51, N):
        _, _, sol = sec51
        ref = gaussian_lq_expectation(-1.0, 2.0, 0.5, 1.0, 0.0, 0.0, 0.0, N, 0.2)
        assert exact_value(sol, N, 0.0, 0.2) == pytest.approx(ref, rel=1e-10)

    @settings(max_examples=15, deadline=None)
    @given(
        B=st.floats(-1.5, 1.0),
        Bbar=st.floats(-1.0, 1.5),
        sigma=st.floats(0.2, 1.2),
        P2=st.floats(0.0, 2.0),
        p1=st.floats(-1.0, 1.0),
        Pbar2=st.floats(0.0, 1.0),
        N=st.integers(1, 6),
        y=st.floats(-0.5, 0.5),
    )
    def test_random_lq_against_gaussian_law(self, B, Bbar, sigma, P2, p1, Pbar2, N, y):
        lq = LQModel.scalar(B, Bbar, sigma)
        g = quad(P2, p1, Pbar2, 0.1)
        sol = solve_riccati(lq, g, n_steps=2000)
        ref = gaussian_lq_expectation(B, Bbar, sigma, P2, p1, Pbar2, 0.1, N, y)
        assert exact_value(sol, N, 0.0, y) == pytest.approx(ref, rel=1e-8)

    def test_heterogeneous_initial_positions(self, sec51):
        _, _, sol = sec51
        y = np.array([0.1, -0.3, 0.4])
        ref = gaussian_lq_expectation(-1.0, 2.0, 0.5, 1.0, 0.0, 0.0, 0.0, 3, y)
        assert exact_value(sol, 3, 0.0, y) == pytest.approx(ref, rel=1e-10)

    def test_log_value_consistent(self, sec51):
        sol = sec51[2]
        assert np.exp(log_exact_value(sol, 7, 0.0, 0.2)) == pytest.approx(exact_value(sol, 7, 0.0, 0.2))

    def test_intermediate_start(self, sec51):
        sol = sec51[2]
        ref = gaussian_lq_expectation(-1.0, 2.0, 0.5, 1.0, 0.0, 0.0, 0.0, 4, 0.2, s=0.5)
        assert exact_value(sol, 4, 0.5, 0.2) == pytest.approx(ref, rel=1e-8)


class TestMonteCarloRelativeError:
    def test_example_4_1(self):
        e = get_experiment("example_4_1")
        for N in (1, 4, 10):
            got = exact_mc_relative_error(e.lq, e.g, N, 0.0, 0.1, M=1)
            assert got == pytest.approx(example_4_1_mc_rel_error(N, 0.5), rel=1e-8)

    def test_example_4_2(self):
        e = get_experiment("example_4_2")
        got = exact_mc_relative_error(e.lq, e.g, 4, 0.0, 0.5, M=1)
        assert got == pytest.approx(example_4_2_mc_rel_error(4, 0.5), rel=1e-7)

    def test_scales_with_sqrt_m(self):
        e = get_experiment("sec_5_1")
        one = exact_mc_relative_error(e.lq, e.g, 5, 0.0, 0.2, M=1)
        assert exact_mc_relative_error(e.lq, e.g, 5, 0.0, 0.2, M=100) == pytest.approx(one / 10)

    def test_sec_5_1_n5(self):
        e = get_experiment("sec_5_1")
        assert exact_mc_relative_error(e.lq, e.g, 5, 0.0, 0.2) == pytest.approx(1.042, abs=1e-3)

    def test_grows_with_n(self):
        e = get_experiment("sec_5_1")
        vals = [exact_mc_relative_error(e.lq, e.g, N, 0.0, 0.2) for N in (5, 10, 20, 40)]
        assert np.all(np.diff(vals) > 0)


class TestSolver:
    def test_rk4_order(self):
        e = get_experiment("sec_5_1")
        L0, G0, _, c0 = sec_5_1_closed_forms(0.0)
        errs = []
        for n in (10, 20, 40):
            s = solve_riccati(e.lq, e.g, n_steps=n)
            errs.append(max(abs(s.Lambda[0, 0, 0] - L0), abs(s.Gamma[0, 0, 0] - G0), abs(s.chi[0] - c0)))
        ratios = [errs[0] / errs[1], errs[1] / errs[2]]
        assert all(12 <= r <= 20 for r in ratios), ratios

    def test_blowup_detected(self):
        g = Quadratic(np.array([[-1.0]]), np.zeros(1), np.zeros((1, 1)), check_psd=False)
        with pytest.raises(RiccatiBlowupError) as info:
            solve_riccati(LQModel.scalar(0.0, 0.0, 1.0), g, T=5.0)
        # Lambda = -1 / (1 - 2 (T - t)) is singular at t = 4.5
        assert info.value.time == pytest.approx(4.5, abs=0.01)

    def test_non_quadratic_rejected(self):
        with pytest.raises(TypeError):
            solve_riccati(LQModel.scalar(-1.0, 2.0, 0.5), AbsOfMean())

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            solve_riccati(LQModel.scalar(-1.0, 2.0, 0.5), Quadratic.zeros(2))

    def test_coefficients_outside_interval(self, sec51):
        with pytest.raises(ValueError):
            sec51[2].coefficients(1.5)

    def test_matrix_path_matches_scalar_path(self):
        # a 2-d block-diagonal copy of the scalar problem
        lq2 = LQModel(np.zeros(2), -np.eye(2), 2 * np.eye(2), np.array([0.5, 0.0]))
        g2 = Quadratic(np.diag([1.0, 0.0]), np.zeros(2), np.zeros((2, 2)))
        s2 = solve_riccati(lq2, g2, n_steps=500)
        s1 = solve_riccati(LQModel.scalar(-1.0, 2.0, 0.5), quad(P2=1.0), n_steps=500)
        np.testing.assert_allclose(s2.Lambda[:, 0, 0], s1.Lambda[:, 0, 0], rtol=1e-12)
        np.testing.assert_allclose(s2.chi, s1.chi, rtol=1e-12, atol=1e-15)


class TestHJBResidual:
    def test_small_on_solution(self, sec51):
        sol = sec51[2]
        rng = np.random.default_rng(3)
        for _ in range(20):
            t = rng.uniform(0.05, 0.95)
            mu = EmpiricalMeasure(rng.normal(size=rng.integers(2, 8)))
            assert abs(hjb_residual(sol, t, mu)) <= 1e-6

    def test_perturbed_lambda_detected(self, sec51):
        sol = sec51[2]
        bad = dataclasses.replace(sol, Lambda=sol.Lambda * 1.1)
        mu = EmpiricalMeasure([0.5, -0.4, 1.0])
        assert abs(hjb_residual(bad, 0.5, mu)) > 1e-3

    def test_rejects_boundary_times(self, sec51):
        with pytest.raises(ValueError):
            hjb_residual(sec51[2], 1.0, EmpiricalMeasure([0.1]))
