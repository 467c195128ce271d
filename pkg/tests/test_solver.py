import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfsched.solver import (
    Allocation,
    SlotProblem,
    SolverConvergenceError,
    brute_force_pf,
    kkt_residual,
    pf_utility,
    shadow_price,
    simplex_grid,
    solve_pf_slot,
    solve_pf_w1,
)


def rates_2x2(values):
    return np.asarray(values, dtype=float).reshape(2, 2)


class TestSlotProblem:
    def test_rejects_negative_rates(self):
        with pytest.raises(ValueError):
            SlotProblem(rates=np.array([[-1.0, 2.0]]))

    def test_rejects_empty_active_set(self):
        with pytest.raises(ValueError):
            SlotProblem(rates=np.ones((2, 2)), active_set=())

    def test_rejects_out_of_range_active_user(self):
        with pytest.raises(ValueError):
            SlotProblem(rates=np.ones((2, 2)), active_set=(0, 5))

    def test_divisor_broadcast(self):
        prob = SlotProblem(rates=np.ones((3, 2)), window_divisor=4.0)
        assert prob.window_divisor.tolist() == [4.0, 4.0, 4.0]


class TestShadowPrice:
    def test_hand_value(self):
        prob = SlotProblem(
            rates=np.array([[2.0]]), baseline=np.array([1.0]), window_divisor=2.0
        )
        alloc = Allocation(np.array([[1.0]]))
        assert shadow_price(prob, alloc, 0, 0) == pytest.approx(0.5)

    def test_zero_rate_prices_at_zero(self):
        prob = SlotProblem(rates=np.array([[0.0, 3.0], [1.0, 1.0]]))
        alloc = Allocation(np.full((2, 2), 0.5))
        assert shadow_price(prob, alloc, 0, 0) == 0.0

    def test_two_user_diagonal_example(self):
        prob = SlotProblem(rates=rates_2x2([2, 1, 1, 2]))
        alloc = Allocation(np.eye(2))
        assert shadow_price(prob, alloc, 0, 0) == pytest.approx(1.0)
        assert shadow_price(prob, alloc, 1, 0) == pytest.approx(0.5)

    def test_division_by_zero_signalled(self):
        prob = SlotProblem(rates=np.array([[0.0], [1.0]]))
        alloc = Allocation(np.array([[0.0], [1.0]]))
        with pytest.raises(ZeroDivisionError):
            shadow_price(prob, alloc, 0, 0)


class TestSolvePfSlot:
    def test_single_user_takes_everything(self):
        report = solve_pf_slot(SlotProblem(rates=np.array([[3.0, 0.5, 2.0]])))
        assert np.array_equal(report.allocation.airtime, np.ones((1, 3)))

    def test_diagonal_instance(self):
        report = solve_pf_slot(SlotProblem(rates=rates_2x2([2, 1, 1, 2])))
        assert report.utility == pytest.approx(2 * np.log(2.0), abs=1e-9)
        assert np.allclose(report.allocation.airtime, np.eye(2), atol=1e-9)
        assert report.kkt_residual <= 1e-6

    def test_matches_brute_force(self):
        prob = SlotProblem(rates=rates_2x2([3, 1, 2, 2]))
        report = solve_pf_slot(prob, tol=1e-8)
        oracle = brute_force_pf(prob, grid_step=1e-3)
        assert report.utility == pytest.approx(oracle.utility, abs=1e-4)

    def test_active_set_restriction(self):
        prob = SlotProblem(rates=np.ones((3, 2)), active_set=(0, 2))
        report = solve_pf_slot(prob)
        assert np.all(report.allocation.airtime[1] == 0.0)
        report.allocation.check_feasible(active_set=(0, 2))

    def test_degenerate_user_dropped_with_warning(self):
        prob = SlotProblem(rates=np.array([[1.0, 2.0], [0.0, 0.0]]))
        with pytest.warns(UserWarning, match="degenerate"):
            report = solve_pf_slot(prob)
        assert np.all(report.allocation.airtime[1] == 0.0)
        assert np.all(report.allocation.airtime[0] == 1.0)

    def test_all_degenerate_rejected(self):
        prob = SlotProblem(rates=np.zeros((2, 2)))
        with pytest.warns(UserWarning):
            with pytest.raises(ValueError):
                solve_pf_slot(prob)

    def test_iteration_cap_signals_with_report(self):
        prob = SlotProblem(rates=rates_2x2([3, 1, 2, 2]))
        with pytest.raises(SolverConvergenceError) as exc_info:
            solve_pf_slot(prob, max_iter=0)
        assert exc_info.value.report.allocation.airtime.shape == (2, 2)

    def test_utility_matches_objective_formula(self):
        prob = SlotProblem(
            rates=rates_2x2([3, 1, 2, 2]),
            baseline=np.array([0.5, 1.5]),
            window_divisor=np.array([2.0, 3.0]),
        )
        report = solve_pf_slot(prob)
        p = report.allocation.airtime
        direct = sum(
            np.log(prob.baseline[i] + (p[i] * prob.rates[i]).sum() / prob.window_divisor[i])
            for i in range(2)
        )
        assert report.utility == pytest.approx(direct, rel=1e-12)


class TestSolvePfW1:
    def test_equal_rates_equal_share_of_value(self):
        rates = np.full((4, 8), 2.5)
        report = solve_pf_w1(rates)
        per_user = (report.allocation.airtime * rates).sum(axis=1)
        assert np.allclose(per_user, 2.5 * 8 / 4, atol=1e-8)

    def test_single_channel_equal_airtime_regardless_of_rates(self):
        report = solve_pf_w1(np.array([[4.0], [1.0]]))
        assert np.allclose(report.allocation.airtime, [[0.5], [0.5]], atol=1e-9)

    def test_single_user(self):
        report = solve_pf_w1(np.array([[7.0]]))
        assert report.allocation.airtime.tolist() == [[1.0]]


class TestBruteForce:
    def test_known_optimum(self):
        report = brute_force_pf(SlotProblem(rates=rates_2x2([2, 1, 1, 2])), grid_step=1e-2)
        assert report.utility == pytest.approx(2 * np.log(2.0), abs=1e-3)

    def test_single_user_exact(self):
        report = brute_force_pf(SlotProblem(rates=np.array([[2.0, 3.0]])), grid_step=0.1)
        assert np.array_equal(report.allocation.airtime, np.ones((1, 2)))

    def test_size_cap(self):
        with pytest.raises(ValueError):
            brute_force_pf(SlotProblem(rates=np.ones((3, 3))), grid_step=1e-3)

    def test_rejects_large_instances(self):
        with pytest.raises(ValueError):
            brute_force_pf(SlotProblem(rates=np.ones((4, 2))), grid_step=0.1)

    def test_grid_points_sum_to_one(self):
        grid = simplex_grid(3, 0.25)
        assert np.allclose(grid.sum(axis=1), 1.0)
        assert (grid >= 0).all()


def random_problem(seed, with_baseline):
    rng = np.random.default_rng(seed)
    rates = rng.uniform(0.1, 10.0, size=(2, 2))
    baseline = rng.uniform(0.0, 5.0, size=2) if with_baseline else np.zeros(2)
    return SlotProblem(rates=rates, baseline=baseline)


class TestInvariants:
    @given(st.integers(0, 10_000), st.booleans())
    @settings(max_examples=40, deadline=None)
    def test_feasibility_and_kkt_certificate(self, seed, with_baseline):
        prob = random_problem(seed, with_baseline)
        report = solve_pf_slot(prob, tol=1e-8)
        report.allocation.check_feasible()
        prices = prob.rates / (
            prob.window_divisor * prob.baseline
            + (report.allocation.airtime * prob.rates).sum(axis=1)
        )[:, None]
        p = report.allocation.airtime
        for k in range(2):
            supported = np.nonzero(p[:, k] > 1e-6)[0]
            for i in supported:
                for j in range(2):
                    if p[j, k] > 1e-6:
                        assert abs(prices[i, k] - prices[j, k]) <= 1e-6
                    else:
                        assert prices[i, k] >= prices[j, k] - 1e-6

    @given(st.integers(0, 10_000), st.floats(0.1, 50.0))
    @settings(max_examples=30, deadline=None)
    def test_scale_covariance(self, seed, scale):
        prob = random_problem(seed, with_baseline=False)
        base = solve_pf_slot(prob, tol=1e-9)
        scaled = solve_pf_slot(SlotProblem(rates=prob.rates * scale), tol=1e-9)
        assert np.allclose(base.allocation.airtime, scaled.allocation.airtime, atol=1e-6)
        assert scaled.utility == pytest.approx(base.utility + 2 * np.log(scale), abs=1e-7)

    @given(st.integers(0, 10_000), st.booleans())
    @settings(max_examples=30, deadline=None)
    def test_beats_uniform_allocation(self, seed, with_baseline):
        prob = random_problem(seed, with_baseline)
        report = solve_pf_slot(prob, tol=1e-8)
        uniform = pf_utility(prob, Allocation(np.full((2, 2), 0.5)))
        assert report.utility >= uniform - 1e-8

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_report_residual_matches_recomputation(self, seed):
        prob = random_problem(seed, with_baseline=True)
        report = solve_pf_slot(prob, tol=1e-8)
        assert kkt_residual(prob, report.allocation.airtime) == pytest.approx(
            report.kkt_residual, abs=1e-12
        )
