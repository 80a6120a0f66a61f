import numpy as np
import pytest

from ldp_gradtrack.dp_noise import NoiseSchedule, NoiseSource, StepsizeSchedule
from ldp_gradtrack.graph_topology import (build_random_strongly_connected, build_ring,
                                          left_perron)
from ldp_gradtrack.learners import run
from ldp_gradtrack.online_problem import DataPoint, StreamProblem
from ldp_gradtrack.privacy_accounting import (budget_curve, budget_terms,
                                              cumulative_budget, empirical_sensitivity,
                                              envelope_checks, sensitivity_series)


def naive_series(w, u, c_l, c_z, gamma_z, step, T):
    """Independent O(T^2) evaluation of both closed-form double sums."""
    c_C = np.abs(np.diag(w.C)).min()
    c_R = np.abs(np.diag(w.R)).min()
    rho_s = np.zeros(T + 1)
    for t in range(1, T + 1):
        rho_s[t] = 2 * c_l * sum((1 - c_C) ** (t - p) * step.at(p - 1)
                                 for p in range(1, t + 1))
    m = w.m
    rho_th = np.zeros((m, T + 1))
    for i in range(m):
        for t in range(1, T + 1):
            rho_th[i, t] = sum((1 - c_R) ** (t - q)
                               * (c_z * gamma_z ** (q - 1) + 1.0 / abs(u[i]))
                               * (rho_s[q] + rho_s[q - 1])
                               for q in range(1, t + 1))
    return rho_s, rho_th


def make_series(T=100, c_l=1.0, c_z=2.0, gamma_z=0.9, step=None, w=None):
    w = w or build_ring(10, 0.3)
    step = step or StepsizeSchedule(1.0, 0.6)
    return sensitivity_series(w, left_perron(w), c_l, c_z, gamma_z, step, T), w, step


def pair_schedules(m, sigma0=1.0, vz=0.55, vt=0.55):
    return [(NoiseSchedule(sigma0, vz), NoiseSchedule(sigma0, vt)) for _ in range(m)]


class TestSensitivitySeries:
    def test_base_values(self):
        series, _, step = make_series(T=5)
        assert series.rho_s[0] == 0.0
        assert series.rho_s[1] == pytest.approx(2.0 * step.lambda0, rel=1e-15)
        assert np.all(series.rho_s >= 0) and np.all(series.rho_theta >= 0)

    def test_matches_naive_double_sum_on_ring(self):
        series, w, step = make_series(T=100)
        rho_s, rho_th = naive_series(w, left_perron(w).u, 1.0, 2.0, 0.9, step, 100)
        assert np.abs(series.rho_s[1:] - rho_s[1:]).max() / rho_s[1:].max() < 1e-10
        rel = np.abs(series.rho_theta[:, 1:] - rho_th[:, 1:]) / rho_th[:, 1:].max()
        assert rel.max() < 1e-10

    def test_matches_naive_on_random_parameter_draws(self):
        rng = np.random.default_rng(0)
        for k in range(3):
            w = build_random_strongly_connected(2 + k * 3, 0.5, k)
            step = StepsizeSchedule(float(rng.uniform(0.1, 2)), float(rng.uniform(0.55, 0.95)))
            c_l = float(rng.uniform(0.1, 5))
            c_z, gamma_z = float(rng.uniform(0, 3)), float(rng.uniform(0.3, 0.98))
            u = left_perron(w).u
            series = sensitivity_series(w, left_perron(w), c_l, c_z, gamma_z, step, 60)
            rho_s, rho_th = naive_series(w, u, c_l, c_z, gamma_z, step, 60)
            assert np.abs(series.rho_s - rho_s).max() <= 1e-10 * max(1, rho_s.max())
            assert np.abs(series.rho_theta - rho_th).max() <= 1e-10 * max(1, rho_th.max())

    def test_linearity_in_gradient_bound(self):
        a, w, step = make_series(T=50, c_l=1.0)
        b, _, _ = make_series(T=50, c_l=3.5, w=w, step=step)
        assert np.allclose(b.rho_s, 3.5 * a.rho_s, rtol=1e-12)

    def test_worst_case_dominates_per_agent(self):
        w = build_random_strongly_connected(6, 0.4, 2)
        series = sensitivity_series(w, left_perron(w), 1.0, 1.0, 0.8,
                                    StepsizeSchedule(1.0, 0.6), 50)
        assert np.all(series.rho_theta_worst[None, :] >= series.rho_theta - 1e-12)

    def test_zero_diagonal_rejected(self):
        from ldp_gradtrack.graph_topology import DirectedWeights
        R = np.zeros((2, 2))
        w = DirectedWeights(m=2, R=R, C=R.copy())
        with pytest.raises(ValueError, match="vacuous"):
            sensitivity_series(w, left_perron(build_ring(2, 0.5)), 1.0, 1.0, 0.5,
                               StepsizeSchedule(1.0, 0.6), 10)

    def test_bad_envelope_rejected(self):
        w = build_ring(3, 0.5)
        with pytest.raises(ValueError, match="gamma_z"):
            sensitivity_series(w, left_perron(w), 1.0, 1.0, 1.5,
                               StepsizeSchedule(1.0, 0.6), 10)


class TestCumulativeBudget:
    def test_horizon_zero_is_free(self):
        series, _, _ = make_series(T=10)
        rep = cumulative_budget(series, pair_schedules(10), 0)
        assert np.all(rep.eps_total == 0.0)

    def test_doubling_sigma_halves_budget(self):
        series, _, _ = make_series(T=200)
        r1 = cumulative_budget(series, pair_schedules(10, sigma0=1.0), 200)
        r2 = cumulative_budget(series, pair_schedules(10, sigma0=2.0), 200)
        assert np.allclose(r2.eps_total, r1.eps_total / 2.0, rtol=1e-14)

    def test_budget_nondecreasing_in_horizon(self):
        series, _, _ = make_series(T=400)
        sch = pair_schedules(10)
        eps = [cumulative_budget(series, sch, T).eps_total.max() for T in (0, 50, 100, 400)]
        assert all(a <= b for a, b in zip(eps, eps[1:]))

    def test_marginal_increments_eventually_decrease(self):
        series, _, _ = make_series(T=2000)
        terms_s, terms_th = budget_terms(series, pair_schedules(10))
        total = (terms_s + terms_th).max(axis=0)
        # Past the mixing transient the per-round cost decays like t^(varsigma - v).
        assert np.all(np.diff(total[100:]) < 0)

    def test_disabled_noise_gives_infinite_budget(self):
        series, _, _ = make_series(T=10)
        rep = cumulative_budget(series, pair_schedules(10, sigma0=0.0), 10)
        assert np.all(np.isinf(rep.eps_total))

    def test_growth_curve_matches_reports(self):
        series, _, _ = make_series(T=300)
        sch = pair_schedules(10)
        curve = budget_curve(series, sch, [0, 100, 300])
        for row in curve:
            rep = cumulative_budget(series, sch, int(row[0]))
            assert row[1] == pytest.approx(rep.eps_s.max(), rel=1e-12)
            assert row[2] == pytest.approx(rep.eps_theta.max(), rel=1e-12)

    def test_tail_estimate_positive_and_finite(self):
        series, _, _ = make_series(T=500)
        rep = cumulative_budget(series, pair_schedules(10), 500)
        assert np.all(rep.tail_estimate > 0) and np.all(np.isfinite(rep.tail_estimate))


def run_pair(problem, adjacent, T=80, m=3, sigma0=0.5, seed=1):
    w = build_ring(m, 0.4)
    step = StepsizeSchedule(0.5, 0.6)
    sch = [(NoiseSchedule(sigma0, 0.52), NoiseSchedule(sigma0, 0.52))] * m
    a = run(w, problem, step, NoiseSource(seed, sch), rounds=T)
    b = run(w, adjacent, step, NoiseSource(seed, sch), rounds=T)
    return a, b, w, step


class TestEmpiricalSensitivity:
    def test_identical_datasets_give_zero(self):
        prob = StreamProblem("quadratic", dim=3, m=3, seed=0, clip_l1=1.0)
        a, b, _, _ = run_pair(prob, prob, T=30)
        div = empirical_sensitivity(a, b)
        assert div.agent is None
        assert np.all(div.s_l1 == 0.0) and np.all(div.theta_l1 == 0.0)

    def test_divergence_zero_before_substituted_round(self):
        k = 25
        prob = StreamProblem("quadratic", dim=3, m=3, seed=3, clip_l1=1.0)
        other = prob.with_replaced_point(1, k, DataPoint(x=np.array([3.0, -3.0]), y=3.0))
        a, b, _, _ = run_pair(prob, other, T=60)
        div = empirical_sensitivity(a, b)
        assert div.agent == 1
        assert np.all(div.s_l1[:k + 1] == 0.0)
        assert np.all(div.theta_l1[:k + 1] == 0.0)
        assert div.s_l1[k + 1:].max() > 0.0

    def test_realized_divergence_below_analytic_series(self):
        rng = np.random.default_rng(7)
        w = build_ring(3, 0.4)
        step = StepsizeSchedule(0.5, 0.6)
        pv = left_perron(w)
        c_l = 0.8
        series = sensitivity_series(w, pv, c_l, 1.0, 0.7, step, 120)
        for trial in range(4):
            prob = StreamProblem("quadratic", dim=3, m=3, seed=int(rng.integers(1e6)),
                                 clip_l1=c_l)
            k = int(rng.integers(0, 40))
            point = DataPoint(x=rng.normal(0, 2, 2), y=float(rng.normal(0, 2)))
            other = prob.with_replaced_point(0, k, point)
            a, b, _, _ = run_pair(prob, other, T=120, seed=trial)
            div = empirical_sensitivity(a, b)
            assert np.all(div.s_l1 <= series.rho_s + 1e-12)

    def test_shape_mismatch_rejected(self):
        prob = StreamProblem("quadratic", dim=3, m=3, seed=0, clip_l1=1.0)
        a, _, _, _ = run_pair(prob, prob, T=10)
        b, _, _, _ = run_pair(prob, prob, T=20)
        with pytest.raises(ValueError):
            empirical_sensitivity(a, b)

    def test_pushpull_traces_rejected(self):
        w = build_ring(3, 0.4)
        prob = StreamProblem("quadratic", dim=3, m=3, seed=0)
        sch = [(NoiseSchedule(0.5, 0.52), NoiseSchedule(0.5, 0.52))] * 3
        tr = run(w, prob, StepsizeSchedule(0.5, 0.6), NoiseSource(0, sch), rounds=5,
                 algorithm="pushpull_noisy")
        with pytest.raises(ValueError, match="tracker"):
            empirical_sensitivity(tr, tr)


class TestEnvelopeChecks:
    def test_geometric_envelope_clean_scan(self):
        rep = envelope_checks(0.5, 0.3, 0.6, 10_000)
        assert rep.geometric_ok and rep.geometric_violations == 0

    def test_underflow_region_trivially_holds(self):
        rep = envelope_checks(0.1, 0.5, 1.0, 10_000)
        assert rep.geometric_ok

    def test_recursion_envelope_at_equality(self):
        rep = envelope_checks(0.5, 0.3, 0.6, 10_000, beta0=1.0, v0=5.0)
        assert rep.recursion_ok and rep.recursion_violations == 0
        assert rep.recursion_constant > 0

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            envelope_checks(1.5, 0.3, 0.6, 100)
        with pytest.raises(ValueError):
            envelope_checks(0.5, 1.3, 0.6, 100)
        with pytest.raises(ValueError):
            envelope_checks(0.5, 0.3, -0.6, 100)
