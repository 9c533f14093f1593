import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import softmax, xlogy

from app.domain import Cardinalities, ModelParams, Posterior, expected_goals_surface
from app.errors import TrainingError
from app.graph_engine import build_graph, dirichlet_log_prior, run_bp
from app.harness import brute_force_log_evidence
from app.trainer import (
    BETWEEN,
    ConvergenceMonitor,
    TrainConfig,
    WITHIN,
    em_fit,
    em_iterate,
    emission_objective,
    initial_params,
    m_step_emission_constrained,
    m_step_initial,
    m_step_transition,
    make_emission_dirichlet,
    make_hyperparams,
    make_transition_alphas,
    sufficient_statistics,
    train,
    training_objective,
)
from app.validator import validate_params
from tests.conftest import build_schedule, random_forest_schedule


class TestHyperparameters:
    def test_within_alphas(self):
        alphas = make_transition_alphas(2, 10.0)
        np.testing.assert_allclose(alphas[0], [9.889, 2.111], atol=1e-3)
        np.testing.assert_allclose(alphas.sum(axis=1), 12.0)

    @pytest.mark.parametrize("S", [2, 4, 7])
    def test_row_sums(self, S):
        for kind in ("within", BETWEEN):
            np.testing.assert_allclose(make_transition_alphas(S, 87.0, kind).sum(axis=1), 87.0 + S)

    def test_between_alphas_spread_wider(self):
        within = make_transition_alphas(4, 87.0)
        between = make_transition_alphas(4, 87.0, BETWEEN)
        assert between[0, 0] < within[0, 0]

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_transition_alphas(3, 10.0, "sideways")

    def test_emission_dirichlet(self):
        np.testing.assert_allclose(make_emission_dirichlet((0.5, 0.3, 0.2), 236.0), (119.0, 71.8, 48.2))

    def test_emission_dirichlet_needs_frequencies(self):
        with pytest.raises(ValueError):
            make_emission_dirichlet((0.5, 0.6), 10.0)

    def test_from_schedule(self, tiny_schedule):
        hyper = make_hyperparams(tiny_schedule, Cardinalities(4, 5))
        assert hyper.alpha_within.shape == (4, 4)
        # beta - 1 is c_goal times the home-goal frequencies
        np.testing.assert_allclose((hyper.beta - 1.0).sum(), 236.0)
        assert hyper.beta[4] == pytest.approx(1.0 + 236.0 / 36)


def simplex_argmax(weights):
    """Numeric maximizer of sum(w * ln p) over the simplex, through a softmax."""
    w = np.asarray(weights, dtype=float) / np.sum(weights)

    def negative(z):
        p = softmax(z)
        return -float(xlogy(w, p).sum()), -(w - p)

    result = minimize(negative, np.zeros(len(w)), jac=True, method="BFGS", options={"gtol": 1e-12})
    return softmax(result.x)


def grid_emission_optimum(weights, step=0.01):
    """
    Best objective over a grid for S=2, G=2, where cpt[i, j] = (1 - p_ij, p_ij).

    The ordering is p01 <= p00 <= p10 and p01 <= p11 <= p10, so for each
    (p01, p10) pair the two middle cells are maximized over [p01, p10].
    """
    grid = np.linspace(0.0, 1.0, int(round(1 / step)) + 1)

    def values(i, j):
        return xlogy(weights[i, j, 0], 1.0 - grid) + xlogy(weights[i, j, 1], grid)

    f00, f01, f10, f11 = values(0, 0), values(0, 1), values(1, 0), values(1, 1)
    best = -np.inf
    for a in range(len(grid)):
        range00 = np.maximum.accumulate(f00[a:])
        range11 = np.maximum.accumulate(f11[a:])
        best = max(best, float(np.max(f01[a] + f10[a:] + range00 + range11)))
    return best


class TestMStep:
    def test_transition_without_prior(self):
        np.testing.assert_allclose(m_step_transition([[3.0, 1.0], [0.0, 2.0]], np.ones((2, 2)))[0], [0.75, 0.25])

    def test_transition_with_prior(self):
        alpha = np.array([[2.0, 1.0], [1.0, 2.0]])
        np.testing.assert_allclose(m_step_transition([[3.0, 1.0], [0.0, 2.0]], alpha)[0], [0.8, 0.2])

    def test_empty_row_becomes_uniform(self):
        np.testing.assert_allclose(m_step_transition(np.zeros((2, 2)), np.ones((2, 2))), np.full((2, 2), 0.5))

    def test_sufficient_statistics_of_one_match(self):
        graph = build_graph(build_schedule([[(0, 1, 1, 0)]], goal_cap=1), Cardinalities(2, 2))
        stats = sufficient_statistics(run_bp(graph, ModelParams.uniform(2, 2)))
        np.testing.assert_allclose(stats.head_o, [1.0, 1.0])
        np.testing.assert_allclose(stats.xi_within_o, np.zeros((2, 2)))
        np.testing.assert_allclose(stats.home_counts[..., 1], np.full((2, 2), 0.25))
        np.testing.assert_allclose(stats.home_counts[..., 0], 0.0)
        np.testing.assert_allclose(stats.away_counts[..., 0], np.full((2, 2), 0.25))

    def test_initial_distribution(self):
        graph = build_graph(build_schedule([[(0, 1, 0, 0)]]), Cardinalities(2, 2))
        heads = np.array([[0.2, 0.8], [0.6, 0.4]])
        posterior = Posterior(heads, heads, np.zeros((0, 2, 2)), np.zeros((0, 2, 2)),
                              np.full((1, 2, 2), 0.25), np.full((1, 2, 2), 0.25), graph)
        pi, rho = m_step_initial(posterior)
        np.testing.assert_allclose(pi, [0.4, 0.6])
        np.testing.assert_allclose(rho, [0.4, 0.6])

    def test_monotone_counts_give_the_closed_form(self):
        counts = np.zeros((2, 2, 2))
        counts[..., 0] = [[5.0, 8.0], [2.0, 5.0]]
        counts[..., 1] = [[5.0, 2.0], [8.0, 5.0]]
        cpt = m_step_emission_constrained(counts, np.ones(2))
        np.testing.assert_allclose(cpt, counts / 10.0)

    def test_unordered_counts_are_projected(self):
        counts = np.zeros((2, 2, 3))
        counts[0, 0] = (1, 2, 7)
        counts[1, 0] = (7, 2, 1)
        counts[0, 1] = (4, 3, 3)
        counts[1, 1] = (3, 3, 4)
        cpt = m_step_emission_constrained(counts, np.full(3, 2.0))
        np.testing.assert_allclose(cpt.sum(axis=-1), 1.0, atol=1e-12)
        surface = expected_goals_surface(cpt)
        assert np.all(np.diff(surface, axis=0) >= -1e-9)
        assert np.all(np.diff(surface, axis=1) <= 1e-9)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_projection_is_always_feasible(self, seed):
        rng = np.random.default_rng(seed)
        counts = rng.gamma(1.0, 3.0, size=(3, 3, 4))
        cpt = m_step_emission_constrained(counts, np.ones(4))
        assert np.all(cpt >= 0)
        surface = expected_goals_surface(cpt)
        assert np.all(np.diff(surface, axis=0) >= -1e-9)
        assert np.all(np.diff(surface, axis=1) <= 1e-9)


class TestMStepOptimality:
    def test_transition_matches_numeric_optimum(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            xi = rng.gamma(1.0, 3.0, size=(3, 3))
            alpha = make_transition_alphas(3, float(rng.uniform(1.0, 50.0)), (WITHIN, BETWEEN)[int(rng.integers(2))])
            omega = m_step_transition(xi, alpha)
            for k in range(3):
                np.testing.assert_allclose(omega[k], simplex_argmax(xi[k] + alpha[k] - 1.0), atol=1e-6)

    def test_initial_matches_numeric_optimum(self):
        rng = np.random.default_rng(22)
        graph = build_graph(build_schedule([[(0, 1, 0, 0), (2, 3, 1, 1)]]), Cardinalities(3, 5))
        for _ in range(20):
            gamma_o, gamma_d = rng.dirichlet(np.ones(3), size=4), rng.dirichlet(np.ones(3), size=4)
            zeta = np.full((2, 3, 3), 1 / 9)
            posterior = Posterior(gamma_o, gamma_d, np.zeros((0, 3, 3)), np.zeros((0, 3, 3)), zeta, zeta, graph)
            pi, rho = m_step_initial(posterior)
            np.testing.assert_allclose(pi, simplex_argmax(gamma_o.sum(axis=0)), atol=1e-6)
            np.testing.assert_allclose(rho, simplex_argmax(gamma_d.sum(axis=0)), atol=1e-6)

    def test_emission_beats_the_grid(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            counts = rng.gamma(1.0, 3.0, size=(2, 2, 2))
            cpt = m_step_emission_constrained(counts, np.ones(2))
            assert emission_objective(counts, cpt) >= grid_emission_optimum(counts) - 1e-9

    def test_no_feasible_step_improves_the_emission(self):
        rng = np.random.default_rng(24)
        step = 1e-4
        for _ in range(10):
            counts = rng.gamma(1.0, 3.0, size=(2, 2, 3))
            cpt = m_step_emission_constrained(counts, np.ones(3))
            best = emission_objective(counts, cpt)
            for i in range(2):
                for j in range(2):
                    for g_from in range(3):
                        for g_to in range(3):
                            if g_from == g_to or cpt[i, j, g_from] < step:
                                continue
                            moved = cpt.copy()
                            moved[i, j, g_from] -= step
                            moved[i, j, g_to] += step
                            surface = expected_goals_surface(moved)
                            if np.diff(surface, axis=0).min() < 0 or np.diff(surface, axis=1).max() > 0:
                                continue
                            assert emission_objective(counts, moved) <= best + 1e-7 * abs(best)


class TestObjective:
    def test_matches_exact_evidence_on_a_tree(self, rng):
        schedule = build_schedule([[(0, 1, 1, 0)], [(1, 2, 0, 1)]], goal_cap=1)
        card = Cardinalities(2, 2)
        hyper = make_hyperparams(schedule, card, c_transition=5.0, c_goal=10.0)
        params = initial_params(rng, hyper)
        graph = build_graph(schedule, card)
        objective = training_objective(graph, params, hyper, run_bp(graph, params))
        expected = brute_force_log_evidence(schedule, params) + dirichlet_log_prior(params, hyper)
        assert objective == pytest.approx(expected, abs=1e-9)


class TestEmIterate:
    def test_objective_never_falls_on_forests(self):
        rng = np.random.default_rng(7)
        card = Cardinalities(2, 2)
        for _ in range(10):
            schedule = random_forest_schedule(rng)
            hyper = make_hyperparams(schedule, card, c_transition=5.0, c_goal=10.0)
            graph = build_graph(schedule, card)
            _, _, objectives = em_iterate(graph, initial_params(rng, hyper), hyper, 50)
            assert np.all(np.diff(objectives) >= -1e-9 * np.maximum(1.0, np.abs(objectives[:-1])))

    def test_closing_e_step(self, rng):
        schedule = build_schedule([[(0, 1, 1, 0)]], goal_cap=1)
        card = Cardinalities(2, 2)
        hyper = make_hyperparams(schedule, card, 5.0, 10.0)
        graph = build_graph(schedule, card)
        params, posterior, objectives = em_iterate(graph, initial_params(rng, hyper), hyper, 3)
        assert len(objectives) == 4
        assert objectives[-1] == pytest.approx(training_objective(graph, params, hyper, posterior))

    def test_contradiction_carries_iteration(self):
        schedule = build_schedule([[(0, 1, 1, 0)]], goal_cap=1)
        card = Cardinalities(2, 2)
        hyper = make_hyperparams(schedule, card, 5.0, 10.0)
        psi = np.zeros((2, 2, 2))
        psi[..., 0] = 1.0
        with pytest.raises(TrainingError, match=r"\[iteration 1\] contradictory evidence"):
            em_iterate(build_graph(schedule, card), ModelParams.uniform(2, 2).updated(psi=psi), hyper, 2)

    def test_needs_an_iteration(self, rng):
        schedule = build_schedule([[(0, 1, 1, 0)]], goal_cap=1)
        hyper = make_hyperparams(schedule, Cardinalities(2, 2), 5.0, 10.0)
        with pytest.raises(ValueError):
            em_iterate(build_graph(schedule, Cardinalities(2, 2)), initial_params(rng, hyper), hyper, 0)


class TestConvergenceMonitor:
    def test_relative_tolerance(self):
        monitor = ConvergenceMonitor(tol=1e-6, max_iterations=10, is_exact=True)
        monitor.report(-100.0)
        assert not monitor.converged
        monitor.report(-100.00001)
        assert monitor.converged

    def test_iteration_cap(self):
        monitor = ConvergenceMonitor(tol=1e-12, max_iterations=2, is_exact=False)
        monitor.report(-10.0)
        monitor.report(-5.0)
        assert not monitor.converged
        assert monitor.finished


class TestTrain:
    def test_fixture_fit(self, tiny_schedule, fast_config):
        hyper = make_hyperparams(tiny_schedule, Cardinalities(3, 5))
        result = train(tiny_schedule, hyper, fast_config)
        assert validate_params(result.params) == []
        assert len(result.trace.restarts) == 2
        assert result.trace.best_objective == max(result.trace.final_objectives)
        assert all(len(r.objectives) <= fast_config.max_iterations for r in result.trace.restarts)
        rows = result.trace.rows()
        assert rows[0][:2] == (0, 1)

    def test_same_seed_same_model(self, tiny_schedule, fast_config):
        hyper = make_hyperparams(tiny_schedule, Cardinalities(2, 5))
        first, _ = em_fit(tiny_schedule, hyper, fast_config)
        second, _ = em_fit(tiny_schedule, hyper, fast_config)
        for name in ("pi", "omega_within", "delta_between", "psi", "gamma_cpt"):
            np.testing.assert_array_equal(getattr(first, name), getattr(second, name))

    def test_threads_do_not_change_the_result(self, tiny_schedule):
        hyper = make_hyperparams(tiny_schedule, Cardinalities(2, 5))
        serial, _ = em_fit(tiny_schedule, hyper, TrainConfig(max_iterations=4, restarts=3, bp_cycles=4))
        pooled, _ = em_fit(tiny_schedule, hyper, TrainConfig(max_iterations=4, restarts=3, bp_cycles=4, threads=3))
        np.testing.assert_array_equal(serial.psi, pooled.psi)

    def test_single_state_restarts_agree(self, tiny_schedule):
        hyper = make_hyperparams(tiny_schedule, Cardinalities.for_states(1, 5))
        _, trace = em_fit(tiny_schedule, hyper, TrainConfig(max_iterations=10, restarts=3, bp_cycles=2))
        finals = trace.final_objectives
        np.testing.assert_allclose(finals, finals[0], rtol=1e-9)

    def test_no_matches(self):
        schedule = build_schedule([[]], presence={0: [1]})
        hyper = make_hyperparams(schedule, Cardinalities(2, 2))
        with pytest.raises(TrainingError, match="no matches"):
            train(schedule, hyper)


@pytest.mark.parametrize("kwargs", [{"restarts": 0}, {"bp_cycles": 0}, {"convergence_tol": 0.0}, {"damping": 1.0}])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)
