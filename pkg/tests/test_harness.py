import statistics
import time
from datetime import date

import numpy as np
import pytest

from app.domain import Cardinalities, ModelParams
from app.errors import InstanceTooLargeError
from app.graph_engine import build_graph, run_bp
from app.harness import (
    EvalRow,
    brute_force_posterior,
    cumulative_net,
    make_skeleton,
    recovery_report,
    rolling_evaluate,
    simulate,
    weekly_net_series,
)
from app.ingest import bucket_weeks, parse_matches, serialize_matches
from app.predictor import truncated_poisson
from app.trainer import TrainConfig, em_fit, make_hyperparams, train
from tests.conftest import build_schedule, random_params

DAY = date(2010, 8, 14)


def strong_params(goal_states=5):
    """Sticky two-state chains whose states move expected goals a lot."""
    sticky = np.array([[0.97, 0.03], [0.03, 0.97]])

    def cpt(means):
        return np.array([[truncated_poisson(m, goal_states) for m in row] for row in means])

    return ModelParams(
        pi=np.array([0.5, 0.5]),
        rho=np.array([0.5, 0.5]),
        omega_within=sticky,
        omega_between=sticky,
        delta_within=sticky,
        delta_between=sticky,
        psi=cpt([[1.5, 0.3], [3.0, 1.5]]),
        gamma_cpt=cpt([[1.2, 0.2], [2.5, 1.2]]),
    )


def row(week, match_id, model, naive, book=None):
    return EvalRow(week, match_id, DAY, "A", "B", "win", {"model": model, "elo": 0.4, "naive": naive, "book": book})


class TestCumulativeNet:
    def test_running_sum(self):
        rows = [row(1, 0, 0.5 * np.exp(0.1), 0.5), row(2, 0, 0.5 * np.exp(-0.3), 0.5)]
        series = cumulative_net(rows, "model", "naive")
        assert [w for w, _ in series] == [1, 2]
        np.testing.assert_allclose([v for _, v in series], [0.1, -0.2], atol=1e-12)

    def test_method_against_itself(self):
        rows = [row(1, 0, 0.3, 0.5), row(1, 1, 0.6, 0.2)]
        assert [v for _, v in cumulative_net(rows, "naive", "naive")] == [0.0, 0.0]

    def test_order_within_a_week_does_not_matter(self):
        rows = [row(1, 0, 0.3, 0.5), row(1, 1, 0.6, 0.2), row(2, 0, 0.4, 0.4)]
        forward = dict(cumulative_net(rows, "model", "naive"))
        backward = dict(cumulative_net(rows[::-1], "model", "naive"))
        assert forward[1] == pytest.approx(backward[1])

    def test_rows_without_odds_are_skipped(self):
        rows = [row(1, 0, 0.5, 0.5, book=0.6), row(2, 0, 0.5, 0.5)]
        assert len(cumulative_net(rows, "model", "book")) == 1

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="unknown method"):
            cumulative_net([], "model", "oracle")

    def test_weekly_series_carries_missing_baselines(self):
        rows = [row(1, 0, 0.5, 0.5, book=0.25), row(2, 0, 0.5, 0.25)]
        series = weekly_net_series(rows)
        assert series[1]["cum_net_vs_book"] == pytest.approx(np.log(2.0))
        assert series[1]["cum_net_vs_naive"] == pytest.approx(np.log(2.0))


class TestSkeleton:
    def test_round_robin(self):
        skeleton = make_skeleton(4, 6)
        assert skeleton.num_weeks == 6
        assert all(len(skeleton.week(w)) == 2 for w in range(1, 7))
        pairs = {frozenset((r.home, r.away)) for r in skeleton.records()[:6]}
        assert len(pairs) == 6

    def test_odd_team_count_has_a_bye(self):
        assert all(len(bucket) == 2 for bucket in make_skeleton(5, 5).weeks)

    def test_seasons(self):
        skeleton = make_skeleton(4, 9, season_length=3)
        assert skeleton.season_boundaries == frozenset({4, 7})


class TestSimulate:
    def test_reproducible(self):
        skeleton = make_skeleton(6, 10)
        params = strong_params()
        a, b = simulate(params, skeleton, seed=11), simulate(params, skeleton, seed=11)
        assert [(r.raw_home_goals, r.raw_away_goals) for r in a.schedule.records()] == \
            [(r.raw_home_goals, r.raw_away_goals) for r in b.schedule.records()]
        assert a.offense == b.offense

    def test_frozen_chains(self):
        params = strong_params().updated(
            pi=np.array([0.0, 1.0]), rho=np.array([1.0, 0.0]),
            omega_within=np.eye(2), delta_within=np.eye(2),
        )
        sim = simulate(params, make_skeleton(4, 8), seed=3)
        assert set(sim.offense.values()) == {1}
        assert set(sim.defense.values()) == {0}

    def test_point_mass_emissions(self):
        cpt = np.zeros((2, 2, 3))
        cpt[..., 2] = 1.0
        params = ModelParams.uniform(2, 3).updated(psi=cpt)
        sim = simulate(params, make_skeleton(4, 4), seed=0)
        assert {r.raw_home_goals for r in sim.schedule.records()} == {2}

    @pytest.mark.slow
    def test_goal_frequencies_follow_the_table(self):
        params = strong_params(goal_states=4).updated(
            pi=np.array([1.0, 0.0]), rho=np.array([0.0, 1.0]),
            omega_within=np.eye(2), delta_within=np.eye(2),
        )
        sim = simulate(params, make_skeleton(2, 50_000), seed=5)
        goals = np.array([r.raw_home_goals for r in sim.schedule.records()])
        freq = np.bincount(goals, minlength=4) / goals.size
        np.testing.assert_allclose(freq, params.psi[0, 1], atol=0.01)

    def test_survives_a_csv_round_trip(self):
        sim = simulate(strong_params(), make_skeleton(6, 12, season_length=6), seed=2)
        again = bucket_weeks(parse_matches(serialize_matches(sim.schedule.records())))
        assert again.num_weeks == 12
        assert again.season_boundaries == frozenset({7})


class TestBruteForce:
    def test_evidence_free_chain(self):
        schedule = build_schedule([[], [], []], presence={0: range(1, 4)})
        params = random_params(np.random.default_rng(0))
        posterior = brute_force_posterior(schedule, params)
        expected = params.pi @ np.linalg.matrix_power(params.omega_within, 2)
        np.testing.assert_allclose(posterior.gamma_o[2], expected, atol=1e-12)

    def test_marginals_are_normalized(self, rng):
        schedule = build_schedule([[(0, 1, 1, 0)], [(1, 2, 0, 1)], [(2, 0, 1, 1)]], goal_cap=1)
        posterior = brute_force_posterior(schedule, random_params(rng))
        np.testing.assert_allclose(posterior.gamma_o.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(posterior.zeta_away.sum(axis=(1, 2)), 1.0, atol=1e-12)

    def test_refuses_large_instances(self):
        schedule = build_schedule([[(0, 1, 1, 0)]], goal_cap=1)
        with pytest.raises(InstanceTooLargeError, match="limit is 3"):
            brute_force_posterior(schedule, ModelParams.uniform(2, 2), limit=3)

    @pytest.mark.slow
    def test_loopy_round_robin_agreement(self):
        rng = np.random.default_rng(99)
        schedule = build_schedule([[(0, 1, 1, 0)], [(1, 2, 0, 1)], [(2, 0, 1, 1)]], goal_cap=1)
        graph = build_graph(schedule, Cardinalities(2, 2))
        close = 0
        for _ in range(100):
            params = random_params(rng)
            approx = run_bp(graph, params)
            exact = brute_force_posterior(schedule, params)
            tv = max(np.abs(approx.gamma_o - exact.gamma_o).max(), np.abs(approx.gamma_d - exact.gamma_d).max())
            close += tv <= 0.05
        assert close >= 95


class TestRecoveryReport:
    def test_self_comparison(self):
        params = strong_params()
        sim = simulate(params, make_skeleton(4, 6), seed=1)
        posterior = run_bp(build_graph(sim.schedule, Cardinalities(2, 5)), params)
        report = recovery_report(params, sim, params, posterior)
        assert report.offense_permutation == (0, 1)
        assert report.emission_error == 0.0
        assert all(d == 0.0 for d in report.transition_distances.values())
        assert 0.0 < report.mean_true_state_probability <= 1.0

    def test_relabelled_states(self):
        params = strong_params()
        swap = [1, 0]
        relabelled = ModelParams(
            pi=params.pi[swap], rho=params.rho[swap],
            omega_within=params.omega_within[np.ix_(swap, swap)],
            omega_between=params.omega_between[np.ix_(swap, swap)],
            delta_within=params.delta_within,
            delta_between=params.delta_between,
            psi=params.psi[swap],
            gamma_cpt=params.gamma_cpt[swap],
        )
        sim = simulate(params, make_skeleton(4, 4), seed=1)
        posterior = run_bp(build_graph(sim.schedule, Cardinalities(2, 5)), relabelled)
        report = recovery_report(params, sim, relabelled, posterior)
        assert report.offense_permutation == (1, 0)
        assert report.defense_permutation == (0, 1)
        assert report.emission_error == pytest.approx(0.0, abs=1e-12)

    def test_unrelated_parameters(self, rng):
        params = strong_params()
        other = random_params(rng, S=2, G=5)
        sim = simulate(params, make_skeleton(4, 4), seed=1)
        posterior = run_bp(build_graph(sim.schedule, Cardinalities(2, 5)), other)
        report = recovery_report(params, sim, other, posterior)
        assert report.emission_error > 0
        assert min(report.transition_distances.values()) > 0

    def test_cardinality_mismatch(self, rng):
        params = strong_params()
        sim = simulate(params, make_skeleton(4, 2), seed=1)
        posterior = run_bp(build_graph(sim.schedule, Cardinalities(2, 5)), params)
        with pytest.raises(ValueError):
            recovery_report(params, sim, ModelParams.uniform(3, 5), posterior)


class TestRollingEvaluate:
    def test_week_without_odds(self, tiny_schedule, fast_config):
        schedule = tiny_schedule.truncate(8)
        hyper = make_hyperparams(schedule, Cardinalities(2, 5))
        rows = rolling_evaluate(schedule, hyper, fast_config, split_week=7, weekly_iters=1)
        assert [(r.week, r.match_id) for r in rows] == [(7, 0), (7, 1)]
        for r in rows:
            assert not r.has("book")
            assert all(0.0 < r.probability(m) <= 1.0 for m in ("model", "elo", "naive"))

    def test_split_outside_schedule(self, tiny_schedule):
        hyper = make_hyperparams(tiny_schedule, Cardinalities(2, 5))
        with pytest.raises(ValueError, match="split week"):
            rolling_evaluate(tiny_schedule, hyper, split_week=1)

    @pytest.mark.slow
    def test_fixture_evaluation(self, tiny_schedule, fast_config):
        hyper = make_hyperparams(tiny_schedule, Cardinalities(2, 5))
        rows = rolling_evaluate(tiny_schedule, hyper, fast_config, split_week=13, weekly_iters=2)
        assert len(rows) == 12
        assert all(r.has("book") for r in rows)
        assert all(r.log_likelihood("model") <= 0.0 for r in rows)
        assert [s["week"] for s in weekly_net_series(rows)] == list(range(13, 19))

    @pytest.mark.slow
    def test_model_beats_naive_on_its_own_data(self):
        config = TrainConfig(max_iterations=30, restarts=2, bp_cycles=10)
        positive, net_vs_elo, matches = 0, 0.0, 0
        for seed in range(20):
            sim = simulate(strong_params(), make_skeleton(8, 40), seed=seed)
            hyper = make_hyperparams(sim.schedule, Cardinalities(2, 5), c_transition=20.0, c_goal=10.0)
            rows = rolling_evaluate(sim.schedule, hyper, config, split_week=31, weekly_iters=3)
            positive += cumulative_net(rows, "model", "naive")[-1][1] > 0
            net_vs_elo += cumulative_net(rows, "model", "elo")[-1][1]
            matches += len(rows)
        assert positive >= 19
        assert net_vs_elo / matches >= -0.01


class TestTraining:
    @pytest.mark.slow
    def test_parameter_recovery(self):
        truth = strong_params()
        recovered = 0
        for seed in range(10):
            sim = simulate(truth, make_skeleton(8, 60), seed=seed)
            hyper = make_hyperparams(sim.schedule, Cardinalities(2, 5), c_transition=20.0, c_goal=10.0)
            fit = train(sim.schedule, hyper, TrainConfig(max_iterations=60, restarts=3, seed=seed, bp_cycles=10))
            report = recovery_report(truth, sim, fit.params, fit.posterior)
            recovered += report.emission_error <= 0.15 and report.transition_diagonal_error <= 0.1
        assert recovered >= 8

    @pytest.mark.slow
    def test_restarts_reach_different_optima(self):
        sim = simulate(strong_params(), make_skeleton(6, 30), seed=4)
        hyper = make_hyperparams(sim.schedule, Cardinalities(3, 5), c_transition=5.0, c_goal=5.0)
        _, trace = em_fit(sim.schedule, hyper, TrainConfig(max_iterations=15, restarts=8, bp_cycles=10))
        finals = trace.final_objectives
        assert max(finals) - min(finals) > 1e-3
        assert trace.best_objective == max(finals)

    @pytest.mark.slow
    def test_default_priors_give_sticky_ordered_models(self, tiny_schedule, fast_config):
        fit = train(tiny_schedule, make_hyperparams(tiny_schedule, Cardinalities()), fast_config)
        for name in ("omega_within", "omega_between", "delta_within", "delta_between"):
            mat = getattr(fit.params, name)
            for i in range(4):
                assert mat[i, i] > np.delete(mat[i], i).max(), name


@pytest.mark.slow
def test_bp_time_grows_linearly_in_weeks():
    rng = np.random.default_rng(0)
    params = random_params(rng, S=4, G=5)

    def median_time(weeks):
        schedule = simulate(strong_params(), make_skeleton(10, weeks), seed=0).schedule
        graph = build_graph(schedule, Cardinalities(4, 5))
        times = []
        for _ in range(3):
            start = time.perf_counter()
            run_bp(graph, params)
            times.append(time.perf_counter() - start)
        return statistics.median(times)

    assert median_time(160) <= 2.2 * median_time(80)
