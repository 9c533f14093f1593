"""Shared fixtures: the bundled match file and small schedule/parameter builders."""

from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest

from app.domain import MatchRecord, ModelParams, Schedule
from app.ingest import bucket_weeks, parse_matches
from app.trainer import TrainConfig

FIXTURES = Path(__file__).parent / "fixtures"


def build_schedule(weeks, boundaries=(), goal_cap=4, start=date(2010, 8, 14), presence=None):
    """
    Schedule from [[(home, away, home_goals, away_goals), ...], ...] per week.

    Teams are named by letter (0 -> "A"); weeks are 7 days apart.
    """
    buckets, dates = [], []
    names = {}
    for w, fixtures in enumerate(weeks):
        day = start + timedelta(days=7 * w)
        bucket = []
        for home, away, gh, ga in fixtures:
            names[home], names[away] = chr(65 + home), chr(65 + away)
            bucket.append(MatchRecord.create(day, home, away, gh, ga, goal_cap=goal_cap,
                                             home_name=names[home], away_name=names[away]))
        buckets.append(bucket)
        dates.append(day)
    if presence is not None:
        names.update({team: chr(65 + team) for team in presence})
    return Schedule.from_weeks(buckets, dates, boundaries, team_names=names, presence=presence)


def random_params(rng, S=2, G=2, concentration=1.0):
    """Random valid parameters; emission tables are not forced to be monotone."""
    def rows(*shape):
        return rng.dirichlet(np.full(shape[-1], concentration), size=shape[:-1])

    return ModelParams(
        pi=rng.dirichlet(np.ones(S)),
        rho=rng.dirichlet(np.ones(S)),
        omega_within=rows(S, S),
        omega_between=rows(S, S),
        delta_within=rows(S, S),
        delta_between=rows(S, S),
        psi=rows(S, S, G),
        gamma_cpt=rows(S, S, G),
    )


def random_forest_schedule(rng, goal_cap=1):
    """A random schedule whose latent graph is a forest (2 teams up to 4 weeks, 3 teams up to 3)."""
    from app.domain import Cardinalities
    from app.graph_engine import build_graph

    card = Cardinalities.from_goal_cap(2, goal_cap)
    while True:
        teams = int(rng.integers(2, 4))
        num_weeks = int(rng.integers(1, 5 if teams == 2 else 4))
        weeks = []
        for _ in range(num_weeks):
            order = rng.permutation(teams)
            fixtures = []
            if rng.random() < 0.6:
                fixtures.append((int(order[0]), int(order[1]),
                                 int(rng.integers(0, goal_cap + 1)), int(rng.integers(0, goal_cap + 1))))
            weeks.append(fixtures)
        if not any(weeks):
            continue
        presence = {t: range(1, num_weeks + 1) for t in range(teams)}
        schedule = build_schedule(weeks, goal_cap=goal_cap, presence=presence)
        if build_graph(schedule, card).is_forest:
            return schedule


@pytest.fixture
def fixture_path():
    return FIXTURES / "tiny_matches.csv"


@pytest.fixture
def fixture_text(fixture_path):
    return fixture_path.read_text(encoding="utf-8")


@pytest.fixture
def upcoming_path():
    return FIXTURES / "fixtures_upcoming.csv"


@pytest.fixture
def tiny_schedule(fixture_text):
    return bucket_weeks(parse_matches(fixture_text))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fast_config():
    return TrainConfig(max_iterations=6, restarts=2, seed=3, bp_cycles=6)


@pytest.fixture
def make_schedule():
    return build_schedule


@pytest.fixture
def make_params():
    return random_params


@pytest.fixture
def make_forest():
    return random_forest_schedule
