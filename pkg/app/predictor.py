"""
Predictor Module - strength timelines and match forecasts

Turns a trained model and its posterior into:
- predictive strength distributions for a future week
- scoreline distributions and win/draw/loss probabilities
- 0-100 strength timelines
- a comparison of emission rows with a matched Poisson
"""

import logging
from dataclasses import dataclass
from datetime import date
from typing import Iterable, List, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, xlogy

from .domain import ModelParams, Posterior, PredictionTriple, strength_expectation
from .errors import UnknownTeamError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ScorelineDistribution:
    """joint[g_h, g_a] = P(home scores g_h, away scores g_a)."""
    joint: np.ndarray

    def __post_init__(self):
        joint = np.array(self.joint, dtype=float)
        if joint.ndim != 2 or joint.shape[0] != joint.shape[1]:
            raise ValueError(f"scoreline joint must be square, got shape {joint.shape}")
        if np.any(joint < 0) or abs(joint.sum() - 1.0) > 1e-9:
            raise ValueError("scoreline joint must be a distribution")
        joint.setflags(write=False)
        object.__setattr__(self, "joint", joint)

    @property
    def home_goals(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    @property
    def away_goals(self) -> np.ndarray:
        return self.joint.sum(axis=0)


@dataclass
class TimelinePoint:
    week: int
    date: date
    strength: float


@dataclass
class PoissonReport:
    """An emission row next to the truncated Poisson with the same mean."""
    mean: float
    lam: float
    observed: np.ndarray
    poisson: np.ndarray
    total_variation: float


def _normalize(v: np.ndarray) -> np.ndarray:
    total = v.sum()
    if total <= 0:
        raise ValueError("distribution has no mass")
    return v / total


def predictive_state(
    team: int,
    role: str,
    posterior: Posterior,
    params: ModelParams,
    target_week: int,
    season_boundaries: Optional[Iterable[int]] = None,
    allow_entry: bool = False,
) -> np.ndarray:
    """
    Strength distribution of a team in a week after its last inferred one.

    Starts from the marginal at the latest present week before target_week.
    Every season boundary crossed on the way applies the between-season
    matrix once; the within-season matrix then covers the weeks from the
    last crossed boundary (or the start week) to the target.

    Args:
        team: Team id
        role: "offense" or "defense"
        posterior: Inference output covering the team's history
        params: Model parameters
        target_week: Week to predict for
        season_boundaries: Boundaries of the full calendar (defaults to the posterior's schedule)
        allow_entry: Return the initial distribution for a team with no history

    Returns:
        Length-S distribution
    """
    within, between = params.transitions(role)
    history = [w for w in posterior.team_weeks(team) if w < target_week]
    if not history:
        if allow_entry:
            return np.array(params.initial(role), dtype=float)
        raise UnknownTeamError(team, f"no history before week {target_week}")

    last = max(history)
    v = np.array(posterior.marginal(team, last, role), dtype=float)
    if season_boundaries is None:
        season_boundaries = posterior.graph.schedule.season_boundaries
    crossed = sorted(b for b in season_boundaries if last < b <= target_week)
    if crossed:
        v = v @ np.linalg.matrix_power(between, len(crossed))
        v = v @ np.linalg.matrix_power(within, target_week - crossed[-1])
    else:
        v = v @ np.linalg.matrix_power(within, target_week - last)
    return _normalize(v)


def goal_distribution(offense_state: np.ndarray, defense_state: np.ndarray, cpt: np.ndarray) -> np.ndarray:
    """out[g] = sum_ij offense[i] * defense[j] * cpt[i][j][g], renormalized."""
    out = np.einsum("i,j,ijg->g", np.asarray(offense_state, float), np.asarray(defense_state, float),
                    np.asarray(cpt, float))
    return _normalize(out)


def predict_match(
    home: int,
    away: int,
    week: int,
    posterior: Posterior,
    params: ModelParams,
    season_boundaries: Optional[Iterable[int]] = None,
    allow_entry: bool = False,
) -> ScorelineDistribution:
    """Scoreline distribution as the product of the two goal distributions."""
    boundaries = None if season_boundaries is None else tuple(season_boundaries)

    def state(team, role):
        return predictive_state(team, role, posterior, params, week, boundaries, allow_entry)

    p_home = goal_distribution(state(home, "offense"), state(away, "defense"), params.psi)
    p_away = goal_distribution(state(away, "offense"), state(home, "defense"), params.gamma_cpt)
    joint = np.outer(p_home, p_away)
    return ScorelineDistribution(joint / joint.sum())


def wdl(dist: ScorelineDistribution) -> PredictionTriple:
    """Home win below the diagonal of joint[g_h, g_a], draw on it, away win above."""
    joint = dist.joint
    p_home = float(np.tril(joint, -1).sum())
    p_draw = float(np.trace(joint))
    p_away = float(np.triu(joint, 1).sum())
    total = p_home + p_draw + p_away
    return PredictionTriple(p_home / total, p_draw / total, p_away / total)


def timeline(team: int, role: str, posterior: Posterior) -> List[TimelinePoint]:
    """Strength (0-100) per week the team is in its schedule; bridged weeks are gaps."""
    graph = posterior.graph
    if not posterior.has_team(team):
        raise UnknownTeamError(team)
    gamma = posterior.gamma_o if role == "offense" else posterior.gamma_d
    points = []
    for n in graph.team_nodes[team]:
        if graph.node_bridged[n]:
            continue
        week = int(graph.node_week[n])
        points.append(TimelinePoint(week, graph.schedule.week_date(week), strength_expectation(gamma[n])))
    return points


def truncated_poisson(lam: float, num_goal_states: int) -> np.ndarray:
    """Poisson(lam) on 0..G-1, renormalized."""
    goals = np.arange(num_goal_states, dtype=float)
    log_pmf = xlogy(goals, lam) - lam - gammaln(goals + 1)
    pmf = np.exp(log_pmf)
    return pmf / pmf.sum()


def _match_rate(mean: float, num_goal_states: int) -> float:
    """Rate whose truncated Poisson has the given mean."""
    goals = np.arange(num_goal_states)

    def gap(lam):
        return float(goals @ truncated_poisson(lam, num_goal_states)) - mean

    hi = max(1.0, 2.0 * mean)
    while gap(hi) < 0:
        hi *= 2.0
    return float(brentq(gap, 0.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps))


def poisson_deviation(cpt: np.ndarray, i: int, j: int) -> PoissonReport:
    """
    Compare cpt[i][j] with the truncated Poisson of equal mean.

    The rate is chosen so the truncated, renormalized Poisson on 0..G-1 has
    the same expected goals as the row. A row with all mass on the cap has
    no finite rate and is compared with a point mass on the cap.
    """
    row = np.asarray(cpt, dtype=float)[i, j]
    G = row.shape[0]
    mean = float(np.dot(np.arange(G), row))
    if mean <= 0.0:
        lam, reference = 0.0, truncated_poisson(0.0, G)
    elif mean >= G - 1 - 1e-12:
        lam, reference = float("inf"), np.eye(G)[G - 1]
    else:
        lam = _match_rate(mean, G)
        reference = truncated_poisson(lam, G)
    tv = 0.5 * float(np.abs(row - reference).sum())
    return PoissonReport(mean=mean, lam=lam, observed=row.copy(), poisson=reference, total_variation=tv)
