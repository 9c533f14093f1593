"""
Baselines Module - reference predictors

- Elo ratings with a home advantage and an ordered-logistic draw band,
  fitted by grid search on training matches
- a naive constant home/draw/away split
Bookmaker-implied probabilities live in ingest.implied_probabilities.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .domain import OUTCOMES, MatchRecord, PredictionTriple

logger = logging.getLogger(__name__)

INITIAL_RATING = 1500.0

_SCORE = {"win": 1.0, "draw": 0.5, "loss": 0.0}


@dataclass(frozen=True)
class EloModel:
    """Ratings per team id plus the three fitted scalars."""
    ratings: Dict[int, float] = field(default_factory=dict)
    k_factor: float = 20.0
    home_advantage: float = 0.0
    thresholds: Tuple[float, float] = (-0.5, 0.5)
    initial_rating: float = INITIAL_RATING

    def __post_init__(self):
        if not self.k_factor > 0:
            raise ValueError(f"k_factor must be positive, got {self.k_factor}")
        c1, c2 = self.thresholds
        if not c1 < c2:
            raise ValueError(f"thresholds must be ordered, got {self.thresholds}")

    def rating(self, team: int) -> float:
        return self.ratings.get(team, self.initial_rating)


@dataclass
class EloGrid:
    """Search space of elo_fit."""
    k_values: Sequence[float] = tuple(range(5, 51, 5))
    home_advantages: Sequence[float] = tuple(range(0, 151, 25))
    cutpoints: Sequence[float] = tuple(np.round(np.linspace(-1.5, 1.5, 13), 10))

    def threshold_pairs(self) -> List[Tuple[float, float]]:
        points = sorted(self.cutpoints)
        return [(c1, c2) for i, c1 in enumerate(points) for c2 in points[i + 1:]]


def elo_expected(r_home: float, r_away: float, home_advantage: float = 0.0) -> float:
    """Expected home score, 1 / (1 + 10^(-(r_home + HA - r_away) / 400))."""
    return 1.0 / (1.0 + 10.0 ** (-(r_home + home_advantage - r_away) / 400.0))


def elo_update(model: EloModel, match: MatchRecord) -> EloModel:
    """Zero-sum exchange K * (score - expected) from away to home."""
    r_home, r_away = model.rating(match.home), model.rating(match.away)
    delta = model.k_factor * (_SCORE[match.outcome] - elo_expected(r_home, r_away, model.home_advantage))
    ratings = dict(model.ratings)
    ratings[match.home] = r_home + delta
    ratings[match.away] = r_away - delta
    return replace(model, ratings=ratings)


def _ordered_logistic(z, c1: float, c2: float):
    """(home, draw, away) at scaled rating difference z."""
    low, high = expit(c1 - z), expit(c2 - z)
    return 1.0 - high, high - low, low


def elo_predict(model: EloModel, home: int, away: int) -> PredictionTriple:
    x = model.rating(home) + model.home_advantage - model.rating(away)
    p_home, p_draw, p_away = _ordered_logistic(x / 400.0, *model.thresholds)
    return PredictionTriple(float(p_home), float(max(p_draw, 0.0)), float(p_away))


def _rating_differences(train: Sequence[MatchRecord], k: float, home_advantage: float) -> Tuple[np.ndarray, Dict[int, float]]:
    """Pre-match x = r_home + HA - r_away under sequential updating."""
    ratings: Dict[int, float] = {}
    diffs = np.empty(len(train))
    for idx, rec in enumerate(train):
        r_home = ratings.get(rec.home, INITIAL_RATING)
        r_away = ratings.get(rec.away, INITIAL_RATING)
        diffs[idx] = r_home + home_advantage - r_away
        delta = k * (_SCORE[rec.outcome] - elo_expected(r_home, r_away, home_advantage))
        ratings[rec.home] = r_home + delta
        ratings[rec.away] = r_away - delta
    return diffs, ratings


def elo_fit(train: Sequence[MatchRecord], grid: Optional[EloGrid] = None) -> EloModel:
    """
    Grid-search K, home advantage and draw thresholds.

    Each candidate is scored by the log-likelihood of the observed results,
    predicting every match before its result updates the ratings. Ties go
    to the smaller K, then the smaller home advantage.

    Args:
        train: Matches in date order
        grid: Search space (defaults: K 5..50, HA 0..150, 13 cutpoints)

    Returns:
        EloModel with the winning scalars and the ratings after the last match
    """
    if not train:
        raise ValueError("elo_fit needs at least one match")
    grid = grid or EloGrid()
    pairs = np.array(grid.threshold_pairs())
    outcome_idx = np.array([OUTCOMES.index(rec.outcome) for rec in train])

    best_ll, best = -np.inf, None
    for k in sorted(grid.k_values):
        for ha in sorted(grid.home_advantages):
            diffs, ratings = _rating_differences(train, k, ha)
            z = diffs[None, :] / 400.0
            probs = np.stack(_ordered_logistic(z, pairs[:, :1], pairs[:, 1:]), axis=-1)
            chosen = np.take_along_axis(probs, outcome_idx[None, :, None], axis=-1)[..., 0]
            ll = np.log(np.clip(chosen, 1e-300, None)).sum(axis=1)
            top = int(np.argmax(ll))
            if ll[top] > best_ll + 1e-12:
                best_ll = float(ll[top])
                best = (k, ha, tuple(float(c) for c in pairs[top]), ratings)

    k, ha, thresholds, ratings = best
    logger.info(f"Elo fit: K={k}, home advantage={ha}, thresholds={thresholds}, log-likelihood {best_ll:.3f}")
    return EloModel(ratings=ratings, k_factor=float(k), home_advantage=float(ha), thresholds=thresholds)


def naive_fit(train: Sequence[MatchRecord]) -> PredictionTriple:
    """Empirical home win / draw / away win frequencies."""
    if not train:
        raise ValueError("naive_fit needs at least one match")
    counts = np.array([sum(rec.outcome == o for rec in train) for o in OUTCOMES], dtype=float)
    p = counts / counts.sum()
    return PredictionTriple(float(p[0]), float(p[1]), max(0.0, float(1.0 - p[0] - p[1])))


def naive_predict(model: PredictionTriple) -> PredictionTriple:
    return model
