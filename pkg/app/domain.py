"""
Domain Core - value types shared by every module.

Holds the match data (MatchRecord, Schedule), the model parameters
(ModelParams, Hyperparams), inference output (Posterior) and prediction
output (PredictionTriple). State, goal and team indices are 0-based;
week ids run 1..D.
"""

from dataclasses import dataclass, field, replace
from datetime import date
from types import MappingProxyType
from typing import TYPE_CHECKING, Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ScheduleError, UnknownTeamError

if TYPE_CHECKING:
    from .graph_engine import FactorGraph


OUTCOMES = ("win", "draw", "loss")
OFFENSE = "offense"
DEFENSE = "defense"


def _frozen_array(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Cardinalities:
    """Number of latent strength states S and goal states G (goals 0..G-1)."""

    num_strength_states: int = 4
    num_goal_states: int = 5

    def __post_init__(self):
        if self.num_strength_states < 2:
            raise ValueError(f"need at least 2 strength states, got {self.num_strength_states}")
        if self.num_goal_states < 2:
            raise ValueError(f"need at least 2 goal states, got {self.num_goal_states}")

    @classmethod
    def from_goal_cap(cls, num_strength_states: int = 4, goal_cap: int = 4) -> "Cardinalities":
        return cls(num_strength_states=num_strength_states, num_goal_states=goal_cap + 1)

    @classmethod
    def for_states(cls, num_strength_states: int, num_goal_states: int) -> "Cardinalities":
        """Like the constructor, but also admits the degenerate single-state model."""
        if num_strength_states != 1:
            return cls(num_strength_states, num_goal_states)
        card = object.__new__(cls)
        object.__setattr__(card, "num_strength_states", 1)
        object.__setattr__(card, "num_goal_states", num_goal_states)
        return card

    @property
    def goal_cap(self) -> int:
        return self.num_goal_states - 1


@dataclass(frozen=True)
class MatchRecord:
    """One played match. Goals are capped at goal_cap; raw goals are kept."""

    date: date
    home: int
    away: int
    home_goals: int
    away_goals: int
    raw_home_goals: int
    raw_away_goals: int
    odds: Optional[Tuple[float, float, float]] = None
    season: Optional[str] = None
    home_name: str = ""
    away_name: str = ""
    goal_cap: int = 4

    def __post_init__(self):
        if self.home == self.away:
            raise ValueError(f"team {self.home} cannot play itself")
        if self.raw_home_goals < 0 or self.raw_away_goals < 0:
            raise ValueError("goal counts must be non-negative")
        if self.home_goals != min(self.raw_home_goals, self.goal_cap):
            raise ValueError(f"home_goals {self.home_goals} is not min(raw {self.raw_home_goals}, cap {self.goal_cap})")
        if self.away_goals != min(self.raw_away_goals, self.goal_cap):
            raise ValueError(f"away_goals {self.away_goals} is not min(raw {self.raw_away_goals}, cap {self.goal_cap})")
        if self.odds is not None:
            if len(self.odds) != 3 or any(not o > 1.0 for o in self.odds):
                raise ValueError(f"decimal odds must be three values above 1.0, got {self.odds}")

    @classmethod
    def create(
        cls,
        match_date: date,
        home: int,
        away: int,
        raw_home_goals: int,
        raw_away_goals: int,
        goal_cap: int = 4,
        odds: Optional[Tuple[float, float, float]] = None,
        season: Optional[str] = None,
        home_name: str = "",
        away_name: str = "",
    ) -> "MatchRecord":
        """Build a record from raw goals, applying the cap."""
        return cls(
            date=match_date,
            home=home,
            away=away,
            home_goals=min(raw_home_goals, goal_cap),
            away_goals=min(raw_away_goals, goal_cap),
            raw_home_goals=raw_home_goals,
            raw_away_goals=raw_away_goals,
            odds=tuple(float(o) for o in odds) if odds is not None else None,
            season=season,
            home_name=home_name or str(home),
            away_name=away_name or str(away),
            goal_cap=goal_cap,
        )

    def recapped(self, goal_cap: int) -> "MatchRecord":
        """Same match under a different goal cap; no re-ingestion needed."""
        return replace(
            self,
            goal_cap=goal_cap,
            home_goals=min(self.raw_home_goals, goal_cap),
            away_goals=min(self.raw_away_goals, goal_cap),
        )

    def with_goals(self, raw_home_goals: int, raw_away_goals: int) -> "MatchRecord":
        return replace(
            self,
            raw_home_goals=raw_home_goals,
            raw_away_goals=raw_away_goals,
            home_goals=min(raw_home_goals, self.goal_cap),
            away_goals=min(raw_away_goals, self.goal_cap),
        )

    @property
    def outcome(self) -> str:
        """Home-perspective result on the real (uncapped) scoreline."""
        if self.raw_home_goals > self.raw_away_goals:
            return "win"
        if self.raw_home_goals == self.raw_away_goals:
            return "draw"
        return "loss"


def _season_starts(num_weeks: int, season_boundaries: Iterable[int]) -> List[int]:
    return [1] + sorted(b for b in season_boundaries if 1 < b <= num_weeks)


def compute_presence(
    weeks: Sequence[Sequence[MatchRecord]],
    season_boundaries: Iterable[int],
) -> Tuple[Dict[int, FrozenSet[int]], Dict[int, FrozenSet[int]]]:
    """
    Presence and bridge weeks of every team.

    A team is present in every week of each season in which it plays.
    Across absent seasons the chain is bridged with one node at the first
    week of each season it skips.
    """
    num_weeks = len(weeks)
    starts = _season_starts(num_weeks, season_boundaries)
    ends = [s - 1 for s in starts[1:]] + [num_weeks]

    playing: Dict[int, set] = {}
    for idx, (start, end) in enumerate(zip(starts, ends)):
        for week in range(start, end + 1):
            for rec in weeks[week - 1]:
                playing.setdefault(rec.home, set()).add(idx)
                playing.setdefault(rec.away, set()).add(idx)

    presence: Dict[int, FrozenSet[int]] = {}
    bridged: Dict[int, FrozenSet[int]] = {}
    for team, season_ids in playing.items():
        ordered = sorted(season_ids)
        present = set()
        bridge = set()
        for idx in ordered:
            present.update(range(starts[idx], ends[idx] + 1))
        for left, right in zip(ordered, ordered[1:]):
            for skipped in range(left + 1, right):
                bridge.add(starts[skipped])
        presence[team] = frozenset(present | bridge)
        bridged[team] = frozenset(bridge)
    return presence, bridged


@dataclass(frozen=True, eq=False)
class Schedule:
    """Matches bucketed into weeks 1..D, with season boundaries and presence."""

    weeks: Tuple[Tuple[MatchRecord, ...], ...]
    week_dates: Tuple[date, ...]
    season_boundaries: FrozenSet[int]
    teams: FrozenSet[int]
    presence: Mapping[int, FrozenSet[int]]
    bridged: Mapping[int, FrozenSet[int]] = field(default_factory=dict)
    team_names: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        num_weeks = len(self.weeks)
        if len(self.week_dates) != num_weeks:
            raise ScheduleError(f"{num_weeks} weeks but {len(self.week_dates)} week dates")
        for earlier, later in zip(self.week_dates, self.week_dates[1:]):
            if not later > earlier:
                raise ScheduleError(f"week dates must increase strictly ({earlier} then {later})")
        bad = [b for b in self.season_boundaries if not 1 < b <= num_weeks]
        if bad:
            raise ScheduleError(f"season boundaries outside weeks 2..{num_weeks}: {sorted(bad)}")
        for week_id, bucket in enumerate(self.weeks, start=1):
            seen = set()
            for rec in bucket:
                for team in (rec.home, rec.away):
                    if team in seen:
                        raise ScheduleError(f"team {self.name_of(team)} plays twice in week {week_id}")
                    seen.add(team)
                    if week_id not in self.presence.get(team, ()):
                        raise ScheduleError(f"team {self.name_of(team)} plays in week {week_id} but is not present")
        object.__setattr__(self, "presence", MappingProxyType(dict(self.presence)))
        object.__setattr__(self, "bridged", MappingProxyType(dict(self.bridged)))
        object.__setattr__(self, "team_names", MappingProxyType(dict(self.team_names)))

    @classmethod
    def from_weeks(
        cls,
        weeks: Sequence[Sequence[MatchRecord]],
        week_dates: Sequence[date],
        season_boundaries: Iterable[int] = (),
        team_names: Optional[Mapping[int, str]] = None,
        presence: Optional[Mapping[int, Iterable[int]]] = None,
    ) -> "Schedule":
        """Assemble a schedule, deriving presence from the matches unless given."""
        frozen_weeks = tuple(tuple(bucket) for bucket in weeks)
        boundaries = frozenset(season_boundaries)
        if presence is None:
            computed, bridged = compute_presence(frozen_weeks, boundaries)
        else:
            computed = {team: frozenset(ws) for team, ws in presence.items()}
            bridged = {}
        names = dict(team_names or {})
        for bucket in frozen_weeks:
            for rec in bucket:
                names.setdefault(rec.home, rec.home_name or str(rec.home))
                names.setdefault(rec.away, rec.away_name or str(rec.away))
        return cls(
            weeks=frozen_weeks,
            week_dates=tuple(week_dates),
            season_boundaries=boundaries,
            teams=frozenset(computed),
            presence=computed,
            bridged=bridged,
            team_names=names,
        )

    @property
    def num_weeks(self) -> int:
        return len(self.weeks)

    @property
    def num_matches(self) -> int:
        return sum(len(bucket) for bucket in self.weeks)

    def week(self, week_id: int) -> Tuple[MatchRecord, ...]:
        return self.weeks[week_id - 1]

    def week_date(self, week_id: int) -> date:
        return self.week_dates[week_id - 1]

    def matches(self) -> Iterator[Tuple[int, MatchRecord]]:
        """(week id, record) pairs in week order, then bucket order."""
        for week_id, bucket in enumerate(self.weeks, start=1):
            for rec in bucket:
                yield week_id, rec

    def records(self) -> List[MatchRecord]:
        return [rec for _, rec in self.matches()]

    def seasons(self) -> List[List[int]]:
        """Week ids of each season, in order."""
        starts = _season_starts(self.num_weeks, self.season_boundaries)
        ends = [s - 1 for s in starts[1:]] + [self.num_weeks]
        return [list(range(s, e + 1)) for s, e in zip(starts, ends)]

    def name_of(self, team: int) -> str:
        return self.team_names.get(team, str(team))

    def team_id(self, name: str) -> int:
        for team, team_name in self.team_names.items():
            if team_name == name:
                return team
        raise UnknownTeamError(name)

    def truncate(self, week_id: int) -> "Schedule":
        """View of the weeks strictly before week_id."""
        if week_id <= 1:
            raise ScheduleError("a truncated schedule needs at least one week")
        keep = min(week_id - 1, self.num_weeks)
        return Schedule.from_weeks(
            self.weeks[:keep],
            self.week_dates[:keep],
            {b for b in self.season_boundaries if b <= keep},
            team_names=self.team_names,
        )

    def replace_records(self, weeks: Sequence[Sequence[MatchRecord]]) -> "Schedule":
        """Same structure (dates, seasons, presence) with new match records."""
        return Schedule(
            weeks=tuple(tuple(bucket) for bucket in weeks),
            week_dates=self.week_dates,
            season_boundaries=self.season_boundaries,
            teams=self.teams,
            presence=self.presence,
            bridged=self.bridged,
            team_names=self.team_names,
        )


@dataclass(frozen=True, eq=False)
class ModelParams:
    """
    theta = {pi, rho, Omega, Delta, Psi, Gamma}.

    psi and gamma_cpt are indexed [offense state][defense state][goals].
    """

    pi: np.ndarray
    rho: np.ndarray
    omega_within: np.ndarray
    omega_between: np.ndarray
    delta_within: np.ndarray
    delta_between: np.ndarray
    psi: np.ndarray
    gamma_cpt: np.ndarray

    def __post_init__(self):
        for name, ndim in (("pi", 1), ("rho", 1), ("omega_within", 2), ("omega_between", 2),
                           ("delta_within", 2), ("delta_between", 2), ("psi", 3), ("gamma_cpt", 3)):
            object.__setattr__(self, name, _frozen_array(getattr(self, name), ndim, name))
        S = self.pi.shape[0]
        for name in ("rho",):
            if getattr(self, name).shape != (S,):
                raise ValueError(f"{name} must have shape ({S},)")
        for name in ("omega_within", "omega_between", "delta_within", "delta_between"):
            if getattr(self, name).shape != (S, S):
                raise ValueError(f"{name} must have shape ({S}, {S})")
        G = self.psi.shape[2]
        for name in ("psi", "gamma_cpt"):
            if getattr(self, name).shape != (S, S, G):
                raise ValueError(f"{name} must have shape ({S}, {S}, {G})")

    @property
    def num_strength_states(self) -> int:
        return self.pi.shape[0]

    @property
    def num_goal_states(self) -> int:
        return self.psi.shape[2]

    def transitions(self, role: str) -> Tuple[np.ndarray, np.ndarray]:
        """(within, between) transition matrices for offense or defense."""
        if role == OFFENSE:
            return self.omega_within, self.omega_between
        if role == DEFENSE:
            return self.delta_within, self.delta_between
        raise ValueError(f"role must be {OFFENSE!r} or {DEFENSE!r}, got {role!r}")

    def initial(self, role: str) -> np.ndarray:
        return self.pi if role == OFFENSE else self.rho

    def updated(self, **blocks) -> "ModelParams":
        return replace(self, **blocks)

    @classmethod
    def uniform(cls, num_strength_states: int, num_goal_states: int) -> "ModelParams":
        S, G = num_strength_states, num_goal_states
        vec = np.full(S, 1.0 / S)
        mat = np.full((S, S), 1.0 / S)
        cpt = np.full((S, S, G), 1.0 / G)
        return cls(vec, vec, mat, mat, mat, mat, cpt, cpt)


@dataclass(frozen=True, eq=False)
class Hyperparams:
    """Lambda: transition Dirichlet A (within/between), emission Dirichlets beta and phi."""

    alpha_within: np.ndarray
    alpha_between: np.ndarray
    beta: np.ndarray
    phi: np.ndarray
    c_transition: float = 87.0
    c_goal: float = 236.0

    def __post_init__(self):
        for name, ndim in (("alpha_within", 2), ("alpha_between", 2), ("beta", 1), ("phi", 1)):
            arr = _frozen_array(getattr(self, name), ndim, name)
            if np.any(arr < 1.0):
                raise ValueError(f"{name} entries must be >= 1 so MAP numerators stay non-negative")
            object.__setattr__(self, name, arr)
        S = self.alpha_within.shape[0]
        if self.alpha_within.shape != (S, S) or self.alpha_between.shape != (S, S):
            raise ValueError("transition alphas must be square and of equal size")
        if self.beta.shape != self.phi.shape:
            raise ValueError("beta and phi must have the same length")
        for j in range(S):
            off = np.delete(self.alpha_within[j], j)
            if off.size and not np.all(self.alpha_within[j, j] > off):
                raise ValueError(f"alpha_within row {j} is not diagonally dominant")

    @property
    def num_strength_states(self) -> int:
        return self.alpha_within.shape[0]

    @property
    def num_goal_states(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True, eq=False)
class Posterior:
    """
    Node marginals (gamma), consecutive-week pairwise marginals (xi) and
    per-match (offense, defense) marginals (zeta), laid out on a FactorGraph.
    """

    gamma_o: np.ndarray
    gamma_d: np.ndarray
    xi_o: np.ndarray
    xi_d: np.ndarray
    zeta_home: np.ndarray
    zeta_away: np.ndarray
    graph: "FactorGraph"

    def has_team(self, team: int) -> bool:
        return bool(self.graph.team_nodes.get(team))

    def node(self, team: int, week: int) -> int:
        try:
            return self.graph.node_index[(team, week)]
        except KeyError:
            raise UnknownTeamError(team, f"no node in week {week}")

    def marginal(self, team: int, week: int, role: str) -> np.ndarray:
        gamma = self.gamma_o if role == OFFENSE else self.gamma_d
        return gamma[self.node(team, week)]

    def team_weeks(self, team: int) -> List[int]:
        return [int(self.graph.node_week[n]) for n in self.graph.team_nodes.get(team, ())]


@dataclass(frozen=True)
class PredictionTriple:
    """Home win / draw / away win probabilities."""

    p_home_win: float
    p_draw: float
    p_away_win: float

    def __post_init__(self):
        values = self.as_tuple()
        if any(v < 0 for v in values):
            raise ValueError(f"probabilities must be non-negative, got {values}")
        if abs(sum(values) - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1, got {sum(values)}")

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.p_home_win, self.p_draw, self.p_away_win)

    def probability_of(self, outcome: str) -> float:
        return self.as_tuple()[OUTCOMES.index(outcome)]


def strength_expectation(dist: Sequence[float]) -> float:
    """Expected state index rescaled to 0..100."""
    p = np.asarray(dist, dtype=float)
    if p.ndim != 1 or p.shape[0] < 2:
        raise ValueError("need a distribution over at least 2 states")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"distribution must be normalized, sums to {p.sum()}")
    S = p.shape[0]
    return float(100.0 * np.dot(np.arange(S), p) / (S - 1))


def expected_goals_surface(cpt: np.ndarray) -> np.ndarray:
    """S x S matrix of expected goals for each (offense, defense) pair."""
    cpt = np.asarray(cpt, dtype=float)
    return cpt @ np.arange(cpt.shape[-1], dtype=float)
