"""
Evaluation Harness - rolling holdout, synthetic data and exact oracles

- rolling_evaluate: train up to a split week, then predict each later week
  with the model and the baselines before its results are seen
- simulate / make_skeleton: sample scorelines from the generative model
- brute_force_posterior / brute_force_log_evidence: exhaustive enumeration
  for tiny instances
- recovery_report: compare fitted parameters with the ones that generated the data
"""

import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from itertools import permutations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import elo_fit, elo_predict, elo_update, naive_fit, naive_predict
from .domain import Cardinalities, Hyperparams, MatchRecord, ModelParams, Posterior, Schedule, expected_goals_surface
from .errors import ContradictoryEvidenceError, InstanceTooLargeError, TrainingError
from .graph_engine import FactorGraph, build_graph
from .ingest import implied_probabilities
from .predictor import predict_match, wdl
from .trainer import TrainConfig, em_iterate, train

logger = logging.getLogger(__name__)

METHODS = ("model", "elo", "naive", "book")
PROBABILITY_FLOOR = 1e-12
ENUMERATION_LIMIT = 10 ** 7


# ============================================================================
# ROLLING EVALUATION
# ============================================================================

@dataclass
class EvalRow:
    """One held-out match: probability each method put on the actual result."""
    week: int
    match_id: int
    date: date
    home: str
    away: str
    outcome: str
    probs: Dict[str, Optional[float]] = field(default_factory=dict)

    def probability(self, method: str) -> Optional[float]:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
        return self.probs.get(method)

    def log_likelihood(self, method: str) -> Optional[float]:
        p = self.probability(method)
        return None if p is None else float(np.log(p))

    def has(self, method: str) -> bool:
        return self.probability(method) is not None


def _floored(p: float) -> float:
    return min(1.0, max(p, PROBABILITY_FLOOR))


def rolling_evaluate(
    schedule: Schedule,
    hyper: Hyperparams,
    config: Optional[TrainConfig] = None,
    split_week: int = 2,
    weekly_iters: int = 10,
) -> List[EvalRow]:
    """
    Rolling out-of-sample evaluation.

    Trains on weeks before split_week, then for each week w from split_week
    on: predicts week w's matches from a view truncated before w, records
    every method's probability on the actual outcome, updates Elo with the
    results, and extends the model with week w by weekly_iters warm-started
    EM iterations.

    Returns:
        EvalRows ordered by week, then match id within the week
    """
    config = config or TrainConfig()
    if not 1 < split_week <= schedule.num_weeks:
        raise ValueError(f"split week {split_week} outside 2..{schedule.num_weeks}")
    if weekly_iters < 1:
        raise ValueError(f"weekly_iters must be >= 1, got {weekly_iters}")

    train_view = schedule.truncate(split_week)
    fit = train(train_view, hyper, config)
    params, posterior, messages, card = fit.params, fit.posterior, fit.messages, fit.graph.card
    train_records = train_view.records()
    elo = elo_fit(train_records)
    naive = naive_fit(train_records)

    rows: List[EvalRow] = []
    boundaries = tuple(schedule.season_boundaries)
    for week in range(split_week, schedule.num_weeks + 1):
        for match_id, rec in enumerate(schedule.week(week)):
            model_triple = wdl(predict_match(rec.home, rec.away, week, posterior, params, boundaries, allow_entry=True))
            triples = {
                "model": model_triple,
                "elo": elo_predict(elo, rec.home, rec.away),
                "naive": naive_predict(naive),
                "book": implied_probabilities(rec.odds) if rec.odds else None,
            }
            probs = {m: (None if t is None else _floored(t.probability_of(rec.outcome))) for m, t in triples.items()}
            rows.append(EvalRow(week, match_id, schedule.week_date(week), rec.home_name, rec.away_name, rec.outcome, probs))

        for rec in schedule.week(week):
            elo = elo_update(elo, rec)

        if week == schedule.num_weeks:
            break
        view = schedule.truncate(week + 1)
        graph = build_graph(view, card)
        messages = messages.transfer(graph)
        try:
            params, posterior, _ = em_iterate(graph, params, hyper, weekly_iters, config, messages)
        except TrainingError as e:
            raise TrainingError(f"week {week}: {e}") from e
        logger.info(f"Evaluated week {week}/{schedule.num_weeks} ({len(rows)} matches so far)")

    return rows


def cumulative_net(rows: Sequence[EvalRow], method: str, baseline: str) -> List[Tuple[int, float]]:
    """Running sum of ll(method) - ll(baseline), skipping rows lacking either."""
    for name in (method, baseline):
        if name not in METHODS:
            raise ValueError(f"unknown method {name!r}; expected one of {', '.join(METHODS)}")
    series = []
    total = 0.0
    for row in sorted(rows, key=lambda r: (r.week, r.match_id)):
        if not (row.has(method) and row.has(baseline)):
            continue
        total += row.log_likelihood(method) - row.log_likelihood(baseline)
        series.append((row.week, total))
    return series


def weekly_net_series(rows: Sequence[EvalRow], method: str = "model") -> List[Dict]:
    """Week-end cumulative net log-likelihood of `method` against each other method."""
    baselines = [m for m in METHODS if m != method]
    week_end: Dict[str, Dict[int, float]] = {b: dict(cumulative_net(rows, method, b)) for b in baselines}
    series = []
    running: Dict[str, Optional[float]] = {b: None for b in baselines}
    for week in sorted({r.week for r in rows}):
        for b in baselines:
            if week in week_end[b]:
                running[b] = week_end[b][week]
        series.append({"week": week, **{f"cum_net_vs_{b}": running[b] for b in baselines}})
    return series


# ============================================================================
# SYNTHETIC DATA
# ============================================================================

@dataclass
class SimulatedData:
    """A sampled schedule and the latent states that produced it."""
    schedule: Schedule
    offense: Dict[Tuple[int, int], int]
    defense: Dict[Tuple[int, int], int]


def make_skeleton(
    num_teams: int,
    num_weeks: int,
    season_length: Optional[int] = None,
    start: date = date(2000, 8, 5),
    goal_cap: int = 4,
) -> Schedule:
    """
    Round-robin fixtures (circle method), one match per team per week.

    With season_length, a new season starts every season_length weeks and
    the calendar skips ahead so the break is recognizable on re-ingest.
    Goals are placeholders (0-0).
    """
    if num_teams < 2 or num_weeks < 1:
        raise ValueError("need at least 2 teams and 1 week")
    if season_length is not None and season_length < 1:
        raise ValueError(f"season_length must be positive, got {season_length}")

    slots = list(range(num_teams)) + ([-1] if num_teams % 2 else [])
    n = len(slots)
    names = {t: f"T{t + 1:02d}" for t in range(num_teams)}
    weeks, dates, boundaries = [], [], set()
    day = start
    for week in range(1, num_weeks + 1):
        if season_length and week > 1 and (week - 1) % season_length == 0:
            boundaries.add(week)
            day += timedelta(days=70)
        elif week > 1:
            day += timedelta(days=7)
        season = f"season-{(week - 1) // season_length + 1}" if season_length else "season-1"
        rnd = (week - 1) % (n - 1)
        order = [slots[0]] + (slots[1:][-rnd:] + slots[1:][:-rnd] if rnd else slots[1:])
        bucket = []
        for i in range(n // 2):
            a, b = order[i], order[n - 1 - i]
            if a < 0 or b < 0:
                continue
            home, away = (a, b) if (week + i) % 2 else (b, a)
            bucket.append(MatchRecord.create(day, home, away, 0, 0, goal_cap=goal_cap, season=season,
                                             home_name=names[home], away_name=names[away]))
        weeks.append(bucket)
        dates.append(day)
    return Schedule.from_weeks(weeks, dates, boundaries, team_names=names)


def _cardinalities(params: ModelParams) -> Cardinalities:
    return Cardinalities.for_states(params.num_strength_states, params.num_goal_states)


def simulate(params: ModelParams, skeleton: Schedule, seed: int = 0) -> SimulatedData:
    """
    Sample latent trajectories and scorelines for the skeleton's fixtures.

    Heads draw from pi/rho, chains move by the within- or between-season
    matrix of each edge, home goals come from psi[o_home, d_away] and away
    goals from gamma_cpt[o_away, d_home]. Bit-reproducible for a seed.
    """
    rng = np.random.default_rng(seed)
    graph = build_graph(skeleton, _cardinalities(params))
    S, G = params.num_strength_states, params.num_goal_states
    offense = np.zeros(graph.num_chain_nodes, dtype=int)
    defense = np.zeros(graph.num_chain_nodes, dtype=int)

    for n in np.lexsort((graph.node_team, graph.node_week)):
        e = graph.pred_edge[n]
        if e < 0:
            offense[n] = rng.choice(S, p=params.pi)
            defense[n] = rng.choice(S, p=params.rho)
            continue
        src = graph.edge_src[e]
        between = bool(graph.edge_between[e])
        omega = params.omega_between if between else params.omega_within
        delta = params.delta_between if between else params.delta_within
        offense[n] = rng.choice(S, p=omega[offense[src]])
        defense[n] = rng.choice(S, p=delta[defense[src]])

    weeks = []
    m = 0
    for bucket in skeleton.weeks:
        sampled = []
        for rec in bucket:
            h, a = graph.match_home[m], graph.match_away[m]
            home_goals = int(rng.choice(G, p=params.psi[offense[h], defense[a]]))
            away_goals = int(rng.choice(G, p=params.gamma_cpt[offense[a], defense[h]]))
            sampled.append(rec.recapped(G - 1).with_goals(home_goals, away_goals))
            m += 1
        weeks.append(sampled)

    keys = {n: (int(graph.node_team[n]), int(graph.node_week[n])) for n in range(graph.num_chain_nodes)}
    return SimulatedData(
        schedule=skeleton.replace_records(weeks),
        offense={keys[n]: int(offense[n]) for n in keys},
        defense={keys[n]: int(defense[n]) for n in keys},
    )


# ============================================================================
# EXHAUSTIVE ENUMERATION
# ============================================================================

class _UnionFind:
    def __init__(self, size: int):
        self.parent = list(range(size))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


def _place(table: np.ndarray, axes: Sequence[int], ndim: int) -> np.ndarray:
    """Reshape a factor table so its axes land at `axes` of an ndim-array."""
    order = np.argsort(axes)
    table = np.transpose(table, order)
    shape = [1] * ndim
    for ax, size in zip(np.asarray(axes)[order], table.shape):
        shape[ax] = size
    return table.reshape(shape)


def _enumerate(schedule: Schedule, params: ModelParams, limit: int) -> Tuple[Posterior, float]:
    graph = build_graph(schedule, _cardinalities(params))
    S = params.num_strength_states
    N, E, M = graph.num_chain_nodes, len(graph.edge_src), graph.num_matches

    def var(n, role):
        return 2 * n + (0 if role == "o" else 1)

    uf = _UnionFind(2 * N)
    for src, dst in zip(graph.edge_src, graph.edge_dst):
        uf.union(var(src, "o"), var(dst, "o"))
        uf.union(var(src, "d"), var(dst, "d"))
    for h, a in zip(graph.match_home, graph.match_away):
        uf.union(var(h, "o"), var(a, "d"))
        uf.union(var(a, "o"), var(h, "d"))

    components: Dict[int, List[int]] = {}
    for v in range(2 * N):
        components.setdefault(uf.find(v), []).append(v)

    # (table, variables) per factor, grouped by component
    factors: Dict[int, List[Tuple[np.ndarray, Tuple[int, ...]]]] = {root: [] for root in components}
    for n in graph.heads:
        factors[uf.find(var(n, "o"))].append((params.pi, (var(n, "o"),)))
        factors[uf.find(var(n, "d"))].append((params.rho, (var(n, "d"),)))
    for src, dst, between in zip(graph.edge_src, graph.edge_dst, graph.edge_between):
        omega = params.omega_between if between else params.omega_within
        delta = params.delta_between if between else params.delta_within
        factors[uf.find(var(src, "o"))].append((omega, (var(src, "o"), var(dst, "o"))))
        factors[uf.find(var(src, "d"))].append((delta, (var(src, "d"), var(dst, "d"))))
    for m in range(M):
        h, a = graph.match_home[m], graph.match_away[m]
        factors[uf.find(var(h, "o"))].append(
            (params.psi[:, :, graph.match_home_goals[m]], (var(h, "o"), var(a, "d"))))
        factors[uf.find(var(a, "o"))].append(
            (params.gamma_cpt[:, :, graph.match_away_goals[m]], (var(a, "o"), var(h, "d"))))

    marg = np.zeros((2 * N, S))
    pair_edges_o = np.zeros((E, S, S))
    pair_edges_d = np.zeros((E, S, S))
    zeta_home = np.zeros((M, S, S))
    zeta_away = np.zeros((M, S, S))
    pair_cache: Dict[Tuple[int, int], np.ndarray] = {}
    log_z = 0.0

    for root, members in components.items():
        L = len(members)
        states = S ** L
        if states > limit:
            raise InstanceTooLargeError(states, limit)
        axis = {v: i for i, v in enumerate(members)}
        joint = np.ones((S,) * L)
        for table, variables in factors[root]:
            joint = joint * _place(np.asarray(table), [axis[v] for v in variables], L)
        z = joint.sum()
        if not z > 0:
            raise ContradictoryEvidenceError(f"component of {graph.describe_node(members[0] // 2, 'offense')}")
        joint /= z
        log_z += float(np.log(z))
        letters = list(range(L))
        for v in members:
            marg[v] = np.einsum(joint, letters, [axis[v]])
        for _, variables in factors[root]:
            if len(variables) == 2:
                u, v = variables
                pair_cache[(u, v)] = np.einsum(joint, letters, [axis[u], axis[v]])

    for e, (src, dst) in enumerate(zip(graph.edge_src, graph.edge_dst)):
        pair_edges_o[e] = pair_cache[(var(src, "o"), var(dst, "o"))]
        pair_edges_d[e] = pair_cache[(var(src, "d"), var(dst, "d"))]
    for m in range(M):
        h, a = graph.match_home[m], graph.match_away[m]
        zeta_home[m] = pair_cache[(var(h, "o"), var(a, "d"))]
        zeta_away[m] = pair_cache[(var(a, "o"), var(h, "d"))]

    posterior = Posterior(
        gamma_o=marg[0::2], gamma_d=marg[1::2],
        xi_o=pair_edges_o, xi_d=pair_edges_d,
        zeta_home=zeta_home, zeta_away=zeta_away,
        graph=graph,
    )
    return posterior, log_z


def brute_force_posterior(schedule: Schedule, params: ModelParams, limit: int = ENUMERATION_LIMIT) -> Posterior:
    """
    Exact gamma, xi and zeta by summing the joint over every latent state.

    Each connected component of the latent graph is enumerated on its own;
    a component with more than `limit` joint states is refused.
    """
    posterior, _ = _enumerate(schedule, params, limit)
    return posterior


def brute_force_log_evidence(schedule: Schedule, params: ModelParams, limit: int = ENUMERATION_LIMIT) -> float:
    """Exact ln P(X | theta)."""
    _, log_z = _enumerate(schedule, params, limit)
    return log_z


# ============================================================================
# PARAMETER RECOVERY
# ============================================================================

@dataclass
class RecoveryReport:
    """How close fitted parameters are to the generating ones, after relabelling states."""
    offense_permutation: Tuple[int, ...]
    defense_permutation: Tuple[int, ...]
    emission_error: float
    transition_distances: Dict[str, float]
    transition_diagonal_error: float
    mean_true_state_probability: float


def recovery_report(
    true_params: ModelParams,
    true_latents: SimulatedData,
    fitted: ModelParams,
    posterior: Posterior,
) -> RecoveryReport:
    """
    Compare fitted with true parameters under the best state relabelling.

    Offense and defense states are relabelled by separate permutations,
    chosen jointly to minimize the largest expected-goals error over both
    emission tables. Fitted state perm[k] plays the role of true state k.
    """
    S = true_params.num_strength_states
    if fitted.num_strength_states != S or fitted.num_goal_states != true_params.num_goal_states:
        raise ValueError("true and fitted parameters have different cardinalities")

    true_surfaces = [expected_goals_surface(true_params.psi), expected_goals_surface(true_params.gamma_cpt)]
    fit_surfaces = [expected_goals_surface(fitted.psi), expected_goals_surface(fitted.gamma_cpt)]
    best = (np.inf, None, None)
    for sigma in permutations(range(S)):
        for tau in permutations(range(S)):
            idx = np.ix_(sigma, tau)
            err = max(float(np.abs(f[idx] - t).max()) for f, t in zip(fit_surfaces, true_surfaces))
            if err < best[0]:
                best = (err, sigma, tau)
    err, sigma, tau = best

    def aligned(mat, perm):
        return mat[np.ix_(perm, perm)]

    distances = {}
    diagonal = 0.0
    for name, perm in (("omega_within", sigma), ("omega_between", sigma),
                       ("delta_within", tau), ("delta_between", tau)):
        fitted_mat = aligned(getattr(fitted, name), perm)
        true_mat = getattr(true_params, name)
        distances[name] = float(np.linalg.norm(fitted_mat - true_mat))
        if name.endswith("within"):
            diagonal = max(diagonal, float(np.abs(np.diag(fitted_mat) - np.diag(true_mat)).max()))

    graph = posterior.graph
    probs = []
    for (team, week), state in true_latents.offense.items():
        n = graph.node_index.get((team, week))
        if n is not None:
            probs.append(posterior.gamma_o[n, sigma[state]])
    for (team, week), state in true_latents.defense.items():
        n = graph.node_index.get((team, week))
        if n is not None:
            probs.append(posterior.gamma_d[n, tau[state]])

    return RecoveryReport(
        offense_permutation=tuple(sigma),
        defense_permutation=tuple(tau),
        emission_error=err,
        transition_distances=distances,
        transition_diagonal_error=diagonal,
        mean_true_state_probability=float(np.mean(probs)) if probs else float("nan"),
    )
