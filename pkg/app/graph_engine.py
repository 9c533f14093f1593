"""
Graph Engine - coupled-chain factor graph and belief propagation.

Every team has an offense chain and a defense chain of latent strength
nodes, one node per present week, linked by transition factors. Each match
adds two emission factors: home goals link home offense to away defense,
away goals link away offense to home defense. Observed goals are folded
into their emission factor as evidence.

Messages are kept per chain node:
- fwd: message arriving through the prior (chain head) or the incoming transition
- bwd: message arriving through the outgoing transition (uniform at the tail)
- emis: message arriving from the node's emission factor (uniform without a match)
"""

import logging
from dataclasses import dataclass
from functools import reduce
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import entr, xlogy

from .domain import DEFENSE, OFFENSE, Cardinalities, Hyperparams, MatchRecord, ModelParams, Posterior, Schedule
from .errors import ContradictoryEvidenceError, NonFiniteMessageError

logger = logging.getLogger(__name__)

Where = Union[str, Callable[[int], str]]


# ============================================================================
# FACTOR GRAPH
# ============================================================================

@dataclass(frozen=True, eq=False)
class FactorGraph:
    """Index arrays describing the coupled-chain graph of a Schedule."""

    schedule: Schedule
    card: Cardinalities
    node_team: np.ndarray
    node_week: np.ndarray
    node_bridged: np.ndarray
    node_index: Dict[Tuple[int, int], int]
    team_nodes: Dict[int, Tuple[int, ...]]
    heads: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_between: np.ndarray
    pred_edge: np.ndarray
    succ_edge: np.ndarray
    node_match: np.ndarray
    match_home: np.ndarray
    match_away: np.ndarray
    match_home_goals: np.ndarray
    match_away_goals: np.ndarray
    match_week: np.ndarray
    match_records: Tuple[MatchRecord, ...]
    week_heads: Tuple[np.ndarray, ...]
    week_fwd_nodes: Tuple[np.ndarray, ...]
    week_bwd_nodes: Tuple[np.ndarray, ...]
    week_matches: Tuple[np.ndarray, ...]
    is_forest: bool

    @property
    def num_chain_nodes(self) -> int:
        return len(self.node_team)

    @property
    def num_latent_nodes(self) -> int:
        return 2 * self.num_chain_nodes

    @property
    def num_matches(self) -> int:
        return len(self.match_records)

    @property
    def num_variable_nodes(self) -> int:
        return self.num_latent_nodes + 2 * self.num_matches

    @property
    def num_transition_factors(self) -> int:
        return 2 * len(self.edge_src)

    @property
    def num_prior_factors(self) -> int:
        return 2 * len(self.heads)

    @property
    def num_emission_factors(self) -> int:
        return 2 * self.num_matches

    @property
    def num_weeks(self) -> int:
        return self.schedule.num_weeks

    @property
    def degree(self) -> np.ndarray:
        """Factors adjacent to each latent node (same for offense and defense)."""
        return 1 + (self.succ_edge >= 0).astype(int) + (self.node_match >= 0).astype(int)

    def describe_node(self, n: int, role: str) -> str:
        team = int(self.node_team[n])
        return f"{role} of {self.schedule.name_of(team)} in week {int(self.node_week[n])}"

    def describe_match(self, m: int) -> str:
        rec = self.match_records[m]
        return f"match {rec.home_name} v {rec.away_name} in week {int(self.match_week[m])}"


def _find(parent: Dict, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def build_graph(schedule: Schedule, card: Cardinalities) -> FactorGraph:
    """
    Lay out the factor graph of a schedule.

    Observed goals above the cardinality's cap are capped here, so a schedule
    ingested with a larger cap can be modelled with fewer goal states.
    """
    D = schedule.num_weeks
    boundaries = sorted(schedule.season_boundaries)

    node_team: List[int] = []
    node_week: List[int] = []
    node_bridged: List[bool] = []
    node_index: Dict[Tuple[int, int], int] = {}
    team_nodes: Dict[int, Tuple[int, ...]] = {}
    for team in sorted(schedule.presence):
        bridged = schedule.bridged.get(team, frozenset())
        ids = []
        for week in sorted(schedule.presence[team]):
            n = len(node_team)
            node_index[(team, week)] = n
            node_team.append(team)
            node_week.append(week)
            node_bridged.append(week in bridged)
            ids.append(n)
        team_nodes[team] = tuple(ids)

    N = len(node_team)
    pred_edge = np.full(N, -1, dtype=int)
    succ_edge = np.full(N, -1, dtype=int)
    edge_src, edge_dst, edge_between = [], [], []
    heads = []
    for team, ids in team_nodes.items():
        if not ids:
            continue
        heads.append(ids[0])
        for a, b in zip(ids, ids[1:]):
            e = len(edge_src)
            wa, wb = node_week[a], node_week[b]
            edge_src.append(a)
            edge_dst.append(b)
            edge_between.append(any(wa < bd <= wb for bd in boundaries))
            succ_edge[a] = e
            pred_edge[b] = e

    node_match = np.full(N, -1, dtype=int)
    match_home, match_away, home_goals, away_goals, match_week, records = [], [], [], [], [], []
    for week, rec in schedule.matches():
        m = len(records)
        h = node_index[(rec.home, week)]
        a = node_index[(rec.away, week)]
        match_home.append(h)
        match_away.append(a)
        home_goals.append(min(rec.raw_home_goals, card.goal_cap))
        away_goals.append(min(rec.raw_away_goals, card.goal_cap))
        match_week.append(week)
        records.append(rec)
        node_match[h] = m
        node_match[a] = m

    node_week_arr = np.array(node_week, dtype=int)
    node_team_arr = np.array(node_team, dtype=int)
    match_week_arr = np.array(match_week, dtype=int)
    pred_arr = pred_edge
    week_heads, week_fwd, week_bwd, week_matches = [], [], [], []
    for week in range(1, D + 1):
        at_week = np.flatnonzero(node_week_arr == week)
        week_heads.append(at_week[pred_arr[at_week] < 0])
        week_fwd.append(at_week[pred_arr[at_week] >= 0])
        week_bwd.append(at_week[succ_edge[at_week] >= 0])
        week_matches.append(np.flatnonzero(match_week_arr == week))

    # Each chain is one component; a graph is a forest iff no match closes a loop
    parent = {(team, role): (team, role) for team in team_nodes for role in (OFFENSE, DEFENSE)}
    is_forest = True
    for rec in records:
        for off, dfn in (((rec.home, OFFENSE), (rec.away, DEFENSE)), ((rec.away, OFFENSE), (rec.home, DEFENSE))):
            ra, rb = _find(parent, off), _find(parent, dfn)
            if ra == rb:
                is_forest = False
            else:
                parent[ra] = rb

    graph = FactorGraph(
        schedule=schedule,
        card=card,
        node_team=node_team_arr,
        node_week=node_week_arr,
        node_bridged=np.array(node_bridged, dtype=bool),
        node_index=node_index,
        team_nodes=team_nodes,
        heads=np.array(heads, dtype=int),
        edge_src=np.array(edge_src, dtype=int),
        edge_dst=np.array(edge_dst, dtype=int),
        edge_between=np.array(edge_between, dtype=bool),
        pred_edge=pred_edge,
        succ_edge=succ_edge,
        node_match=node_match,
        match_home=np.array(match_home, dtype=int),
        match_away=np.array(match_away, dtype=int),
        match_home_goals=np.array(home_goals, dtype=int),
        match_away_goals=np.array(away_goals, dtype=int),
        match_week=match_week_arr,
        match_records=tuple(records),
        week_heads=tuple(week_heads),
        week_fwd_nodes=tuple(week_fwd),
        week_bwd_nodes=tuple(week_bwd),
        week_matches=tuple(week_matches),
        is_forest=is_forest,
    )
    logger.debug(
        f"Built graph: {graph.num_latent_nodes} latent nodes, {graph.num_transition_factors} transition "
        f"factors, {graph.num_emission_factors} emission factors, forest={is_forest}"
    )
    return graph


# ============================================================================
# MESSAGE PRIMITIVES
# ============================================================================

def _normalize(x: np.ndarray, axes, where: Where) -> np.ndarray:
    """Rescale to unit mass over `axes`; leading axes are a batch."""
    if not np.all(np.isfinite(x)):
        bad = ~np.isfinite(x).all(axis=axes)
        raise NonFiniteMessageError(_label(where, bad))
    total = x.sum(axis=axes, keepdims=True)
    if np.any(total <= 0):
        raise ContradictoryEvidenceError(_label(where, np.squeeze(total <= 0, axis=axes)))
    return x / total


def _label(where: Where, bad) -> str:
    if callable(where):
        flat = np.flatnonzero(np.atleast_1d(bad))
        return where(int(flat[0]) if flat.size else 0)
    return where


def _cpt_slices(cpt: np.ndarray, observed_g) -> np.ndarray:
    cpt = np.asarray(cpt, dtype=float)
    g = np.asarray(observed_g)
    G = cpt.shape[-1]
    if np.any(g < 0) or np.any(g >= G):
        raise ValueError(f"observed goals {observed_g} outside 0..{G - 1}")
    return np.moveaxis(cpt, -1, 0)[g]


def emission_message_to_offense(cpt: np.ndarray, defense_msg: np.ndarray, observed_g, where: Where = "offense node") -> np.ndarray:
    """out[i] ∝ sum_j defense_msg[j] * cpt[i][j][g]; batches over leading axes."""
    slices = _cpt_slices(cpt, observed_g)
    out = np.einsum("...ij,...j->...i", slices, np.asarray(defense_msg, dtype=float))
    return _normalize(out, -1, where)


def emission_message_to_defense(cpt: np.ndarray, offense_msg: np.ndarray, observed_g, where: Where = "defense node") -> np.ndarray:
    """out[j] ∝ sum_i offense_msg[i] * cpt[i][j][g]; batches over leading axes."""
    slices = _cpt_slices(cpt, observed_g)
    out = np.einsum("...ij,...i->...j", slices, np.asarray(offense_msg, dtype=float))
    return _normalize(out, -1, where)


def node_marginal(incoming: Sequence[np.ndarray], where: Where = "node") -> np.ndarray:
    """Element-wise product of the incoming messages, renormalized."""
    if len(incoming) == 0:
        raise ValueError("need at least one incoming message")
    product = reduce(np.multiply, (np.asarray(m, dtype=float) for m in incoming))
    return _normalize(product, -1, where)


def pairwise_marginal(left_msg: np.ndarray, right_msg: np.ndarray, transition: np.ndarray, where: Where = "transition") -> np.ndarray:
    """out[i][j] ∝ left[i] * transition[i][j] * right[j]."""
    left = np.asarray(left_msg, dtype=float)
    right = np.asarray(right_msg, dtype=float)
    joint = left[..., :, None] * np.asarray(transition, dtype=float) * right[..., None, :]
    return _normalize(joint, (-2, -1), where)


def match_pair_marginal(offense_msg: np.ndarray, defense_msg: np.ndarray, cpt: np.ndarray, observed_g, where: Where = "match") -> np.ndarray:
    """out[i][j] ∝ offense[i] * defense[j] * cpt[i][j][g] (cavity messages in)."""
    slices = _cpt_slices(cpt, observed_g)
    o = np.asarray(offense_msg, dtype=float)
    d = np.asarray(defense_msg, dtype=float)
    joint = o[..., :, None] * slices * d[..., None, :]
    return _normalize(joint, (-2, -1), where)


# ============================================================================
# BELIEF PROPAGATION
# ============================================================================

@dataclass
class MessageState:
    """All chain messages of one graph; starts uniform."""

    graph: FactorGraph
    fwd_o: np.ndarray
    bwd_o: np.ndarray
    emis_o: np.ndarray
    fwd_d: np.ndarray
    bwd_d: np.ndarray
    emis_d: np.ndarray

    ARRAYS = ("fwd_o", "bwd_o", "emis_o", "fwd_d", "bwd_d", "emis_d")

    @classmethod
    def uniform(cls, graph: FactorGraph) -> "MessageState":
        N, S = graph.num_chain_nodes, graph.card.num_strength_states
        return cls(graph, *(np.full((N, S), 1.0 / S) for _ in cls.ARRAYS))

    def transfer(self, new_graph: FactorGraph) -> "MessageState":
        """Carry messages of surviving (team, week) nodes into an extended graph."""
        fresh = MessageState.uniform(new_graph)
        pairs = [(n_new, self.graph.node_index[key]) for key, n_new in new_graph.node_index.items()
                 if key in self.graph.node_index]
        if pairs and new_graph.card.num_strength_states == self.graph.card.num_strength_states:
            new_idx, old_idx = (np.array(p, dtype=int) for p in zip(*pairs))
            for name in self.ARRAYS:
                getattr(fresh, name)[new_idx] = getattr(self, name)[old_idx]
        return fresh


class _Sweeper:
    """Runs the two-phase schedule on one MessageState."""

    def __init__(self, graph: FactorGraph, params: ModelParams, state: MessageState, damping: float):
        self.graph = graph
        self.params = params
        self.state = state
        self.damping = damping
        self.trans_o = np.stack([params.omega_within, params.omega_between])
        self.trans_d = np.stack([params.delta_within, params.delta_between])
        self.delta = 0.0

    def _assign(self, array: np.ndarray, index: np.ndarray, new: np.ndarray):
        old = array[index]
        if self.damping > 0.0:
            new = (1.0 - self.damping) * new + self.damping * old
        if old.size:
            self.delta = max(self.delta, float(np.abs(new - old).sum(axis=-1).max()))
        array[index] = new

    def _where(self, nodes: np.ndarray, role: str) -> Callable[[int], str]:
        return lambda i: self.graph.describe_node(int(nodes[i]), role)

    def forward(self, week: int):
        g, st = self.graph, self.state
        heads = g.week_heads[week - 1]
        nodes = g.week_fwd_nodes[week - 1]
        edges = g.pred_edge[nodes]
        src = g.edge_src[edges]
        kind = g.edge_between[edges].astype(int)
        for fwd, emis, trans, prior, role in ((st.fwd_o, st.emis_o, self.trans_o, self.params.pi, OFFENSE),
                                              (st.fwd_d, st.emis_d, self.trans_d, self.params.rho, DEFENSE)):
            if heads.size:
                self._assign(fwd, heads, np.broadcast_to(prior, (heads.size, prior.size)))
            if nodes.size:
                out = np.einsum("ni,nij->nj", fwd[src] * emis[src], trans[kind])
                self._assign(fwd, nodes, _normalize(out, -1, self._where(nodes, role)))

    def backward(self, week: int):
        g, st = self.graph, self.state
        nodes = g.week_bwd_nodes[week - 1]
        if not nodes.size:
            return
        edges = g.succ_edge[nodes]
        dst = g.edge_dst[edges]
        kind = g.edge_between[edges].astype(int)
        for bwd, emis, trans, role in ((st.bwd_o, st.emis_o, self.trans_o, OFFENSE),
                                       (st.bwd_d, st.emis_d, self.trans_d, DEFENSE)):
            out = np.einsum("nij,nj->ni", trans[kind], emis[dst] * bwd[dst])
            self._assign(bwd, nodes, _normalize(out, -1, self._where(nodes, role)))

    def emissions(self, week: int):
        g, st, p = self.graph, self.state, self.params
        ms = g.week_matches[week - 1]
        if not ms.size:
            return
        h, a = g.match_home[ms], g.match_away[ms]
        gh, ga = g.match_home_goals[ms], g.match_away_goals[ms]
        cav_oh = st.fwd_o[h] * st.bwd_o[h]
        cav_da = st.fwd_d[a] * st.bwd_d[a]
        cav_oa = st.fwd_o[a] * st.bwd_o[a]
        cav_dh = st.fwd_d[h] * st.bwd_d[h]
        self._assign(st.emis_o, h, emission_message_to_offense(p.psi, cav_da, gh, self._where(h, OFFENSE)))
        self._assign(st.emis_d, a, emission_message_to_defense(p.psi, cav_oh, gh, self._where(a, DEFENSE)))
        self._assign(st.emis_o, a, emission_message_to_offense(p.gamma_cpt, cav_dh, ga, self._where(a, OFFENSE)))
        self._assign(st.emis_d, h, emission_message_to_defense(p.gamma_cpt, cav_oa, ga, self._where(h, DEFENSE)))

    def cycle(self) -> float:
        self.delta = 0.0
        D = self.graph.num_weeks
        for week in range(1, D + 1):
            self.forward(week)
            self.emissions(week)
        for week in range(D, 0, -1):
            self.backward(week)
            self.emissions(week)
        return self.delta


def _beliefs(graph: FactorGraph, params: ModelParams, st: MessageState) -> Posterior:
    all_nodes = np.arange(graph.num_chain_nodes)

    def where_node(role):
        return lambda i: graph.describe_node(int(all_nodes[i]), role)

    gamma_o = node_marginal([st.fwd_o, st.bwd_o, st.emis_o], where_node(OFFENSE))
    gamma_d = node_marginal([st.fwd_d, st.bwd_d, st.emis_d], where_node(DEFENSE))

    src, dst = graph.edge_src, graph.edge_dst
    kind = graph.edge_between.astype(int)
    trans_o = np.stack([params.omega_within, params.omega_between])[kind]
    trans_d = np.stack([params.delta_within, params.delta_between])[kind]

    def where_edge(role):
        return lambda i: f"{role} transition into " + graph.describe_node(int(dst[i]), role)

    xi_o = pairwise_marginal(st.fwd_o[src] * st.emis_o[src], st.emis_o[dst] * st.bwd_o[dst], trans_o, where_edge(OFFENSE))
    xi_d = pairwise_marginal(st.fwd_d[src] * st.emis_d[src], st.emis_d[dst] * st.bwd_d[dst], trans_d, where_edge(DEFENSE))

    h, a = graph.match_home, graph.match_away
    where_match = graph.describe_match
    zeta_home = match_pair_marginal(st.fwd_o[h] * st.bwd_o[h], st.fwd_d[a] * st.bwd_d[a], params.psi,
                                    graph.match_home_goals, where_match)
    zeta_away = match_pair_marginal(st.fwd_o[a] * st.bwd_o[a], st.fwd_d[h] * st.bwd_d[h], params.gamma_cpt,
                                    graph.match_away_goals, where_match)
    return Posterior(gamma_o, gamma_d, xi_o, xi_d, zeta_home, zeta_away, graph)


def run_bp(
    graph: FactorGraph,
    params: ModelParams,
    cycles: int = 20,
    damping: float = 0.0,
    early_stop_tol: Optional[float] = None,
    messages: Optional[MessageState] = None,
) -> Posterior:
    """
    Sum-product belief propagation on the coupled-chain graph.

    Each cycle sweeps forward over weeks 1..D (chain messages, then the
    week's emission messages) and backward over D..1. Messages are
    renormalized after every update. On a forest the beliefs are exact once
    the sweeps have covered the tree's diameter.

    Args:
        graph: Layout from build_graph
        params: Current parameters
        cycles: Number of forward+backward sweeps
        damping: Weight in [0, 1) kept from the previous message
        early_stop_tol: Stop once a whole cycle moves no message by more (L1)
        messages: Warm-start state; updated in place when given

    Returns:
        Posterior with gamma, xi and zeta
    """
    if cycles < 1:
        raise ValueError(f"cycles must be >= 1, got {cycles}")
    if not 0.0 <= damping < 1.0:
        raise ValueError(f"damping must lie in [0, 1), got {damping}")
    if params.num_strength_states != graph.card.num_strength_states:
        raise ValueError("parameters and graph disagree on the number of strength states")
    if params.num_goal_states != graph.card.num_goal_states:
        raise ValueError("parameters and graph disagree on the number of goal states")

    state = messages if messages is not None else MessageState.uniform(graph)
    sweeper = _Sweeper(graph, params, state, damping)
    for cycle in range(1, cycles + 1):
        delta = sweeper.cycle()
        if early_stop_tol is not None and delta < early_stop_tol:
            logger.debug(f"BP converged after {cycle} cycles (max change {delta:.2e})")
            break
    return _beliefs(graph, params, state)


# ============================================================================
# OBJECTIVE
# ============================================================================

@dataclass
class LogPosteriorTerms:
    """Expected complete-data log posterior, split by factor family."""
    prior: float
    transition: float
    emission: float
    dirichlet: float

    @property
    def total(self) -> float:
        return self.prior + self.transition + self.emission + self.dirichlet

    @property
    def degenerate(self) -> bool:
        """A zero parameter carries positive weight."""
        return bool(np.isneginf(self.total))


def _emission_slices(cpt: np.ndarray, goals: np.ndarray) -> np.ndarray:
    return np.moveaxis(cpt, -1, 0)[goals] if len(goals) else np.zeros((0,) + cpt.shape[:2])


def dirichlet_log_prior(params: ModelParams, hyper: Hyperparams) -> float:
    """Log Dirichlet densities of the transitions and emissions, without the constant."""
    total = 0.0
    for mat, alpha in ((params.omega_within, hyper.alpha_within), (params.omega_between, hyper.alpha_between),
                       (params.delta_within, hyper.alpha_within), (params.delta_between, hyper.alpha_between)):
        total += xlogy(alpha - 1.0, mat).sum()
    total += xlogy(hyper.beta - 1.0, params.psi).sum()
    total += xlogy(hyper.phi - 1.0, params.gamma_cpt).sum()
    return float(total)


def _expected_energy(graph: FactorGraph, params: ModelParams, posterior: Posterior) -> Tuple[float, float, float]:
    """Posterior-weighted log factor values: (prior, transition, emission)."""
    heads = graph.heads
    prior = xlogy(posterior.gamma_o[heads], params.pi).sum() + xlogy(posterior.gamma_d[heads], params.rho).sum()

    kind = graph.edge_between.astype(int)
    trans_o = np.stack([params.omega_within, params.omega_between])[kind]
    trans_d = np.stack([params.delta_within, params.delta_between])[kind]
    transition = xlogy(posterior.xi_o, trans_o).sum() + xlogy(posterior.xi_d, trans_d).sum()

    emission = (xlogy(posterior.zeta_home, _emission_slices(params.psi, graph.match_home_goals)).sum()
                + xlogy(posterior.zeta_away, _emission_slices(params.gamma_cpt, graph.match_away_goals)).sum())
    return float(prior), float(transition), float(emission)


def log_posterior_terms(graph: FactorGraph, params: ModelParams, hyper: Hyperparams, posterior: Posterior) -> LogPosteriorTerms:
    prior, transition, emission = _expected_energy(graph, params, posterior)
    return LogPosteriorTerms(prior, transition, emission, dirichlet_log_prior(params, hyper))


def joint_log_posterior(graph: FactorGraph, params: ModelParams, hyper: Hyperparams, posterior: Posterior) -> float:
    """
    E_posterior[ln P(X, Z, theta | Lambda)] without the normalizing constant.

    gamma weights the prior terms, xi the transition terms and zeta the
    emission terms; the Dirichlet terms are added. Returns -inf (and logs a
    warning) when a zero-probability parameter carries positive weight.
    """
    terms = log_posterior_terms(graph, params, hyper, posterior)
    if terms.degenerate:
        logger.warning("joint log posterior is -inf: a zero parameter carries posterior weight")
    return terms.total


def bethe_entropy(graph: FactorGraph, posterior: Posterior) -> float:
    """Bethe entropy of the beliefs; the exact posterior entropy on a forest."""
    heads = graph.heads
    factor_h = (entr(posterior.gamma_o[heads]).sum() + entr(posterior.gamma_d[heads]).sum()
                + entr(posterior.xi_o).sum() + entr(posterior.xi_d).sum()
                + entr(posterior.zeta_home).sum() + entr(posterior.zeta_away).sum())
    weights = (graph.degree - 1)[:, None]
    node_h = (weights * entr(posterior.gamma_o)).sum() + (weights * entr(posterior.gamma_d)).sum()
    return float(factor_h - node_h)


def log_evidence(graph: FactorGraph, params: ModelParams, posterior: Posterior) -> float:
    """Bethe estimate of ln P(X | theta); exact on a forest."""
    return sum(_expected_energy(graph, params, posterior)) + bethe_entropy(graph, posterior)


def export_posterior_csv(posterior: Posterior) -> str:
    """Rows (team, week, kind, s0..s{S-1}) ordered by team id, week, kind."""
    graph = posterior.graph
    S = posterior.gamma_o.shape[1]
    rows = []
    for team in sorted(graph.team_nodes):
        for n in graph.team_nodes[team]:
            for kind, gamma in ((DEFENSE, posterior.gamma_d), (OFFENSE, posterior.gamma_o)):
                row = {"team": graph.schedule.name_of(team), "week": int(graph.node_week[n]), "kind": kind}
                row.update({f"s{s}": float(gamma[n, s]) for s in range(S)})
                rows.append(row)
    columns = ["team", "week", "kind"] + [f"s{s}" for s in range(S)]
    return pd.DataFrame(rows, columns=columns).to_csv(index=False, lineterminator="\n")
